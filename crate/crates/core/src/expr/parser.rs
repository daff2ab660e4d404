use super::{BinOp, Expr, ExprError, Func, Var};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax {
        offset,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lexeme = &text[start..i];
                let value = lexeme
                    .parse::<f64>()
                    .map_err(|_| syntax(start, format!("malformed number `{lexeme}`")))?;
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(syntax(
                self.offset(),
                format!("expected {}, found {}", tok.describe(), self.peek().describe()),
            ))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.power()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.power()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.unary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.power()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ExprError::UnknownFunction { name, offset })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Tok::RParen)?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if Func::from_name(&name).is_some() {
                    Err(syntax(self.offset(), format!("expected `(` after `{name}`")))
                } else {
                    Ok(Expr::Var(Var::from_name(&name)))
                }
            }
            other => Err(syntax(
                offset,
                format!("expected expression, found {}", other.describe()),
            )),
        }
    }
}

/// Parses an expression. Failures carry the byte offset of the offending
/// token and a hint of what was expected.
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(
            p.offset(),
            format!("expected operator or end of input, found {}", p.peek().describe()),
        ));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unterminated_call_reports_offset() {
        match parse("sin(") {
            Err(ExprError::Syntax { offset, message }) => {
                assert_eq!(offset, 4);
                assert!(message.contains("expected expression"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_function() {
        assert_eq!(
            parse("1 + log(u)"),
            Err(ExprError::UnknownFunction {
                name: "log".into(),
                offset: 4
            })
        );
    }

    #[test]
    fn trailing_garbage() {
        assert!(matches!(parse("u u"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("(u"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("u $ 1"), Err(ExprError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn scientific_literals() {
        assert_eq!(parse("1.5e-3").unwrap(), Expr::Num(1.5e-3));
        assert_eq!(parse(".25").unwrap(), Expr::Num(0.25));
        assert_eq!(parse(" 2E2 ").unwrap(), Expr::Num(200.0));
    }

    #[test]
    fn state_variable_names() {
        assert_eq!(Var::from_name("x1"), Var::State(0));
        assert_eq!(Var::from_name("x12"), Var::State(11));
        assert_eq!(Var::from_name("x0"), Var::Named("x0".into()));
        assert_eq!(Var::from_name("x01"), Var::Named("x01".into()));
    }
}
