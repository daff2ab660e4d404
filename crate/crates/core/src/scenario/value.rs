//! Right-hand sides of `key = value` lines.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Str(String),
    Word(String),
    List(Vec<Value>),
}

impl Value {
    pub fn describe(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Str(_) => "string",
            Value::Word(_) => "word",
            Value::List(_) => "list",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            Value::Word(w) => f.write_str(w),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Error at a zero-based character offset of the value text.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueError {
    pub offset: usize,
    pub message: String,
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_space(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ValueError> {
        Err(ValueError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn value(&mut self) -> Result<Value, ValueError> {
        self.skip_space();
        match self.peek() {
            None => self.fail("expected a value"),
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_space();
                if self.peek() == Some(']') {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value()?);
                    self.skip_space();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(']') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        _ => return self.fail("expected ',' or ']'"),
                    }
                }
            }
            Some('"') => {
                self.pos += 1;
                let mut s = String::new();
                loop {
                    match self.peek() {
                        None => return self.fail("unterminated string"),
                        Some('"') => {
                            self.pos += 1;
                            return Ok(Value::Str(s));
                        }
                        Some('\\') => {
                            self.pos += 1;
                            match self.peek() {
                                Some(c @ ('"' | '\\')) => s.push(c),
                                _ => return self.fail("unknown escape"),
                            }
                            self.pos += 1;
                        }
                        Some(c) => {
                            s.push(c);
                            self.pos += 1;
                        }
                    }
                }
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = self.pos;
                while self
                    .peek()
                    .is_some_and(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+'))
                {
                    self.pos += 1;
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                match text.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(Value::Number(x)),
                    _ => Err(ValueError {
                        offset: start,
                        message: format!("invalid number '{text}'"),
                    }),
                }
            }
            Some(c) if c.is_alphabetic() || c == '_' => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                Ok(Value::Word(self.chars[start..self.pos].iter().collect()))
            }
            Some(c) => self.fail(format!("unexpected character '{c}'")),
        }
    }
}

/// Parses a complete value; trailing text other than whitespace is an
/// error.
pub fn parse_value(text: &str) -> Result<Value, ValueError> {
    let mut cur = Cursor {
        chars: text.chars().collect(),
        pos: 0,
    };
    let v = cur.value()?;
    cur.skip_space();
    if cur.peek().is_some() {
        return cur.fail("unexpected text after value");
    }
    Ok(v)
}

/// Removes a trailing `#` comment that is not inside a string.
pub fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_string => escaped = true,
            '"' => in_string = !in_string,
            '#' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        assert_eq!(parse_value(" 1e-6 ").unwrap(), Value::Number(1e-6));
        assert_eq!(parse_value("rk4").unwrap(), Value::Word("rk4".into()));
        assert_eq!(
            parse_value("[[1, 2], []]").unwrap(),
            Value::List(vec![
                Value::List(vec![Value::Number(1.0), Value::Number(2.0)]),
                Value::List(vec![])
            ])
        );
        assert_eq!(parse_value(r#""a \"b\"""#).unwrap(), Value::Str("a \"b\"".into()));
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(parse_value("[1, 2").unwrap_err().offset, 5);
        assert_eq!(parse_value("1.2.3").unwrap_err().offset, 0);
        assert_eq!(parse_value("\"abc").unwrap_err().message, "unterminated string");
        assert_eq!(parse_value("1 2").unwrap_err().offset, 2);
    }

    #[test]
    fn comments() {
        assert_eq!(strip_comment(r#"f = "a # b" # note"#), r#"f = "a # b" "#);
        assert_eq!(strip_comment("# all"), "");
    }

    #[test]
    fn display_round_trips() {
        for text in ["[1, -2.5, [3]]", "\"x\\\\y\"", "truncated", "0.000001"] {
            let v = parse_value(text).unwrap();
            assert_eq!(parse_value(&v.to_string()).unwrap(), v);
        }
    }
}
