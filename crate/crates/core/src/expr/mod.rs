//! Expression language for node dynamics, static node functions and input
//! signals.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = power { ("*" | "/") power } ;
//! power   = unary [ "^" power ] ;           (* right-associative *)
//! unary   = "-" unary | primary ;
//! primary = number | ident | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "tan" | "exp" | "tanh" | "abs" | "sign" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! Unary minus binds tighter than `^`, so `-2^2` is `(-2)^2 = 4`.
//! Variables are `x1`..`xn` (state), `u` (node input) and `t` (time).

mod parser;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::Real;

pub use parser::parse;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unknown variable `{name}`")]
    UnknownVariable { name: String },
    #[error("unbound variable `{name}`")]
    UnboundVariable { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Var {
    /// `x<k>` with `k >= 1`, stored zero-based.
    State(usize),
    Input,
    Time,
    Named(String),
}

impl Var {
    pub fn from_name(name: &str) -> Var {
        match name {
            "u" => Var::Input,
            "t" => Var::Time,
            _ => match name.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 && !name[1..].starts_with('0') => Var::State(k - 1),
                _ => Var::Named(name.to_string()),
            },
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::State(i) => write!(f, "x{}", i + 1),
            Var::Input => f.write_str("u"),
            Var::Time => f.write_str("t"),
            Var::Named(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Tanh,
    Abs,
    Sign,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Tanh => x.tanh(),
            Func::Abs => x.abs(),
            Func::Sign => sign(x),
        }
    }

    /// Derivative of the function at `x`.
    fn slope<T: Real>(self, x: T) -> T {
        match self {
            Func::Sin => x.cos(),
            Func::Cos => -x.sin(),
            Func::Tan => {
                let t = x.tan();
                T::one() + t * t
            }
            Func::Exp => x.exp(),
            Func::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Func::Abs => sign(x),
            Func::Sign => T::zero(),
        }
    }
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 3,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

/// Parsed expression tree. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Source of variable values during evaluation.
pub trait Bindings<T> {
    fn value(&self, var: &Var) -> Option<T>;
}

/// Positional bindings used by the simulator.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a, T> {
    pub x: &'a [T],
    pub u: Option<T>,
    pub t: Option<T>,
}

impl<'a, T: Copy> Env<'a, T> {
    pub fn input(u: T) -> Self {
        Env { x: &[], u: Some(u), t: None }
    }

    pub fn time(t: T) -> Self {
        Env { x: &[], u: None, t: Some(t) }
    }

    pub fn state(x: &'a [T], u: T) -> Self {
        Env { x, u: Some(u), t: None }
    }
}

impl<T: Copy> Bindings<T> for Env<'_, T> {
    fn value(&self, var: &Var) -> Option<T> {
        match var {
            Var::State(i) => self.x.get(*i).copied(),
            Var::Input => self.u,
            Var::Time => self.t,
            Var::Named(_) => None,
        }
    }
}

impl<T: Copy> Bindings<T> for HashMap<String, T> {
    fn value(&self, var: &Var) -> Option<T> {
        self.get(&var.to_string()).copied()
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        parse(text)
    }

    pub fn eval<T: Real, B: Bindings<T> + ?Sized>(&self, bindings: &B) -> Result<T, ExprError> {
        Ok(match self {
            Expr::Num(v) => T::lit(*v),
            Expr::Var(var) => bindings
                .value(var)
                .ok_or_else(|| ExprError::UnboundVariable { name: var.to_string() })?,
            Expr::Neg(e) => -e.eval(bindings)?,
            Expr::Binary(op, l, r) => {
                let a = l.eval(bindings)?;
                let b = r.eval(bindings)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => power(a, b),
                }
            }
            Expr::Call(func, arg) => func.apply(arg.eval(bindings)?),
        })
    }

    /// Value and exact derivative with respect to `wrt` (forward mode).
    pub fn eval_with_derivative<T: Real, B: Bindings<T> + ?Sized>(
        &self,
        bindings: &B,
        wrt: &Var,
    ) -> Result<(T, T), ExprError> {
        Ok(match self {
            Expr::Num(v) => (T::lit(*v), T::zero()),
            Expr::Var(var) => {
                let v = bindings
                    .value(var)
                    .ok_or_else(|| ExprError::UnboundVariable { name: var.to_string() })?;
                (v, if var == wrt { T::one() } else { T::zero() })
            }
            Expr::Neg(e) => {
                let (v, d) = e.eval_with_derivative(bindings, wrt)?;
                (-v, -d)
            }
            Expr::Binary(op, l, r) => {
                let (a, da) = l.eval_with_derivative(bindings, wrt)?;
                let (b, db) = r.eval_with_derivative(bindings, wrt)?;
                match op {
                    BinOp::Add => (a + b, da + db),
                    BinOp::Sub => (a - b, da - db),
                    BinOp::Mul => (a * b, da * b + a * db),
                    BinOp::Div => (a / b, (da * b - a * db) / (b * b)),
                    BinOp::Pow => {
                        let v = power(a, b);
                        let mut d = b * power(a, b - T::one()) * da;
                        if db != T::zero() {
                            d = d + v * a.ln() * db;
                        }
                        (v, d)
                    }
                }
            }
            Expr::Call(func, arg) => {
                let (v, d) = arg.eval_with_derivative(bindings, wrt)?;
                (func.apply(v), func.slope(v) * d)
            }
        })
    }

    /// Visits every variable reference.
    pub fn variables(&self) -> Vec<&Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => out.push(v),
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    pub fn references(&self, var: &Var) -> bool {
        self.variables().into_iter().any(|v| v == var)
    }

    /// Bind-time check that every variable is declared by the enclosing
    /// context: `x1..x<states>`, plus `u` and `t` when allowed.
    pub fn check_variables(
        &self,
        states: usize,
        allow_input: bool,
        allow_time: bool,
    ) -> Result<(), ExprError> {
        for var in self.variables() {
            let ok = match var {
                Var::State(i) => *i < states,
                Var::Input => allow_input,
                Var::Time => allow_time,
                Var::Named(_) => false,
            };
            if !ok {
                return Err(ExprError::UnknownVariable { name: var.to_string() });
            }
        }
        Ok(())
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Neg(_) => 4,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

fn power<T: Real>(a: T, b: T) -> T {
    if b.fract() == T::zero() && b.abs() <= T::lit(64.0) {
        a.powi(b.to_i32().unwrap_or(0))
    } else {
        a.powf(b)
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Canonical printed form; re-parsing it yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                write_child(f, e, e.precedence() < 4)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let (left_parens, right_parens) = if *op == BinOp::Pow {
                    (l.precedence() <= p, r.precedence() < p)
                } else {
                    (l.precedence() < p, r.precedence() <= p)
                };
                write_child(f, l, left_parens)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, r, right_parens)
            }
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
        }
    }
}
