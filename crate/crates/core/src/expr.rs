//! Expression trees for warping functions, profiles and vector-field
//! components.
//!
//! Grammar accepted by [`ScalarExpr::parse`]:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp`, `sin`, `cos`, `sqrt`, `pow(base, exponent)`. The
//! identifier `pi` is the constant π. Exponents must reduce to a constant.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ExprError;
use crate::scalar::{Dual, HyperDual, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScalarExpr {
    Const(f64),
    Var(String),
    Sum(Vec<ScalarExpr>),
    Product(Vec<ScalarExpr>),
    /// `base ^ exponent` with a real constant exponent.
    Power(Box<ScalarExpr>, f64),
    Exp(Box<ScalarExpr>),
    Sin(Box<ScalarExpr>),
    Cos(Box<ScalarExpr>),
    Sqrt(Box<ScalarExpr>),
    Recip(Box<ScalarExpr>),
}

/// Name/value pairs an expression is evaluated against.
pub struct Bindings<'a, T> {
    pub names: &'a [String],
    pub values: &'a [T],
}

impl<'a, T: Copy> Bindings<'a, T> {
    pub fn new(names: &'a [String], values: &'a [T]) -> Self {
        debug_assert_eq!(names.len(), values.len());
        Bindings { names, values }
    }

    fn get(&self, name: &str) -> Option<T> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

impl ScalarExpr {
    pub fn constant(value: f64) -> Self {
        ScalarExpr::Const(value)
    }

    pub fn var(name: &str) -> Self {
        ScalarExpr::Var(name.to_string())
    }

    pub fn exp(self) -> Self {
        ScalarExpr::Exp(Box::new(self))
    }

    pub fn sin(self) -> Self {
        ScalarExpr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Self {
        ScalarExpr::Cos(Box::new(self))
    }

    pub fn sqrt(self) -> Self {
        ScalarExpr::Sqrt(Box::new(self))
    }

    pub fn recip(self) -> Self {
        ScalarExpr::Recip(Box::new(self))
    }

    pub fn pow(self, exponent: f64) -> Self {
        ScalarExpr::Power(Box::new(self), exponent)
    }

    pub fn add(self, other: ScalarExpr) -> Self {
        match self {
            ScalarExpr::Sum(mut terms) => {
                terms.push(other);
                ScalarExpr::Sum(terms)
            }
            s => ScalarExpr::Sum(vec![s, other]),
        }
    }

    pub fn mul(self, other: ScalarExpr) -> Self {
        match self {
            ScalarExpr::Product(mut factors) => {
                factors.push(other);
                ScalarExpr::Product(factors)
            }
            s => ScalarExpr::Product(vec![s, other]),
        }
    }

    pub fn scale(self, factor: f64) -> Self {
        ScalarExpr::Product(vec![ScalarExpr::Const(factor), self])
    }

    /// `c · exp(k·var)`, the most common building block of closed forms.
    pub fn scaled_exp(c: f64, k: f64, var: &str) -> Self {
        ScalarExpr::var(var).scale(k).exp().scale(c)
    }

    pub fn eval<T: Scalar>(&self, env: &Bindings<'_, T>) -> Result<T, ExprError> {
        Ok(match self {
            ScalarExpr::Const(c) => T::constant(*c),
            ScalarExpr::Var(name) => env
                .get(name)
                .ok_or_else(|| ExprError::UnknownVariable(name.clone()))?,
            ScalarExpr::Sum(terms) => {
                let mut acc = T::constant(0.0);
                for t in terms {
                    acc = acc + t.eval(env)?;
                }
                acc
            }
            ScalarExpr::Product(factors) => {
                let mut acc = T::constant(1.0);
                for f in factors {
                    acc = acc * f.eval(env)?;
                }
                acc
            }
            ScalarExpr::Power(base, e) => base.eval(env)?.powf(*e),
            ScalarExpr::Exp(a) => a.eval(env)?.exp(),
            ScalarExpr::Sin(a) => a.eval(env)?.sin(),
            ScalarExpr::Cos(a) => a.eval(env)?.cos(),
            ScalarExpr::Sqrt(a) => a.eval(env)?.sqrt(),
            ScalarExpr::Recip(a) => a.eval(env)?.recip(),
        })
    }

    /// Value, first and second derivative of a one-variable expression.
    pub fn jet1(&self, var: &str, at: f64) -> Result<[f64; 3], ExprError> {
        let names = [var.to_string()];
        let v = [HyperDual::new(at, 1.0, 1.0, 0.0)];
        let r = self.eval(&Bindings::new(&names, &v))?;
        Ok([r.re, r.e1, r.e12])
    }

    /// Gradient with respect to every bound variable, via dual numbers.
    pub fn gradient(&self, names: &[String], at: &[f64]) -> Result<Vec<f64>, ExprError> {
        let mut out = Vec::with_capacity(at.len());
        let mut seeded: Vec<Dual> = at.iter().map(|&x| Dual::new(x, 0.0)).collect();
        for k in 0..at.len() {
            seeded[k].eps = 1.0;
            out.push(self.eval(&Bindings::new(names, &seeded))?.eps);
            seeded[k].eps = 0.0;
        }
        Ok(out)
    }

    /// Every variable name referenced by the tree.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            ScalarExpr::Const(_) => {}
            ScalarExpr::Var(n) => {
                out.insert(n.clone());
            }
            ScalarExpr::Sum(v) | ScalarExpr::Product(v) => v.iter().for_each(|e| e.collect_vars(out)),
            ScalarExpr::Power(a, _)
            | ScalarExpr::Exp(a)
            | ScalarExpr::Sin(a)
            | ScalarExpr::Cos(a)
            | ScalarExpr::Sqrt(a)
            | ScalarExpr::Recip(a) => a.collect_vars(out),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.variables().is_empty()
    }

    /// Replaces `name` by `name + offset` throughout.
    pub fn shift_var(&self, name: &str, offset: f64) -> ScalarExpr {
        self.map_vars(&|n| {
            (n == name).then(|| ScalarExpr::Sum(vec![ScalarExpr::var(n), ScalarExpr::Const(offset)]))
        })
    }

    /// Replaces `name` by the constant `value` throughout.
    pub fn substitute(&self, name: &str, value: f64) -> ScalarExpr {
        self.map_vars(&|n| (n == name).then_some(ScalarExpr::Const(value)))
    }

    /// Renames variables according to `rename`; unmatched names are kept.
    pub fn rename_vars(&self, rename: &dyn Fn(&str) -> Option<String>) -> ScalarExpr {
        self.map_vars(&|n| rename(n).map(ScalarExpr::Var))
    }

    fn map_vars(&self, f: &dyn Fn(&str) -> Option<ScalarExpr>) -> ScalarExpr {
        let m = |a: &ScalarExpr| Box::new(a.map_vars(f));
        match self {
            ScalarExpr::Const(c) => ScalarExpr::Const(*c),
            ScalarExpr::Var(n) => f(n).unwrap_or_else(|| ScalarExpr::Var(n.clone())),
            ScalarExpr::Sum(v) => ScalarExpr::Sum(v.iter().map(|e| e.map_vars(f)).collect()),
            ScalarExpr::Product(v) => ScalarExpr::Product(v.iter().map(|e| e.map_vars(f)).collect()),
            ScalarExpr::Power(a, e) => ScalarExpr::Power(m(a), *e),
            ScalarExpr::Exp(a) => ScalarExpr::Exp(m(a)),
            ScalarExpr::Sin(a) => ScalarExpr::Sin(m(a)),
            ScalarExpr::Cos(a) => ScalarExpr::Cos(m(a)),
            ScalarExpr::Sqrt(a) => ScalarExpr::Sqrt(m(a)),
            ScalarExpr::Recip(a) => ScalarExpr::Recip(m(a)),
        }
    }

    pub fn parse(src: &str) -> Result<ScalarExpr, ExprError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, len: src.chars().count() };
        let e = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(ExprError::Parse {
                column: tok.column,
                message: format!("unexpected '{}'", tok.kind),
            });
        }
        Ok(e)
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarExpr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            ScalarExpr::Var(n) => write!(f, "{n}"),
            ScalarExpr::Sum(v) => {
                if v.is_empty() {
                    return write!(f, "0.0");
                }
                write!(f, "(")?;
                for (i, e) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
            ScalarExpr::Product(v) => {
                if v.is_empty() {
                    return write!(f, "1.0");
                }
                write!(f, "(")?;
                for (i, e) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, " * ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
            ScalarExpr::Power(a, e) => write!(f, "pow({a}, {e:?})"),
            ScalarExpr::Exp(a) => write!(f, "exp({a})"),
            ScalarExpr::Sin(a) => write!(f, "sin({a})"),
            ScalarExpr::Cos(a) => write!(f, "cos({a})"),
            ScalarExpr::Sqrt(a) => write!(f, "sqrt({a})"),
            ScalarExpr::Recip(a) => write!(f, "(1.0 / {a})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Num(n) => write!(f, "{n}"),
            TokenKind::Ident(s) => write!(f, "{s}"),
            TokenKind::Op(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: TokenKind,
    /// 1-based.
    column: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ExprError::Parse {
                column,
                message: format!("malformed number '{text}'"),
            })?;
            out.push(Token { kind: TokenKind::Num(value), column });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token { kind: TokenKind::Op(c), column });
            i += 1;
        } else {
            return Err(ExprError::Parse {
                column,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokenKind::Op(c), .. }) if *c == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error_here(&self, message: &str) -> ExprError {
        let column = self.peek().map(|t| t.column).unwrap_or(self.len + 1);
        ExprError::Parse { column, message: message.to_string() }
    }

    fn expect_op(&mut self, op: char) -> Result<(), ExprError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.error_here(&format!("expected '{op}'")))
        }
    }

    fn expr(&mut self) -> Result<ScalarExpr, ExprError> {
        let mut terms = vec![self.term()?];
        loop {
            if self.eat_op('+') {
                terms.push(self.term()?);
            } else if self.eat_op('-') {
                terms.push(self.term()?.scale(-1.0));
            } else {
                break;
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { ScalarExpr::Sum(terms) })
    }

    fn term(&mut self) -> Result<ScalarExpr, ExprError> {
        let mut factors = vec![self.unary()?];
        loop {
            if self.eat_op('*') {
                factors.push(self.unary()?);
            } else if self.eat_op('/') {
                factors.push(self.unary()?.recip());
            } else {
                break;
            }
        }
        Ok(if factors.len() == 1 { factors.pop().unwrap() } else { ScalarExpr::Product(factors) })
    }

    fn unary(&mut self) -> Result<ScalarExpr, ExprError> {
        if self.eat_op('-') {
            let inner = self.unary()?;
            return Ok(match inner {
                ScalarExpr::Const(c) => ScalarExpr::Const(-c),
                e => e.scale(-1.0),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<ScalarExpr, ExprError> {
        let base = self.atom()?;
        if self.eat_op('^') {
            let column = self.peek().map(|t| t.column).unwrap_or(self.len + 1);
            let exponent = self.unary()?;
            return make_power(base, exponent, column);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ScalarExpr, ExprError> {
        let tok = match self.peek() {
            Some(t) => t.clone(),
            None => return Err(self.error_here("unexpected end of expression")),
        };
        match tok.kind {
            TokenKind::Num(v) => {
                self.pos += 1;
                Ok(ScalarExpr::Const(v))
            }
            TokenKind::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if self.eat_op('(') {
                    let mut args = vec![self.expr()?];
                    while self.eat_op(',') {
                        args.push(self.expr()?);
                    }
                    self.expect_op(')')?;
                    apply_function(&name, args, tok.column)
                } else if name == "pi" {
                    Ok(ScalarExpr::Const(std::f64::consts::PI))
                } else {
                    Ok(ScalarExpr::Var(name))
                }
            }
            TokenKind::Op(c) => Err(ExprError::Parse {
                column: tok.column,
                message: format!("unexpected '{c}'"),
            }),
        }
    }
}

fn constant_value(e: &ScalarExpr) -> Option<f64> {
    if !e.is_constant() {
        return None;
    }
    let names: [String; 0] = [];
    let values: [f64; 0] = [];
    e.eval(&Bindings::new(&names, &values)).ok()
}

fn make_power(base: ScalarExpr, exponent: ScalarExpr, column: usize) -> Result<ScalarExpr, ExprError> {
    let e = constant_value(&exponent).ok_or(ExprError::Parse {
        column,
        message: "exponent must be a constant".to_string(),
    })?;
    Ok(base.pow(e))
}

fn apply_function(name: &str, mut args: Vec<ScalarExpr>, column: usize) -> Result<ScalarExpr, ExprError> {
    let arity = |n: usize, args: &Vec<ScalarExpr>| {
        if args.len() == n {
            Ok(())
        } else {
            Err(ExprError::Parse {
                column,
                message: format!("{name} takes {n} argument(s), got {}", args.len()),
            })
        }
    };
    match name {
        "exp" | "sin" | "cos" | "sqrt" => {
            arity(1, &args)?;
            let a = args.pop().unwrap();
            Ok(match name {
                "exp" => a.exp(),
                "sin" => a.sin(),
                "cos" => a.cos(),
                _ => a.sqrt(),
            })
        }
        "pow" => {
            arity(2, &args)?;
            let exponent = args.pop().unwrap();
            let base = args.pop().unwrap();
            make_power(base, exponent, column)
        }
        _ => Err(ExprError::Parse {
            column,
            message: format!("unknown function '{name}'"),
        }),
    }
}
