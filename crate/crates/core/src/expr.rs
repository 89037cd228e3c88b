//! Closed-form kernel expressions.
//!
//! Kernels such as `k(x, y)`, `g(x, y)` and `h(x, y, u)` are written in a small
//! arithmetic language over the variables `x1, x2, y1, y2, u` (with `x` and `y`
//! accepted as aliases for `x1` and `y1`). Expressions can be evaluated and
//! differentiated symbolically with respect to `u`.
//!
//! Precedence, tightest first: `^` (right associative), unary `-`, `* /`,
//! `+ -`. So `-2^2` is `-(2^2)` and `2^-1` is `0.5`.
//!
//! The derivative of `abs(a)` is `sign(a) * a'` with `sign(0) = 0`. `sign` is
//! an internal node produced by differentiation only; the parser does not
//! accept it.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X1,
    X2,
    Y1,
    Y2,
    U,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::X1, Var::X2, Var::Y1, Var::Y2, Var::U];

    pub fn name(self) -> &'static str {
        match self {
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::Y1 => "y1",
            Var::Y2 => "y2",
            Var::U => "u",
        }
    }

    /// Resolves a variable name, including the 1-D aliases `x` and `y`.
    pub fn from_name(name: &str) -> Option<Var> {
        match name {
            "x1" | "x" => Some(Var::X1),
            "x2" => Some(Var::X2),
            "y1" | "y" => Some(Var::Y1),
            "y2" => Some(Var::Y2),
            "u" => Some(Var::U),
            _ => None,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
    Sign,
}

impl UnaryOp {
    fn function_name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Tanh => Some("tanh"),
            UnaryOp::Abs => Some("abs"),
            UnaryOp::Sign => Some("sign"),
        }
    }

    fn from_function_name(name: &str) -> Option<UnaryOp> {
        match name {
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "exp" => Some(UnaryOp::Exp),
            "tanh" => Some(UnaryOp::Tanh),
            "abs" => Some(UnaryOp::Abs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

/// Expression tree. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Constant(f64),
    Variable(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Values for the free variables of an expression.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    slots: [Option<f64>; 5],
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    pub fn set(&mut self, var: Var, value: f64) {
        self.slots[var.slot()] = Some(value);
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        self.slots[var.slot()]
    }

    /// Builds bindings from a name → value map. Names may use the aliases `x`/`y`.
    pub fn from_map(map: &HashMap<String, f64>) -> Result<Self> {
        let mut b = Bindings::new();
        for (name, &value) in map {
            let var = Var::from_name(name).ok_or_else(|| Error::UnknownIdentifier {
                name: name.clone(),
                position: 0,
            })?;
            b.set(var, value);
        }
        Ok(b)
    }

    /// Binds spatial coordinates of a point `x` (to `x1, x2`) and `y` (to `y1, y2`).
    pub fn spatial(x: &[f64], y: &[f64]) -> Self {
        let mut b = Bindings::new();
        if let Some(&v) = x.first() {
            b.set(Var::X1, v);
        }
        if let Some(&v) = x.get(1) {
            b.set(Var::X2, v);
        }
        if let Some(&v) = y.first() {
            b.set(Var::Y1, v);
        }
        if let Some(&v) = y.get(1) {
            b.set(Var::Y2, v);
        }
        b
    }
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr::Constant(value)
    }

    pub fn var(var: Var) -> Expr {
        Expr::Variable(var)
    }

    pub fn unary(op: UnaryOp, child: Expr) -> Expr {
        Expr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn parse(source: &str) -> Result<Expr> {
        Parser::new(source)?.parse_all()
    }

    pub fn contains(&self, var: Var) -> bool {
        match self {
            Expr::Constant(_) => false,
            Expr::Variable(v) => *v == var,
            Expr::Unary(_, c) => c.contains(var),
            Expr::Binary(_, l, r) => l.contains(var) || r.contains(var),
        }
    }

    pub fn contains_u(&self) -> bool {
        self.contains(Var::U)
    }

    /// Free variables in canonical order.
    pub fn free_vars(&self) -> Vec<Var> {
        Var::ALL.into_iter().filter(|&v| self.contains(v)).collect()
    }

    pub fn evaluate(&self, bindings: &Bindings) -> Result<f64> {
        match self {
            Expr::Constant(c) => Ok(*c),
            Expr::Variable(v) => bindings
                .get(*v)
                .ok_or_else(|| Error::MissingBinding(v.name().to_string())),
            Expr::Unary(op, child) => {
                let a = child.evaluate(bindings)?;
                Ok(match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Tanh => a.tanh(),
                    UnaryOp::Abs => a.abs(),
                    UnaryOp::Sign => {
                        if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                })
            }
            Expr::Binary(op, left, right) => {
                let a = left.evaluate(bindings)?;
                let b = right.evaluate(bindings)?;
                match op {
                    BinaryOp::Add => Ok(a + b),
                    BinaryOp::Sub => Ok(a - b),
                    BinaryOp::Mul => Ok(a * b),
                    BinaryOp::Div => {
                        if b == 0.0 {
                            Err(Error::NumericDomain("division by zero".into()))
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinaryOp::Pow => {
                        if a == 0.0 && b < 0.0 {
                            Err(Error::NumericDomain(format!("0^{b} is undefined")))
                        } else if a < 0.0 && b.fract() != 0.0 {
                            Err(Error::NumericDomain(format!(
                                "negative base {a} with non-integer exponent {b}"
                            )))
                        } else {
                            Ok(a.powf(b))
                        }
                    }
                }
            }
        }
    }

    /// Evaluates with a name → value map (aliases allowed).
    pub fn evaluate_map(&self, bindings: &HashMap<String, f64>) -> Result<f64> {
        self.evaluate(&Bindings::from_map(bindings)?)
    }

    /// Symbolic partial derivative with respect to `u`.
    ///
    /// Subtrees free of `u` differentiate to `Constant(0)`. No simplification
    /// is attempted beyond that.
    pub fn differentiate_u(&self) -> Expr {
        if !self.contains_u() {
            return Expr::Constant(0.0);
        }
        use BinaryOp::*;
        match self {
            Expr::Constant(_) => Expr::Constant(0.0),
            Expr::Variable(Var::U) => Expr::Constant(1.0),
            Expr::Variable(_) => Expr::Constant(0.0),
            Expr::Unary(op, a) => {
                let da = a.differentiate_u();
                let a = (**a).clone();
                let outer = match op {
                    UnaryOp::Neg => return Expr::unary(UnaryOp::Neg, da),
                    UnaryOp::Sin => Expr::unary(UnaryOp::Cos, a),
                    UnaryOp::Cos => Expr::unary(UnaryOp::Neg, Expr::unary(UnaryOp::Sin, a)),
                    UnaryOp::Exp => Expr::unary(UnaryOp::Exp, a),
                    UnaryOp::Tanh => Expr::binary(
                        Sub,
                        Expr::Constant(1.0),
                        Expr::binary(Pow, Expr::unary(UnaryOp::Tanh, a), Expr::Constant(2.0)),
                    ),
                    UnaryOp::Abs => Expr::unary(UnaryOp::Sign, a),
                    UnaryOp::Sign => return Expr::Constant(0.0),
                };
                d_mul(outer, da)
            }
            Expr::Binary(op, a, b) => {
                let da = a.differentiate_u();
                let db = b.differentiate_u();
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    Add => d_add(da, db),
                    Sub => d_sub(da, db),
                    Mul => d_add(d_mul(da, b), d_mul(a, db)),
                    Div => {
                        if is_zero(&db) {
                            Expr::binary(Div, da, b)
                        } else {
                            Expr::binary(
                                Div,
                                d_sub(d_mul(da, b.clone()), d_mul(a, db)),
                                Expr::binary(Pow, b, Expr::Constant(2.0)),
                            )
                        }
                    }
                    // exponent is u-free (enforced by the parser)
                    Pow => d_mul(
                        Expr::binary(
                            Mul,
                            b.clone(),
                            Expr::binary(Pow, a, Expr::binary(Sub, b, Expr::Constant(1.0))),
                        ),
                        da,
                    ),
                }
            }
        }
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Expr> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Constant(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:e})", -c)
                } else {
                    write!(f, "{c:e}")
                }
            }
            Expr::Variable(v) => f.write_str(v.name()),
            Expr::Unary(UnaryOp::Neg, c) => write!(f, "(-{c})"),
            Expr::Unary(op, c) => write!(f, "{}({c})", op.function_name().unwrap_or("?")),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
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

fn tokenize(source: &str) -> Result<Vec<(Token, usize)>> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '/' => Token::Slash,
            '^' => Token::Caret,
            '(' => Token::LParen,
            ')' => Token::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    } else {
                        return Err(Error::Syntax {
                            position: j,
                            message: "malformed exponent in number".into(),
                        });
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let value = text.parse::<f64>().map_err(|_| Error::Syntax {
                    position: start,
                    message: format!("malformed number '{text}'"),
                })?;
                tokens.push((Token::Number(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                tokens.push((Token::Ident(chars[start..i].iter().collect()), start));
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    position: start,
                    message: format!("unexpected character '{other}'"),
                })
            }
        };
        tokens.push((tok, start));
        i += 1;
    }
    tokens.push((Token::End, chars.len()));
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn new(source: &str) -> Result<Self> {
        Ok(Parser {
            tokens: tokenize(source)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn position(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn advance(&mut self) -> Token {
        let tok = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn unexpected(&self) -> Error {
        let message = match self.peek() {
            Token::End => "unexpected end of input".to_string(),
            tok => format!("unexpected token {tok:?}"),
        };
        Error::Syntax {
            position: self.position(),
            message,
        }
    }

    fn parse_all(mut self) -> Result<Expr> {
        let e = self.parse_expr()?;
        if *self.peek() != Token::End {
            return Err(self.unexpected());
        }
        Ok(e)
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut left = self.parse_term()?;
        loop {
            let op = match self.peek() {
                Token::Plus => BinaryOp::Add,
                Token::Minus => BinaryOp::Sub,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.parse_term()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut left = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Token::Star => BinaryOp::Mul,
                Token::Slash => BinaryOp::Div,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.parse_unary()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        if *self.peek() == Token::Minus {
            self.advance();
            let child = self.parse_unary()?;
            return Ok(Expr::unary(UnaryOp::Neg, child));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr> {
        let base = self.parse_primary()?;
        if *self.peek() != Token::Caret {
            return Ok(base);
        }
        self.advance();
        let exponent_at = self.position();
        let exponent = self.parse_unary()?;
        if exponent.contains_u() {
            return Err(Error::Syntax {
                position: exponent_at,
                message: "exponent must not depend on u".into(),
            });
        }
        Ok(Expr::binary(BinaryOp::Pow, base, exponent))
    }

    fn parse_primary(&mut self) -> Result<Expr> {
        let at = self.position();
        match self.peek().clone() {
            Token::Number(v) => {
                self.advance();
                Ok(Expr::Constant(v))
            }
            Token::Ident(name) => {
                self.advance();
                if let Some(op) = UnaryOp::from_function_name(&name) {
                    if *self.peek() != Token::LParen {
                        return Err(Error::Syntax {
                            position: self.position(),
                            message: format!("expected '(' after '{name}'"),
                        });
                    }
                    self.advance();
                    let arg = self.parse_expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::unary(op, arg))
                } else if let Some(var) = Var::from_name(&name) {
                    Ok(Expr::Variable(var))
                } else {
                    Err(Error::UnknownIdentifier { name, position: at })
                }
            }
            Token::LParen => {
                self.advance();
                let inner = self.parse_expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            _ => Err(self.unexpected()),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if *self.peek() == Token::RParen {
            self.advance();
            Ok(())
        } else {
            Err(Error::Syntax {
                position: self.position(),
                message: match self.peek() {
                    Token::End => "unexpected end of input, expected ')'".into(),
                    tok => format!("expected ')', found {tok:?}"),
                },
            })
        }
    }
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Constant(c) if *c == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Constant(c) if *c == 1.0)
}

// Derivative-building helpers that drop terms known to be 0 and factors known to be 1,
// so u-free subtrees never leak `u` into h_u.
fn d_add(a: Expr, b: Expr) -> Expr {
    match (is_zero(&a), is_zero(&b)) {
        (true, _) => b,
        (_, true) => a,
        _ => Expr::binary(BinaryOp::Add, a, b),
    }
}

fn d_sub(a: Expr, b: Expr) -> Expr {
    match (is_zero(&a), is_zero(&b)) {
        (_, true) => a,
        (true, _) => Expr::unary(UnaryOp::Neg, b),
        _ => Expr::binary(BinaryOp::Sub, a, b),
    }
}

fn d_mul(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) || is_zero(&b) {
        Expr::Constant(0.0)
    } else if is_one(&a) {
        b
    } else if is_one(&b) {
        a
    } else {
        Expr::binary(BinaryOp::Mul, a, b)
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    // Smooth random ASTs: divisions and fractional powers only on bases bounded away from 0.
    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-2.0..2.0f64).prop_map(Expr::Constant),
            Just(Expr::var(Var::U)),
            Just(Expr::var(Var::X1)),
            Just(Expr::var(Var::Y1)),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            let pos = |e: Expr| {
                Expr::binary(
                    BinaryOp::Add,
                    Expr::Constant(1.5),
                    Expr::binary(BinaryOp::Pow, e, Expr::Constant(2.0)),
                )
            };
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(BinaryOp::Add, a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(BinaryOp::Sub, a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(BinaryOp::Mul, a, b)),
                (inner.clone(), inner.clone()).prop_map(move |(a, b)| Expr::binary(BinaryOp::Div, a, pos(b))),
                (inner.clone(), 2..4i32)
                    .prop_map(|(a, k)| Expr::binary(BinaryOp::Pow, a, Expr::Constant(k as f64))),
                inner
                    .clone()
                    .prop_map(move |a| Expr::binary(BinaryOp::Pow, pos(a), Expr::Constant(0.5))),
                inner.clone().prop_map(|a| Expr::unary(UnaryOp::Neg, a)),
                inner.clone().prop_map(|a| Expr::unary(UnaryOp::Sin, a)),
                inner.clone().prop_map(|a| Expr::unary(UnaryOp::Cos, a)),
                inner.clone().prop_map(|a| Expr::unary(UnaryOp::Tanh, a)),
                inner.clone().prop_map(|a| Expr::unary(UnaryOp::Exp, Expr::unary(UnaryOp::Sin, a))),
                inner.prop_map(|a| Expr::unary(UnaryOp::Abs, a)),
            ]
        })
    }

    fn bindings(x: f64, y: f64, u: f64) -> Bindings {
        Bindings::new().with(Var::X1, x).with(Var::Y1, y).with(Var::U, u)
    }

    /// True when some `abs` argument comes within `eps` of its kink on [u-t, u+t].
    fn near_abs_kink(e: &Expr, x: f64, y: f64, u: f64, t: f64, eps: f64) -> bool {
        match e {
            Expr::Constant(_) | Expr::Variable(_) => false,
            Expr::Unary(op, a) => {
                let here = *op == UnaryOp::Abs
                    && [u - t, u, u + t].iter().any(|&uu| {
                        a.evaluate(&bindings(x, y, uu)).map_or(true, |v| v.abs() < eps)
                    });
                here || near_abs_kink(a, x, y, u, t, eps)
            }
            Expr::Binary(_, a, b) => {
                near_abs_kink(a, x, y, u, t, eps) || near_abs_kink(b, x, y, u, t, eps)
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn derivative_matches_central_difference(
            e in arb_expr(),
            x in -2.0..2.0f64,
            y in -2.0..2.0f64,
            u in -2.0..2.0f64,
        ) {
            let t = 1e-6;
            prop_assume!(!near_abs_kink(&e, x, y, u, t, 1e-4));
            let f = |uu: f64| e.evaluate(&bindings(x, y, uu)).unwrap();
            let value = f(u);
            // keep rounding in the difference quotient below the tolerance
            prop_assume!(value.abs() <= 1e3);
            let fd = (f(u + t) - f(u - t)) / (2.0 * t);
            let d = e.differentiate_u().evaluate(&bindings(x, y, u)).unwrap();
            prop_assert!(
                (d - fd).abs() <= 1e-6 * (1.0 + value.abs().max(d.abs())),
                "e = {e}, d = {d}, fd = {fd}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn print_parse_round_trip(e in arb_expr(), pts in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 100)) {
            let once = Expr::parse(&e.to_string()).unwrap();
            let twice = Expr::parse(&once.to_string()).unwrap();
            for (x, y, u) in pts {
                let b = bindings(x, y, u);
                let a = once.evaluate(&b).map(f64::to_bits).ok();
                let c = twice.evaluate(&b).map(f64::to_bits).ok();
                prop_assert_eq!(a, c);
                prop_assert_eq!(a, e.evaluate(&b).map(f64::to_bits).ok());
            }
        }

        #[test]
        fn evaluation_is_pure(e in arb_expr(), x in -2.0..2.0f64, u in -2.0..2.0f64) {
            let b = bindings(x, 0.5, u);
            let first = e.evaluate(&b).map(f64::to_bits).ok();
            prop_assert_eq!(first, e.evaluate(&b).map(f64::to_bits).ok());
        }
    }
}
