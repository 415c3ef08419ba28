//! The coordinate-expression language used by scenario files.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          // right associative
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! func   := exp | ln | sin | cos | sqrt
//! ```
//!
//! Identifiers are chart coordinates or the reserved time `t`. Numbers are
//! double precision and accept scientific notation (`2.5e-3`). Nothing is
//! simplified: derivatives come from evaluating over dual numbers.

use std::fmt;
use std::sync::Arc;

use crate::ad::{seed, Scalar};
use crate::error::{Error, Result};

pub const TIME: &str = "t";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    Coord(usize),
    Time,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    /// `int_exp` caches a constant integer exponent so that negative bases
    /// such as `p1^2` stay in the domain.
    Pow {
        base: Box<Node>,
        exp: Box<Node>,
        int_exp: Option<i32>,
    },
    Call(Func, Box<Node>),
}

impl Node {
    fn precedence(&self) -> u8 {
        match self {
            Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Node::Neg(_) => 3,
            Node::Pow { .. } => 4,
            _ => 5,
        }
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Node::Num(v) => Some(*v),
            Node::Var(_) => None,
            Node::Neg(a) => a.constant().map(|v| -v),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.constant()?, b.constant()?);
                Some(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                })
            }
            Node::Pow { .. } | Node::Call(..) => None,
        }
    }

    fn pow(base: Node, exp: Node) -> Node {
        let int_exp = exp
            .constant()
            .filter(|v| v.fract() == 0.0 && v.abs() <= i32::MAX as f64)
            .map(|v| v as i32);
        Node::Pow {
            base: Box::new(base),
            exp: Box::new(exp),
            int_exp,
        }
    }

    fn uses_time(&self) -> bool {
        match self {
            Node::Var(Var::Time) => true,
            Node::Num(_) | Node::Var(_) => false,
            Node::Neg(a) | Node::Call(_, a) => a.uses_time(),
            Node::Bin(_, a, b) => a.uses_time() || b.uses_time(),
            Node::Pow { base, exp, .. } => base.uses_time() || exp.uses_time(),
        }
    }

    fn eval<S: Scalar>(&self, env: &Env<'_, S>) -> Result<S> {
        Ok(match self {
            Node::Num(v) => S::from_f64(*v),
            Node::Var(Var::Coord(i)) => *env
                .coords
                .get(*i)
                .ok_or_else(|| Error::Evaluation(format!("coordinate index {i} is unbound")))?,
            Node::Var(Var::Time) => env
                .time
                .ok_or_else(|| Error::Evaluation("time `t` is unbound".into()))?,
            Node::Neg(a) => -a.eval(env)?,
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(env)?, b.eval(env)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.primal() == 0.0 {
                            return Err(Error::Domain("division by zero".into()));
                        }
                        a / b
                    }
                }
            }
            Node::Pow { base, exp, int_exp } => {
                let b = base.eval(env)?;
                match int_exp {
                    Some(n) => {
                        if *n < 0 && b.primal() == 0.0 {
                            return Err(Error::Domain("zero raised to a negative power".into()));
                        }
                        b.powi(*n)
                    }
                    None => {
                        if b.primal() <= 0.0 {
                            return Err(Error::Domain(format!(
                                "non-integer power of non-positive base {}",
                                b.primal()
                            )));
                        }
                        b.powf(exp.eval(env)?)
                    }
                }
            }
            Node::Call(f, a) => {
                let a = a.eval(env)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Ln => {
                        if a.primal() <= 0.0 {
                            return Err(Error::Domain(format!("ln of non-positive value {}", a.primal())));
                        }
                        a.ln()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Sqrt => {
                        if a.primal() < 0.0 {
                            return Err(Error::Domain(format!("sqrt of negative value {}", a.primal())));
                        }
                        a.sqrt()
                    }
                }
            }
        })
    }
}

/// Values bound to the free identifiers of an expression.
#[derive(Clone, Copy, Debug)]
pub struct Env<'a, S> {
    pub coords: &'a [S],
    pub time: Option<S>,
}

impl<'a, S> Env<'a, S> {
    pub fn new(coords: &'a [S]) -> Self {
        Env { coords, time: None }
    }

    pub fn with_time(coords: &'a [S], t: S) -> Self {
        Env { coords, time: Some(t) }
    }
}

/// A parsed expression together with the coordinate names it was resolved
/// against.
#[derive(Clone, Debug)]
pub struct Expression {
    root: Node,
    names: Arc<[String]>,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Expression {
    /// Parses `text`, resolving identifiers against `coords` (and `t`).
    pub fn parse<S: AsRef<str>>(text: &str, coords: &[S]) -> Result<Expression> {
        let names: Arc<[String]> = coords.iter().map(|s| s.as_ref().to_string()).collect();
        let tokens = lex(text)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            names: &names,
        };
        let root = p.expr()?;
        p.expect_end()?;
        Ok(Expression { root, names })
    }

    pub fn constant(value: f64, coords: &[impl AsRef<str>]) -> Expression {
        Expression {
            root: Node::Num(value),
            names: coords.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn coordinates(&self) -> &[String] {
        &self.names
    }

    pub fn uses_time(&self) -> bool {
        self.root.uses_time()
    }

    /// The expression's value, as a constant, when it has no free identifiers.
    pub fn as_constant(&self) -> Option<f64> {
        self.root.constant()
    }

    pub fn eval<S: Scalar>(&self, env: &Env<'_, S>) -> Result<S> {
        self.root.eval(env)
    }

    /// `∂self/∂coordinate` at `env` in one forward pass. `coordinate` may be a
    /// chart coordinate or `t`.
    pub fn partial<S: Scalar>(&self, coordinate: &str, env: &Env<'_, S>) -> Result<S> {
        if let Some(i) = self.names.iter().position(|n| n == coordinate) {
            let coords = seed(env.coords, i);
            let time = env.time.map(crate::ad::Dual::constant);
            Ok(self.root.eval(&Env { coords: &coords, time })?.eps)
        } else if coordinate == TIME {
            let coords: Vec<_> = env.coords.iter().map(|&c| crate::ad::Dual::constant(c)).collect();
            match env.time {
                Some(t) => Ok(self
                    .root
                    .eval(&Env {
                        coords: &coords,
                        time: Some(crate::ad::Dual::variable(t)),
                    })?
                    .eps),
                None if !self.uses_time() => Ok(S::zero()),
                None => Err(Error::Evaluation("time `t` is unbound".into())),
            }
        } else {
            Err(Error::UnknownIdentifier(coordinate.to_string()))
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        render(&self.root, &self.names, f)
    }
}

fn render(node: &Node, names: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let child = |n: &Node, paren: bool, f: &mut fmt::Formatter<'_>| -> fmt::Result {
        if paren {
            f.write_str("(")?;
            render(n, names, f)?;
            f.write_str(")")
        } else {
            render(n, names, f)
        }
    };
    match node {
        Node::Num(v) => write!(f, "{v:?}"),
        Node::Var(Var::Coord(i)) => f.write_str(&names[*i]),
        Node::Var(Var::Time) => f.write_str(TIME),
        Node::Neg(a) => {
            f.write_str("-")?;
            child(a, a.precedence() < 3, f)
        }
        Node::Bin(op, a, b) => {
            let p = node.precedence();
            child(a, a.precedence() < p, f)?;
            f.write_str(match op {
                BinOp::Add => " + ",
                BinOp::Sub => " - ",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            })?;
            child(b, b.precedence() <= p, f)
        }
        Node::Pow { base, exp, .. } => {
            child(base, base.precedence() <= 4, f)?;
            f.write_str("^")?;
            child(exp, exp.precedence() < 3, f)
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            render(a, names, f)?;
            f.write_str(")")
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
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
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| Error::Syntax {
                line: tl,
                column: tc,
                expected: vec!["number".into()],
            })?;
            if !v.is_finite() {
                return Err(Error::Syntax {
                    line: tl,
                    column: tc,
                    expected: vec!["finite number".into()],
                });
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Num(v),
                line: tl,
                column: tc,
            });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                column: tc,
            });
            continue;
        }
        if "+-*/^()".contains(c) {
            out.push(Token {
                tok: Tok::Sym(c),
                line: tl,
                column: tc,
            });
            i += 1;
            col += 1;
            continue;
        }
        return Err(Error::Syntax {
            line: tl,
            column: tc,
            expected: vec![
                "number".into(),
                "identifier".into(),
                "operator".into(),
                "parenthesis".into(),
            ],
        });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn error(&self, expected: &[&str]) -> Error {
        let (line, column) = match self.tokens.get(self.pos) {
            Some(t) => (t.line, t.column),
            None => self.tokens.last().map(|t| (t.line, t.column + 1)).unwrap_or((1, 1)),
        };
        Error::Syntax {
            line,
            column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            Err(self.error(&["operator", "end of input"]))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            Ok(Node::pow(base, exp))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Sym('(')) {
                    let func = Func::from_name(&name).ok_or_else(|| Error::UnknownIdentifier(name.clone()))?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return Err(self.error(&[")"]));
                    }
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if let Some(i) = self.names.iter().position(|n| *n == name) {
                    Ok(Node::Var(Var::Coord(i)))
                } else if name == TIME {
                    Ok(Node::Var(Var::Time))
                } else {
                    Err(Error::UnknownIdentifier(name))
                }
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error(&[")"]));
                }
                Ok(inner)
            }
            _ => Err(self.error(&["number", "identifier", "function call", "("])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::D1;
    use approx::assert_relative_eq;

    const SEC4: [&str; 4] = ["q1", "q2", "p1", "p2"];
    const SEC5: [&str; 4] = ["x", "y", "w", "z"];

    fn eval(text: &str, names: &[&str], at: &[f64]) -> Result<f64> {
        Expression::parse(text, names)?.eval(&Env::new(at))
    }

    fn central(e: &Expression, i: usize, at: &[f64]) -> f64 {
        let h = 1e-6;
        let mut p = at.to_vec();
        p[i] += h;
        let fp = e.eval(&Env::new(&p)).unwrap();
        p[i] -= 2.0 * h;
        let fm = e.eval(&Env::new(&p)).unwrap();
        (fp - fm) / (2.0 * h)
    }

    #[test]
    fn sec4_hamiltonian_structure() {
        let e = Expression::parse("(p1^2 + p2^2)/2 - 1/q1 - 1/q2", &SEC4).unwrap();
        // ((p1^2 + p2^2)/2 - 1/q1) - 1/q2
        match e.root() {
            Node::Bin(BinOp::Sub, lhs, rhs) => {
                assert!(matches!(**rhs, Node::Bin(BinOp::Div, ..)));
                assert!(matches!(**lhs, Node::Bin(BinOp::Sub, ..)));
            }
            other => panic!("unexpected root {other:?}"),
        }
        assert_relative_eq!(e.eval(&Env::new(&[1.0, 2.0, 2.0, 1.0])).unwrap(), 2.5 - 1.0 - 0.5);
    }

    #[test]
    fn zero_is_constant() {
        let e = Expression::parse("0", &SEC4).unwrap();
        assert_eq!(e.root(), &Node::Num(0.0));
        assert_eq!(e.as_constant(), Some(0.0));
    }

    #[test]
    fn sec5_hamiltonian_value() {
        assert_eq!(eval("z + y/w", &SEC5, &[0.0, 1.0, 1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(eval("exp(-x)/w", &SEC5, &[0.0, 1.0, 1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn exp_of_zero() {
        assert_eq!(eval("exp(1.0*q2)", &SEC4, &[0.3, 0.0, 1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn dual_seed_on_reciprocal() {
        let e = Expression::parse("-1/p1", &SEC4).unwrap();
        let at = [
            D1::constant(1.0),
            D1::constant(1.0),
            D1::variable(2.0),
            D1::constant(0.0),
        ];
        let v = e.eval(&Env::new(&at)).unwrap();
        assert_eq!(v.re, -0.5);
        assert_eq!(v.eps, 0.25);
    }

    #[test]
    fn partials_against_finite_differences() {
        let h = Expression::parse("(p1^2 + p2^2)/2 - 1/q1 - 1/q2", &SEC4).unwrap();
        let at = [1.0, 1.5, 0.5, -0.3];
        let ad = h.partial("q1", &Env::new(&at)).unwrap();
        assert_relative_eq!(ad, 1.0, max_relative = 1e-14);
        assert_relative_eq!(ad, central(&h, 0, &at), max_relative = 1e-8);

        let g = Expression::parse("z + y/w", &SEC5).unwrap();
        let at = [0.0, 1.0, 1.0, 1.0];
        let ad = g.partial("w", &Env::new(&at)).unwrap();
        assert_relative_eq!(ad, -1.0, max_relative = 1e-14);
        assert_relative_eq!(ad, central(&g, 2, &at), max_relative = 1e-8);
    }

    #[test]
    fn time_partial_of_time_free_expression() {
        let g = Expression::parse("z + y/w", &SEC5).unwrap();
        assert_eq!(g.partial("t", &Env::new(&[0.0, 1.0, 1.0, 1.0])).unwrap(), 0.0);
        let tw = Expression::parse("t*w", &SEC5).unwrap();
        let env = Env::with_time(&[0.0, 1.0, 3.0, 1.0][..], 2.0);
        assert_eq!(tw.partial("t", &env).unwrap(), 3.0);
        assert_eq!(tw.partial("w", &env).unwrap(), 2.0);
    }

    #[test]
    fn log_form_matches_reciprocal() {
        let a = Expression::parse("exp(-ln(p1))", &SEC4).unwrap();
        let b = Expression::parse("1/p1", &SEC4).unwrap();
        for k in 1..50 {
            let p1 = 0.05 * k as f64;
            let at = [0.4, -1.0, p1, 0.7];
            let (va, vb) = (a.eval(&Env::new(&at)).unwrap(), b.eval(&Env::new(&at)).unwrap());
            assert_relative_eq!(va, vb, max_relative = 1e-14);
            let (da, db) = (
                a.partial("p1", &Env::new(&at)).unwrap(),
                b.partial("p1", &Env::new(&at)).unwrap(),
            );
            assert_relative_eq!(da, db, max_relative = 1e-13);
        }
    }

    #[test]
    fn precedence_and_associativity() {
        let n = ["a", "b", "c"];
        let at = [2.0, 3.0, 2.0];
        assert_eq!(eval("-a^2", &n, &at).unwrap(), -4.0);
        assert_eq!(eval("a^b^c", &n, &at).unwrap(), 512.0);
        assert_eq!(eval("a^-1", &n, &at).unwrap(), 0.5);
        assert_eq!(eval("a - b - c", &n, &at).unwrap(), -3.0);
        assert_eq!(eval("a / b * c", &n, &at).unwrap(), 4.0 / 3.0);
        assert_eq!(eval("(-a)^2", &n, &at).unwrap(), 4.0);
        assert_eq!(eval("2.5e-1 * 4E1", &n, &at).unwrap(), 10.0);
    }

    #[test]
    fn integer_powers_of_negative_bases() {
        assert_eq!(eval("p1^3", &SEC4, &[0.0, 0.0, -2.0, 0.0]).unwrap(), -8.0);
        assert!(matches!(
            eval("p1^0.5", &SEC4, &[0.0, 0.0, -2.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            Expression::parse("q1 + r", &SEC4),
            Err(Error::UnknownIdentifier(n)) if n == "r"
        ));
        assert!(matches!(
            Expression::parse("tan(q1)", &SEC4),
            Err(Error::UnknownIdentifier(_))
        ));
        match Expression::parse("q1 +\n  * p1", &SEC4) {
            Err(Error::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Expression::parse("(q1", &SEC4), Err(Error::Syntax { .. })));
        assert!(matches!(Expression::parse("q1 q2", &SEC4), Err(Error::Syntax { .. })));
        assert!(matches!(Expression::parse("q1 $ 2", &SEC4), Err(Error::Syntax { .. })));
        assert!(matches!(
            eval("ln(q1)", &SEC4, &[-1.0, 0.0, 0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            eval("1/q1", &SEC4, &[0.0, 0.0, 0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            eval("t*q1", &SEC4, &[1.0, 0.0, 0.0, 0.0]),
            Err(Error::Evaluation(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const VARS: [&str; 3] = ["x", "y", "z"];

        fn source() -> impl Strategy<Value = String> {
            let leaf = prop_oneof![
                (0u32..100, 0u32..4).prop_map(|(a, e)| format!("{}.{}e-{e}", a / 10, a % 10)),
                prop::sample::select(vec!["x", "y", "z", "t"]).prop_map(String::from),
            ];
            leaf.prop_recursive(5, 40, 3, |inner| {
                prop_oneof![
                    (
                        inner.clone(),
                        prop::sample::select(vec!["+", "-", "*", "/", "^"]),
                        inner.clone()
                    )
                        .prop_map(|(a, op, b)| format!("{a} {op} {b}")),
                    inner.clone().prop_map(|a| format!("-{a}")),
                    inner.clone().prop_map(|a| format!("({a})")),
                    (prop::sample::select(vec!["exp", "ln", "sin", "cos", "sqrt"]), inner)
                        .prop_map(|(f, a)| format!("{f}({a})")),
                ]
            })
        }

        proptest! {
            #[test]
            fn render_round_trip(src in source()) {
                let e = Expression::parse(&src, &VARS).unwrap();
                let again = Expression::parse(&e.to_string(), &VARS).unwrap();
                prop_assert_eq!(e.root(), again.root());
            }

            #[test]
            fn dual_and_real_agree_on_primal(
                src in source(),
                x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0, t in -1.0f64..1.0,
            ) {
                let e = Expression::parse(&src, &VARS).unwrap();
                let real = e.eval(&Env::with_time(&[x, y, z][..], t));
                let duals = [D1::variable(x), D1::constant(y), D1::constant(z)];
                let dual = e.eval(&Env::with_time(&duals[..], D1::constant(t)));
                match (real, dual) {
                    (Ok(r), Ok(d)) => prop_assert!(r == d.re || (r.is_nan() && d.re.is_nan())),
                    (Err(_), Err(_)) => {}
                    (r, d) => prop_assert!(false, "disagreement: {:?} vs {:?}", r, d),
                }
            }

            #[test]
            fn partial_matches_central_difference(
                a in -2.0f64..2.0, b in -2.0f64..2.0, c in 0.5f64..2.0,
                x in -1.5f64..1.5, y in -1.5f64..1.5, z in 0.3f64..2.0,
            ) {
                // Smooth family covering every elementary function; z stays
                // at least 0.3 away from the singular sets of ln/sqrt/division.
                let src = format!(
                    "{a}*x^3*y - exp({b}*x)*sin(y) + cos(x*y)/z + ln(z)*sqrt(z + {c}) + (x - y)^2/(1 + z^2)"
                );
                let e = Expression::parse(&src, &VARS).unwrap();
                let at = [x, y, z];
                for (i, name) in VARS.iter().enumerate() {
                    let ad = e.partial(name, &Env::new(&at)).unwrap();
                    let fd = central(&e, i, &at);
                    prop_assert!((ad - fd).abs() <= 1e-5 * ad.abs().max(1.0), "{}: {} vs {}", name, ad, fd);
                }
            }
        }
    }
}
