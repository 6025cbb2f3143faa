//! Arithmetic expressions for coefficient functions.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | ident | ident '(' args ')' | '(' expr ')'
//!          | 'case' '(' cond ',' expr ',' expr ')'
//! cond    := expr ('<' | '<=' | '>' | '>=') expr
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. Functions: `sin cos exp abs sqrt ln tanh` (one argument),
//! `min max` (two or more). The only named constant is `pi`.
//! `case(c, a, b)` evaluates to `a` when `c` holds and `b` otherwise; `c`
//! may only mention `x` and `t`, which keeps the state dependence of every
//! coefficient continuous.

use std::fmt;

use crate::error::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    Ln,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "ln" => Func::Ln,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
    Case(Box<Cond>, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, PartialEq)]
struct Cond {
    op: CmpOp,
    lhs: Node,
    rhs: Node,
}

impl Node {
    fn eval(&self, args: &[f64]) -> f64 {
        match self {
            Node::Num(c) => *c,
            Node::Var(i) => args[*i],
            Node::Neg(a) => -a.eval(args),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(args), b.eval(args));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
            Node::Call(f, xs) => match f {
                Func::Min => xs.iter().map(|n| n.eval(args)).fold(f64::INFINITY, f64::min),
                Func::Max => xs.iter().map(|n| n.eval(args)).fold(f64::NEG_INFINITY, f64::max),
                _ => {
                    let a = xs[0].eval(args);
                    match f {
                        Func::Sin => a.sin(),
                        Func::Cos => a.cos(),
                        Func::Exp => a.exp(),
                        Func::Abs => a.abs(),
                        Func::Sqrt => a.sqrt(),
                        Func::Ln => a.ln(),
                        Func::Tanh => a.tanh(),
                        Func::Min | Func::Max => unreachable!(),
                    }
                }
            },
            Node::Case(c, a, b) => {
                if c.holds(args) {
                    a.eval(args)
                } else {
                    b.eval(args)
                }
            }
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Node::Num(_) => true,
            Node::Var(_) => false,
            Node::Neg(a) => a.is_constant(),
            Node::Bin(_, a, b) => a.is_constant() && b.is_constant(),
            Node::Call(_, xs) => xs.iter().all(Node::is_constant),
            Node::Case(c, a, b) => c.lhs.is_constant() && c.rhs.is_constant() && a.is_constant() && b.is_constant(),
        }
    }

    fn collect_breakpoints(&self, var: usize, out: &mut Vec<f64>) {
        match self {
            Node::Num(_) | Node::Var(_) => {}
            Node::Neg(a) => a.collect_breakpoints(var, out),
            Node::Bin(_, a, b) => {
                a.collect_breakpoints(var, out);
                b.collect_breakpoints(var, out);
            }
            Node::Call(_, xs) => xs.iter().for_each(|n| n.collect_breakpoints(var, out)),
            Node::Case(c, a, b) => {
                let threshold = match (&c.lhs, &c.rhs) {
                    (Node::Var(i), other) | (other, Node::Var(i)) if *i == var && other.is_constant() => {
                        Some(other.eval(&[]))
                    }
                    _ => None,
                };
                out.extend(threshold.filter(|v| v.is_finite()));
                a.collect_breakpoints(var, out);
                b.collect_breakpoints(var, out);
            }
        }
    }

    fn vars_used(&self, out: &mut Vec<usize>) {
        match self {
            Node::Num(_) => {}
            Node::Var(i) => out.push(*i),
            Node::Neg(a) => a.vars_used(out),
            Node::Bin(_, a, b) => {
                a.vars_used(out);
                b.vars_used(out);
            }
            Node::Call(_, xs) => xs.iter().for_each(|n| n.vars_used(out)),
            Node::Case(c, a, b) => {
                c.lhs.vars_used(out);
                c.rhs.vars_used(out);
                a.vars_used(out);
                b.vars_used(out);
            }
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

impl Cond {
    fn holds(&self, args: &[f64]) -> bool {
        let (l, r) = (self.lhs.eval(args), self.rhs.eval(args));
        match self.op {
            CmpOp::Lt => l < r,
            CmpOp::Le => l <= r,
            CmpOp::Gt => l > r,
            CmpOp::Ge => l >= r,
        }
    }
}

// ---------------------------------------------------------------------------
// Printing. Every compound node is parenthesised and numbers use the shortest
// round-trip representation, so printing then parsing reproduces the tree.

struct Printer<'a> {
    node: &'a Node,
    vars: &'a [String],
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = |node| Printer { node, vars: self.vars };
        match self.node {
            Node::Num(c) if c.is_sign_negative() => write!(f, "({c:?})"),
            Node::Num(c) => write!(f, "{c:?}"),
            Node::Var(i) => f.write_str(&self.vars[*i]),
            Node::Neg(a) => write!(f, "(-{})", p(a)),
            Node::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({} {sym} {})", p(a), p(b))
            }
            Node::Call(func, xs) => {
                write!(f, "{}(", func.name())?;
                for (k, x) in xs.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", p(x))?;
                }
                f.write_str(")")
            }
            Node::Case(c, a, b) => {
                let sym = match c.op {
                    CmpOp::Lt => "<",
                    CmpOp::Le => "<=",
                    CmpOp::Gt => ">",
                    CmpOp::Ge => ">=",
                };
                write!(f, "case({} {sym} {}, {}, {})", p(&c.lhs), p(&c.rhs), p(a), p(b))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    Cmp(CmpOp),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError {
                pos: start,
                kind: ParseErrorKind::InvalidNumber(text.to_string()),
            })?;
            if !value.is_finite() {
                return Err(ParseError {
                    pos: start,
                    kind: ParseErrorKind::InvalidNumber(text.to_string()),
                });
            }
            out.push((start, Tok::Num(value)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            '<' | '>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                if eq {
                    i += 1;
                }
                Tok::Cmp(match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                })
            }
            _ => {
                // Report the full (possibly multi-byte) character.
                let ch = src[start..].chars().next().unwrap_or(c);
                return Err(ParseError {
                    pos: start,
                    kind: ParseErrorKind::UnexpectedChar(ch),
                });
            }
        };
        i += 1;
        out.push((start, tok));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    vars: &'a [String],
    cond_vars: &'a [usize],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            pos: self.offset(),
            kind,
        }
    }

    fn unexpected(&self) -> ParseError {
        match self.peek() {
            None => self.err(ParseErrorKind::UnexpectedEnd),
            Some(t) => self.err(ParseErrorKind::UnexpectedToken(format!("{t:?}"))),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let at = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    if name == "case" {
                        return self.case(at);
                    }
                    let func = Func::lookup(&name).ok_or(ParseError {
                        pos: at,
                        kind: ParseErrorKind::UnknownFunction(name.clone()),
                    })?;
                    let args = self.args()?;
                    let ok = if func.variadic() {
                        args.len() >= 2
                    } else {
                        args.len() == 1
                    };
                    if !ok {
                        return Err(ParseError {
                            pos: at,
                            kind: ParseErrorKind::Arity {
                                name,
                                expected: if func.variadic() { "2 or more" } else { "1" }.to_string(),
                                found: args.len(),
                            },
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                Err(ParseError {
                    pos: at,
                    kind: ParseErrorKind::UnknownVariable(name),
                })
            }
            _ => Err(self.unexpected()),
        }
    }

    fn args(&mut self) -> Result<Vec<Node>, ParseError> {
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            match self.peek() {
                Some(Tok::Comma) => self.pos += 1,
                Some(Tok::RParen) => {
                    self.pos += 1;
                    return Ok(args);
                }
                _ => return Err(self.unexpected()),
            }
        }
    }

    fn case(&mut self, at: usize) -> Result<Node, ParseError> {
        let cond_at = self.offset();
        let lhs = self.expr()?;
        let op = match self.peek() {
            Some(Tok::Cmp(op)) => *op,
            _ => return Err(self.unexpected()),
        };
        self.pos += 1;
        let rhs = self.expr()?;
        let mut used = Vec::new();
        lhs.vars_used(&mut used);
        rhs.vars_used(&mut used);
        if let Some(bad) = used.iter().find(|i| !self.cond_vars.contains(i)) {
            return Err(ParseError {
                pos: cond_at,
                kind: ParseErrorKind::StateInCondition(self.vars[*bad].clone()),
            });
        }
        self.expect(Tok::Comma)?;
        let a = self.expr()?;
        self.expect(Tok::Comma)?;
        let b = self.expr()?;
        if self.peek() != Some(&Tok::RParen) {
            return Err(match self.peek() {
                Some(Tok::Comma) => ParseError {
                    pos: at,
                    kind: ParseErrorKind::Arity {
                        name: "case".into(),
                        expected: "3".into(),
                        found: 4,
                    },
                },
                _ => self.unexpected(),
            });
        }
        self.pos += 1;
        Ok(Node::Case(Box::new(Cond { op, lhs, rhs }), Box::new(a), Box::new(b)))
    }
}

/// A parsed scalar function of a fixed, ordered list of variables.
///
/// Equality compares the canonical printed form, so two functions are equal
/// exactly when they parse to the same tree over the same variables.
#[derive(Debug, Clone)]
pub struct CoeffFn {
    vars: Vec<String>,
    root: Node,
    canonical: String,
    breakpoints: Vec<f64>,
}

impl PartialEq for CoeffFn {
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars && self.canonical == other.canonical
    }
}

impl CoeffFn {
    /// Parses `source` as a function of `vars` (in argument order).
    pub fn parse(source: &str, vars: &[&str]) -> Result<Self, ParseError> {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let cond_vars: Vec<usize> = vars
            .iter()
            .enumerate()
            .filter(|(_, v)| *v == "x" || *v == "t")
            .map(|(i, _)| i)
            .collect();
        let toks = lex(source)?;
        let mut p = Parser {
            toks,
            pos: 0,
            end: source.len(),
            vars: &vars,
            cond_vars: &cond_vars,
        };
        if p.peek().is_none() {
            return Err(p.err(ParseErrorKind::UnexpectedEnd));
        }
        let root = p.expr()?;
        if p.peek().is_some() {
            return Err(p.err(ParseErrorKind::TrailingInput));
        }
        let canonical = Printer {
            node: &root,
            vars: &vars,
        }
        .to_string();
        let mut breakpoints = Vec::new();
        if let Some(xi) = vars.iter().position(|v| v == "x") {
            root.collect_breakpoints(xi, &mut breakpoints);
            breakpoints.sort_by(f64::total_cmp);
            breakpoints.dedup();
        }
        Ok(CoeffFn {
            vars,
            root,
            canonical,
            breakpoints,
        })
    }

    /// The constant function `value` over `vars`.
    pub fn constant(value: f64, vars: &[&str]) -> Self {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let root = Node::Num(value);
        let canonical = Printer {
            node: &root,
            vars: &vars,
        }
        .to_string();
        CoeffFn {
            vars,
            root,
            canonical,
            breakpoints: Vec::new(),
        }
    }

    #[inline]
    pub fn eval(&self, args: &[f64]) -> f64 {
        debug_assert_eq!(args.len(), self.vars.len());
        self.root.eval(args)
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    /// Canonical, fully parenthesised source text.
    pub fn source(&self) -> &str {
        &self.canonical
    }

    /// Sorted `x` thresholds of `case` conditions of the form `x <op> const`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn is_constant(&self) -> bool {
        self.root.is_constant()
    }
}

impl fmt::Display for CoeffFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UVX: &[&str] = &["u", "v", "x"];

    #[test]
    fn coupling_term_value() {
        let f = CoeffFn::parse("sin(u+v)/(3-x)", UVX).unwrap();
        let expected = 2f64.sin() / 3.0;
        assert_eq!(f.eval(&[1.0, 1.0, 0.0]), expected);
        assert!((f.eval(&[1.0, 1.0, 0.0]) - 0.30310).abs() < 1e-5);
    }

    #[test]
    fn zero_function() {
        let f = CoeffFn::parse("0", UVX).unwrap();
        assert_eq!(f.eval(&[3.0, -2.0, 0.4]), 0.0);
        assert!(f.is_constant());
    }

    #[test]
    fn piecewise_speed() {
        let f = CoeffFn::parse("case(x<0.5, 0.2, 2-x)", &["x"]).unwrap();
        assert_eq!(f.eval(&[0.75]), 1.25);
        assert_eq!(f.eval(&[0.25]), 0.2);
        assert_eq!(f.eval(&[0.5]), 1.5);
        assert_eq!(f.breakpoints(), &[0.5]);
    }

    #[test]
    fn precedence() {
        let f = CoeffFn::parse("-x^2 + 2*3^2^0.5 - 8/4/2", &["x"]).unwrap();
        let expected = -(3f64 * 3.0) + 2.0 * 3f64.powf(2f64.powf(0.5)) - 1.0;
        assert_eq!(f.eval(&[3.0]), expected);
    }

    #[test]
    fn min_max_and_constants() {
        let f = CoeffFn::parse("max(0.05, 0.25*x, -1) + min(x, 2) * pi", &["x"]).unwrap();
        assert_eq!(f.eval(&[1.0]), 0.25 + std::f64::consts::PI);
    }

    #[test]
    fn scientific_literals() {
        let f = CoeffFn::parse("1e-3 + 2.5E2*x", &["x"]).unwrap();
        assert_eq!(f.eval(&[2.0]), 1e-3 + 500.0);
    }

    #[test]
    fn unknown_variable_rejected() {
        let err = CoeffFn::parse("u + y", &["u", "v", "x"]).unwrap_err();
        assert_eq!(err.pos, 4);
        assert_eq!(err.kind, ParseErrorKind::UnknownVariable("y".into()));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = CoeffFn::parse("1 + * x", &["x"]).unwrap_err();
        assert_eq!(err.pos, 4);
        let err = CoeffFn::parse("(x + 1", &["x"]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd);
        assert_eq!(err.pos, 6);
        let err = CoeffFn::parse("x # 2", &["x"]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnexpectedChar('#'));
        let err = CoeffFn::parse("x 2", &["x"]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::TrailingInput);
        assert!(CoeffFn::parse("", &["x"]).is_err());
        assert!(CoeffFn::parse("1e999", &["x"]).is_err());
    }

    #[test]
    fn arity_mismatch() {
        let err = CoeffFn::parse("sin(x, 1)", &["x"]).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Arity { found: 2, .. }));
        let err = CoeffFn::parse("max(x)", &["x"]).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Arity { found: 1, .. }));
        assert!(CoeffFn::parse("case(x < 1, 2, 3, 4)", &["x"]).is_err());
        assert!(matches!(
            CoeffFn::parse("foo(x)", &["x"]).unwrap_err().kind,
            ParseErrorKind::UnknownFunction(_)
        ));
    }

    #[test]
    fn state_not_allowed_in_condition() {
        let err = CoeffFn::parse("case(u < 0, 1, 2)", UVX).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::StateInCondition("u".into()));
        assert!(CoeffFn::parse("case(x < 0.3, u, v)", UVX).is_ok());
        assert!(CoeffFn::parse("case(t >= 1, v, 0)", &["v", "t"]).is_ok());
    }

    #[test]
    fn canonical_form_reparses() {
        let f = CoeffFn::parse("case(x<0.5, 0.2, 2-x) * -exp(-x)", &["x"]).unwrap();
        let g = CoeffFn::parse(f.source(), &["x"]).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.source(), f.source());
    }
}
