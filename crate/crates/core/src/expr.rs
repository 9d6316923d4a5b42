//! Arithmetic expression language used for dynamics, feedback laws, scenarios
//! and candidate quantities.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          // right associative
//! primary := number | 'pi' | 'e' | variable | func '(' args ')' | '(' expr ')'
//! ```
//!
//! Variables are `t`, `h`, `phi[j]`, `dphi[j]`, `u[i][j]`, `uo[i][j]`,
//! `eps[i][j]` and `v[i][j]`, with player/coalition ids `i >= 1` and component
//! indices `j >= 0`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

/// A variable reference. Player and coalition ids are 1-based, components 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    T,
    H,
    Phi(usize),
    DPhi(usize),
    U(usize, usize),
    Uo(usize, usize),
    Eps(usize, usize),
    V(usize, usize),
}

impl Var {
    /// Parses a fully indexed name such as `uo[1][0]`.
    pub fn parse(name: &str) -> Result<Var, ParseError> {
        match parse(name)? {
            Expr::Var(v) => Ok(v),
            _ => Err(ParseError {
                offset: 0,
                kind: ParseErrorKind::NotAVariable(name.to_string()),
            }),
        }
    }

    /// The player or coalition id for indexed control variables.
    pub fn owner(&self) -> Option<usize> {
        match *self {
            Var::U(i, _) | Var::Uo(i, _) | Var::Eps(i, _) | Var::V(i, _) => Some(i),
            _ => None,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Var::T => write!(f, "t"),
            Var::H => write!(f, "h"),
            Var::Phi(j) => write!(f, "phi[{j}]"),
            Var::DPhi(j) => write!(f, "dphi[{j}]"),
            Var::U(i, j) => write!(f, "u[{i}][{j}]"),
            Var::Uo(i, j) => write!(f, "uo[{i}][{j}]"),
            Var::Eps(i, j) => write!(f, "eps[{i}][{j}]"),
            Var::V(i, j) => write!(f, "v[{i}][{j}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

impl Constant {
    pub fn value(self) -> f64 {
        match self {
            Constant::Pi => std::f64::consts::PI,
            Constant::E => std::f64::consts::E,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 9] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Tanh,
        Func::Sqrt,
        Func::Abs,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Const(Constant),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// Unexpected token; the set of tokens that would have been accepted.
    Expected(Vec<&'static str>),
    UnknownFunction(String),
    UnknownIdentifier(String),
    MalformedIndex(String),
    WrongArity {
        func: &'static str,
        expected: usize,
        found: usize,
    },
    NotAVariable(String),
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    /// Byte offset into the source.
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Expected(set) => {
                write!(f, "syntax error, expected one of {{{}}}", set.join(", "))
            }
            ParseErrorKind::UnknownFunction(name) => write!(f, "unknown function `{name}`"),
            ParseErrorKind::UnknownIdentifier(name) => write!(f, "unknown identifier `{name}`"),
            ParseErrorKind::MalformedIndex(msg) => write!(f, "malformed index: {msg}"),
            ParseErrorKind::WrongArity {
                func,
                expected,
                found,
            } => {
                write!(f, "`{func}` takes {expected} argument(s), found {found}")
            }
            ParseErrorKind::NotAVariable(s) => write!(f, "`{s}` is not a variable reference"),
            ParseErrorKind::Empty => write!(f, "empty expression"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable(s): {}", join_vars(.0))]
    Unbound(Vec<Var>),
    #[error("domain error in `{node}`: {reason}")]
    Domain { node: String, reason: &'static str },
}

fn join_vars(vars: &[Var]) -> String {
    vars.iter()
        .map(Var::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Variable bindings for evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Env {
    values: HashMap<Var, f64>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: Var, value: f64) -> &mut Self {
        self.values.insert(var, value);
        self
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.values.insert(var, value);
        self
    }

    /// Binds by textual name, e.g. `env.bind("phi[0]", 2.0)`.
    pub fn bind(&mut self, name: &str, value: f64) -> Result<&mut Self, ParseError> {
        let var = Var::parse(name)?;
        Ok(self.set(var, value))
    }

    pub fn get(&self, var: &Var) -> Option<f64> {
        self.values.get(var).copied()
    }

    pub fn contains(&self, var: &Var) -> bool {
        self.values.contains_key(var)
    }

    pub fn remove(&mut self, var: &Var) -> Option<f64> {
        self.values.remove(var)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl FromIterator<(Var, f64)> for Env {
    fn from_iter<I: IntoIterator<Item = (Var, f64)>>(iter: I) -> Self {
        Env {
            values: iter.into_iter().collect(),
        }
    }
}

/// Parses `source` into an expression tree.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(source);
    p.skip_ws();
    if p.at_end() {
        return Err(ParseError {
            offset: 0,
            kind: ParseErrorKind::Empty,
        });
    }
    let e = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.expected(&["+", "-", "*", "/", "^", "end of input"]));
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

const PRIMARY_START: &[&str] = &["number", "identifier", "-", "("];

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expected(&self, set: &[&'static str]) -> ParseError {
        ParseError {
            offset: self.pos,
            kind: ParseErrorKind::Expected(set.to_vec()),
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.expected(&[")"]));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            _ => Err(self.expected(PRIMARY_START)),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while matches!(p.peek(), Some(c) if c.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ParseError {
                offset: start,
                kind: ParseErrorKind::Expected(vec!["digit"]),
            });
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            // Only an exponent if digits follow; `2e` is otherwise an error.
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save + 1;
                return Err(self.expected(&["digit"]));
            }
        }
        let text = &self.src[start..self.pos];
        let value: f64 = text.parse().map_err(|_| ParseError {
            offset: start,
            kind: ParseErrorKind::Expected(vec!["number"]),
        })?;
        Ok(Expr::Num(value))
    }

    fn index(&mut self) -> Result<usize, ParseError> {
        if !self.eat(b'[') {
            return Err(self.expected(&["["]));
        }
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.expected(&["integer index"]));
        }
        let value = self.src[start..self.pos]
            .parse::<usize>()
            .map_err(|_| ParseError {
                offset: start,
                kind: ParseErrorKind::MalformedIndex("index too large".into()),
            })?;
        if !self.eat(b']') {
            return Err(self.expected(&["]"]));
        }
        Ok(value)
    }

    fn player_index(&mut self) -> Result<usize, ParseError> {
        self.skip_ws();
        let at = self.pos;
        let i = self.index()?;
        if i == 0 {
            return Err(ParseError {
                offset: at,
                kind: ParseErrorKind::MalformedIndex("player and coalition ids start at 1".into()),
            });
        }
        Ok(i)
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        let var = match name {
            "pi" => return Ok(Expr::Const(Constant::Pi)),
            "e" => return Ok(Expr::Const(Constant::E)),
            "t" => Var::T,
            "h" => Var::H,
            "phi" => Var::Phi(self.index()?),
            "dphi" => Var::DPhi(self.index()?),
            "u" | "uo" | "eps" | "v" => {
                let i = self.player_index()?;
                let j = self.index()?;
                match name {
                    "u" => Var::U(i, j),
                    "uo" => Var::Uo(i, j),
                    "eps" => Var::Eps(i, j),
                    _ => Var::V(i, j),
                }
            }
            _ => {
                self.skip_ws();
                if self.peek() == Some(b'(') {
                    let func = Func::from_name(name).ok_or_else(|| ParseError {
                        offset: start,
                        kind: ParseErrorKind::UnknownFunction(name.to_string()),
                    })?;
                    return self.call(func, start);
                }
                return Err(ParseError {
                    offset: start,
                    kind: ParseErrorKind::UnknownIdentifier(name.to_string()),
                });
            }
        };
        Ok(Expr::Var(var))
    }

    fn call(&mut self, func: Func, start: usize) -> Result<Expr, ParseError> {
        self.pos += 1; // '('
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.expected(&[",", ")"]));
        }
        if args.len() != func.arity() {
            return Err(ParseError {
                offset: start,
                kind: ParseErrorKind::WrongArity {
                    func: func.name(),
                    expected: func.arity(),
                    found: args.len(),
                },
            });
        }
        Ok(Expr::Call(func, args))
    }
}

/// Canonical, fully parenthesized rendering. `parse(&e.to_string())` gives back `e`
/// for every tree with non-negative finite literals.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Const(Constant::Pi) => write!(f, "pi"),
            Expr::Const(Constant::E) => write!(f, "e"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl Expr {
    pub fn num(x: f64) -> Expr {
        Expr::Num(x)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Evaluates under `env`. All unbound variables are reported together.
    pub fn evaluate(&self, env: &Env) -> Result<f64, EvalError> {
        match self.eval_inner(env) {
            Err(EvalError::Unbound(_)) => {
                let missing: Vec<Var> = self
                    .free_variables()
                    .into_iter()
                    .filter(|v| !env.contains(v))
                    .collect();
                Err(EvalError::Unbound(missing))
            }
            other => other,
        }
    }

    fn eval_inner(&self, env: &Env) -> Result<f64, EvalError> {
        let domain = |node: &Expr, reason: &'static str| EvalError::Domain {
            node: node.to_string(),
            reason,
        };
        Ok(match self {
            Expr::Num(x) => *x,
            Expr::Const(c) => c.value(),
            Expr::Var(v) => env.get(v).ok_or_else(|| EvalError::Unbound(vec![*v]))?,
            Expr::Neg(a) => -a.eval_inner(env)?,
            Expr::Binary(op, a, b) => {
                let x = a.eval_inner(env)?;
                let y = b.eval_inner(env)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(domain(self, "division by zero"));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        if x == 0.0 && y < 0.0 {
                            return Err(domain(self, "zero raised to a negative power"));
                        }
                        if x < 0.0 && y.fract() != 0.0 {
                            return Err(domain(self, "negative base with non-integer exponent"));
                        }
                        x.powf(y)
                    }
                }
            }
            Expr::Call(func, args) => {
                let x = args[0].eval_inner(env)?;
                match func {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(domain(self, "log of a non-positive number"));
                        }
                        x.ln()
                    }
                    Func::Tanh => x.tanh(),
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(domain(self, "sqrt of a negative number"));
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                    Func::Min => x.min(args[1].eval_inner(env)?),
                    Func::Max => x.max(args[1].eval_inner(env)?),
                }
            }
        })
    }

    /// The set of variables occurring in the tree.
    pub fn free_variables(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Num(_) | Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Neg(a) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    pub fn mentions(&self, pred: impl Fn(&Var) -> bool) -> bool {
        self.free_variables().iter().any(pred)
    }

    /// Replaces every variable for which `f` returns `Some`.
    pub fn substitute(&self, f: &dyn Fn(&Var) -> Option<Expr>) -> Expr {
        match self {
            Expr::Num(_) | Expr::Const(_) => self.clone(),
            Expr::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(f))),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.substitute(f), b.substitute(f)),
            Expr::Call(func, args) => {
                Expr::Call(*func, args.iter().map(|a| a.substitute(f)).collect())
            }
        }
    }

    /// Splits the tree as `Σ coeffs[m]·unknowns[m] + rest` when it is affine in
    /// `unknowns` (structurally: no products of unknowns, no unknowns inside
    /// functions, denominators or powers). `None` entries are structural zeros.
    pub fn affine_form(&self, unknowns: &[Var]) -> Option<AffineForm> {
        let n = unknowns.len();
        Some(match self {
            Expr::Num(_) | Expr::Const(_) => AffineForm::constant(n, self.clone()),
            Expr::Var(v) => match unknowns.iter().position(|u| u == v) {
                Some(m) => {
                    let mut coeffs = vec![None; n];
                    coeffs[m] = Some(Expr::Num(1.0));
                    AffineForm { coeffs, rest: None }
                }
                None => AffineForm::constant(n, self.clone()),
            },
            Expr::Neg(a) => a.affine_form(unknowns)?.map(|e| Expr::Neg(Box::new(e))),
            Expr::Binary(op, a, b) => {
                let fa = a.affine_form(unknowns)?;
                let fb = b.affine_form(unknowns)?;
                match op {
                    BinOp::Add => fa.combine(fb, sym_add, |y| y),
                    BinOp::Sub => fa.combine(fb, sym_sub, |y| Expr::Neg(Box::new(y))),
                    BinOp::Mul => {
                        if fa.is_constant() {
                            let k = fa.rest.unwrap_or(Expr::Num(0.0));
                            fb.map(|e| sym_mul(k.clone(), e))
                        } else if fb.is_constant() {
                            let k = fb.rest.unwrap_or(Expr::Num(0.0));
                            fa.map(|e| sym_mul(e, k.clone()))
                        } else {
                            return None;
                        }
                    }
                    BinOp::Div | BinOp::Pow => {
                        if !fb.is_constant() || (*op == BinOp::Pow && !fa.is_constant()) {
                            return None;
                        }
                        if fa.is_constant() {
                            AffineForm::constant(n, self.clone())
                        } else {
                            let k = fb.rest.unwrap_or(Expr::Num(0.0));
                            fa.map(|e| Expr::binary(BinOp::Div, e, k.clone()))
                        }
                    }
                }
            }
            Expr::Call(..) => {
                if self.mentions(|v| unknowns.contains(v)) {
                    return None;
                }
                AffineForm::constant(n, self.clone())
            }
        })
    }
    /// Value of a variable-free tree.
    pub fn as_constant(&self) -> Option<f64> {
        if !self.free_variables().is_empty() {
            return None;
        }
        self.evaluate(&Env::new()).ok()
    }
}

/// Central difference `(e(var+δ) − e(var−δ)) / 2δ`.
pub fn partial_fd(e: &Expr, env: &Env, var: Var, delta: f64) -> Result<f64, EvalError> {
    central_difference(|env| e.evaluate(env), env, var, delta)
}

/// Central difference of an arbitrary env-valued function.
pub(crate) fn central_difference<F, E>(f: F, env: &Env, var: Var, delta: f64) -> Result<f64, E>
where
    F: Fn(&Env) -> Result<f64, E>,
    E: From<EvalError>,
{
    let x = env.get(&var).ok_or_else(|| EvalError::Unbound(vec![var]))?;
    let mut probe = env.clone();
    probe.set(var, x + delta);
    let up = f(&probe)?;
    probe.set(var, x - delta);
    let down = f(&probe)?;
    Ok((up - down) / (2.0 * delta))
}

/// Result of [`Expr::affine_form`].
#[derive(Clone, Debug, PartialEq)]
pub struct AffineForm {
    pub coeffs: Vec<Option<Expr>>,
    pub rest: Option<Expr>,
}

impl AffineForm {
    fn constant(n: usize, e: Expr) -> Self {
        AffineForm {
            coeffs: vec![None; n],
            rest: Some(e),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(Option::is_none)
    }

    fn map(self, f: impl Fn(Expr) -> Expr) -> Self {
        AffineForm {
            coeffs: self.coeffs.into_iter().map(|c| c.map(&f)).collect(),
            rest: self.rest.map(&f),
        }
    }

    fn combine(
        self,
        other: Self,
        both: impl Fn(Expr, Expr) -> Expr,
        right_only: impl Fn(Expr) -> Expr,
    ) -> Self {
        let join = |a: Option<Expr>, b: Option<Expr>| match (a, b) {
            (Some(x), Some(y)) => Some(both(x, y)),
            (Some(x), None) => Some(x),
            (None, Some(y)) => Some(right_only(y)),
            (None, None) => None,
        };
        AffineForm {
            coeffs: self
                .coeffs
                .into_iter()
                .zip(other.coeffs)
                .map(|(a, b)| join(a, b))
                .collect(),
            rest: join(self.rest, other.rest),
        }
    }
}

pub(crate) fn sym_add(a: Expr, b: Expr) -> Expr {
    Expr::binary(BinOp::Add, a, b)
}

pub(crate) fn sym_sub(a: Expr, b: Expr) -> Expr {
    Expr::binary(BinOp::Sub, a, b)
}

/// Product that drops unit factors.
pub(crate) fn sym_mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) if *x == 1.0 => b,
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => Expr::binary(BinOp::Mul, a, b),
    }
}
