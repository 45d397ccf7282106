//! Closed-form scalar expressions over `x1..xN`.
//!
//! Coefficients of the operator are given as text and parsed into [`Expr`]
//! trees. Every derivative atom needed by the Taylor terms is produced by
//! exact symbolic differentiation; numbers written as integers or integer
//! ratios stay exact rationals, decimals become IEEE doubles.
//!
//! Construction goes through smart constructors that flatten sums and
//! products, fold constants and sort children by a fixed total order, so
//! printing is reproducible and `parse(print(e)) == e`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::ops::Deref;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// A point in `R^N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("variable x{index} at byte {offset} is out of range for dimension {dim}")]
    VariableOutOfRange {
        index: usize,
        dim: usize,
        offset: usize,
    },
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("overflow while evaluating {0}")]
    Overflow(&'static str),
    #[error("point has {got} coordinates, expression needs at least {need}")]
    PointTooShort { got: usize, need: usize },
}

/// Numeric literal: exact rational or double.
#[derive(Clone, Debug)]
pub enum Number {
    Rational(BigRational),
    Real(f64),
}

impl Number {
    pub fn to_f64(&self) -> f64 {
        match self {
            Number::Rational(r) => rational_to_f64(r),
            Number::Real(x) => *x,
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Number::Rational(r) => r.is_zero(),
            Number::Real(x) => *x == 0.0,
        }
    }

    fn is_one(&self) -> bool {
        match self {
            Number::Rational(r) => r.is_one(),
            Number::Real(_) => false,
        }
    }

    fn is_negative(&self) -> bool {
        match self {
            Number::Rational(r) => r.is_negative(),
            Number::Real(x) => *x < 0.0,
        }
    }

    fn add(&self, other: &Number) -> Number {
        match (self, other) {
            (Number::Rational(a), Number::Rational(b)) => Number::Rational(a + b),
            _ => Number::Real(self.to_f64() + other.to_f64()),
        }
    }

    fn mul(&self, other: &Number) -> Number {
        match (self, other) {
            (Number::Rational(a), Number::Rational(b)) => Number::Rational(a * b),
            _ => Number::Real(self.to_f64() * other.to_f64()),
        }
    }

    fn neg(&self) -> Number {
        match self {
            Number::Rational(a) => Number::Rational(-a),
            Number::Real(x) => Number::Real(-x),
        }
    }

    fn powi(&self, n: i32) -> Option<Number> {
        match self {
            Number::Rational(r) => {
                if r.is_zero() && n < 0 {
                    None
                } else {
                    Some(Number::Rational(r.pow(n)))
                }
            }
            Number::Real(x) => {
                if *x == 0.0 && n < 0 {
                    None
                } else {
                    Some(Number::Real(libm::pow(*x, n as f64)))
                }
            }
        }
    }

    fn total_cmp(&self, other: &Number) -> Ordering {
        match (self, other) {
            (Number::Rational(a), Number::Rational(b)) => a.cmp(b),
            (Number::Rational(_), Number::Real(_)) => Ordering::Less,
            (Number::Real(_), Number::Rational(_)) => Ordering::Greater,
            (Number::Real(a), Number::Real(b)) => a.total_cmp(b),
        }
    }
}

/// Nearest double to an exact rational, robust to huge numerators/denominators.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    // Scale both sides down to a representable range.
    let nb = r.numer().bits() as i64;
    let db = r.denom().bits() as i64;
    let shift_n = (nb - 60).max(0) as usize;
    let shift_d = (db - 60).max(0) as usize;
    let n = (r.numer() >> shift_n).to_f64().unwrap_or(0.0);
    let d = (r.denom() >> shift_d).to_f64().unwrap_or(1.0);
    n / d * libm::exp2((shift_n as f64) - (shift_d as f64))
}

/// Expression tree. Build through the smart constructors (`Expr::sum`,
/// `Expr::product`, ...) to keep the canonical form.
#[derive(Clone, Debug)]
pub enum Expr {
    Const(Number),
    /// Zero-based variable index: `Var(0)` is `x1`.
    Var(usize),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Pow(Box<Expr>, i32),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Neg(Box<Expr>),
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Expr {}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        let rank = self.rank().cmp(&other.rank());
        if rank != Ordering::Equal {
            return rank;
        }
        match (self, other) {
            (Expr::Const(a), Expr::Const(b)) => a.total_cmp(b),
            (Expr::Var(a), Expr::Var(b)) => a.cmp(b),
            (Expr::Sum(a), Expr::Sum(b)) | (Expr::Product(a), Expr::Product(b)) => a.cmp(b),
            (Expr::Pow(a, n), Expr::Pow(b, m)) => a.cmp(b).then(n.cmp(m)),
            (Expr::Exp(a), Expr::Exp(b))
            | (Expr::Log(a), Expr::Log(b))
            | (Expr::Sin(a), Expr::Sin(b))
            | (Expr::Cos(a), Expr::Cos(b))
            | (Expr::Neg(a), Expr::Neg(b)) => a.cmp(b),
            _ => unreachable!("equal rank implies equal kind"),
        }
    }
}

impl Expr {
    fn rank(&self) -> u8 {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(_) => 1,
            Expr::Pow(..) => 2,
            Expr::Product(_) => 3,
            Expr::Sum(_) => 4,
            Expr::Exp(_) => 5,
            Expr::Log(_) => 6,
            Expr::Sin(_) => 7,
            Expr::Cos(_) => 8,
            Expr::Neg(_) => 9,
        }
    }

    pub fn zero() -> Expr {
        Expr::Const(Number::Rational(BigRational::zero()))
    }

    pub fn one() -> Expr {
        Expr::Const(Number::Rational(BigRational::one()))
    }

    pub fn integer(n: i64) -> Expr {
        Expr::Const(Number::Rational(BigRational::from_integer(BigInt::from(n))))
    }

    pub fn rational(r: BigRational) -> Expr {
        Expr::Const(Number::Rational(r))
    }

    pub fn real(x: f64) -> Expr {
        Expr::Const(Number::Real(x))
    }

    /// Zero-based variable.
    pub fn var(index: usize) -> Expr {
        Expr::Var(index)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if c.is_zero())
    }

    pub fn as_const(&self) -> Option<&Number> {
        match self {
            Expr::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(terms.len());
        let mut constant: Option<Number> = None;
        let mut stack = terms;
        while let Some(t) = stack.pop() {
            match t {
                Expr::Sum(children) => stack.extend(children),
                Expr::Const(c) => {
                    constant = Some(match constant {
                        Some(acc) => acc.add(&c),
                        None => c,
                    })
                }
                other => flat.push(other),
            }
        }
        if let Some(c) = constant {
            if !c.is_zero() {
                flat.push(Expr::Const(c));
            }
        }
        match flat.len() {
            0 => Expr::zero(),
            1 => flat.pop().unwrap(),
            _ => {
                flat.sort();
                Expr::Sum(flat)
            }
        }
    }

    pub fn product(factors: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(factors.len());
        let mut constant = Number::Rational(BigRational::one());
        let mut stack = factors;
        while let Some(f) = stack.pop() {
            match f {
                Expr::Product(children) => stack.extend(children),
                Expr::Const(c) => constant = constant.mul(&c),
                Expr::Neg(inner) => {
                    constant = constant.neg();
                    stack.push(*inner);
                }
                other => flat.push(other),
            }
        }
        if constant.is_zero() {
            return Expr::Const(constant);
        }
        if flat.is_empty() {
            return Expr::Const(constant);
        }
        if !constant.is_one() {
            flat.push(Expr::Const(constant));
        }
        if flat.len() == 1 {
            return flat.pop().unwrap();
        }
        flat.sort();
        Expr::Product(flat)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Const(c) => Expr::Const(c.neg()),
            Expr::Neg(inner) => *inner,
            Expr::Product(factors) => {
                let mut factors = factors;
                factors.push(Expr::integer(-1));
                Expr::product(factors)
            }
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn pow(base: Expr, n: i32) -> Expr {
        if n == 0 {
            return Expr::one();
        }
        if n == 1 {
            return base;
        }
        if let Expr::Const(c) = &base {
            if let Some(v) = c.powi(n) {
                return Expr::Const(v);
            }
        }
        Expr::Pow(Box::new(base), n)
    }

    pub fn exp(arg: Expr) -> Expr {
        if arg.is_zero() {
            return Expr::one();
        }
        if let Expr::Const(c) = &arg {
            return Expr::real(libm::exp(c.to_f64()));
        }
        Expr::Exp(Box::new(arg))
    }

    pub fn log(arg: Expr) -> Expr {
        if let Expr::Const(c) = &arg {
            if c.is_one() {
                return Expr::zero();
            }
            let v = c.to_f64();
            if v > 0.0 {
                return Expr::real(libm::log(v));
            }
        }
        Expr::Log(Box::new(arg))
    }

    pub fn sin(arg: Expr) -> Expr {
        if arg.is_zero() {
            return Expr::zero();
        }
        if let Expr::Const(c) = &arg {
            return Expr::real(libm::sin(c.to_f64()));
        }
        Expr::Sin(Box::new(arg))
    }

    pub fn cos(arg: Expr) -> Expr {
        if arg.is_zero() {
            return Expr::one();
        }
        if let Expr::Const(c) = &arg {
            return Expr::real(libm::cos(c.to_f64()));
        }
        Expr::Cos(Box::new(arg))
    }

    /// Largest zero-based variable index used, plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Sum(c) | Expr::Product(c) => c.iter().map(Expr::arity).max().unwrap_or(0),
            Expr::Pow(b, _) => b.arity(),
            Expr::Exp(a) | Expr::Log(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Neg(a) => a.arity(),
        }
    }

    /// Exact partial derivative with respect to the zero-based variable `i`.
    pub fn diff(&self, i: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(j) => {
                if *j == i {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Sum(children) => Expr::sum(children.iter().map(|c| c.diff(i)).collect()),
            Expr::Product(factors) => {
                let mut terms = Vec::new();
                for k in 0..factors.len() {
                    let dk = factors[k].diff(i);
                    if dk.is_zero() {
                        continue;
                    }
                    let mut fs: Vec<Expr> = factors
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != k)
                        .map(|(_, f)| f.clone())
                        .collect();
                    fs.push(dk);
                    terms.push(Expr::product(fs));
                }
                Expr::sum(terms)
            }
            Expr::Pow(base, n) => {
                let db = base.diff(i);
                if db.is_zero() {
                    return Expr::zero();
                }
                Expr::product(alloc::vec![
                    Expr::integer(*n as i64),
                    Expr::pow((**base).clone(), n - 1),
                    db
                ])
            }
            Expr::Exp(a) => {
                Expr::product(alloc::vec![Expr::exp((**a).clone()), a.diff(i)])
            }
            Expr::Log(a) => Expr::product(alloc::vec![a.diff(i), Expr::pow((**a).clone(), -1)]),
            Expr::Sin(a) => Expr::product(alloc::vec![Expr::cos((**a).clone()), a.diff(i)]),
            Expr::Cos(a) => Expr::product(alloc::vec![
                Expr::integer(-1),
                Expr::sin((**a).clone()),
                a.diff(i)
            ]),
            Expr::Neg(a) => Expr::neg(a.diff(i)),
        }
    }

    /// Mixed partial derivative `D^beta`, `beta` indexed by zero-based variable.
    pub fn diff_multi(&self, beta: &[u32]) -> Expr {
        let mut e = self.clone();
        for (i, &k) in beta.iter().enumerate() {
            for _ in 0..k {
                e = e.diff(i);
            }
        }
        e
    }

    /// IEEE double value at `p`.
    pub fn eval(&self, p: &[f64]) -> Result<f64, ExprError> {
        let need = self.arity();
        if p.len() < need {
            return Err(ExprError::PointTooShort { got: p.len(), need });
        }
        self.eval_unchecked(p)
    }

    fn eval_unchecked(&self, p: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Const(c) => return Ok(c.to_f64()),
            Expr::Var(i) => return Ok(p[*i]),
            Expr::Sum(children) => {
                let mut acc = 0.0;
                for c in children {
                    acc += c.eval_unchecked(p)?;
                }
                finite(acc, "sum")?
            }
            Expr::Product(factors) => {
                let mut acc = 1.0;
                for f in factors {
                    acc *= f.eval_unchecked(p)?;
                }
                finite(acc, "product")?
            }
            Expr::Pow(base, n) => {
                let b = base.eval_unchecked(p)?;
                if b == 0.0 && *n < 0 {
                    return Err(ExprError::Domain("zero raised to a negative power"));
                }
                finite(libm::pow(b, *n as f64), "power")?
            }
            Expr::Exp(a) => finite(libm::exp(a.eval_unchecked(p)?), "exp")?,
            Expr::Log(a) => {
                let v = a.eval_unchecked(p)?;
                if v <= 0.0 || v.is_nan() {
                    return Err(ExprError::Domain("log of a non-positive value"));
                }
                libm::log(v)
            }
            Expr::Sin(a) => libm::sin(a.eval_unchecked(p)?),
            Expr::Cos(a) => libm::cos(a.eval_unchecked(p)?),
            Expr::Neg(a) => -a.eval_unchecked(p)?,
        };
        Ok(v)
    }
}

/// Evaluation form of an [`Expr`] with every constant converted to `f64`
/// once. Same domain and overflow checks as [`Expr::eval`].
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    arity: usize,
    root: Node,
}

#[derive(Clone, Debug)]
enum Node {
    Const(f64),
    Var(usize),
    Sum(Vec<Node>),
    Product(Vec<Node>),
    Pow(Box<Node>, i32),
    Exp(Box<Node>),
    Log(Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Neg(Box<Node>),
}

impl Node {
    fn build(e: &Expr) -> Node {
        let b = |x: &Expr| Box::new(Node::build(x));
        match e {
            Expr::Const(c) => Node::Const(c.to_f64()),
            Expr::Var(i) => Node::Var(*i),
            Expr::Sum(v) => Node::Sum(v.iter().map(Node::build).collect()),
            Expr::Product(v) => Node::Product(v.iter().map(Node::build).collect()),
            Expr::Pow(x, n) => Node::Pow(b(x), *n),
            Expr::Exp(x) => Node::Exp(b(x)),
            Expr::Log(x) => Node::Log(b(x)),
            Expr::Sin(x) => Node::Sin(b(x)),
            Expr::Cos(x) => Node::Cos(b(x)),
            Expr::Neg(x) => Node::Neg(b(x)),
        }
    }

    fn eval(&self, p: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Node::Const(c) => return Ok(*c),
            Node::Var(i) => return Ok(p[*i]),
            Node::Sum(children) => {
                let mut acc = 0.0;
                for c in children {
                    acc += c.eval(p)?;
                }
                finite(acc, "sum")?
            }
            Node::Product(factors) => {
                let mut acc = 1.0;
                for f in factors {
                    acc *= f.eval(p)?;
                }
                finite(acc, "product")?
            }
            Node::Pow(base, n) => {
                let b = base.eval(p)?;
                if b == 0.0 && *n < 0 {
                    return Err(ExprError::Domain("zero raised to a negative power"));
                }
                let v = match *n {
                    1 => b,
                    2 => b * b,
                    3 => b * b * b,
                    _ => libm::pow(b, *n as f64),
                };
                finite(v, "power")?
            }
            Node::Exp(a) => finite(libm::exp(a.eval(p)?), "exp")?,
            Node::Log(a) => {
                let v = a.eval(p)?;
                if v <= 0.0 || v.is_nan() {
                    return Err(ExprError::Domain("log of a non-positive value"));
                }
                libm::log(v)
            }
            Node::Sin(a) => libm::sin(a.eval(p)?),
            Node::Cos(a) => libm::cos(a.eval(p)?),
            Node::Neg(a) => -a.eval(p)?,
        };
        Ok(v)
    }
}

impl CompiledExpr {
    pub fn new(e: &Expr) -> Self {
        CompiledExpr {
            arity: e.arity(),
            root: Node::build(e),
        }
    }

    /// Constant value when the expression has no variables.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn eval(&self, p: &[f64]) -> Result<f64, ExprError> {
        if p.len() < self.arity {
            return Err(ExprError::PointTooShort {
                got: p.len(),
                need: self.arity,
            });
        }
        self.root.eval(p)
    }
}

impl Expr {
    pub fn compile(&self) -> CompiledExpr {
        CompiledExpr::new(self)
    }
}

fn finite(v: f64, what: &'static str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Overflow(what))
    }
}

// ---------------------------------------------------------------------------
// Printing

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Sum(_) => PREC_SUM,
        Expr::Product(_) => PREC_PRODUCT,
        Expr::Neg(_) => PREC_UNARY,
        Expr::Pow(..) => 4,
        Expr::Const(c) => {
            let rational_fraction = matches!(c, Number::Rational(r) if !r.is_integer());
            if c.is_negative() {
                PREC_UNARY
            } else if rational_fraction {
                PREC_PRODUCT
            } else {
                PREC_ATOM
            }
        }
        _ => PREC_ATOM,
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, c: &Number) -> fmt::Result {
    match c {
        Number::Rational(r) => {
            if r.is_integer() {
                write!(f, "{}", r.numer())
            } else {
                write!(f, "{}/{}", r.numer(), r.denom())
            }
        }
        Number::Real(x) => {
            let s = format!("{x:?}");
            f.write_str(&s)
        }
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        f.write_str("(")?;
        write_expr(f, e)?;
        f.write_str(")")
    } else {
        write_expr(f, e)
    }
}

fn write_product(f: &mut fmt::Formatter<'_>, factors: &[Expr]) -> fmt::Result {
    let mut rest = factors;
    if let Some(Expr::Const(c)) = factors.first() {
        if matches!(c, Number::Rational(r) if *r == -BigRational::one()) {
            f.write_str("-")?;
            rest = &factors[1..];
        } else {
            write_number(f, c)?;
            rest = &factors[1..];
            if !rest.is_empty() {
                f.write_str("*")?;
            }
        }
    }
    for (k, factor) in rest.iter().enumerate() {
        if k > 0 {
            f.write_str("*")?;
        }
        write_at(f, factor, PREC_UNARY + 1)?;
    }
    Ok(())
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Const(c) => write_number(f, c),
        Expr::Var(i) => write!(f, "x{}", i + 1),
        Expr::Sum(children) => {
            for (k, child) in children.iter().enumerate() {
                if k == 0 {
                    write_at(f, child, PREC_SUM)?;
                    continue;
                }
                match child {
                    Expr::Neg(inner) => {
                        f.write_str(" - ")?;
                        write_at(f, inner, PREC_PRODUCT)?;
                    }
                    Expr::Const(c) if c.is_negative() => {
                        f.write_str(" - ")?;
                        write_number(f, &c.neg())?;
                    }
                    Expr::Product(factors)
                        if matches!(factors.first(), Some(Expr::Const(c)) if c.is_negative()) =>
                    {
                        f.write_str(" - ")?;
                        let mut flipped = factors.clone();
                        if let Expr::Const(c) = &flipped[0] {
                            flipped[0] = Expr::Const(c.neg());
                        }
                        if flipped[0].as_const().is_some_and(Number::is_one) {
                            flipped.remove(0);
                        }
                        write_product(f, &flipped)?;
                    }
                    other => {
                        f.write_str(" + ")?;
                        write_at(f, other, PREC_SUM)?;
                    }
                }
            }
            Ok(())
        }
        Expr::Product(factors) => write_product(f, factors),
        Expr::Pow(base, n) => {
            write_at(f, base, PREC_ATOM)?;
            write!(f, "^{n}")
        }
        Expr::Exp(a) => write!(f, "exp({a})"),
        Expr::Log(a) => write!(f, "log({a})"),
        Expr::Sin(a) => write!(f, "sin({a})"),
        Expr::Cos(a) => write!(f, "cos({a})"),
        Expr::Neg(a) => {
            f.write_str("-")?;
            write_at(f, a, 4)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}

// ---------------------------------------------------------------------------
// Parsing
//
//   expr     := term (('+' | '-') term)*
//   term     := unary (('*' | '/') unary)*
//   unary    := '-' unary | power
//   power    := primary ('^' exponent)?
//   exponent := '-'? integer | '(' '-'? integer ')'
//   primary  := number | 'x' index | func '(' expr ')' | '(' expr ')'

/// Parse expression text over variables `x1..x{dim}`.
pub fn parse(text: &str, dim: usize) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        dim,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut terms = alloc::vec![self.term()?];
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    terms.push(self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    terms.push(Expr::neg(self.term()?));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::sum(terms)
        })
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::product(alloc::vec![acc, rhs]);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::product(alloc::vec![acc, Expr::pow(rhs, -1)]);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let n = self.exponent()?;
            return Ok(Expr::pow(base, n));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ExprError> {
        let parenthesized = self.peek() == Some(b'(');
        if parenthesized {
            self.pos += 1;
        }
        let negative = self.peek() == Some(b'-');
        if negative {
            self.pos += 1;
        }
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("exponent must be an integer literal"));
        }
        let digits = core::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let mut n: i32 = digits.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            message: "exponent too large".to_string(),
        })?;
        if negative {
            n = -n;
        }
        if parenthesized {
            self.expect(b')')?;
        }
        Ok(n)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word = core::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match word {
                    "exp" | "log" | "sin" | "cos" => {
                        self.expect(b'(')?;
                        let arg = self.expr()?;
                        self.expect(b')')?;
                        Ok(match word {
                            "exp" => Expr::exp(arg),
                            "log" => Expr::log(arg),
                            "sin" => Expr::sin(arg),
                            _ => Expr::cos(arg),
                        })
                    }
                    _ => {
                        let digits = word.strip_prefix('x').filter(|d| {
                            !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit())
                        });
                        let Some(digits) = digits else {
                            return Err(ExprError::Syntax {
                                offset: start,
                                message: format!("unknown identifier '{word}'"),
                            });
                        };
                        let index: usize = digits.parse().unwrap_or(usize::MAX);
                        if index == 0 || index > self.dim {
                            return Err(ExprError::VariableOutOfRange {
                                index,
                                dim: self.dim,
                                offset: start,
                            });
                        }
                        Ok(Expr::var(index - 1))
                    }
                }
            }
            Some(c) => Err(self.error(&format!("unexpected character '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let mut is_real = false;
        while self.pos < s.len() && s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < s.len() && s[self.pos] == b'.' {
            is_real = true;
            self.pos += 1;
            while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'+' || s[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits_start = self.pos;
            while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if digits_start == self.pos {
                self.pos = save;
            } else {
                is_real = true;
            }
        }
        let text = core::str::from_utf8(&s[start..self.pos]).unwrap();
        if text == "." {
            return Err(ExprError::Syntax {
                offset: start,
                message: "malformed number".to_string(),
            });
        }
        if is_real {
            let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: "malformed number".to_string(),
            })?;
            if !v.is_finite() {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: "number out of range".to_string(),
                });
            }
            Ok(Expr::real(v))
        } else {
            let n: BigInt = text.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: "malformed integer".to_string(),
            })?;
            Ok(Expr::rational(BigRational::from_integer(n)))
        }
    }
}
