//! Differential operators with polynomial coefficients in `w = x - z`.
//!
//! Every operator is kept in normal form `sum s(z) w^beta D^gamma` with all
//! multiplications to the left of all derivatives. The coefficient ring is
//! generic: symbolic [`ScalarCoef`] while building the expansion, exact
//! rationals in oracles, `f64` once a center has been fixed.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed};

use crate::dyson::SigmaPoly;
use crate::ring::{int, Ring};

/// Multi-index of exponents (or derivative orders), one entry per coordinate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exponents(pub Vec<u32>);

impl Exponents {
    pub fn zeros(dim: usize) -> Self {
        Exponents(vec![0; dim])
    }

    pub fn unit(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        Exponents(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn add(&self, other: &Exponents) -> Exponents {
        Exponents(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn checked_sub(&self, other: &Exponents) -> Option<Exponents> {
        let mut out = Vec::with_capacity(self.0.len());
        for (a, b) in self.0.iter().zip(&other.0) {
            out.push(a.checked_sub(*b)?);
        }
        Some(Exponents(out))
    }

    /// `beta!` as an exact integer.
    pub fn factorial(&self) -> BigRational {
        self.0
            .iter()
            .fold(<BigRational as Ring>::one(), |acc, &e| acc * crate::ring::factorial(e))
    }

    /// All multi-indices of `dim` entries with total exactly `total`, in
    /// lexicographic order.
    pub fn with_total(dim: usize, total: u32) -> Vec<Exponents> {
        fn rec(dim: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Exponents>) {
            if cur.len() + 1 == dim {
                cur.push(left);
                out.push(Exponents(cur.clone()));
                cur.pop();
                return;
            }
            for e in 0..=left {
                cur.push(e);
                rec(dim, left - e, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        if dim == 0 {
            if total == 0 {
                out.push(Exponents(Vec::new()));
            }
            return out;
        }
        rec(dim, total, &mut Vec::with_capacity(dim), &mut out);
        out
    }

    /// Every `delta <= self` componentwise, each visited once.
    pub fn below(&self) -> Vec<Exponents> {
        let mut out = vec![Exponents::zeros(self.dim())];
        for (i, &e) in self.0.iter().enumerate() {
            let mut next = Vec::with_capacity(out.len() * (e as usize + 1));
            for base in &out {
                for k in 0..=e {
                    let mut d = base.clone();
                    d.0[i] = k;
                    next.push(d);
                }
            }
            out = next;
        }
        out
    }
}

impl fmt::Display for Exponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str("]")
    }
}

/// Which coefficient function of `L` an atom refers to. `A(i, j)` is stored
/// with `i <= j` since the diffusion matrix is symmetric.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    A(usize, usize),
    B(usize),
    C,
}

/// Formal symbol for `D^deriv f(z)` where `f` is one of `a_ij`, `b_k`, `c`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub field: Field,
    pub deriv: Exponents,
}

impl Atom {
    pub fn a(i: usize, j: usize, deriv: Exponents) -> Atom {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        Atom {
            field: Field::A(i, j),
            deriv,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.deriv.is_zero() {
            write!(f, "D^{}", self.deriv)?;
        }
        match self.field {
            Field::A(i, j) => write!(f, "a_{}{}", i + 1, j + 1),
            Field::B(k) => write!(f, "b_{}", k + 1),
            Field::C => f.write_str("c"),
        }
    }
}

/// Monomial in atoms: sorted `(atom, power)` pairs, powers positive.
pub type AtomMonomial = Vec<(Atom, u32)>;

/// Polynomial in derivative atoms with exact rational coefficients.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ScalarCoef {
    terms: BTreeMap<AtomMonomial, BigRational>,
}

impl ScalarCoef {
    pub fn constant(r: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !Ring::is_zero(&r) {
            terms.insert(Vec::new(), r);
        }
        ScalarCoef { terms }
    }

    pub fn atom(a: Atom) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![(a, 1)], <BigRational as Ring>::one());
        ScalarCoef { terms }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&AtomMonomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Every atom that occurs.
    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.terms.keys().flat_map(|m| m.iter().map(|(a, _)| a))
    }

    /// Numeric value once every atom has a value.
    pub fn eval<F: Fn(&Atom) -> f64>(&self, value: F) -> f64 {
        self.terms
            .iter()
            .map(|(mono, c)| {
                let mut v = crate::expr::rational_to_f64(c);
                for (atom, p) in mono {
                    v *= libm::pow(value(atom), *p as f64);
                }
                v
            })
            .sum()
    }

    /// Exact value when every atom is assigned a rational.
    pub fn eval_exact<F: Fn(&Atom) -> BigRational>(&self, value: F) -> BigRational {
        let mut acc = BigRational::from_integer(0.into());
        for (mono, c) in &self.terms {
            let mut v = c.clone();
            for (atom, p) in mono {
                v *= value(atom).pow(*p as i32);
            }
            acc += v;
        }
        acc
    }
}

fn mul_monomials(a: &AtomMonomial, b: &AtomMonomial) -> AtomMonomial {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            core::cmp::Ordering::Less => {
                out.push(a[i].clone());
                i += 1;
            }
            core::cmp::Ordering::Greater => {
                out.push(b[j].clone());
                j += 1;
            }
            core::cmp::Ordering::Equal => {
                out.push((a[i].0.clone(), a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl Ring for ScalarCoef {
    fn zero() -> Self {
        ScalarCoef::default()
    }
    fn one() -> Self {
        ScalarCoef::constant(<BigRational as Ring>::one())
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
    fn add_assign_ref(&mut self, other: &Self) {
        for (m, c) in &other.terms {
            add_into(&mut self.terms, m.clone(), c);
        }
    }
    fn mul_ref(&self, other: &Self) -> Self {
        let mut terms = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                add_into(&mut terms, mul_monomials(ma, mb), &(ca * cb));
            }
        }
        ScalarCoef { terms }
    }
    fn neg_ref(&self) -> Self {
        ScalarCoef {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }
    fn from_rational(r: &BigRational) -> Self {
        ScalarCoef::constant(r.clone())
    }
    fn scale(&self, r: &BigRational) -> Self {
        if Ring::is_zero(r) {
            return ScalarCoef::default();
        }
        ScalarCoef {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * r)).collect(),
        }
    }
}

pub(crate) fn add_into<K: Ord, C: Ring>(map: &mut BTreeMap<K, C>, key: K, c: &C) {
    if c.is_zero() {
        return;
    }
    match map.entry(key) {
        alloc::collections::btree_map::Entry::Vacant(v) => {
            v.insert(c.clone());
        }
        alloc::collections::btree_map::Entry::Occupied(mut o) => {
            o.get_mut().add_assign_ref(c);
            if o.get().is_zero() {
                o.remove();
            }
        }
    }
}

impl fmt::Display for ScalarCoef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (k, (mono, c)) in self.terms.iter().enumerate() {
            let negative = c.is_negative();
            let mag = c.abs();
            if k == 0 {
                if negative {
                    f.write_str("-")?;
                }
            } else if negative {
                f.write_str(" - ")?;
            } else {
                f.write_str(" + ")?;
            }
            let unit = mag.is_one();
            if !unit || mono.is_empty() {
                write!(f, "{mag}")?;
            }
            for (i, (atom, p)) in mono.iter().enumerate() {
                if i > 0 || !unit {
                    f.write_str("*")?;
                }
                write!(f, "{atom}")?;
                if *p > 1 {
                    write!(f, "^{p}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum OpAlgError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("operator does not have constant coefficients")]
    NotConstantCoefficient,
    #[error("operator has polynomial degree {degree} and order {order}, expected at most ({max_degree}, {max_order})")]
    OutOfClass {
        degree: i64,
        order: i64,
        max_degree: i64,
        max_order: i64,
    },
}

/// Key of a normal-form term: `(beta, gamma)` for `w^beta D^gamma`.
pub type TermKey = (Exponents, Exponents);

/// Differential operator `sum c_{beta,gamma} w^beta D^gamma` in normal form.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffOp<C> {
    dim: usize,
    terms: BTreeMap<TermKey, C>,
    degree: i64,
    order: i64,
}

/// Operator whose coefficients are symbolic in the derivative atoms.
pub type SymbolicOp = DiffOp<ScalarCoef>;
/// Operator whose coefficients are polynomials in the simplex variables.
pub type SigmaDiffOp = DiffOp<SigmaPoly<ScalarCoef>>;

impl<C: Ring> DiffOp<C> {
    pub fn zero(dim: usize) -> Self {
        DiffOp {
            dim,
            terms: BTreeMap::new(),
            degree: -1,
            order: -1,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::monomial(dim, Exponents::zeros(dim), Exponents::zeros(dim), C::one())
    }

    /// Single term `c w^beta D^gamma`.
    pub fn monomial(dim: usize, beta: Exponents, gamma: Exponents, c: C) -> Self {
        assert_eq!(beta.dim(), dim);
        assert_eq!(gamma.dim(), dim);
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert((beta, gamma), c);
        }
        Self::from_map(dim, terms)
    }

    /// Build from arbitrary terms; duplicates are summed, zeros pruned.
    pub fn from_terms<I: IntoIterator<Item = (Exponents, Exponents, C)>>(dim: usize, it: I) -> Self {
        let mut terms = BTreeMap::new();
        for (b, g, c) in it {
            assert_eq!(b.dim(), dim);
            assert_eq!(g.dim(), dim);
            add_into(&mut terms, (b, g), &c);
        }
        Self::from_map(dim, terms)
    }

    fn from_map(dim: usize, terms: BTreeMap<TermKey, C>) -> Self {
        let degree = terms.keys().map(|(b, _)| b.total() as i64).max().unwrap_or(-1);
        let order = terms.keys().map(|(_, g)| g.total() as i64).max().unwrap_or(-1);
        DiffOp {
            dim,
            terms,
            degree,
            order,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &Exponents, &C)> {
        self.terms.iter().map(|((b, g), c)| (b, g, c))
    }

    pub fn coefficient(&self, beta: &Exponents, gamma: &Exponents) -> Option<&C> {
        self.terms.get(&(beta.clone(), gamma.clone()))
    }

    /// Minimal `(a, b)` with the operator in `D(a, b)`; `(-1, -1)` for zero.
    pub fn degree_order(&self) -> (i64, i64) {
        (self.degree, self.order)
    }

    pub fn is_constant_coefficient(&self) -> bool {
        self.degree <= 0
    }

    fn check_dim(&self, other: &Self) -> Result<(), OpAlgError> {
        if self.dim != other.dim {
            return Err(OpAlgError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, OpAlgError> {
        self.check_dim(other)?;
        let mut terms = self.terms.clone();
        for (k, c) in &other.terms {
            add_into(&mut terms, k.clone(), c);
        }
        Ok(Self::from_map(self.dim, terms))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, OpAlgError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        Self::from_map(
            self.dim,
            self.terms.iter().map(|(k, c)| (k.clone(), c.neg_ref())).collect(),
        )
    }

    /// Multiply every coefficient by the same ring element.
    pub fn scale_by(&self, s: &C) -> Self {
        let mut terms = BTreeMap::new();
        for (k, c) in &self.terms {
            add_into(&mut terms, k.clone(), &c.mul_ref(s));
        }
        Self::from_map(self.dim, terms)
    }

    pub fn scale(&self, r: &BigRational) -> Self {
        self.scale_by(&C::from_rational(r))
    }

    /// Change coefficient ring; zeros produced by `f` are pruned.
    pub fn map_coefs<D: Ring, F: FnMut(&C) -> D>(&self, mut f: F) -> DiffOp<D> {
        let mut terms = BTreeMap::new();
        for (k, c) in &self.terms {
            add_into(&mut terms, k.clone(), &f(c));
        }
        DiffOp::from_map(self.dim, terms)
    }

    /// `self ∘ other` in normal form, via the Leibniz rule
    /// `D^g w^b = sum_{d <= g, d <= b} C(g, d) b!/(b-d)! w^{b-d} D^{g-d}`.
    pub fn compose(&self, other: &Self) -> Result<Self, OpAlgError> {
        self.check_dim(other)?;
        let mut terms: BTreeMap<TermKey, C> = BTreeMap::new();
        for ((b1, g1), c1) in &self.terms {
            for ((b2, g2), c2) in &other.terms {
                let c12 = c1.mul_ref(c2);
                let cap = Exponents(g1.0.iter().zip(&b2.0).map(|(g, b)| (*g).min(*b)).collect());
                for delta in cap.below() {
                    let mut weight = num_bigint::BigInt::from(1);
                    for i in 0..self.dim {
                        let d = delta.0[i];
                        weight *= binomial(g1.0[i], d) * falling(b2.0[i], d);
                    }
                    let beta = b1.add(&b2.checked_sub(&delta).unwrap());
                    let gamma = g1.checked_sub(&delta).unwrap().add(g2);
                    let w = BigRational::from_integer(weight);
                    add_into(&mut terms, (beta, gamma), &c12.scale(&w));
                }
            }
        }
        Ok(Self::from_map(self.dim, terms))
    }

    /// `[self, other] = self ∘ other - other ∘ self`.
    pub fn commutator(&self, other: &Self) -> Result<Self, OpAlgError> {
        let ab = self.compose(other)?;
        let ba = other.compose(self)?;
        ab.sub(&ba)
    }

    /// Require membership in `D(max_degree, max_order)`.
    pub fn check_class(&self, max_degree: i64, max_order: i64) -> Result<(), OpAlgError> {
        if self.is_zero() || (self.degree <= max_degree && self.order <= max_order) {
            Ok(())
        } else {
            Err(OpAlgError::OutOfClass {
                degree: self.degree,
                order: self.order,
                max_degree,
                max_order,
            })
        }
    }
}

fn binomial(n: u32, k: u32) -> num_bigint::BigInt {
    let mut acc = num_bigint::BigInt::from(1);
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

fn falling(n: u32, k: u32) -> num_bigint::BigInt {
    let mut acc = num_bigint::BigInt::from(1);
    for i in 0..k {
        acc *= n - i;
    }
    acc
}

/// Free-function form of [`DiffOp::compose`].
pub fn compose<C: Ring>(a: &DiffOp<C>, b: &DiffOp<C>) -> Result<DiffOp<C>, OpAlgError> {
    a.compose(b)
}

/// Free-function form of [`DiffOp::commutator`].
pub fn commutator<C: Ring>(a: &DiffOp<C>, b: &DiffOp<C>) -> Result<DiffOp<C>, OpAlgError> {
    a.commutator(b)
}

/// `ad^k_{L0}(Lm)`. `L0` must have constant coefficients; then the result lies
/// in `D(m - k, k + 2)` and vanishes once `k` exceeds the degree of `Lm`.
pub fn ad_power<C: Ring>(l0: &DiffOp<C>, lm: &DiffOp<C>, k: usize) -> Result<DiffOp<C>, OpAlgError> {
    if !l0.is_constant_coefficient() {
        return Err(OpAlgError::NotConstantCoefficient);
    }
    l0.check_dim(lm)?;
    let mut cur = lm.clone();
    for _ in 0..k {
        if cur.is_zero() {
            break;
        }
        cur = l0.commutator(&cur)?;
    }
    Ok(cur)
}

pub fn degree_order<C: Ring>(a: &DiffOp<C>) -> (i64, i64) {
    a.degree_order()
}

impl<C: Ring + fmt::Display> fmt::Display for DiffOp<C> {
    /// One term per line: `coef * (x-z)^beta * D^gamma`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, ((b, g), c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{c} * (x-z)^{b} * D^{g}")?;
        }
        Ok(())
    }
}

/// `w_i` as a multiplication operator.
pub fn w<C: Ring>(dim: usize, i: usize) -> DiffOp<C> {
    DiffOp::monomial(dim, Exponents::unit(dim, i), Exponents::zeros(dim), C::one())
}

/// `D_i`.
pub fn d<C: Ring>(dim: usize, i: usize) -> DiffOp<C> {
    DiffOp::monomial(dim, Exponents::zeros(dim), Exponents::unit(dim, i), C::one())
}

/// Integer-scaled single term, convenient for tests and examples.
pub fn term<C: Ring>(dim: usize, c: i64, beta: &[u32], gamma: &[u32]) -> DiffOp<C> {
    DiffOp::monomial(
        dim,
        Exponents(beta.to_vec()),
        Exponents(gamma.to_vec()),
        C::from_rational(&int(c)),
    )
}
