use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_rational::BigRational;

use crate::opalg::add_into;
use crate::ring::{int, Ring};

/// Polynomial in the simplex variables `sigma_1..sigma_k` with coefficients
/// in `C`. Exponent vectors are stored with trailing zeros trimmed, so the
/// same monomial has exactly one key whatever `k` is.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPoly<C = BigRational> {
    terms: BTreeMap<Vec<u32>, C>,
}

fn trim(mut e: Vec<u32>) -> Vec<u32> {
    while e.last() == Some(&0) {
        e.pop();
    }
    e
}

impl<C: Ring> SigmaPoly<C> {
    pub fn constant(c: C) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Vec::new(), c);
        }
        SigmaPoly { terms }
    }

    /// `c * prod sigma_i^{e_i}`; `exponents[0]` belongs to `sigma_1`.
    pub fn monomial(exponents: Vec<u32>, c: C) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(trim(exponents), c);
        }
        SigmaPoly { terms }
    }

    /// `sigma_{i+1}` (zero-based index).
    pub fn variable(i: usize) -> Self {
        let mut e = alloc::vec![0; i + 1];
        e[i] = 1;
        Self::monomial(e, C::one())
    }

    /// `(1 - sigma_{i+1})^p`, expanded.
    pub fn one_minus_pow(i: usize, p: u32) -> Self {
        let mut terms = BTreeMap::new();
        let mut binom = num_bigint::BigInt::from(1);
        for j in 0..=p {
            let mut e = alloc::vec![0; i + 1];
            e[i] = j;
            let sign = if j % 2 == 0 { 1 } else { -1 };
            let coef = BigRational::from_integer(binom.clone() * sign);
            add_into(&mut terms, trim(e), &C::from_rational(&coef));
            binom = binom * (p - j) / (j + 1);
        }
        SigmaPoly { terms }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &C)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of leading variables in use (`k` of the smallest fitting simplex).
    pub fn num_vars(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    /// Multiply every coefficient by `s` on the coefficient side.
    pub fn scale_coefs(&self, s: &C) -> Self {
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            add_into(&mut terms, e.clone(), &c.mul_ref(s));
        }
        SigmaPoly { terms }
    }

    /// `∫_{sigma_{j-1} >= sigma_j >= 0} dsigma_j` for the innermost variable `j = k`,
    /// with upper limit 1 when `k = 1`.
    fn integrate_innermost(&self, k: usize) -> Self {
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            let mut e = e.clone();
            e.resize(k, 0);
            let p = e.pop().unwrap();
            if k > 1 {
                e[k - 2] += p + 1;
            }
            let w = BigRational::new(1.into(), (p as i64 + 1).into());
            add_into(&mut terms, trim(e), &c.scale(&w));
        }
        SigmaPoly { terms }
    }

    /// Exact `∫` over `1 >= sigma_1 >= ... >= sigma_k >= 0`, innermost first.
    pub fn integrate_simplex(&self, k: usize) -> C {
        assert!(
            self.num_vars() <= k,
            "polynomial uses {} variables, simplex has {k}",
            self.num_vars()
        );
        let mut cur = self.clone();
        for j in (1..=k).rev() {
            cur = cur.integrate_innermost(j);
        }
        debug_assert!(cur.terms.keys().all(Vec::is_empty));
        cur.terms.remove(&Vec::new()).unwrap_or_else(C::zero)
    }
}

impl<C: Ring> Ring for SigmaPoly<C> {
    fn zero() -> Self {
        SigmaPoly {
            terms: BTreeMap::new(),
        }
    }
    fn one() -> Self {
        Self::constant(C::one())
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
    fn add_assign_ref(&mut self, other: &Self) {
        for (e, c) in &other.terms {
            add_into(&mut self.terms, e.clone(), c);
        }
    }
    fn mul_ref(&self, other: &Self) -> Self {
        let mut terms = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let n = ea.len().max(eb.len());
                let e: Vec<u32> = (0..n)
                    .map(|i| ea.get(i).copied().unwrap_or(0) + eb.get(i).copied().unwrap_or(0))
                    .collect();
                add_into(&mut terms, e, &ca.mul_ref(cb));
            }
        }
        SigmaPoly { terms }
    }
    fn neg_ref(&self) -> Self {
        SigmaPoly {
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c.neg_ref())).collect(),
        }
    }
    fn from_rational(r: &BigRational) -> Self {
        Self::constant(C::from_rational(r))
    }
}

/// Exact integral of `p` over the ordered simplex
/// `{1 >= sigma_1 >= ... >= sigma_k >= 0}`.
pub fn simplex_integrate(p: &SigmaPoly<BigRational>, k: usize) -> BigRational {
    p.integrate_simplex(k)
}

/// `1/k!`, the volume of the ordered `k`-simplex.
pub fn simplex_volume(k: usize) -> BigRational {
    int(1) / crate::ring::factorial(k as u32)
}
