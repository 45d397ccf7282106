use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use num_rational::BigRational;

use super::operator::OperatorSpec;
use super::sigma::SigmaPoly;
use crate::opalg::{ad_power, Atom, DiffOp, Exponents, Field, OpAlgError, ScalarCoef, SymbolicOp};
use crate::ring::{factorial, int, Ring};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum DysonError {
    #[error(transparent)]
    OpAlg(#[from] OpAlgError),
    #[error("multi-index entries must be >= 1, got {0}")]
    BadIndex(MultiIndex),
    #[error("order {requested} exceeds the {built} Taylor terms that were built")]
    OrderTooHigh { requested: usize, built: usize },
}

/// Taylor term `L_m^z` of the dilated operator, atoms left symbolic:
/// `sum_{|b|=m} D^b a_ij/b! w^b D_i D_j + sum_{|b|=m-1} D^b b_k/b! w^b D_k
///  + sum_{|b|=m-2} D^b c/b! w^b`.
/// Atoms whose expression folds to zero are dropped.
pub fn taylor_term(spec: &OperatorSpec, m: usize) -> SymbolicOp {
    let n = spec.dim();
    let m = m as u32;
    let mut terms = Vec::new();
    for beta in Exponents::with_total(n, m) {
        let inv_fact = int(1) / beta.factorial();
        for i in 0..n {
            for j in i..n {
                let mult = if i == j { 1 } else { 2 };
                let coef =
                    ScalarCoef::atom(Atom::a(i, j, beta.clone())).scale(&(&inv_fact * int(mult)));
                let mut gamma = Exponents::zeros(n);
                gamma.0[i] += 1;
                gamma.0[j] += 1;
                terms.push((beta.clone(), gamma, coef));
            }
        }
    }
    if m >= 1 {
        for beta in Exponents::with_total(n, m - 1) {
            let inv_fact = int(1) / beta.factorial();
            for k in 0..n {
                let atom = Atom {
                    field: Field::B(k),
                    deriv: beta.clone(),
                };
                terms.push((
                    beta.clone(),
                    Exponents::unit(n, k),
                    ScalarCoef::atom(atom).scale(&inv_fact),
                ));
            }
        }
    }
    if m >= 2 {
        for beta in Exponents::with_total(n, m - 2) {
            let inv_fact = int(1) / beta.factorial();
            let atom = Atom {
                field: Field::C,
                deriv: beta.clone(),
            };
            terms.push((
                beta.clone(),
                Exponents::zeros(n),
                ScalarCoef::atom(atom).scale(&inv_fact),
            ));
        }
    }
    terms.retain(|(_, _, c): &(Exponents, Exponents, ScalarCoef)| {
        c.atoms().any(|a| !spec.atom_expr(a).is_zero())
    });
    DiffOp::from_terms(n, terms)
}

/// Dyson multi-index `alpha = (alpha_1, .., alpha_k)`, every entry >= 1.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    /// Iteration level `k`.
    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// Power of `s`, `l = sum alpha_i`.
    pub fn ell(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_valid(&self) -> bool {
        !self.0.is_empty() && self.0.iter().all(|&a| a >= 1)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

/// All compositions of `ell` into positive parts, grouped by length `k` and
/// lexicographic within each group. There are `2^(ell-1)` of them.
pub fn enumerate_indices(ell: u32) -> Vec<MultiIndex> {
    fn rec(left: u32, parts: usize, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if parts == 1 {
            cur.push(left);
            out.push(MultiIndex(cur.clone()));
            cur.pop();
            return;
        }
        for first in 1..=(left - (parts as u32 - 1)) {
            cur.push(first);
            rec(left - first, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for k in 1..=ell as usize {
        rec(ell, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// `P_m(theta) = sum_{k=0}^m theta^k/k! ad^k_{L0}(L_m)`, stored by powers of theta.
#[derive(Clone, Debug, PartialEq)]
pub struct BchPolynomial<C> {
    coeffs: Vec<DiffOp<C>>,
}

impl<C: Ring> BchPolynomial<C> {
    /// Operator multiplying `theta^k`.
    pub fn coefficients(&self) -> &[DiffOp<C>] {
        &self.coeffs
    }

    /// `P_m(theta)` at an exact `theta`.
    pub fn eval(&self, theta: &BigRational) -> DiffOp<C> {
        let dim = self.coeffs[0].dim();
        let mut acc = DiffOp::zero(dim);
        let mut pow = int(1);
        for c in &self.coeffs {
            acc = acc.add(&c.scale(&pow)).expect("same dimension");
            pow *= theta;
        }
        acc
    }

    /// `P_m(1 - sigma_{i+1})` with `sigma` left symbolic.
    pub fn at_one_minus_sigma(&self, i: usize) -> DiffOp<SigmaPoly<C>> {
        let dim = self.coeffs[0].dim();
        let mut acc = DiffOp::zero(dim);
        for (k, c) in self.coeffs.iter().enumerate() {
            let shape = SigmaPoly::<C>::one_minus_pow(i, k as u32);
            let lifted = c.map_coefs(|s| shape.scale_coefs(s));
            acc = acc.add(&lifted).expect("same dimension");
        }
        acc
    }

    /// The full operator lies in `D(m, m+2)`.
    pub fn total(&self) -> DiffOp<C> {
        self.eval(&int(1))
    }
}

/// Coefficients of `P_m(theta)`. Requires `L0 ∈ D(0,2)` and `Lm ∈ D(m,2)`.
pub fn bch_polynomial<C: Ring>(
    l0: &DiffOp<C>,
    lm: &DiffOp<C>,
    m: usize,
) -> Result<BchPolynomial<C>, DysonError> {
    l0.check_class(0, 2)?;
    lm.check_class(m as i64, 2)?;
    let mut coeffs = Vec::with_capacity(m + 1);
    let mut ad = lm.clone();
    for k in 0..=m {
        if k > 0 {
            ad = ad_power(l0, &ad, 1)?;
        }
        coeffs.push(ad.scale(&(int(1) / factorial(k as u32))));
    }
    Ok(BchPolynomial { coeffs })
}

/// The combinatorial layer of the expansion, generic in the coefficient
/// ring: Taylor terms `L_0..L_order`, their BCH polynomials and every
/// `P_alpha`, `P^l` with `|alpha|, l <= order`.
#[derive(Clone, Debug)]
pub struct DysonTerms<C> {
    dim: usize,
    taylor: Vec<DiffOp<C>>,
    bch: Vec<BchPolynomial<C>>,
    p_alpha: BTreeMap<MultiIndex, DiffOp<C>>,
    p_ell: Vec<DiffOp<C>>,
}

impl<C: Ring> DysonTerms<C> {
    /// `taylor[m]` is `L_m`; builds everything up to `taylor.len() - 1`.
    pub fn from_taylor_terms(taylor: Vec<DiffOp<C>>) -> Result<Self, DysonError> {
        assert!(!taylor.is_empty(), "need at least L_0");
        let dim = taylor[0].dim();
        let order = taylor.len() - 1;
        let mut bch = Vec::with_capacity(order + 1);
        for (m, lm) in taylor.iter().enumerate() {
            bch.push(bch_polynomial(&taylor[0], lm, m)?);
        }
        let mut out = DysonTerms {
            dim,
            taylor,
            bch,
            p_alpha: BTreeMap::new(),
            p_ell: Vec::with_capacity(order + 1),
        };
        out.p_ell.push(DiffOp::identity(dim));
        for ell in 1..=order as u32 {
            let mut total = DiffOp::zero(dim);
            for alpha in enumerate_indices(ell) {
                let p = out.compute_p_alpha(&alpha)?;
                total = total.add(&p)?;
                out.p_alpha.insert(alpha, p);
            }
            out.p_ell.push(total);
        }
        Ok(out)
    }

    fn compute_p_alpha(&self, alpha: &MultiIndex) -> Result<DiffOp<C>, DysonError> {
        if !alpha.is_valid() {
            return Err(DysonError::BadIndex(alpha.clone()));
        }
        let order = self.order();
        if let Some(&too_big) = alpha.0.iter().find(|&&a| a as usize > order) {
            return Err(DysonError::OrderTooHigh {
                requested: too_big as usize,
                built: order,
            });
        }
        let k = alpha.k();
        let mut product: DiffOp<SigmaPoly<C>> = DiffOp::identity(self.dim);
        for (i, &a) in alpha.0.iter().enumerate() {
            let factor = self.bch[a as usize].at_one_minus_sigma(i);
            product = product.compose(&factor)?;
        }
        let integrated = product.map_coefs(|p| p.integrate_simplex(k));
        let ell = alpha.ell() as i64;
        integrated.check_class(ell, 2 * k as i64 + ell)?;
        Ok(integrated)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Highest order `mu` built.
    pub fn order(&self) -> usize {
        self.taylor.len() - 1
    }

    pub fn taylor(&self, m: usize) -> &DiffOp<C> {
        &self.taylor[m]
    }

    pub fn bch(&self, m: usize) -> &BchPolynomial<C> {
        &self.bch[m]
    }

    /// Memoized `P_alpha`, or computed on the fly when not cached.
    pub fn p_alpha(&self, alpha: &MultiIndex) -> Result<DiffOp<C>, DysonError> {
        match self.p_alpha.get(alpha) {
            Some(p) => Ok(p.clone()),
            None => self.compute_p_alpha(alpha),
        }
    }

    /// `P^l`; `P^0` is the identity.
    pub fn p_ell(&self, ell: usize) -> Result<&DiffOp<C>, DysonError> {
        self.p_ell.get(ell).ok_or(DysonError::OrderTooHigh {
            requested: ell,
            built: self.order(),
        })
    }
}

/// Symbolic expansion of a concrete operator up to order `mu`.
#[derive(Clone, Debug)]
pub struct Expansion {
    spec: OperatorSpec,
    terms: DysonTerms<ScalarCoef>,
}

impl Expansion {
    pub fn new(spec: &OperatorSpec, mu: usize) -> Result<Self, DysonError> {
        let taylor = (0..=mu).map(|m| taylor_term(spec, m)).collect();
        Ok(Expansion {
            spec: spec.clone(),
            terms: DysonTerms::from_taylor_terms(taylor)?,
        })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn order(&self) -> usize {
        self.terms.order()
    }

    pub fn terms(&self) -> &DysonTerms<ScalarCoef> {
        &self.terms
    }

    pub fn p_ell(&self, ell: usize) -> Result<&SymbolicOp, DysonError> {
        self.terms.p_ell(ell)
    }

    /// Every atom occurring in `P^0..P^mu`, sorted.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut set = alloc::collections::BTreeSet::new();
        for ell in 0..=self.order() {
            for (_, _, c) in self.terms.p_ell[ell].terms() {
                set.extend(c.atoms().cloned());
            }
        }
        set.into_iter().collect()
    }
}

/// `P_alpha` for a concrete operator.
pub fn assemble_p_alpha(spec: &OperatorSpec, alpha: &MultiIndex) -> Result<SymbolicOp, DysonError> {
    if !alpha.is_valid() {
        return Err(DysonError::BadIndex(alpha.clone()));
    }
    let top = *alpha.0.iter().max().unwrap() as usize;
    let taylor = (0..=top).map(|m| taylor_term(spec, m)).collect();
    // Only the BCH polynomials are needed here; skip the P^l sums.
    let bch_only = DysonTerms {
        dim: spec.dim(),
        bch: Vec::new(),
        taylor,
        p_alpha: BTreeMap::new(),
        p_ell: Vec::new(),
    };
    let mut terms = bch_only;
    for m in 0..terms.taylor.len() {
        let p = bch_polynomial(&terms.taylor[0], &terms.taylor[m], m)?;
        terms.bch.push(p);
    }
    terms.compute_p_alpha(alpha)
}

/// `P^l = sum_{alpha in A_l} P_alpha`, with `P^0` the identity.
pub fn assemble_p_ell(spec: &OperatorSpec, ell: usize) -> Result<SymbolicOp, DysonError> {
    Ok(Expansion::new(spec, ell)?.p_ell(ell)?.clone())
}
