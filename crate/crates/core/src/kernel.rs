//! Explicit kernel polynomials and the approximate Green's function.
//!
//! Each symbolic term `c(z) (x-z)^beta D^gamma` of `P^l` acts on the frozen
//! Gaussian `G(z; x-y)` and becomes `c(z) (x-z)^beta H_gamma(x-y) G(z; x-y)`.
//! Summing the levels with the parabolic scaling gives the order-`mu`
//! approximation of the heat kernel of `L`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::dyson::{DysonError, Expansion, OperatorSpec, SpecError};
use crate::expr::{CompiledExpr, ExprError};
use crate::grid::{GridError, GridFn};
use crate::linalg;
use crate::opalg::{Atom, Exponents};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Dyson(#[from] DysonError),
    #[error("evaluating {what}: {source}")]
    Expr { what: &'static str, source: ExprError },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("diffusion matrix at {point:?} is not positive definite")]
    NotPositiveDefinite { point: Vec<f64> },
    #[error("geometric center needs a declared positive-orthant domain")]
    GeometricNeedsOrthant,
    #[error("geometric center needs positive coordinates, got x={x:?} y={y:?}")]
    NonPositiveCoordinate { x: Vec<f64>, y: Vec<f64> },
    #[error("affine center weight must be finite, got {0}")]
    BadWeight(f64),
    #[error("time must be positive and finite, got {0}")]
    BadTime(f64),
    #[error("non-finite kernel value at t={t}, x={x:?}, y={y:?}")]
    NonFinite { t: f64, x: Vec<f64>, y: Vec<f64> },
    #[error("point has {got} coordinates, operator dimension is {dim}")]
    Dimension { got: usize, dim: usize },
}

/// Frozen Gaussian data at a center: `A(z)`, its inverse and determinant.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussData {
    z: Vec<f64>,
    a: Vec<f64>,
    ainv: Vec<f64>,
    det: f64,
    norm: f64,
}

impl GaussData {
    /// Factorizes `a` (row-major, symmetric). Pivots below
    /// `1e-10 * max(|A|, 1)` are rejected.
    pub fn new(z: Vec<f64>, a: Vec<f64>) -> Result<Self, KernelError> {
        let n = z.len();
        assert_eq!(a.len(), n * n, "matrix shape");
        let tol = 1e-10 * linalg::max_abs(&a).max(1.0);
        let l = linalg::cholesky(n, &a, tol)
            .ok_or_else(|| KernelError::NotPositiveDefinite { point: z.clone() })?;
        let (ainv, det) = linalg::cholesky_inverse(n, &l);
        let norm = libm::pow(4.0 * PI, -(n as f64) / 2.0) / libm::sqrt(det);
        Ok(GaussData {
            z,
            a,
            ainv,
            det,
            norm,
        })
    }

    /// `A(z)` from the operator, with the ellipticity spot check.
    pub fn from_spec(spec: &OperatorSpec, z: &[f64]) -> Result<Self, KernelError> {
        let a = spec.check_ellipticity(z)?;
        GaussData::new(z.to_vec(), a)
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn a_inv(&self) -> &[f64] {
        &self.ainv
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    /// `w^T A^{-1} w`.
    pub fn quad_form(&self, w: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            let mut r = 0.0;
            for j in 0..n {
                r += self.ainv[i * n + j] * w[j];
            }
            s += w[i] * r;
        }
        s
    }

    /// `G(z; w) = (4 pi)^{-N/2} det(A)^{-1/2} exp(-w^T A^{-1} w / 4)`.
    pub fn eval(&self, w: &[f64]) -> f64 {
        self.norm * libm::exp(-0.25 * self.quad_form(w))
    }
}

/// `G(z; w)`.
pub fn gauss_eval(g: &GaussData, w: &[f64]) -> f64 {
    g.eval(w)
}

/// Real polynomial in `N` variables, keyed by exponent vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly {
    dim: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(dim: usize) -> Self {
        let mut p = Poly::zero(dim);
        p.add_term(vec![0; dim], 1.0);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_term(&mut self, e: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.terms.entry(e).or_insert(0.0);
        *slot += c;
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, f64)> {
        self.terms.iter().map(|(e, c)| (e, *c))
    }

    pub fn coefficient(&self, e: &[u32]) -> f64 {
        self.terms.get(e).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> i64 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>() as i64)
            .max()
            .unwrap_or(-1)
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        self.terms.iter().map(|(e, c)| c * monomial(w, e)).sum()
    }

    fn derivative(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.dim);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut d = e.clone();
                d[i] -= 1;
                out.add_term(d, c * e[i] as f64);
            }
        }
        out
    }

    fn times_linear(&self, coefs: &[f64]) -> Poly {
        let mut out = Poly::zero(self.dim);
        for (e, c) in &self.terms {
            for (j, &l) in coefs.iter().enumerate() {
                if l != 0.0 {
                    let mut d = e.clone();
                    d[j] += 1;
                    out.add_term(d, c * l);
                }
            }
        }
        out
    }

    fn add(&mut self, other: &Poly) {
        for (e, c) in &other.terms {
            self.add_term(e.clone(), *c);
        }
    }
}

pub(crate) fn monomial(v: &[f64], e: &[u32]) -> f64 {
    let mut p = 1.0;
    for (x, &k) in v.iter().zip(e) {
        for _ in 0..k {
            p *= x;
        }
    }
    p
}

/// `H_gamma` with `D^gamma G(z; w) = H_gamma(w) G(z; w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitePoly {
    gamma: Exponents,
    poly: Poly,
}

impl HermitePoly {
    pub fn gamma(&self) -> &Exponents {
        &self.gamma
    }

    pub fn poly(&self) -> &Poly {
        &self.poly
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        self.poly.eval(w)
    }
}

/// `H_{gamma+e_i} = D_i H_gamma - (A^{-1} w)_i H_gamma / 2`, `H_0 = 1`.
pub fn hermite_apply(gamma: &Exponents, g: &GaussData) -> HermitePoly {
    let n = g.dim();
    assert_eq!(gamma.dim(), n, "multi-index dimension");
    let mut h = Poly::one(n);
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| -0.5 * g.ainv[i * n + j]).collect();
        for _ in 0..gamma.0[i] {
            let mut next = h.derivative(i);
            next.add(&h.times_linear(&row));
            h = next;
        }
    }
    HermitePoly {
        gamma: gamma.clone(),
        poly: h,
    }
}

/// `P^l(z, x, y) = sum c_{ab} (x-z)^a (x-y)^b` at a concrete center.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelPoly {
    ell: usize,
    dim: usize,
    terms: BTreeMap<(Vec<u32>, Vec<u32>), f64>,
}

impl KernelPoly {
    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `((alpha, beta), coef)` for `(x-z)^alpha (x-y)^beta`.
    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Vec<u32>, f64)> {
        self.terms.iter().map(|((a, b), c)| (a, b, *c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Degree in `x - z`.
    pub fn degree_xz(&self) -> i64 {
        self.terms
            .keys()
            .map(|(a, _)| a.iter().sum::<u32>() as i64)
            .max()
            .unwrap_or(-1)
    }

    /// Degree in `x - y`.
    pub fn degree_xy(&self) -> i64 {
        self.terms
            .keys()
            .map(|(_, b)| b.iter().sum::<u32>() as i64)
            .max()
            .unwrap_or(-1)
    }

    /// Value at `u = x - z`, `w = x - y`.
    pub fn eval(&self, u: &[f64], w: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|((a, b), c)| c * monomial(u, a) * monomial(w, b))
            .sum()
    }
}

/// Map `(x, y) -> z` selecting where the coefficients are frozen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CenterRule {
    /// `z = x`
    X,
    /// `z = (x + y)/2`
    Midpoint,
    /// `z = lambda x + (1 - lambda) y`
    Affine(f64),
    /// `z_i = sqrt(x_i y_i)`, positive orthant only
    Geometric,
}

impl CenterRule {
    pub fn all_builtin() -> [CenterRule; 4] {
        [
            CenterRule::X,
            CenterRule::Midpoint,
            CenterRule::Affine(0.25),
            CenterRule::Geometric,
        ]
    }

    /// Checks the rule against the operator domain.
    pub fn validate(&self, spec: &OperatorSpec) -> Result<(), KernelError> {
        match *self {
            CenterRule::Affine(l) if !l.is_finite() => Err(KernelError::BadWeight(l)),
            CenterRule::Geometric if !spec.positive_orthant() => {
                Err(KernelError::GeometricNeedsOrthant)
            }
            _ => Ok(()),
        }
    }

    /// Writes `z(x, y)` into `z`. Every rule returns `x` exactly when `x == y`.
    pub fn apply(&self, x: &[f64], y: &[f64], z: &mut [f64]) -> Result<(), KernelError> {
        let lambda = match *self {
            CenterRule::X => {
                z.copy_from_slice(x);
                return Ok(());
            }
            CenterRule::Midpoint => 0.5,
            CenterRule::Affine(l) => l,
            CenterRule::Geometric => {
                for i in 0..x.len() {
                    if !(x[i] > 0.0 && y[i] > 0.0) {
                        return Err(KernelError::NonPositiveCoordinate {
                            x: x.to_vec(),
                            y: y.to_vec(),
                        });
                    }
                    z[i] = if x[i] == y[i] {
                        x[i]
                    } else {
                        libm::sqrt(x[i] * y[i])
                    };
                }
                return Ok(());
            }
        };
        for i in 0..x.len() {
            z[i] = y[i] + lambda * (x[i] - y[i]);
        }
        Ok(())
    }
}

impl fmt::Display for CenterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CenterRule::X => f.write_str("x"),
            CenterRule::Midpoint => f.write_str("midpoint"),
            CenterRule::Affine(l) => write!(f, "affine({l})"),
            CenterRule::Geometric => f.write_str("geometric"),
        }
    }
}

#[derive(Clone, Debug)]
struct CoefTerm {
    value: f64,
    factors: Vec<(usize, u32)>,
}

#[derive(Clone, Debug)]
struct CompiledTerm {
    beta: Vec<u32>,
    gamma: usize,
    coef: Vec<CoefTerm>,
}

/// Everything that depends on the center only.
#[derive(Clone, Debug)]
pub struct CenterData {
    gauss: GaussData,
    hermite: Vec<HermitePoly>,
    levels: Vec<Vec<(Vec<u32>, usize, f64)>>,
}

impl CenterData {
    pub fn gauss(&self) -> &GaussData {
        &self.gauss
    }

    /// `sum_terms c (u)^beta H_gamma(w)` for level `l`.
    fn level_value(&self, ell: usize, u: &[f64], hvals: &[f64]) -> f64 {
        self.levels[ell]
            .iter()
            .map(|(beta, g, c)| c * monomial(u, beta) * hvals[*g])
            .sum()
    }
}

/// Cache of [`CenterData`] keyed by the center quantized to `2^-40`.
/// Entries are built from the quantized center, so values do not depend on
/// evaluation order. Centers with a coordinate beyond `2^20` are keyed
/// exactly. Not shared between threads; give each worker its own.
#[derive(Clone, Debug, Default)]
pub struct ZCache {
    map: BTreeMap<Vec<i64>, CenterData>,
    hits: u64,
    misses: u64,
}

const CACHE_CAPACITY: usize = 1 << 16;
const QUANTUM: f64 = (1u64 << 40) as f64;
const QUANTIZED_RANGE: f64 = (1u64 << 20) as f64;

impl ZCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// `(hits, misses)`.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }

    /// Tagged key and the center the entry is built from.
    fn key(z: &[f64]) -> (Vec<i64>, Vec<f64>) {
        if z.iter().all(|v| v.abs() < QUANTIZED_RANGE) {
            let mut key = vec![0];
            key.extend(z.iter().map(|v| libm::round(v * QUANTUM) as i64));
            let center = key[1..].iter().map(|&k| k as f64 / QUANTUM).collect();
            (key, center)
        } else {
            let mut key = vec![1];
            key.extend(z.iter().map(|v| v.to_bits() as i64));
            (key, z.to_vec())
        }
    }
}

/// Evaluates the order-`mu` kernel of one operator for one center rule.
/// Immutable and shareable; per-center work goes through a [`ZCache`].
#[derive(Clone, Debug)]
pub struct KernelEvaluator {
    spec: OperatorSpec,
    mu: usize,
    rule: CenterRule,
    atoms: Vec<CompiledExpr>,
    diffusion: Vec<CompiledExpr>,
    gammas: Vec<Exponents>,
    levels: Vec<Vec<CompiledTerm>>,
}

impl KernelEvaluator {
    pub fn new(spec: &OperatorSpec, mu: usize, rule: CenterRule) -> Result<Self, KernelError> {
        let expansion = Expansion::new(spec, mu)?;
        Self::from_expansion(&expansion, rule)
    }

    pub fn from_expansion(expansion: &Expansion, rule: CenterRule) -> Result<Self, KernelError> {
        let spec = expansion.spec();
        rule.validate(spec)?;
        let n = spec.dim();
        let atom_list: Vec<Atom> = expansion.atoms();
        let atoms = atom_list.iter().map(|a| spec.atom_expr(a).compile()).collect();
        let mut diffusion = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                diffusion.push(spec.a(i, j).compile());
            }
        }
        let mut gammas: Vec<Exponents> = Vec::new();
        let mut levels = Vec::with_capacity(expansion.order() + 1);
        for ell in 0..=expansion.order() {
            let mut level = Vec::new();
            for (beta, gamma, c) in expansion.p_ell(ell)?.terms() {
                let gi = match gammas.iter().position(|g| g == gamma) {
                    Some(i) => i,
                    None => {
                        gammas.push(gamma.clone());
                        gammas.len() - 1
                    }
                };
                let coef = c
                    .terms()
                    .map(|(mono, r)| CoefTerm {
                        value: crate::expr::rational_to_f64(r),
                        factors: mono
                            .iter()
                            .map(|(a, p)| (atom_list.binary_search(a).expect("atom listed"), *p))
                            .collect(),
                    })
                    .collect();
                level.push(CompiledTerm {
                    beta: beta.0.clone(),
                    gamma: gi,
                    coef,
                });
            }
            levels.push(level);
        }
        Ok(KernelEvaluator {
            spec: spec.clone(),
            mu: expansion.order(),
            rule,
            atoms,
            diffusion,
            gammas,
            levels,
        })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    pub fn rule(&self) -> CenterRule {
        self.rule
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// `A(x)` from the compiled coefficients.
    pub fn diffusion_at(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        self.diffusion
            .iter()
            .map(|e| {
                e.eval(x).map_err(|source| KernelError::Expr {
                    what: "diffusion coefficient",
                    source,
                })
            })
            .collect()
    }

    /// Evaluates every atom and Hermite polynomial at a center.
    pub fn prepare(&self, z: &[f64]) -> Result<CenterData, KernelError> {
        if z.len() != self.dim() {
            return Err(KernelError::Dimension {
                got: z.len(),
                dim: self.dim(),
            });
        }
        let a = self.spec.check_diffusion(z, self.diffusion_at(z)?)?;
        let gauss = GaussData::new(z.to_vec(), a)?;
        let atom_vals = self
            .atoms
            .iter()
            .map(|e| {
                e.eval(z).map_err(|source| KernelError::Expr {
                    what: "coefficient derivative",
                    source,
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let hermite = self.gammas.iter().map(|g| hermite_apply(g, &gauss)).collect();
        let levels = self
            .levels
            .iter()
            .map(|level| {
                level
                    .iter()
                    .filter_map(|t| {
                        let c: f64 = t
                            .coef
                            .iter()
                            .map(|ct| {
                                ct.factors
                                    .iter()
                                    .fold(ct.value, |acc, &(i, p)| acc * powu(atom_vals[i], p))
                            })
                            .sum();
                        (c != 0.0).then(|| (t.beta.clone(), t.gamma, c))
                    })
                    .collect()
            })
            .collect();
        Ok(CenterData {
            gauss,
            hermite,
            levels,
        })
    }

    fn center_data<'c>(
        &self,
        cache: &'c mut ZCache,
        z: &[f64],
    ) -> Result<&'c CenterData, KernelError> {
        let (key, center) = ZCache::key(z);
        if cache.map.contains_key(&key) {
            cache.hits += 1;
        } else {
            cache.misses += 1;
            if cache.map.len() >= CACHE_CAPACITY {
                cache.map.clear();
            }
            let data = self.prepare(&center)?;
            cache.map.insert(key.clone(), data);
        }
        Ok(&cache.map[&key])
    }

    /// `P^l(z, x, y)` with numeric coefficients.
    pub fn frak_p(&self, ell: usize, z: &[f64]) -> Result<KernelPoly, KernelError> {
        let data = self.prepare(z)?;
        Ok(kernel_poly(&data, ell, self.dim()))
    }

    /// `G^{[mu,z]}_t(x, y)`.
    pub fn eval(
        &self,
        cache: &mut ZCache,
        t: f64,
        x: &[f64],
        y: &[f64],
    ) -> Result<f64, KernelError> {
        let n = self.dim();
        if !(t > 0.0 && t.is_finite()) {
            return Err(KernelError::BadTime(t));
        }
        if x.len() != n || y.len() != n {
            return Err(KernelError::Dimension {
                got: x.len().min(y.len()),
                dim: n,
            });
        }
        let mut z = vec![0.0; n];
        self.rule.apply(x, y, &mut z)?;
        let data = self.center_data(cache, &z)?;
        let v = eval_with(data, t, x, y, &z);
        if !v.is_finite() {
            return Err(KernelError::NonFinite {
                t,
                x: x.to_vec(),
                y: y.to_vec(),
            });
        }
        Ok(v)
    }
}

fn powu(x: f64, p: u32) -> f64 {
    let mut r = 1.0;
    for _ in 0..p {
        r *= x;
    }
    r
}

fn eval_with(data: &CenterData, t: f64, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    let n = x.len();
    let st = libm::sqrt(t);
    let mut u = [0.0; 8];
    let mut w = [0.0; 8];
    let (u, w) = if n <= 8 {
        (&mut u[..n], &mut w[..n])
    } else {
        unreachable!("dimension above 8")
    };
    for i in 0..n {
        u[i] = (x[i] - z[i]) / st;
        w[i] = (x[i] - y[i]) / st;
    }
    let hvals: Vec<f64> = data.hermite.iter().map(|h| h.eval(w)).collect();
    let mut series = 0.0;
    let mut tp = 1.0;
    for ell in 0..data.levels.len() {
        series += tp * data.level_value(ell, u, &hvals);
        tp *= st;
    }
    libm::pow(t, -(n as f64) / 2.0) * series * data.gauss.eval(w)
}

fn kernel_poly(data: &CenterData, ell: usize, dim: usize) -> KernelPoly {
    let mut terms: BTreeMap<(Vec<u32>, Vec<u32>), f64> = BTreeMap::new();
    for (beta, g, c) in &data.levels[ell] {
        for (e, h) in data.hermite[*g].poly.terms() {
            let slot = terms.entry((beta.clone(), e.clone())).or_insert(0.0);
            *slot += c * h;
        }
    }
    terms.retain(|_, c| *c != 0.0);
    KernelPoly { ell, dim, terms }
}

/// `P^l(z, ., .)` for a concrete operator and center.
pub fn frak_p(spec: &OperatorSpec, ell: usize, z: &[f64]) -> Result<KernelPoly, KernelError> {
    KernelEvaluator::new(spec, ell, CenterRule::X)?.frak_p(ell, z)
}

/// One-shot `G^{[mu,z]}_t(x, y)`; builds the expansion on every call, so
/// prefer [`KernelEvaluator`] for repeated evaluation.
pub fn approx_kernel(
    spec: &OperatorSpec,
    mu: usize,
    rule: CenterRule,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64, KernelError> {
    KernelEvaluator::new(spec, mu, rule)?.eval(&mut ZCache::new(), t, x, y)
}

/// Non-fatal diagnostics from [`apply_kernel`].
#[derive(Clone, Debug, PartialEq)]
pub enum KernelWarning {
    /// The support of `f` comes closer than `required` to the grid edge
    /// along `axis`; `bound` estimates the mass lost to truncation.
    MarginTooSmall {
        axis: usize,
        margin: f64,
        required: f64,
        bound: f64,
    },
}

impl fmt::Display for KernelWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelWarning::MarginTooSmall {
                axis,
                margin,
                required,
                bound,
            } => write!(
                f,
                "axis {axis}: margin {margin:.3e} below {required:.3e}, truncation bound {bound:.3e}"
            ),
        }
    }
}

/// Precomputed quadrature plan for one `(evaluator, t, f)` triple.
#[derive(Clone, Debug)]
pub struct Quadrature<'a> {
    ev: &'a KernelEvaluator,
    f: &'a GridFn,
    t: f64,
    radius: Vec<usize>,
    warnings: Vec<KernelWarning>,
}

impl<'a> Quadrature<'a> {
    /// Checks the margins and fixes the truncation window `14 sqrt(t lambda_max)`.
    pub fn new(ev: &'a KernelEvaluator, t: f64, f: &'a GridFn) -> Result<Self, KernelError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(KernelError::BadTime(t));
        }
        let grid = f.grid();
        if grid.dim() != ev.dim() {
            return Err(KernelError::Dimension {
                got: grid.dim(),
                dim: ev.dim(),
            });
        }
        let n = grid.dim();
        let mut lambda_max = 0.0f64;
        let mut p = vec![0.0; n];
        for k in 0..grid.len() {
            grid.point(k, &mut p);
            let a = ev.diffusion_at(&p)?;
            let ev_max = *linalg::symmetric_eigenvalues(n, &a).last().unwrap();
            lambda_max = lambda_max.max(ev_max);
        }
        let scale = libm::sqrt(t * lambda_max);
        let radius = grid
            .axes()
            .iter()
            .map(|a| libm::ceil(14.0 * scale / a.h()) as usize)
            .collect();

        let fmax = f.max_abs();
        let mut warnings = Vec::new();
        if fmax > 0.0 {
            let mut lo = vec![f64::INFINITY; n];
            let mut hi = vec![f64::NEG_INFINITY; n];
            for (k, v) in f.values().iter().enumerate() {
                if v.abs() > 1e-12 * fmax {
                    grid.point(k, &mut p);
                    for d in 0..n {
                        lo[d] = lo[d].min(p[d]);
                        hi[d] = hi[d].max(p[d]);
                    }
                }
            }
            let required = 8.0 * scale;
            for (d, axis) in grid.axes().iter().enumerate() {
                let margin = (lo[d] - axis.lo()).min(axis.hi() - hi[d]);
                if margin < required {
                    let r = margin.max(0.0) / scale;
                    warnings.push(KernelWarning::MarginTooSmall {
                        axis: d,
                        margin,
                        required,
                        bound: libm::exp(-r * r / 4.0),
                    });
                }
            }
        }
        Ok(Quadrature {
            ev,
            f,
            t,
            radius,
            warnings,
        })
    }

    pub fn warnings(&self) -> &[KernelWarning] {
        &self.warnings
    }

    /// Trapezoid value of `int G_t(x, y) f(y) dy` at output node `k`.
    pub fn at(&self, cache: &mut ZCache, k: usize) -> Result<f64, KernelError> {
        let grid = self.f.grid();
        let n = grid.dim();
        let mut xi = vec![0; n];
        grid.unflat(k, &mut xi);
        let mut x = vec![0.0; n];
        grid.point(k, &mut x);
        let lo: Vec<usize> = (0..n).map(|d| xi[d].saturating_sub(self.radius[d])).collect();
        let hi: Vec<usize> = (0..n)
            .map(|d| (xi[d] + self.radius[d]).min(grid.axes()[d].len() - 1))
            .collect();
        let mut yi = lo.clone();
        let mut y = vec![0.0; n];
        let mut acc = 0.0;
        loop {
            let fy = self.f.values()[grid.flat(&yi)];
            if fy != 0.0 {
                for d in 0..n {
                    y[d] = grid.axes()[d].node(yi[d]);
                }
                let g = self.ev.eval(cache, self.t, &x, &y)?;
                acc += grid.trapezoid_weight(&yi) * g * fy;
            }
            let mut d = n;
            loop {
                if d == 0 {
                    return Ok(acc);
                }
                d -= 1;
                if yi[d] < hi[d] {
                    yi[d] += 1;
                    break;
                }
                yi[d] = lo[d];
            }
        }
    }
}

/// Output of [`apply_kernel`].
#[derive(Clone, Debug)]
pub struct Applied {
    pub values: GridFn,
    pub warnings: Vec<KernelWarning>,
}

/// `int G^{[mu,z]}_t(x, y) f(y) dy` at every node of the grid of `f`.
pub fn apply_kernel(ev: &KernelEvaluator, t: f64, f: &GridFn) -> Result<Applied, KernelError> {
    let q = Quadrature::new(ev, t, f)?;
    let mut cache = ZCache::new();
    let values = (0..f.grid().len())
        .map(|k| q.at(&mut cache, k))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(Applied {
        values: GridFn::new(f.grid().clone(), values)?,
        warnings: q.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn spec1(a: &str, b: &str, c: &str) -> OperatorSpec {
        OperatorSpec::parse(1, &[vec![a]], &[b], c, 0.1).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn gauss_values() {
        let g = GaussData::new(vec![0.0], vec![1.0]).unwrap();
        assert!(close(g.eval(&[0.0]), 0.2820947918, 1e-10));
        assert!(close(g.eval(&[2.0]), 0.2820947918 * libm::exp(-1.0), 1e-10));
        let g2 = GaussData::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(close(g2.eval(&[0.0, 0.0]), 1.0 / (4.0 * PI), 1e-15));
        assert!(GaussData::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn hermite_low_orders() {
        let g = GaussData::new(vec![0.0], vec![1.0]).unwrap();
        let h0 = hermite_apply(&Exponents(vec![0]), &g);
        assert_eq!(h0.poly(), &Poly::one(1));
        let h1 = hermite_apply(&Exponents(vec![1]), &g);
        assert_eq!(h1.poly().coefficient(&[1]), -0.5);
        assert_eq!(h1.poly().degree(), 1);
        let h2 = hermite_apply(&Exponents(vec![2]), &g);
        assert_eq!(h2.poly().coefficient(&[2]), 0.25);
        assert_eq!(h2.poly().coefficient(&[0]), -0.5);
    }

    #[test]
    fn frak_p_zero_is_one() {
        let spec = spec1("1 + 0.25*sin(x1)", "x1", "1");
        let p = frak_p(&spec, 0, &[0.3]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.eval(&[0.7], &[-1.1]), 1.0);
    }

    #[test]
    fn frak_p_one_for_variable_diffusion() {
        let spec = spec1("1 + 0.25*sin(x1)", "0", "0");
        let z = 0.4;
        let a = 1.0 + 0.25 * libm::sin(z);
        let da = 0.25 * libm::cos(z);
        let p = frak_p(&spec, 1, &[z]).unwrap();
        for &(u, w) in &[(0.3, -0.7), (1.2, 0.5), (-0.4, 2.0)] {
            let expected = da
                * (u * (w * w / (4.0 * a * a) - 1.0 / (2.0 * a)) - w * w * w / (8.0 * a * a)
                    + 3.0 * w / (4.0 * a));
            assert!(close(p.eval(&[u], &[w]), expected, 1e-13));
        }
    }

    #[test]
    fn frak_p_one_for_constant_drift() {
        let spec = spec1("1", "0.7", "0");
        let p = frak_p(&spec, 1, &[0.0]).unwrap();
        assert!(close(p.eval(&[0.0], &[0.9]), -0.7 * 0.9 / 2.0, 1e-15));
    }

    #[test]
    fn heat_kernel_at_order_zero() {
        let spec = spec1("1", "0", "0");
        for rule in [CenterRule::X, CenterRule::Midpoint, CenterRule::Affine(0.3)] {
            let v = approx_kernel(&spec, 0, rule, 0.1, &[0.2], &[-0.1]).unwrap();
            let exact = libm::exp(-0.09 / 0.4) / libm::sqrt(4.0 * PI * 0.1);
            assert!(close(v, exact, 1e-14));
        }
    }

    #[test]
    fn center_rules_fix_diagonal() {
        for rule in CenterRule::all_builtin() {
            let x = [0.37, 2.5];
            let mut z = [0.0; 2];
            rule.apply(&x, &x, &mut z).unwrap();
            assert_eq!(z, x);
        }
        let mut z = [0.0];
        CenterRule::Geometric.apply(&[4.0], &[1.0], &mut z).unwrap();
        assert_eq!(z, [2.0]);
        assert!(CenterRule::Geometric.apply(&[-1.0], &[1.0], &mut z).is_err());
        let spec = spec1("1", "0", "0");
        assert_eq!(
            CenterRule::Geometric.validate(&spec),
            Err(KernelError::GeometricNeedsOrthant)
        );
    }

    #[test]
    fn ellipticity_failure_is_reported() {
        let spec = OperatorSpec::parse(1, &[vec!["x1"]], &["0"], "0", 0.5).unwrap();
        let ev = KernelEvaluator::new(&spec, 1, CenterRule::X).unwrap();
        assert!(matches!(
            ev.eval(&mut ZCache::new(), 0.1, &[-1.0], &[-1.0]),
            Err(KernelError::Spec(_))
        ));
    }

    #[test]
    fn apply_preserves_constants() {
        let spec = spec1("1", "0", "0");
        let ev = KernelEvaluator::new(&spec, 0, CenterRule::X).unwrap();
        let grid = Grid::uniform(-6.0, 6.0, 241, 1).unwrap();
        let f = GridFn::sample(grid, |_| 1.0);
        let out = apply_kernel(&ev, 0.05, &f).unwrap();
        let mid = out.values.values()[120];
        assert!((mid - 1.0).abs() < 1e-8);
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn apply_odd_function_vanishes_at_origin() {
        let spec = spec1("1", "0", "0");
        let ev = KernelEvaluator::new(&spec, 0, CenterRule::X).unwrap();
        let grid = Grid::uniform(-8.0, 8.0, 321, 1).unwrap();
        let f = GridFn::sample(grid, |p| p[0] * libm::exp(-p[0] * p[0]));
        let out = apply_kernel(&ev, 0.1, &f).unwrap();
        assert!(out.values.values()[160].abs() < 1e-14);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn cache_reuses_centers() {
        let spec = spec1("1 + 0.25*sin(x1)", "0", "0");
        let ev = KernelEvaluator::new(&spec, 2, CenterRule::X).unwrap();
        let mut cache = ZCache::new();
        for y in [-0.1, 0.0, 0.1] {
            ev.eval(&mut cache, 0.01, &[0.5], &[y]).unwrap();
        }
        assert_eq!(cache.stats(), (2, 1));
    }
}
