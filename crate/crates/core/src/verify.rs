//! Reference solutions and error measurement.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

pub use crate::grid::{Axis, Grid, GridError, GridFn};
use crate::dyson::OperatorSpec;
use crate::expr::{CompiledExpr, ExprError};
use crate::kernel::{KernelError, KernelEvaluator, KernelWarning, Quadrature, ZCache};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("time must be positive and finite, got {0}")]
    BadTime(f64),
    #[error("time step {dt} exceeds the grid spacing {h}")]
    StepTooLarge { dt: f64, h: f64 },
    #[error("initial data reaches {value:e} on the boundary, limit is 1e-12 of its maximum")]
    BoundaryData { value: f64 },
    #[error("zero pivot in banded solve at row {0}")]
    Singular(usize),
    #[error("evaluating {what}: {source}")]
    Expr { what: &'static str, source: ExprError },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("grid dimension {got} does not match operator dimension {dim}")]
    Dimension { got: usize, dim: usize },
    #[error("convergence fit needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("t-ladder must be positive and strictly decreasing")]
    BadLadder,
    #[error("error values must be positive and finite")]
    BadErrors,
    #[error("norm parameter out of range: {0}")]
    BadNorm(&'static str),
    #[error("Richardson extrapolation needs between 1 and 3 levels, got {0}")]
    Levels(usize),
}

/// Heat kernel of `sum a_ij D_i D_j + b.D + c` with constant coefficients:
/// `e^{c t} (4 pi t)^{-N/2} det(A)^{-1/2} exp(-(x+bt-y)^T A^{-1} (x+bt-y) / (4t))`.
pub fn exact_const_kernel(
    a0: &[f64],
    b0: &[f64],
    c0: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64, VerifyError> {
    let n = x.len();
    if !(t > 0.0 && t.is_finite()) {
        return Err(VerifyError::BadTime(t));
    }
    if a0.len() != n * n || b0.len() != n || y.len() != n {
        return Err(VerifyError::Dimension { got: n, dim: b0.len() });
    }
    for i in 0..n {
        for j in 0..i {
            if a0[i * n + j] != a0[j * n + i] {
                return Err(VerifyError::NotSpd);
            }
        }
    }
    let tol = 1e-10 * linalg::max_abs(a0).max(1.0);
    let l = linalg::cholesky(n, a0, tol).ok_or(VerifyError::NotSpd)?;
    let (ainv, det) = linalg::cholesky_inverse(n, &l);
    let d: Vec<f64> = (0..n).map(|i| x[i] + b0[i] * t - y[i]).collect();
    let q: f64 = linalg::mat_vec(n, &ainv, &d)
        .iter()
        .zip(&d)
        .map(|(r, v)| r * v)
        .sum();
    Ok(libm::exp(c0 * t) * libm::pow(4.0 * PI * t, -(n as f64) / 2.0) / libm::sqrt(det)
        * libm::exp(-q / (4.0 * t)))
}

/// `(e^{theta a D^2} f)(x)` in one dimension by trapezoid quadrature of the
/// Gaussian convolution over `x +- 14 sqrt(theta a)` with step `h`.
pub fn heat_convolve_1d<F: Fn(f64) -> f64>(a: f64, theta: f64, x: f64, h: f64, f: F) -> f64 {
    let s = libm::sqrt(theta * a);
    let m = libm::ceil(14.0 * s / h) as i64;
    let norm = 1.0 / libm::sqrt(4.0 * PI * theta * a);
    let mut acc = 0.0;
    for k in -m..=m {
        let y = x + k as f64 * h;
        let d = x - y;
        acc += norm * libm::exp(-d * d / (4.0 * theta * a)) * f(y);
    }
    acc * h
}

/// Square band matrix with equal lower and upper bandwidth, LU-factorized in place
/// without pivoting.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedLu {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedLu {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.bw < i || j > i + self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.bw >= i && j <= i + self.bw, "entry outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn factorize(mut self) -> Result<Self, VerifyError> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            let scale = (0..=bw.min(n - 1 - k))
                .map(|d| self.data[self.idx(k, k + d)].abs())
                .fold(0.0f64, f64::max);
            if pivot.abs() <= 1e-14 * scale || pivot == 0.0 {
                return Err(VerifyError::Singular(k));
            }
            let end = (k + bw + 1).min(n);
            for i in (k + 1)..end {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in (k + 1)..end {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(self)
    }

    /// Solves in place; `self` must be factorized.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..(i + bw + 1).min(n) {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}

/// Non-fatal diagnostics from the finite-difference solver.
#[derive(Clone, Debug, PartialEq)]
pub enum SolverWarning {
    /// The solution next to the boundary exceeded `1e-8` of its maximum.
    BoundaryContamination { ratio: f64 },
}

impl fmt::Display for SolverWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverWarning::BoundaryContamination { ratio } => {
                write!(f, "solution near boundary reaches {ratio:.3e} of its maximum")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CnOutput {
    pub values: GridFn,
    pub warnings: Vec<SolverWarning>,
}

/// Finite-difference `L_h` as sparse rows over the interior nodes.
struct Stencil {
    rows: Vec<Vec<(isize, f64)>>,
    bw: usize,
}

fn assemble(spec: &OperatorSpec, grid: &Grid) -> Result<Stencil, VerifyError> {
    let n = spec.dim();
    if grid.dim() != n {
        return Err(VerifyError::Dimension {
            got: grid.dim(),
            dim: n,
        });
    }
    let compile = |e: &crate::expr::Expr| e.compile();
    let a: Vec<CompiledExpr> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| compile(spec.a(i, j)))
        .collect();
    let b: Vec<CompiledExpr> = (0..n).map(|k| compile(spec.b(k))).collect();
    let c = compile(spec.c());
    let h = grid.spacing();
    let mut strides = vec![1isize; n];
    for d in (0..n.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * grid.axes()[d + 1].len() as isize;
    }
    let bw = if n == 1 {
        1
    } else {
        (strides[0] + strides[1]) as usize
    };
    let ev = |e: &CompiledExpr, p: &[f64], what| {
        e.eval(p).map_err(|source| VerifyError::Expr { what, source })
    };
    let mut rows = Vec::with_capacity(grid.len());
    let mut idx = vec![0; n];
    let mut p = vec![0.0; n];
    for k in 0..grid.len() {
        grid.unflat(k, &mut idx);
        if grid.on_boundary(&idx) {
            rows.push(Vec::new());
            continue;
        }
        grid.point(k, &mut p);
        let mut row: Vec<(isize, f64)> = Vec::with_capacity(1 + 2 * n + 4 * n * n);
        let mut diag = ev(&c, &p, "c")?;
        for i in 0..n {
            let aii = ev(&a[i * n + i], &p, "diffusion")?;
            let bi = ev(&b[i], &p, "drift")?;
            let s = strides[i];
            let hi2 = h[i] * h[i];
            row.push((s, aii / hi2 + bi / (2.0 * h[i])));
            row.push((-s, aii / hi2 - bi / (2.0 * h[i])));
            diag -= 2.0 * aii / hi2;
            for j in (i + 1)..n {
                let aij = ev(&a[i * n + j], &p, "diffusion")?;
                let m = 2.0 * aij / (4.0 * h[i] * h[j]);
                let sj = strides[j];
                row.push((s + sj, m));
                row.push((-s - sj, m));
                row.push((s - sj, -m));
                row.push((-s + sj, -m));
            }
        }
        row.push((0, diag));
        rows.push(row);
    }
    Ok(Stencil { rows, bw })
}

impl Stencil {
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        for (k, row) in self.rows.iter().enumerate() {
            let mut s = 0.0;
            for &(off, c) in row {
                s += c * u[(k as isize + off) as usize];
            }
            out[k] = s;
        }
    }
}

/// Crank-Nicolson for `du/dt = L u` with homogeneous Dirichlet data on the
/// grid boundary. Requires `t_final / steps <= min h` and initial data at
/// most `1e-12` of its maximum on the boundary.
pub fn cn_solve(
    spec: &OperatorSpec,
    f: &GridFn,
    t_final: f64,
    steps: usize,
) -> Result<CnOutput, VerifyError> {
    if !(t_final > 0.0 && t_final.is_finite()) || steps == 0 {
        return Err(VerifyError::BadTime(t_final));
    }
    let grid = f.grid();
    let dt = t_final / steps as f64;
    let hmin = grid.spacing().into_iter().fold(f64::INFINITY, f64::min);
    if dt > hmin * (1.0 + 1e-12) {
        return Err(VerifyError::StepTooLarge { dt, h: hmin });
    }
    let n = grid.dim();
    let fmax = f.max_abs();
    let mut idx = vec![0; n];
    let mut edge = 0.0f64;
    for (k, v) in f.values().iter().enumerate() {
        grid.unflat(k, &mut idx);
        if grid.on_boundary(&idx) {
            edge = edge.max(v.abs());
        }
    }
    if edge > 1e-12 * fmax {
        return Err(VerifyError::BoundaryData { value: edge });
    }

    let stencil = assemble(spec, grid)?;
    let len = grid.len();
    let mut m = BandedLu::zeros(len, stencil.bw);
    for (k, row) in stencil.rows.iter().enumerate() {
        m.add(k, k, 1.0);
        for &(off, c) in row {
            m.add(k, (k as isize + off) as usize, -0.5 * dt * c);
        }
    }
    let lu = m.factorize()?;

    let mut u = f.values().to_vec();
    for (k, v) in u.iter_mut().enumerate() {
        if stencil.rows[k].is_empty() {
            *v = 0.0;
        }
    }
    let mut lu_u = vec![0.0; len];
    for _ in 0..steps {
        stencil.apply(&u, &mut lu_u);
        for k in 0..len {
            u[k] += 0.5 * dt * lu_u[k];
        }
        lu.solve(&mut u);
    }

    let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut near = 0.0f64;
    for (k, v) in u.iter().enumerate() {
        grid.unflat(k, &mut idx);
        let close = grid
            .axes()
            .iter()
            .zip(&idx)
            .any(|(a, &i)| i <= 1 || i + 2 >= a.len());
        if close {
            near = near.max(v.abs());
        }
    }
    let mut warnings = Vec::new();
    if umax > 0.0 && near > 1e-8 * umax {
        warnings.push(SolverWarning::BoundaryContamination { ratio: near / umax });
    }
    Ok(CnOutput {
        values: GridFn::new(grid.clone(), u)?,
        warnings,
    })
}

/// Reference for `e^{tL} f` on `grid`: Crank-Nicolson on `grid` and
/// `levels - 1` successive refinements (step size halved with `h`),
/// combined by Richardson extrapolation in `h^2`. `correction` is the change
/// made by the last extrapolation stage, a conservative error estimate.
#[derive(Clone, Debug)]
pub struct Reference {
    pub values: GridFn,
    pub correction: GridFn,
    pub warnings: Vec<SolverWarning>,
}

pub fn cn_reference<F: Fn(&[f64]) -> f64>(
    spec: &OperatorSpec,
    f: F,
    grid: &Grid,
    t: f64,
    steps: usize,
    levels: usize,
) -> Result<Reference, VerifyError> {
    if !(1..=3).contains(&levels) {
        return Err(VerifyError::Levels(levels));
    }
    let mut sols: Vec<Vec<f64>> = Vec::with_capacity(levels);
    let mut warnings = Vec::new();
    let mut g = grid.clone();
    let mut s = steps;
    for level in 0..levels {
        let fine = GridFn::sample(g.clone(), &f);
        let out = cn_solve(spec, &fine, t, s)?;
        warnings.extend(out.warnings);
        let mut v = out.values;
        for _ in 0..level {
            v = v.coarsen().expect("refined grid coarsens");
        }
        sols.push(v.into_values());
        g = g.refine();
        s *= 2;
    }
    let mut table = sols;
    let mut correction = vec![0.0; grid.len()];
    let mut factor = 4.0;
    while table.len() > 1 {
        let next: Vec<Vec<f64>> = table
            .windows(2)
            .map(|w| {
                w[1].iter()
                    .zip(&w[0])
                    .map(|(fine, coarse)| (factor * fine - coarse) / (factor - 1.0))
                    .collect()
            })
            .collect();
        correction = next
            .last()
            .unwrap()
            .iter()
            .zip(table.last().unwrap())
            .map(|(a, b)| a - b)
            .collect();
        table = next;
        factor *= 4.0;
    }
    Ok(Reference {
        values: GridFn::new(grid.clone(), table.pop().unwrap())?,
        correction: GridFn::new(grid.clone(), correction)?,
        warnings,
    })
}

/// Exponent `p` of a Lebesgue norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

/// Discrete `W^{m,p}_{a,w}` norm: Sobolev norm of `e^{a <x - w>} u` with
/// `<v> = sqrt(1 + |v|^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormSpec {
    pub p: Exponent,
    pub weight: f64,
    pub center: Vec<f64>,
    pub order: u32,
}

impl NormSpec {
    pub fn l2(dim: usize) -> Self {
        NormSpec {
            p: Exponent::Finite(2.0),
            weight: 0.0,
            center: vec![0.0; dim],
            order: 0,
        }
    }

    pub fn weighted_l2(dim: usize, weight: f64) -> Self {
        NormSpec {
            weight,
            ..NormSpec::l2(dim)
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<(), VerifyError> {
        if let Exponent::Finite(p) = self.p {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(VerifyError::BadNorm("p must be in [1, inf]"));
            }
        }
        if !self.weight.is_finite() || self.center.iter().any(|c| !c.is_finite()) {
            return Err(VerifyError::BadNorm("weight and center must be finite"));
        }
        if self.center.len() != grid.dim() {
            return Err(VerifyError::BadNorm("center dimension"));
        }
        if self.order > 4 || grid.axes().iter().any(|a| a.len() < 2 * self.order as usize + 3) {
            return Err(VerifyError::BadNorm("derivative order too high for the grid"));
        }
        Ok(())
    }
}

/// Japanese bracket `<v - w> = sqrt(1 + |v - w|^2)`.
pub fn bracket(v: &[f64], w: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
    libm::sqrt(1.0 + s)
}

/// Second-order difference along one axis; one-sided at the ends.
fn derivative(grid: &Grid, u: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.dim();
    let len = grid.axes()[axis].len();
    let h = grid.axes()[axis].h();
    let mut idx = vec![0; n];
    let mut out = vec![0.0; u.len()];
    let stride: usize = grid.axes()[axis + 1..].iter().map(Axis::len).product();
    for k in 0..u.len() {
        grid.unflat(k, &mut idx);
        let i = idx[axis];
        out[k] = if i == 0 {
            (-3.0 * u[k] + 4.0 * u[k + stride] - u[k + 2 * stride]) / (2.0 * h)
        } else if i + 1 == len {
            (3.0 * u[k] - 4.0 * u[k - stride] + u[k - 2 * stride]) / (2.0 * h)
        } else {
            (u[k + stride] - u[k - stride]) / (2.0 * h)
        };
    }
    out
}

fn lp(grid: &Grid, v: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        Exponent::Finite(p) => {
            let mut idx = vec![0; grid.dim()];
            let mut s = 0.0;
            for (k, x) in v.iter().enumerate() {
                grid.unflat(k, &mut idx);
                s += grid.trapezoid_weight(&idx) * libm::pow(x.abs(), p);
            }
            s
        }
    }
}

/// `||u||_{W^{m,p}_{a,w}}`. For finite `p` the `p`-th powers of all
/// derivatives up to order `m` are summed before taking the root; for
/// `p = inf` the maximum is taken.
pub fn norm(u: &GridFn, ns: &NormSpec) -> Result<f64, VerifyError> {
    let grid = u.grid();
    ns.validate(grid)?;
    let mut p = vec![0.0; grid.dim()];
    let weighted: Vec<f64> = u
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            if ns.weight == 0.0 {
                *v
            } else {
                grid.point(k, &mut p);
                libm::exp(ns.weight * bracket(&p, &ns.center)) * v
            }
        })
        .collect();
    let mut layer = vec![weighted];
    let mut total = lp(grid, &layer[0], ns.p);
    for _ in 0..ns.order {
        let mut next = Vec::new();
        for v in &layer {
            for axis in 0..grid.dim() {
                next.push(derivative(grid, v, axis));
            }
        }
        for v in &next {
            let x = lp(grid, v, ns.p);
            total = match ns.p {
                Exponent::Infinity => total.max(x),
                Exponent::Finite(_) => total + x,
            };
        }
        layer = next;
    }
    Ok(match ns.p {
        Exponent::Infinity => total,
        Exponent::Finite(p) => libm::pow(total, 1.0 / p),
    })
}

/// Least-squares fit of `log error` against `log t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub ts: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    /// Half-width of the 95% confidence interval for the slope.
    pub half_width: f64,
    /// Every error is at or below the noise floor.
    pub degenerate: bool,
}

impl ConvergenceReport {
    /// Slope between consecutive ladder points; `NaN` for the first.
    pub fn running_slopes(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN];
        for i in 1..self.ts.len() {
            out.push(
                libm::log(self.errors[i] / self.errors[i - 1])
                    / libm::log(self.ts[i] / self.ts[i - 1]),
            );
        }
        out
    }

    pub fn within(&self, target: f64, tol: f64) -> bool {
        !self.degenerate && (self.slope - target).abs() <= tol
    }
}

/// Two-sided 95% Student-t quantiles for 1..=30 degrees of freedom.
const T975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

fn t_quantile(df: usize) -> f64 {
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        T975[df - 1]
    } else {
        1.96
    }
}

/// Fits the convergence exponent. Errors at or below `noise_floor` make the
/// report degenerate when all of them are; zero errors are only accepted in
/// that case.
pub fn convergence_order(
    errors: &[f64],
    ts: &[f64],
    noise_floor: f64,
) -> Result<ConvergenceReport, VerifyError> {
    if errors.len() != ts.len() || ts.len() < 4 {
        return Err(VerifyError::TooFewPoints(ts.len().min(errors.len())));
    }
    if ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) || ts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(VerifyError::BadLadder);
    }
    if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(VerifyError::BadErrors);
    }
    let degenerate = errors.iter().all(|e| *e <= noise_floor);
    if !degenerate && errors.iter().any(|e| *e == 0.0) {
        return Err(VerifyError::BadErrors);
    }
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e > 0.0)
        .map(|(t, e)| (libm::log(*t), libm::log(*e)))
        .collect();
    let (slope, half_width) = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let ssr: f64 = pts
            .iter()
            .map(|p| {
                let r = p.1 - (my + slope * (p.0 - mx));
                r * r
            })
            .sum();
        let df = pts.len().saturating_sub(2);
        let se = if df > 0 {
            libm::sqrt(ssr / df as f64 / sxx)
        } else {
            f64::INFINITY
        };
        (slope, t_quantile(df) * se)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ConvergenceReport {
        ts: ts.to_vec(),
        errors: errors.to_vec(),
        slope,
        half_width,
        degenerate,
    })
}

/// Settings for one point of a convergence study.
#[derive(Clone, Debug)]
pub struct StudySettings {
    pub norm: NormSpec,
    /// Crank-Nicolson steps are `ceil(t / (step_ratio * h))` on the base grid.
    /// Ratios near 1 leave stiff modes undamped and spoil the extrapolation.
    pub step_ratio: f64,
    pub levels: usize,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings {
            norm: NormSpec::l2(1),
            step_ratio: 0.05,
            levels: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StudyPoint {
    pub t: f64,
    pub error: f64,
    pub reference_error: f64,
    pub kernel_warnings: Vec<KernelWarning>,
    pub solver_warnings: Vec<SolverWarning>,
}

/// `||e^{tL} f - G_t f||` on `grid`, with the Crank-Nicolson reference.
pub fn study_point<F: Fn(&[f64]) -> f64>(
    ev: &KernelEvaluator,
    f: F,
    grid: &Grid,
    t: f64,
    settings: &StudySettings,
) -> Result<StudyPoint, VerifyError> {
    let hmin = grid.spacing().into_iter().fold(f64::INFINITY, f64::min);
    let steps = libm::ceil(t / (settings.step_ratio * hmin) - 1e-9).max(1.0) as usize;
    let reference = cn_reference(ev.spec(), &f, grid, t, steps, settings.levels)?;
    let sampled = GridFn::sample(grid.clone(), &f);
    let q = Quadrature::new(ev, t, &sampled)?;
    let mut cache = ZCache::new();
    let approx = (0..grid.len())
        .map(|k| q.at(&mut cache, k))
        .collect::<Result<Vec<f64>, _>>()?;
    let approx = GridFn::new(grid.clone(), approx)?;
    let diff = approx.sub(&reference.values)?;
    let error = norm(&diff, &settings.norm)?;
    let reference_error = norm(&reference.correction, &settings.norm)?;
    Ok(StudyPoint {
        t,
        error,
        reference_error,
        kernel_warnings: q.warnings().to_vec(),
        solver_warnings: reference.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec1(a: &str, b: &str, c: &str) -> OperatorSpec {
        OperatorSpec::parse(1, &[vec![a]], &[b], c, 0.1).unwrap()
    }

    #[test]
    fn exact_kernel_examples() {
        let v = exact_const_kernel(&[1.0], &[0.0], 0.0, 1.0, &[0.3], &[0.3]).unwrap();
        assert!((v - 1.0 / libm::sqrt(4.0 * PI)).abs() < 1e-15);
        let v = exact_const_kernel(&[1.0], &[0.0], 1.0, 1.0, &[0.3], &[0.3]).unwrap();
        assert!((v - core::f64::consts::E / libm::sqrt(4.0 * PI)).abs() < 1e-14);
        let shifted = exact_const_kernel(&[2.0], &[0.5], 0.0, 0.3, &[0.1], &[0.7]).unwrap();
        let plain = exact_const_kernel(&[2.0], &[0.0], 0.0, 0.3, &[0.1 + 0.15], &[0.7]).unwrap();
        assert!((shifted - plain).abs() < 1e-15);
        assert_eq!(
            exact_const_kernel(&[1.0, 2.0, 2.0, 1.0], &[0.0, 0.0], 0.0, 1.0, &[0.0; 2], &[0.0; 2]),
            Err(VerifyError::NotSpd)
        );
    }

    #[test]
    fn banded_solver_matches_dense() {
        let n = 7;
        let mut m = BandedLu::zeros(n, 2);
        for i in 0..n {
            m.add(i, i, 5.0 + i as f64);
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
                m.add(i + 1, i, -0.5);
            }
            if i + 2 < n {
                m.add(i, i + 2, 0.25);
                m.add(i + 2, i, 0.3);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                b[i] += m.get(i, j) * x[j];
            }
        }
        let lu = m.factorize().unwrap();
        lu.solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn cn_tracks_heat_kernel() {
        let spec = spec1("1", "0", "0");
        let grid = Grid::uniform(-8.0, 8.0, 641, 1).unwrap();
        let t0 = 0.25;
        let f = GridFn::sample(grid.clone(), |p| {
            exact_const_kernel(&[1.0], &[0.0], 0.0, t0, &[p[0]], &[0.0]).unwrap()
        });
        let out = cn_solve(&spec, &f, 0.5, 40).unwrap();
        let mut err = 0.0f64;
        let mut p = [0.0];
        for (k, v) in out.values.values().iter().enumerate() {
            grid.point(k, &mut p);
            let e = exact_const_kernel(&[1.0], &[0.0], 0.0, t0 + 0.5, &p, &[0.0]).unwrap();
            err = err.max((v - e).abs());
        }
        assert!(err < 1e-4, "{err}");
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn cn_rejects_large_steps_and_boundary_data() {
        let spec = spec1("1", "0", "0");
        let grid = Grid::uniform(-1.0, 1.0, 21, 1).unwrap();
        let f = GridFn::sample(grid.clone(), |p| libm::exp(-50.0 * p[0] * p[0]));
        assert!(matches!(
            cn_solve(&spec, &f, 1.0, 2),
            Err(VerifyError::StepTooLarge { .. })
        ));
        let g = GridFn::sample(grid, |_| 1.0);
        assert!(matches!(
            cn_solve(&spec, &g, 0.1, 10),
            Err(VerifyError::BoundaryData { .. })
        ));
    }

    #[test]
    fn richardson_improves_on_plain_cn() {
        let spec = spec1("1", "0", "0");
        let grid = Grid::uniform(-8.0, 8.0, 161, 1).unwrap();
        let f = |p: &[f64]| exact_const_kernel(&[1.0], &[0.0], 0.0, 0.2, p, &[0.0]).unwrap();
        let t = 0.3;
        let exact = GridFn::sample(grid.clone(), |p| {
            exact_const_kernel(&[1.0], &[0.0], 0.0, 0.5, p, &[0.0]).unwrap()
        });
        let plain = cn_reference(&spec, f, &grid, t, 3, 1).unwrap();
        let rich = cn_reference(&spec, f, &grid, t, 3, 3).unwrap();
        let e1 = plain.values.sub(&exact).unwrap().max_abs();
        let e3 = rich.values.sub(&exact).unwrap().max_abs();
        assert!(e3 < e1 / 100.0, "{e1} {e3}");
    }

    #[test]
    fn norm_examples() {
        let g = Grid::uniform(0.0, 1.0, 101, 1).unwrap();
        let zero = GridFn::zeros(g.clone());
        assert_eq!(norm(&zero, &NormSpec::l2(1)).unwrap(), 0.0);
        let one = GridFn::sample(g, |_| 1.0);
        assert!((norm(&one, &NormSpec::l2(1)).unwrap() - 1.0).abs() < 1e-12);
        let g = Grid::uniform(-3.0, 3.0, 61, 1).unwrap();
        let u = GridFn::sample(g, |p| libm::exp(-bracket(p, &[0.0])));
        let ns = NormSpec {
            p: Exponent::Infinity,
            weight: 1.0,
            center: vec![0.0],
            order: 0,
        };
        assert!((norm(&u, &ns).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sobolev_norm_of_sine() {
        let g = Grid::uniform(0.0, 2.0 * PI, 2001, 1).unwrap();
        let u = GridFn::sample(g, |p| libm::sin(p[0]));
        let ns = NormSpec {
            order: 1,
            ..NormSpec::l2(1)
        };
        // ||sin||^2 + ||cos||^2 = 2 pi
        assert!((norm(&u, &ns).unwrap() - libm::sqrt(2.0 * PI)).abs() < 1e-5);
    }

    #[test]
    fn slope_fits() {
        let ts: Vec<f64> = (4..=10).map(|k| libm::pow(2.0, -(k as f64))).collect();
        let e1: Vec<f64> = ts.iter().map(|t| 3.0 * t).collect();
        let r = convergence_order(&e1, &ts, 0.0).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-12 && r.half_width < 1e-10);
        let e15: Vec<f64> = ts.iter().map(|t| 0.2 * libm::pow(*t, 1.5)).collect();
        let r = convergence_order(&e15, &ts, 0.0).unwrap();
        assert!((r.slope - 1.5).abs() < 1e-12);
        assert!(convergence_order(&e1[..3], &ts[..3], 0.0).is_err());
        let flat = vec![1e-16; ts.len()];
        assert!(convergence_order(&flat, &ts, 1e-12).unwrap().degenerate);
        let mut rev = ts.clone();
        rev.reverse();
        assert_eq!(convergence_order(&e1, &rev, 0.0), Err(VerifyError::BadLadder));
    }
}
