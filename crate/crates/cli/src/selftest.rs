//! Seeded invariant checks across all modules, for a built binary.

use dyson_taylor_core::dyson::{
    assemble_p_ell, enumerate_indices, simplex_integrate, simplex_volume, OperatorSpec, SigmaPoly,
};
use dyson_taylor_core::expr::{parse, rational_to_f64};
use dyson_taylor_core::kernel::{approx_kernel, hermite_apply, CenterRule, GaussData};
use dyson_taylor_core::opalg::{ad_power, DiffOp, Exponents};
use dyson_taylor_core::verify::{
    cn_solve, convergence_order, exact_const_kernel, Axis, Grid, GridFn,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Q = BigRational;

/// Deliberate corruption used to check that the suite detects failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    SimplexTable,
}

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

pub fn run(seed: u64, fault: Option<Fault>) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut push = |name, (pass, detail)| checks.push(Check { name, pass, detail });
    push("index-set sizes", index_sets());
    push("simplex moment table", simplex_table(fault));
    push("simplex Monte Carlo", simplex_monte_carlo(&mut rng));
    push("commutator antisymmetry and Jacobi", lie_identities(&mut rng));
    push("ad^k degree and order", ad_closure(&mut rng));
    push("expression derivatives", derivatives(&mut rng));
    push("Hermite derivatives", hermite(&mut rng));
    push("kernel normalization", normalization(&mut rng));
    push("center rules fix the diagonal", centers(&mut rng));
    push("constant-coefficient exactness", constant_coefficients(&mut rng));
    push("Crank-Nicolson mass conservation", mass());
    push("slope fit", slope_fit());
    checks
}

pub fn report(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        out.push_str(&format!(
            "{} {}: {}\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    out.push_str(&format!("{} checks, {failed} failed\n", checks.len()));
    out
}

fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

fn index_sets() -> (bool, String) {
    let ok = (1..=12u32).all(|l| enumerate_indices(l).len() == 1 << (l - 1));
    (ok, "|A_l| = 2^(l-1), l = 1..12".into())
}

/// `prod_j 1/sum_{i >= j}(e_i + 1)`.
fn moment_oracle(e: &[u32]) -> Q {
    let mut v = q(1, 1);
    for j in 0..e.len() {
        let s: u32 = e[j..].iter().map(|x| x + 1).sum();
        v /= Q::from_integer(BigInt::from(s));
    }
    v
}

fn exponent_vectors(k: usize, max_total: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=max_total - used).map(move |p| {
                    let mut f = e.clone();
                    f.push(p);
                    f
                })
            })
            .collect();
    }
    out
}

fn simplex_table(fault: Option<Fault>) -> (bool, String) {
    let mut table: Vec<(Vec<u32>, Q)> = (1..=4)
        .flat_map(|k| exponent_vectors(k, 6))
        .map(|e| {
            let k = e.len();
            let v = simplex_integrate(&SigmaPoly::monomial(e.clone(), q(1, 1)), k);
            (e, v)
        })
        .collect();
    if fault == Some(Fault::SimplexTable) {
        table[7].1 += q(1, 1000);
    }
    let bad = table.iter().filter(|(e, v)| *v != moment_oracle(e)).count();
    let volumes = (0..=8).all(|k| {
        let mut fact = q(1, 1);
        for i in 1..=k {
            fact *= Q::from_integer(BigInt::from(i));
        }
        simplex_volume(k) == fact.recip()
    });
    (
        bad == 0 && volumes,
        format!("{} moments, {bad} mismatches; volumes 1/k! exact: {volumes}", table.len()),
    )
}

fn simplex_monte_carlo(rng: &mut ChaCha8Rng) -> (bool, String) {
    let samples = 100_000;
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let k = rng.gen_range(1..=4usize);
        let mut e = vec![0u32; k];
        for _ in 0..rng.gen_range(0..=6) {
            e[rng.gen_range(0..k)] += 1;
        }
        let exact = rational_to_f64(&moment_oracle(&e));
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut s = vec![0.0; k];
        for _ in 0..samples {
            s.iter_mut().for_each(|v| *v = rng.gen::<f64>());
            let x = if s.windows(2).all(|w| w[0] >= w[1]) {
                s.iter().zip(&e).map(|(a, p)| a.powi(*p as i32)).product()
            } else {
                0.0
            };
            s1 += x;
            s2 += x * x;
        }
        let n = samples as f64;
        let mean = s1 / n;
        let se = ((s2 / n - mean * mean) / n).sqrt();
        worst = worst.max((mean - exact).abs() / se);
    }
    (worst <= 4.0, format!("worst deviation {worst:.2} standard errors"))
}

fn random_op(rng: &mut ChaCha8Rng, dim: usize, degree: u32, terms: usize) -> DiffOp<Q> {
    let multi = |rng: &mut ChaCha8Rng, total: u32| {
        let mut e = vec![0u32; dim];
        for _ in 0..rng.gen_range(0..=total) {
            e[rng.gen_range(0..dim)] += 1;
        }
        Exponents(e)
    };
    let mut ts = Vec::new();
    for _ in 0..terms {
        let beta = multi(rng, degree);
        let gamma = multi(rng, 2);
        ts.push((beta, gamma, q(rng.gen_range(-6..=6), rng.gen_range(1..=4))));
    }
    DiffOp::from_terms(dim, ts)
}

fn lie_identities(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut bad = 0;
    for _ in 0..50 {
        let dim = rng.gen_range(1..=2);
        let a = random_op(rng, dim, 2, 3);
        let b = random_op(rng, dim, 2, 3);
        let c = random_op(rng, dim, 2, 3);
        let ab = a.commutator(&b).unwrap();
        if ab != b.commutator(&a).unwrap().neg() {
            bad += 1;
        }
        let jacobi = a
            .commutator(&b.commutator(&c).unwrap())
            .unwrap()
            .add(&b.commutator(&c.commutator(&a).unwrap()).unwrap())
            .unwrap()
            .add(&c.commutator(&ab).unwrap())
            .unwrap();
        if !jacobi.is_zero() {
            bad += 1;
        }
    }
    (bad == 0, format!("50 random triples, {bad} violations"))
}

fn ad_closure(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut bad = 0;
    for _ in 0..200 {
        let dim = rng.gen_range(1..=2);
        let m = rng.gen_range(0..=6u32);
        let l0 = random_op(rng, dim, 0, 3);
        let lm = random_op(rng, dim, m, 4);
        for k in 0..=m as usize + 1 {
            let ad = ad_power(&l0, &lm, k).unwrap();
            let (deg, ord) = ad.degree_order();
            let ok = if k > m as usize {
                ad.is_zero()
            } else {
                deg <= m as i64 - k as i64 && ord <= k as i64 + 2
            };
            if !ok {
                bad += 1;
            }
        }
    }
    (bad == 0, format!("200 random cases, {bad} violations"))
}

fn derivatives(rng: &mut ChaCha8Rng) -> (bool, String) {
    let sources = [
        "1 + 0.25*sin(x1)*x2",
        "exp(-x1^2/2)*(1 - x2) + x1*x2^3",
        "log(1 + x1^2 + x2^2) - cos(x1 - x2)",
        "(2 + x1^2)^-1 * x2",
    ];
    let mut worst = 0.0f64;
    let mut commute = 0.0f64;
    for s in sources {
        let e = parse(s, 2).unwrap();
        for _ in 0..25 {
            let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            for i in 0..2 {
                let d = e.diff(i).eval(&p).unwrap();
                let mut a = p;
                let mut b = p;
                a[i] += 1e-5;
                b[i] -= 1e-5;
                let fd = (e.eval(&a).unwrap() - e.eval(&b).unwrap()) / 2e-5;
                worst = worst.max((d - fd).abs() / (1.0 + d.abs()));
            }
            let ij = e.diff(0).diff(1).eval(&p).unwrap();
            let ji = e.diff(1).diff(0).eval(&p).unwrap();
            commute = commute.max((ij - ji).abs() / (1.0 + ij.abs()));
        }
    }
    (
        worst <= 1e-6 && commute <= 1e-9,
        format!("finite-difference gap {worst:.1e}, mixed-partial gap {commute:.1e}"),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let m: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
        }
        a[i * n + i] += 0.3;
    }
    a
}

fn hermite(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = random_spd(rng, 2);
        let g = GaussData::new(vec![0.0; 2], a).unwrap();
        let w = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let gamma = [rng.gen_range(0..=2u32), rng.gen_range(0..=2u32)];
        let exact = hermite_apply(&Exponents(gamma.to_vec()), &g).eval(&w) * g.eval(&w);
        let numeric = |h: f64| {
            let mut acc = 0.0;
            // Tensor central-difference stencil.
            let stencil = |order: u32| -> Vec<(f64, f64)> {
                match order {
                    0 => vec![(0.0, 1.0)],
                    1 => vec![(1.0, 0.5 / h), (-1.0, -0.5 / h)],
                    _ => vec![(1.0, 1.0 / (h * h)), (0.0, -2.0 / (h * h)), (-1.0, 1.0 / (h * h))],
                }
            };
            for (s0, c0) in stencil(gamma[0]) {
                for (s1, c1) in stencil(gamma[1]) {
                    acc += c0 * c1 * g.eval(&[w[0] + s0 * h, w[1] + s1 * h]);
                }
            }
            acc
        };
        let rich = (4.0 * numeric(5e-3) - numeric(1e-2)) / 3.0;
        let scale = g.eval(&[0.0, 0.0]);
        worst = worst.max((exact - rich).abs() / (exact.abs() + scale));
    }
    (worst <= 1e-5, format!("50 random cases, worst relative gap {worst:.1e}"))
}

fn normalization(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = 0.0f64;
    for n in 1..=2usize {
        for _ in 0..5 {
            let a = random_spd(rng, n);
            let g = GaussData::new(vec![0.0; n], a.clone()).unwrap();
            let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
            for t in [1.0f64, 0.1, 0.001] {
                let h = 0.07 * t.sqrt();
                let m = (10.0 * (t * trace).sqrt() / h).ceil() as i64;
                let mut sum = 0.0;
                if n == 1 {
                    for i in -m..=m {
                        sum += g.eval(&[i as f64 * h / t.sqrt()]);
                    }
                } else {
                    for i in -m..=m {
                        for j in -m..=m {
                            sum += g.eval(&[i as f64 * h / t.sqrt(), j as f64 * h / t.sqrt()]);
                        }
                    }
                }
                let integral = sum * h.powi(n as i32) / t.powf(n as f64 / 2.0);
                worst = worst.max((integral - 1.0).abs());
            }
        }
    }
    (worst <= 1e-8, format!("worst |integral - 1| = {worst:.1e}"))
}

fn centers(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=3);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..50.0)).collect();
        let mut z = vec![0.0; n];
        for rule in CenterRule::all_builtin() {
            rule.apply(&x, &x, &mut z).unwrap();
            if z != x {
                bad += 1;
            }
        }
    }
    (bad == 0, format!("1000 random points, {bad} violations"))
}

fn constant_coefficients(rng: &mut ChaCha8Rng) -> (bool, String) {
    let spec = OperatorSpec::parse(1, &[vec!["17/10"]], &["0"], "0", 1.0)
        .unwrap()
        .with_positive_orthant(true);
    let vanish = (1..=3).all(|l| assemble_p_ell(&spec, l).map(|p| p.is_zero()).unwrap_or(false));
    let mut worst = 0.0f64;
    for mu in 0..=3 {
        for rule in CenterRule::all_builtin() {
            for _ in 0..10 {
                let t: f64 = rng.gen_range(0.01..1.0);
                let x: f64 = rng.gen_range(0.1..3.0);
                let y = (x + rng.gen_range(-3.0..3.0) * (1.7 * t).sqrt()).max(0.05);
                let approx = approx_kernel(&spec, mu, rule, t, &[x], &[y]).unwrap();
                let exact = exact_const_kernel(&[1.7], &[0.0], 0.0, t, &[x], &[y]).unwrap();
                worst = worst.max((approx - exact).abs() / exact);
            }
        }
    }
    (
        vanish && worst <= 1e-12,
        format!("corrections vanish: {vanish}, worst relative gap {worst:.1e}"),
    )
}

fn mass() -> (bool, String) {
    let spec = OperatorSpec::parse(1, &[vec!["13/10"]], &["0"], "0", 1.0).unwrap();
    let grid = Grid::new(vec![Axis::with_spacing(-15.0, 15.0, 0.05).unwrap()]).unwrap();
    let f = GridFn::sample(grid, |p| {
        let s = p[0] / 1.5;
        if s.abs() < 1.0 {
            (-1.0 / (1.0 - s * s)).exp()
        } else {
            0.0
        }
    });
    match cn_solve(&spec, &f, 1.0, 40) {
        Ok(u) => {
            let drift = (u.values.integral() - f.integral()).abs();
            (drift <= 1e-6, format!("mass drift {drift:.1e}"))
        }
        Err(e) => (false, e.to_string()),
    }
}

fn slope_fit() -> (bool, String) {
    let ts: Vec<f64> = (4..=10).map(|k| 2f64.powi(-k)).collect();
    let errors: Vec<f64> = ts.iter().map(|t| 3.0 * t.powf(1.5)).collect();
    match convergence_order(&errors, &ts, 0.0) {
        Ok(r) => ((r.slope - 1.5).abs() < 1e-12, format!("slope {:.6}", r.slope)),
        Err(e) => (false, e.to_string()),
    }
}
