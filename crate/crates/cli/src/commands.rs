use std::path::PathBuf;

use dyson_taylor_core::dyson::Expansion;
use dyson_taylor_core::kernel::{apply_kernel, CenterRule, KernelEvaluator, KernelWarning, ZCache};
use dyson_taylor_core::verify::{
    convergence_order, study_point, ConvergenceReport, Grid, GridFn, StudyPoint,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{num, Csv, OutDir};

#[derive(Serialize)]
struct OpTerm {
    beta: Vec<u32>,
    gamma: Vec<u32>,
    coef: String,
}

#[derive(Serialize)]
struct PolyTerm {
    alpha: Vec<u32>,
    beta: Vec<u32>,
    coef: f64,
}

#[derive(Serialize)]
struct PolyFile {
    ell: usize,
    z: Vec<f64>,
    terms: Vec<PolyTerm>,
}

/// `P_{ell}.json` for every `ell <= mu`, plus `frakP_{ell}.json` when `z` is set.
pub fn expand(cfg: &RunConfig, out: &OutDir) -> Result<Vec<PathBuf>, CliError> {
    let expansion = Expansion::new(&cfg.spec, cfg.mu)?;
    let mut written = Vec::new();
    for ell in 0..=cfg.mu {
        let terms: Vec<OpTerm> = expansion
            .p_ell(ell)?
            .terms()
            .map(|(b, g, c)| OpTerm {
                beta: b.0.clone(),
                gamma: g.0.clone(),
                coef: c.to_string(),
            })
            .collect();
        written.push(out.write_json(&format!("P_{ell}.json"), &terms)?);
    }
    if let Some(z) = &cfg.z {
        let ev = KernelEvaluator::from_expansion(&expansion, CenterRule::X)?;
        for ell in 0..=cfg.mu {
            let poly = ev.frak_p(ell, z)?;
            let file = PolyFile {
                ell,
                z: z.clone(),
                terms: poly
                    .terms()
                    .map(|(a, b, c)| PolyTerm {
                        alpha: a.clone(),
                        beta: b.clone(),
                        coef: c,
                    })
                    .collect(),
            };
            written.push(out.write_json(&format!("frakP_{ell}.json"), &file)?);
        }
    }
    Ok(written)
}

fn coords(prefix: char, dim: usize) -> impl Iterator<Item = String> {
    (1..=dim).map(move |i| format!("{prefix}{i}"))
}

/// `kernel.csv` with columns `t, x1.., y1.., value`.
pub fn kernel(cfg: &RunConfig, out: &OutDir) -> Result<PathBuf, CliError> {
    let ts = cfg.require(&cfg.ladder, "t")?;
    let (xg, yg) = cfg.require(&cfg.kernel, "kernel")?;
    let ev = KernelEvaluator::new(&cfg.spec, cfg.mu, cfg.center)?;
    let xs = xg.points();
    let ys = yg.points();
    let rows: Vec<Vec<(usize, f64)>> = ts
        .par_iter()
        .flat_map_iter(|&t| xs.iter().map(move |x| (t, x)))
        .map_init(ZCache::new, |cache, (t, x)| {
            ys.iter()
                .enumerate()
                .map(|(j, y)| ev.eval(cache, t, x, y).map(|v| (j, v)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let dim = cfg.spec.dim();
    let header = std::iter::once("t".to_string())
        .chain(coords('x', dim))
        .chain(coords('y', dim))
        .chain(std::iter::once("value".to_string()));
    let mut csv = Csv::new(header);
    let mut r = rows.iter();
    for &t in ts {
        for x in &xs {
            for &(j, v) in r.next().expect("one row per (t, x)") {
                let mut fields = vec![num(t)];
                fields.extend(x.iter().map(|&v| num(v)));
                fields.extend(ys[j].iter().map(|&v| num(v)));
                fields.push(num(v));
                csv.row(fields);
            }
        }
    }
    out.write("kernel.csv", &csv.into_bytes())
}

fn sample(cfg: &RunConfig, grid: &Grid) -> Result<GridFn, CliError> {
    let f = cfg.require(&cfg.f, "f")?;
    f.check_on(grid)?;
    Ok(GridFn::sample(grid.clone(), |p| f.eval(p)))
}

/// `apply.csv` with columns `t, x1.., f, value`.
pub fn apply(cfg: &RunConfig, out: &OutDir) -> Result<(PathBuf, Vec<String>), CliError> {
    let ts = cfg.require(&cfg.ladder, "t")?;
    let grid = cfg.require(&cfg.grid, "grid")?;
    let f = sample(cfg, grid)?;
    let ev = KernelEvaluator::new(&cfg.spec, cfg.mu, cfg.center)?;
    let results = ts
        .par_iter()
        .map(|&t| apply_kernel(&ev, t, &f))
        .collect::<Result<Vec<_>, _>>()?;
    let mut warnings = Vec::new();
    let header = std::iter::once("t".to_string())
        .chain(coords('x', grid.dim()))
        .chain(["f".to_string(), "value".to_string()]);
    let mut csv = Csv::new(header);
    let points = grid.points();
    for (&t, applied) in ts.iter().zip(&results) {
        warnings.extend(applied.warnings.iter().map(|w| format!("t={t}: {w}")));
        for (k, p) in points.iter().enumerate() {
            let mut fields = vec![num(t)];
            fields.extend(p.iter().map(|&v| num(v)));
            fields.push(num(f.values()[k]));
            fields.push(num(applied.values.values()[k]));
            csv.row(fields);
        }
    }
    Ok((out.write("apply.csv", &csv.into_bytes())?, warnings))
}

#[derive(Serialize)]
pub struct RunSummary {
    pub mu: usize,
    pub center: String,
    pub slope: Option<f64>,
    pub half_width: Option<f64>,
    pub target: f64,
    pub degenerate: bool,
    pub reference_within_budget: bool,
    pub pass: bool,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
pub struct Summary {
    pub tolerance: f64,
    pub budget: f64,
    pub runs: Vec<RunSummary>,
    pub pass: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn file_stem(mu: usize, rule: &CenterRule) -> String {
    let name = rule.to_string().replace(['(', ')'], "_").trim_end_matches('_').to_string();
    format!("converge_mu{mu}_{name}")
}

/// One CSV per `(mu, center)` and `summary.json`; fails with the acceptance
/// code when a fitted slope misses `(mu + 1)/2` by more than the tolerance.
pub fn converge(cfg: &RunConfig, out: &OutDir) -> Result<Summary, CliError> {
    let ts = cfg.require(&cfg.ladder, "t")?;
    let grid = cfg.require(&cfg.grid, "grid")?;
    let f = cfg.require(&cfg.f, "f")?;
    f.check_on(grid)?;
    let mut evaluators = Vec::new();
    for &mu in &cfg.mus {
        let expansion = Expansion::new(&cfg.spec, mu)?;
        for rule in &cfg.centers {
            evaluators.push((mu, *rule, KernelEvaluator::from_expansion(&expansion, *rule)?));
        }
    }
    let jobs: Vec<(usize, f64)> = (0..evaluators.len())
        .flat_map(|e| ts.iter().map(move |&t| (e, t)))
        .collect();
    let points: Vec<StudyPoint> = jobs
        .par_iter()
        .map(|&(e, t)| study_point(&evaluators[e].2, |p| f.eval(p), grid, t, &cfg.study))
        .collect::<Result<_, _>>()?;
    let mut runs = Vec::new();
    for (e, (mu, rule, _)) in evaluators.iter().enumerate() {
        let pts = &points[e * ts.len()..(e + 1) * ts.len()];
        let errors: Vec<f64> = pts.iter().map(|p| p.error).collect();
        let target = (*mu as f64 + 1.0) / 2.0;
        let smallest = errors.iter().cloned().fold(f64::INFINITY, f64::min);
        let worst_reference = pts.iter().map(|p| p.reference_error).fold(0.0, f64::max);
        // Errors the reference cannot resolve within budget are noise.
        let floor = cfg.noise_floor.max(worst_reference / cfg.budget);
        let report = convergence_order(&errors, ts, floor);
        let mut warnings: Vec<String> = Vec::new();
        for p in pts {
            warnings.extend(p.kernel_warnings.iter().map(|w: &KernelWarning| format!("t={}: {w}", p.t)));
            warnings.extend(p.solver_warnings.iter().map(|w| format!("t={}: {w}", p.t)));
        }
        let mut csv = Csv::new(["t", "error", "running_slope", "reference_error"]);
        let running = match &report {
            Ok(r) => r.running_slopes(),
            Err(_) => Vec::new(),
        };
        for (i, p) in pts.iter().enumerate() {
            let slope = running
                .get(i)
                .filter(|s| s.is_finite())
                .map(|&s| num(s))
                .unwrap_or_default();
            csv.row([num(p.t), num(p.error), slope, num(p.reference_error)]);
        }
        out.write(&format!("{}.csv", file_stem(*mu, rule)), &csv.into_bytes())?;
        let run = match report {
            Ok(ConvergenceReport {
                slope,
                half_width,
                degenerate,
                ..
            }) => {
                let within_budget = degenerate || worst_reference <= cfg.budget * smallest;
                let on_target = degenerate || (slope - target).abs() <= cfg.tolerance;
                RunSummary {
                    mu: *mu,
                    center: rule.to_string(),
                    slope: finite(slope),
                    half_width: finite(half_width),
                    target,
                    degenerate,
                    reference_within_budget: within_budget,
                    pass: within_budget && on_target,
                    warnings,
                }
            }
            Err(e) => {
                warnings.push(format!("no fit: {e}"));
                RunSummary {
                    mu: *mu,
                    center: rule.to_string(),
                    slope: None,
                    half_width: None,
                    target,
                    degenerate: false,
                    reference_within_budget: worst_reference <= cfg.budget * smallest,
                    pass: false,
                    warnings,
                }
            }
        };
        runs.push(run);
    }
    let pass = runs.iter().all(|r| r.pass);
    let summary = Summary {
        tolerance: cfg.tolerance,
        budget: cfg.budget,
        runs,
        pass,
    };
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}
