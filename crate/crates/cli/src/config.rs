//! Run configuration: one JSON document, `schema: 1`.

use std::fs;
use std::path::{Path, PathBuf};

use dyson_taylor_core::dyson::OperatorSpec;
use dyson_taylor_core::expr::{parse, CompiledExpr};
use dyson_taylor_core::kernel::CenterRule;
use dyson_taylor_core::verify::{Axis, Exponent, Grid, NormSpec, StudySettings};
use serde::Deserialize;

use crate::error::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub schema: u32,
    pub operator: OperatorSource,
    #[serde(default)]
    pub mu: usize,
    #[serde(default)]
    pub center: Option<CenterSpec>,
    /// Centers for `converge`; defaults to `center`.
    #[serde(default)]
    pub centers: Option<Vec<CenterSpec>>,
    /// Orders for `converge`; defaults to `0..=mu`.
    #[serde(default)]
    pub mus: Option<Vec<usize>>,
    /// Center at which `expand` evaluates the kernel polynomials.
    #[serde(default)]
    pub z: Option<Vec<f64>>,
    #[serde(default)]
    pub t: Option<Ladder>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub kernel: Option<KernelPoints>,
    #[serde(default)]
    pub f: Option<FunctionSpec>,
    #[serde(default)]
    pub norm: Option<NormConfig>,
    #[serde(default)]
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub noise_floor: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Inline operator or a path to a JSON file holding one, relative to the config.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum OperatorSource {
    Inline(OperatorJson),
    File(PathBuf),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorJson {
    pub dim: usize,
    pub a: Vec<Vec<String>>,
    pub b: Vec<String>,
    pub c: String,
    pub gamma: f64,
    #[serde(default)]
    pub positive_orthant: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum CenterSpec {
    Name(String),
    Affine { rule: String, lambda: f64 },
}

/// Explicit list of times or `t = 2^-k` for `k_min..=k_max`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum Ladder {
    List(Vec<f64>),
    Powers { k_min: i32, k_max: i32 },
}

/// Per-axis bounds with either a node count or a spacing.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub h: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelPoints {
    pub x: GridSpec,
    pub y: GridSpec,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    Expr(String),
    Bump { bump: BumpSpec },
}

/// `exp(-1/(1 - |x - center|^2/radius^2))` inside the ball, zero outside.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConfig {
    #[serde(default = "two")]
    pub p: PSpec,
    #[serde(default)]
    pub weight: f64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub order: u32,
}

fn two() -> PSpec {
    PSpec::Finite(2.0)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum PSpec {
    Finite(f64),
    Named(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default)]
    pub step_ratio: Option<f64>,
    #[serde(default)]
    pub levels: Option<usize>,
    /// Largest allowed reference error as a fraction of the smallest expansion error.
    #[serde(default)]
    pub budget: Option<f64>,
}

/// Validated configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub source: PathBuf,
    pub spec: OperatorSpec,
    pub mu: usize,
    pub mus: Vec<usize>,
    pub center: CenterRule,
    pub centers: Vec<CenterRule>,
    pub z: Option<Vec<f64>>,
    pub ladder: Option<Vec<f64>>,
    pub grid: Option<Grid>,
    pub kernel: Option<(Grid, Grid)>,
    pub f: Option<InitialData>,
    pub study: StudySettings,
    pub budget: f64,
    pub tolerance: f64,
    pub noise_floor: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub enum InitialData {
    Expr(CompiledExpr),
    Bump(BumpSpec),
}

impl InitialData {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            // Domain errors are rejected by `check_on` before sampling.
            InitialData::Expr(e) => e.eval(x).unwrap_or(f64::NAN),
            InitialData::Bump(b) => {
                let r2: f64 = x
                    .iter()
                    .zip(&b.center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    / (b.radius * b.radius);
                if r2 < 1.0 {
                    (-1.0 / (1.0 - r2)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Fails when the data is undefined at some node of `grid`.
    pub fn check_on(&self, grid: &Grid) -> Result<(), CliError> {
        if let InitialData::Expr(e) = self {
            let mut p = vec![0.0; grid.dim()];
            for k in 0..grid.len() {
                grid.point(k, &mut p);
                e.eval(&p)
                    .map_err(|err| CliError::Numeric(format!("f at {p:?}: {err}")))?;
            }
        }
        Ok(())
    }
}

fn bad(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {what}", path.display()))
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| bad(path, e))?;
    let raw: RawConfig = serde_json::from_str(&text)
        .map_err(|e| bad(path, format_args!("line {} column {}: {e}", e.line(), e.column())))?;
    validate(path, raw)
}

fn operator(path: &Path, src: OperatorSource) -> Result<OperatorSpec, CliError> {
    let (json, origin) = match src {
        OperatorSource::Inline(o) => (o, path.to_path_buf()),
        OperatorSource::File(rel) => {
            let file = path.parent().unwrap_or(Path::new(".")).join(rel);
            let text = fs::read_to_string(&file).map_err(|e| bad(&file, e))?;
            let o: OperatorJson = serde_json::from_str(&text).map_err(|e| {
                bad(&file, format_args!("line {} column {}: {e}", e.line(), e.column()))
            })?;
            (o, file)
        }
    };
    let a: Vec<Vec<&str>> = json
        .a
        .iter()
        .map(|row| row.iter().map(String::as_str).collect())
        .collect();
    let b: Vec<&str> = json.b.iter().map(String::as_str).collect();
    let spec = OperatorSpec::parse(json.dim, &a, &b, &json.c, json.gamma)
        .map_err(|e| bad(&origin, format_args!("operator: {e}")))?;
    Ok(spec.with_positive_orthant(json.positive_orthant))
}

pub fn center_rule(c: &CenterSpec) -> Result<CenterRule, String> {
    match c {
        CenterSpec::Name(n) => match n.as_str() {
            "x" => Ok(CenterRule::X),
            "midpoint" => Ok(CenterRule::Midpoint),
            "geometric" => Ok(CenterRule::Geometric),
            other => Err(format!(
                "unknown center rule {other:?}; expected x, midpoint, geometric or {{\"rule\": \"affine\", \"lambda\": ..}}"
            )),
        },
        CenterSpec::Affine { rule, lambda } if rule == "affine" => {
            if lambda.is_finite() {
                Ok(CenterRule::Affine(*lambda))
            } else {
                Err(format!("affine weight must be finite, got {lambda}"))
            }
        }
        CenterSpec::Affine { rule, .. } => Err(format!("unknown center rule {rule:?}")),
    }
}

pub fn grid(g: &GridSpec, dim: usize) -> Result<Grid, String> {
    if g.lo.len() != dim || g.hi.len() != dim {
        return Err(format!("grid bounds need {dim} entries"));
    }
    let axes = match (&g.n, &g.h) {
        (Some(n), None) if n.len() == dim => (0..dim)
            .map(|d| Axis::new(g.lo[d], g.hi[d], n[d]))
            .collect::<Result<Vec<_>, _>>(),
        (None, Some(h)) if h.len() == dim => (0..dim)
            .map(|d| Axis::with_spacing(g.lo[d], g.hi[d], h[d]))
            .collect::<Result<Vec<_>, _>>(),
        _ => return Err(format!("grid needs exactly one of n or h, with {dim} entries")),
    };
    Grid::new(axes.map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn ladder(l: &Ladder) -> Result<Vec<f64>, String> {
    let ts = match l {
        Ladder::List(v) => v.clone(),
        Ladder::Powers { k_min, k_max } => {
            if k_min > k_max {
                return Err(format!("k_min {k_min} exceeds k_max {k_max}"));
            }
            (*k_min..=*k_max).map(|k| 2f64.powi(-k)).collect()
        }
    };
    if ts.is_empty() {
        return Err("t ladder is empty".into());
    }
    if ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err("t ladder must be positive and finite".into());
    }
    if ts.windows(2).any(|w| w[1] >= w[0]) {
        return Err("t ladder must be strictly decreasing".into());
    }
    Ok(ts)
}

fn validate(path: &Path, raw: RawConfig) -> Result<RunConfig, CliError> {
    if raw.schema != SCHEMA {
        return Err(bad(path, format_args!("schema {} is not supported (expected {SCHEMA})", raw.schema)));
    }
    let spec = operator(path, raw.operator)?;
    let dim = spec.dim();
    let check_rule = |r: CenterRule| {
        r.validate(&spec).map(|_| r).map_err(|e| bad(path, format_args!("center: {e}")))
    };
    let center = match &raw.center {
        Some(c) => check_rule(center_rule(c).map_err(|e| bad(path, format_args!("center: {e}")))?)?,
        None => CenterRule::X,
    };
    let centers = match &raw.centers {
        Some(cs) => cs
            .iter()
            .map(|c| check_rule(center_rule(c).map_err(|e| bad(path, format_args!("centers: {e}")))?))
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![center],
    };
    if centers.is_empty() {
        return Err(bad(path, "centers is empty"));
    }
    let mus = raw.mus.clone().unwrap_or_else(|| (0..=raw.mu).collect());
    if mus.is_empty() {
        return Err(bad(path, "mus is empty"));
    }
    if let Some(z) = &raw.z {
        if z.len() != dim || z.iter().any(|v| !v.is_finite()) {
            return Err(bad(path, format_args!("z needs {dim} finite entries")));
        }
    }
    let ladder = raw
        .t
        .as_ref()
        .map(ladder)
        .transpose()
        .map_err(|e| bad(path, format_args!("t: {e}")))?;
    let grid_ = raw
        .grid
        .as_ref()
        .map(|g| grid(g, dim))
        .transpose()
        .map_err(|e| bad(path, format_args!("grid: {e}")))?;
    let kernel = match &raw.kernel {
        Some(k) => Some((
            grid(&k.x, dim).map_err(|e| bad(path, format_args!("kernel.x: {e}")))?,
            grid(&k.y, dim).map_err(|e| bad(path, format_args!("kernel.y: {e}")))?,
        )),
        None => None,
    };
    let f = match raw.f {
        Some(FunctionSpec::Expr(s)) => Some(InitialData::Expr(
            parse(&s, dim)
                .map_err(|e| bad(path, format_args!("f: {e}")))?
                .compile(),
        )),
        Some(FunctionSpec::Bump { bump }) => {
            if bump.center.len() != dim || !(bump.radius > 0.0 && bump.radius.is_finite()) {
                return Err(bad(path, format_args!("f.bump needs {dim} center entries and a positive radius")));
            }
            Some(InitialData::Bump(bump))
        }
        None => None,
    };
    let norm = match raw.norm {
        Some(n) => {
            let p = match n.p {
                PSpec::Finite(p) => Exponent::Finite(p),
                PSpec::Named(s) if s == "inf" => Exponent::Infinity,
                PSpec::Named(s) => return Err(bad(path, format_args!("norm.p: expected a number or \"inf\", got {s:?}"))),
            };
            let ns = NormSpec {
                p,
                weight: n.weight,
                center: n.center.unwrap_or_else(|| vec![0.0; dim]),
                order: n.order,
            };
            if let Some(g) = &grid_ {
                ns.validate(g).map_err(|e| bad(path, format_args!("norm: {e}")))?;
            }
            ns
        }
        None => NormSpec::l2(dim),
    };
    let mut study = StudySettings {
        norm,
        ..StudySettings::default()
    };
    let mut budget = 0.1;
    if let Some(r) = raw.reference {
        if let Some(s) = r.step_ratio {
            if !(s > 0.0 && s <= 1.0) {
                return Err(bad(path, format_args!("reference.step_ratio must lie in (0, 1], got {s}")));
            }
            study.step_ratio = s;
        }
        if let Some(l) = r.levels {
            if !(1..=3).contains(&l) {
                return Err(bad(path, format_args!("reference.levels must be 1, 2 or 3, got {l}")));
            }
            study.levels = l;
        }
        if let Some(b) = r.budget {
            if !(b > 0.0 && b.is_finite()) {
                return Err(bad(path, format_args!("reference.budget must be positive, got {b}")));
            }
            budget = b;
        }
    }
    let tolerance = raw.tolerance.unwrap_or(0.3);
    let noise_floor = raw.noise_floor.unwrap_or(1e-13);
    if !(tolerance > 0.0) || !(noise_floor >= 0.0) {
        return Err(bad(path, "tolerance must be positive and noise_floor nonnegative"));
    }
    Ok(RunConfig {
        source: path.to_path_buf(),
        spec,
        mu: raw.mu,
        mus,
        center,
        centers,
        z: raw.z,
        ladder,
        grid: grid_,
        kernel,
        f,
        study,
        budget,
        tolerance,
        noise_floor,
        seed: raw.seed.unwrap_or(0),
    })
}

impl RunConfig {
    pub fn require<'a, T>(&self, v: &'a Option<T>, what: &str) -> Result<&'a T, CliError> {
        v.as_ref()
            .ok_or_else(|| bad(&self.source, format_args!("this command needs `{what}`")))
    }
}
