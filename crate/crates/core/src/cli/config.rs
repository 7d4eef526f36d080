//! Experiment configuration: flat `key = value` text or a JSON mirror.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::{
    make_affine_vi, make_convex_quadratic, make_dispatch, make_quadratic_with, make_sharp_lp_vi, make_skew_vi,
    DispatchInstance, MisspecifiedProblem, NoiseScale,
};
use crate::sets::FeasibleSet;
use crate::steplengths::{PolicyKind, SteplengthPolicy, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Run,
    Sweep,
    Verify,
    Selftest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// `½xᵀAx − (Bθ)ᵀx`; `a` defaults to `diag(a_diag)`, `coupling` to `I`.
    Quadratic {
        #[serde(default)]
        a: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        a_diag: Option<Vec<f64>>,
        #[serde(default)]
        coupling: Option<Vec<Vec<f64>>>,
        theta_star: Vec<f64>,
        #[serde(default)]
        noise_sd: f64,
        x_set: FeasibleSet,
        theta_set: FeasibleSet,
        #[serde(default)]
        centered: bool,
    },
    ConvexQuadratic {
        a_diag: Vec<f64>,
        theta_star: Vec<f64>,
        #[serde(default)]
        noise_sd: f64,
        x_set: FeasibleSet,
        theta_set: FeasibleSet,
    },
    AffineVi {
        a: Vec<Vec<f64>>,
        g: Vec<Vec<f64>>,
        theta_star: Vec<f64>,
        #[serde(default)]
        noise_sd: f64,
        x_set: FeasibleSet,
        theta_set: FeasibleSet,
    },
    SkewVi {
        n: usize,
        scale: f64,
        theta_star: Vec<f64>,
        #[serde(default)]
        noise_sd: f64,
        x_set: FeasibleSet,
        theta_set: FeasibleSet,
    },
    SharpLp {
        c: Vec<Vec<f64>>,
        theta_star: Vec<f64>,
        #[serde(default)]
        noise_sd: f64,
        x_set: FeasibleSet,
        theta_set: FeasibleSet,
    },
    Dispatch {
        #[serde(default = "default_firms")]
        n_firms: usize,
        #[serde(default = "default_firms")]
        n_nodes: usize,
        #[serde(default = "default_instance_seed")]
        seed: u64,
        /// `(firm, node, d, h, cap)` rows; overrides the random instance.
        #[serde(default)]
        units_csv: Option<PathBuf>,
        /// `(node, demand)` rows; required with `units_csv`.
        #[serde(default)]
        demand_csv: Option<PathBuf>,
        #[serde(default)]
        noise_scale: NoiseScale,
    },
}

fn default_firms() -> usize {
    5
}

fn default_instance_seed() -> u64 {
    7
}

fn matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    linalg::from_rows(rows).ok_or_else(|| Error::config(key, "matrix rows must be non-empty and equal length"))
}

impl ProblemSpec {
    pub fn build(&self, base_dir: &Path) -> Result<MisspecifiedProblem> {
        let p = match self {
            ProblemSpec::Quadratic {
                a,
                a_diag,
                coupling,
                theta_star,
                noise_sd,
                x_set,
                theta_set,
                centered,
            } => {
                let a = match (a, a_diag) {
                    (Some(rows), None) => matrix(rows, "problem.a")?,
                    (None, Some(d)) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
                    _ => return Err(Error::config("problem.a", "give exactly one of problem.a, problem.a_diag")),
                };
                let b = match coupling {
                    Some(rows) => matrix(rows, "problem.coupling")?,
                    None => DMatrix::identity(x_set.dim(), theta_set.dim()),
                };
                let p = make_quadratic_with(a, b, theta_star.clone(), *noise_sd, x_set.clone(), theta_set.clone())?;
                if *centered {
                    p.centered()?
                } else {
                    p
                }
            }
            ProblemSpec::ConvexQuadratic { a_diag, theta_star, noise_sd, x_set, theta_set } => {
                make_convex_quadratic(a_diag, theta_star.clone(), *noise_sd, x_set.clone(), theta_set.clone())?
            }
            ProblemSpec::AffineVi { a, g, theta_star, noise_sd, x_set, theta_set } => make_affine_vi(
                matrix(a, "problem.a")?,
                matrix(g, "problem.g")?,
                theta_star.clone(),
                *noise_sd,
                x_set.clone(),
                theta_set.clone(),
            )?,
            ProblemSpec::SkewVi { n, scale, theta_star, noise_sd, x_set, theta_set } => {
                make_skew_vi(*n, *scale, theta_star.clone(), *noise_sd, x_set.clone(), theta_set.clone())?
            }
            ProblemSpec::SharpLp { c, theta_star, noise_sd, x_set, theta_set } => make_sharp_lp_vi(
                matrix(c, "problem.c")?,
                theta_star.clone(),
                *noise_sd,
                x_set.clone(),
                theta_set.clone(),
            )?,
            ProblemSpec::Dispatch { n_firms, n_nodes, seed, units_csv, demand_csv, noise_scale } => {
                let mut inst = match (units_csv, demand_csv) {
                    (Some(u), Some(d)) => {
                        super::csvio::load_dispatch(&base_dir.join(u), &base_dir.join(d))?
                    }
                    (None, None) => DispatchInstance::random(*n_firms, *n_nodes, *seed)?,
                    _ => {
                        return Err(Error::config(
                            "problem.demand_csv",
                            "units_csv and demand_csv must be given together",
                        ))
                    }
                };
                inst.noise_scale = *noise_scale;
                make_dispatch(&inst)?
            }
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSpec {
    Full,
    TailHalf,
}

impl From<WindowSpec> for Window {
    fn from(w: WindowSpec) -> Window {
        match w {
            WindowSpec::Full => Window::Full,
            WindowSpec::TailHalf => Window::TailHalf,
        }
    }
}

impl WindowSpec {
    pub fn label(self) -> &'static str {
        match self {
            WindowSpec::Full => "full",
            WindowSpec::TailHalf => "tail_half",
        }
    }
}

/// Extra claims evaluated by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySpec {
    /// Exponents `α` of `γ_x = k^{-α}` for the regret rows.
    #[serde(default)]
    pub regret_alphas: Vec<f64>,
    #[serde(default = "default_beta")]
    pub regret_beta: f64,
    /// `γ_θ = regret_c_theta / k` for the regret rows.
    #[serde(default = "default_regret_c_theta")]
    pub regret_c_theta: f64,
    #[serde(default = "default_mc")]
    pub n_mc: usize,
    /// Split exponent of the convex constant-step bound.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_tau() -> f64 {
    0.5
}

fn default_beta() -> f64 {
    0.5
}

fn default_regret_c_theta() -> f64 {
    40.0
}

fn default_mc() -> usize {
    crate::metrics::DEFAULT_MC_DRAWS
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            regret_alphas: Vec::new(),
            regret_beta: default_beta(),
            regret_c_theta: default_regret_c_theta(),
            n_mc: default_mc(),
            tau: default_tau(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub policies: Vec<SteplengthPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub policy: SteplengthPolicy,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub k_grid: Vec<usize>,
    #[serde(default)]
    pub windows: Vec<WindowSpec>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_seeds() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("K", "must be >= 1"));
        }
        if self.n_seeds < 1 {
            return Err(Error::config("n_seeds", "must be >= 1"));
        }
        if let Some(&bad) = self.k_grid.iter().find(|&&k| k < 1 || k > self.k) {
            return Err(Error::config("k_grid", format!("entry {bad} outside [1, {}]", self.k)));
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("k_grid", "must be strictly increasing"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be >= 1"));
        }
        self.policy.validate().map_err(|e| Error::config("policy", e.to_string()))?;
        if let Some(s) = &self.sweep {
            for p in &s.policies {
                p.validate().map_err(|e| Error::config("sweep.policies", e.to_string()))?;
            }
        }
        if self.verify.regret_alphas.iter().any(|a| !(0.5..1.0).contains(a)) {
            return Err(Error::config("verify.regret_alphas", "entries must lie in [0.5, 1)"));
        }
        Ok(())
    }

    /// `k_grid`, or `{K}` when empty.
    pub fn grid(&self) -> Vec<usize> {
        if self.k_grid.is_empty() {
            vec![self.k]
        } else {
            self.k_grid.clone()
        }
    }

    pub fn build_problem(&self) -> Result<MisspecifiedProblem> {
        self.problem.build(&self.base_dir).map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("problem", other.to_string()),
        })
    }

    pub fn is_regularized(&self) -> bool {
        matches!(self.policy.kind, PolicyKind::RegularizedPowerLaw { .. })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Parses flat text or, when the first non-blank character is `{`, JSON.
    pub fn parse(text: &str) -> Result<Self> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::config("json", e.to_string()))?
        } else {
            flat_to_json(text)?
        };
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let key = offending_key(&msg).unwrap_or_else(|| "config".into());
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn offending_key(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let end = start + msg[start..].find('`')?;
    Some(msg[start..end].to_string())
}

/// Converts `a.b.c = value` lines into nested JSON. Values are parsed as
/// JSON where possible and kept as strings otherwise; `#` starts a comment.
pub fn flat_to_json(text: &str) -> Result<Value> {
    let mut root = Map::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", lineno + 1), "expected key = value"))?;
        let key = key.trim();
        let val = val.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(Error::config(format!("line {}", lineno + 1), "empty key segment"));
        }
        let parsed = serde_json::from_str::<Value>(val).unwrap_or_else(|_| Value::String(val.to_string()));
        insert(&mut root, key, parsed)?;
    }
    Ok(Value::Object(root))
}

fn insert(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            if node.insert(part.to_string(), value).is_some() {
                return Err(Error::config(key, "duplicate key"));
            }
            return Ok(());
        }
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = entry
            .as_object_mut()
            .ok_or_else(|| Error::config(key, "key is both a value and a section"))?;
    }
    Ok(())
}
