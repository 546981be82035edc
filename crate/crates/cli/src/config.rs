//! Experiment configuration: a versioned TOML file.
//!
//! ```toml
//! version = 1
//! experiment = "pde"
//! seed = 0
//! noise = 0.0           # relative uniform noise added by `simulate`
//! closed_form = false   # sample the exact solution instead of integrating
//! output = "out"        # optional; `--out` wins
//!
//! [system]
//! kind = "pde"          # finite_time | nonlinear_2d | cubic | linear | pde
//! lambdas = [0.1, 0.0333333333333333]
//! points = 200
//!
//! [grid]
//! start = 0.0
//! end = 35.0
//! samples = 351
//!
//! [dictionary]
//! kind = "truncated_linear"
//! lambda_min = 0.011
//! lambda_max = 0.9
//! count = 200
//! spacing = "log"
//! include = [0.1, 0.0333333333333333]
//!
//! [dmd]
//! rank = 2              # or `energy = 0.9999`
//! sweep = [1, 2, 3]
//!
//! [sparse]              # every key optional
//! sweep_points = 10
//! sweep_decades = 4.0
//!
//! [kef]
//! alpha = 1.0
//!
//! [control]
//! x0 = -0.5
//! target = 0.7
//! cancel = "numeric"    # or "analytic"
//! ```
//!
//! Tables and keys are plain `[section]` / `key = value` lines; dotted keys
//! and inline tables are accepted by the parser but error messages can only
//! point at the first form.

use std::fmt;

use koopdyn_core::dmd::RankRule;
use koopdyn_core::profiles::DictionarySpec;
use koopdyn_core::sparse::{LassoOptions, RefitOptions, SparseOptions, SweepOptions};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub closed_form: bool,
    #[serde(default)]
    pub output: Option<String>,
    pub system: SystemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub dictionary: Option<DictionarySpec>,
    #[serde(default)]
    pub dmd: DmdConfig,
    #[serde(default)]
    pub sparse: SparseConfig,
    #[serde(default)]
    pub kef: KefConfig,
    #[serde(default)]
    pub control: Option<ControlConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    FiniteTime {
        #[serde(default)]
        x0: Option<f64>,
    },
    #[serde(rename = "nonlinear_2d")]
    Nonlinear2d {
        #[serde(default)]
        x0: Option<[f64; 2]>,
    },
    Cubic {
        #[serde(default)]
        x0: Option<f64>,
    },
    Linear {
        /// Row-major system matrix.
        a: Vec<Vec<f64>>,
        x0: Vec<f64>,
    },
    Pde {
        lambdas: [f64; 2],
        points: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: f64,
    pub end: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DmdConfig {
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub energy: Option<f64>,
    /// Extra fixed ranks whose reconstruction errors are tabulated.
    #[serde(default)]
    pub sweep: Vec<usize>,
}

impl DmdConfig {
    pub fn rule(&self) -> RankRule {
        match (self.rank, self.energy) {
            (Some(r), _) => RankRule::Fixed(r),
            (None, Some(e)) => RankRule::Energy(e),
            (None, None) => RankRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseConfig {
    pub reg: Option<f64>,
    pub sweep_points: usize,
    pub sweep_decades: f64,
    pub tol: f64,
    pub max_iters: Option<usize>,
    pub tie_tol: f64,
    pub rel_tie: f64,
}

impl Default for SparseConfig {
    fn default() -> Self {
        let o = SparseOptions::default();
        Self {
            reg: o.reg,
            sweep_points: o.sweep.points,
            sweep_decades: o.sweep.decades,
            tol: o.lasso.tol,
            max_iters: o.lasso.max_iters,
            tie_tol: o.refit.tie_tol,
            rel_tie: o.refit.rel_tie,
        }
    }
}

impl SparseConfig {
    pub fn options(&self) -> SparseOptions {
        SparseOptions {
            lasso: LassoOptions { tol: self.tol, max_iters: self.max_iters },
            refit: RefitOptions { tie_tol: self.tie_tol, rel_tie: self.rel_tie },
            reg: self.reg,
            sweep: SweepOptions { points: self.sweep_points, decades: self.sweep_decades },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KefConfig {
    /// Eigenvalue of the eigenfunctions built from the time mapping.
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
    pub departure_tol: f64,
    /// Motion below this size between snapshots counts as rest.
    pub rest_tol: f64,
}

impl Default for KefConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0, margin: 0.5, departure_tol: 1e-6, rest_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CancelKind {
    #[default]
    Numeric,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub x0: f64,
    pub target: f64,
    #[serde(default)]
    pub cancel: CancelKind,
    /// Finite-difference step for the numeric cancel term.
    #[serde(default)]
    pub step: Option<f64>,
    /// States in (-0.99, 0.99) where the compensated vector field is checked.
    #[serde(default = "default_check_samples")]
    pub check_samples: usize,
}

fn default_check_samples() -> usize {
    1000
}

/// 1-based line of `key` inside `[section]` (`""` for the top level).
pub fn key_line(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn parse(src: &str) -> Result<Self, ValidationError> {
        let cfg: Self = toml::from_str(src).map_err(|e| ValidationError {
            line: e.span().map(|s| line_of_offset(src, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    fn validate(&self, src: &str) -> Result<(), ValidationError> {
        let fail = |section: &str, key: &str, message: String| {
            Err(ValidationError { line: key_line(src, section, key), message })
        };
        if self.version != CONFIG_VERSION {
            return fail("", "version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("", "noise", format!("noise must be a finite non-negative number, got {}", self.noise));
        }
        let g = &self.grid;
        if !(g.start.is_finite() && g.end.is_finite()) {
            return fail("grid", "end", "grid bounds must be finite".into());
        }
        if g.end <= g.start {
            return fail("grid", "end", format!("grid.end ({}) must exceed grid.start ({})", g.end, g.start));
        }
        if g.samples < 3 {
            return fail("grid", "samples", format!("need at least 3 samples, got {}", g.samples));
        }
        match &self.system {
            SystemConfig::Pde { lambdas, points } => {
                if lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return fail("system", "lambdas", "rates must be positive and finite".into());
                }
                if *points == 0 {
                    return fail("system", "points", "need at least one spatial point".into());
                }
            }
            SystemConfig::Linear { a, x0 } => {
                if x0.is_empty() {
                    return fail("system", "x0", "initial state is empty".into());
                }
                if a.len() != x0.len() || a.iter().any(|r| r.len() != x0.len()) {
                    return fail("system", "a", format!("matrix must be {0}x{0} to match x0", x0.len()));
                }
            }
            SystemConfig::FiniteTime { x0: Some(v) } if *v < 0.0 => {
                return fail("system", "x0", format!("finite-time system needs x0 >= 0, got {v}"));
            }
            _ => {}
        }
        if self.closed_form {
            let overridden = match &self.system {
                SystemConfig::FiniteTime { x0 } | SystemConfig::Cubic { x0 } => x0.is_some(),
                SystemConfig::Nonlinear2d { x0 } => x0.is_some(),
                _ => false,
            };
            if overridden || matches!(self.system, SystemConfig::Cubic { .. }) {
                return fail("", "closed_form", "no closed form for this system and initial state".into());
            }
        }
        if let Some(d) = &self.dictionary {
            if let Err(e) = d.family() {
                return fail("dictionary", "", e.to_string());
            }
        }
        let dmd = &self.dmd;
        if dmd.rank.is_some() && dmd.energy.is_some() {
            return fail("dmd", "energy", "give either dmd.rank or dmd.energy, not both".into());
        }
        if dmd.rank == Some(0) || dmd.sweep.contains(&0) {
            return fail("dmd", if dmd.rank == Some(0) { "rank" } else { "sweep" }, "ranks start at 1".into());
        }
        if let Some(e) = dmd.energy {
            if !(e > 0.0 && e <= 1.0) {
                return fail("dmd", "energy", format!("energy fraction must lie in (0, 1], got {e}"));
            }
        }
        let s = &self.sparse;
        if !(s.tol > 0.0) {
            return fail("sparse", "tol", format!("tolerance must be positive, got {}", s.tol));
        }
        if let Some(r) = s.reg {
            if !(r >= 0.0 && r.is_finite()) {
                return fail("sparse", "reg", format!("regularization must be non-negative, got {r}"));
            }
        }
        if s.sweep_points == 0 || !(s.sweep_decades > 0.0) {
            return fail("sparse", "sweep_points", "sweep needs at least one point over a positive span".into());
        }
        if !(s.tie_tol >= 0.0 && s.rel_tie >= 0.0) {
            return fail("sparse", "tie_tol", "tie tolerances must be non-negative".into());
        }
        let k = &self.kef;
        if !(k.alpha.is_finite() && k.beta.is_finite() && k.margin >= 0.0 && k.departure_tol > 0.0) {
            return fail("kef", "", "kef parameters must be finite with margin >= 0 and departure_tol > 0".into());
        }
        if let Some(c) = &self.control {
            if !matches!(self.system, SystemConfig::Cubic { .. }) {
                return fail("system", "kind", "control experiments need the cubic system".into());
            }
            if !(c.x0.abs() < 1.0) {
                return fail("control", "x0", format!("x0 must lie in (-1, 1), got {}", c.x0));
            }
            if !c.target.is_finite() {
                return fail("control", "target", "target must be finite".into());
            }
            if let Some(h) = c.step {
                if !(h > 0.0) {
                    return fail("control", "step", format!("step must be positive, got {h}"));
                }
            }
        }
        Ok(())
    }
}
