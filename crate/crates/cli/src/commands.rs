use std::fs;
use std::path::{Path, PathBuf};

use koopdyn_core::control::{
    cubic_cancel_term, feedback_linearize, simulate_closed_loop, ClosedLoopReport, Controller,
};
use koopdyn_core::dmd::{complex_pair, dmd, reconstruction_error, DmdResultJson, ErrorReport, RankRule};
use koopdyn_core::dynamics::{
    cubic_system, finite_time_system, integrate, linear_system, nonlinear_2d_system, pde_bump_modes,
    synthetic_pde_trajectory, SystemSpec, TimeGrid, Trajectory,
};
use koopdyn_core::koopman::{
    cubic_kef, eigen_residual, eigenfunctional_series, extinction_windows, finite_time_kef, kef_from_mapping,
    nonlinear_2d_kefs, Kef, KefReport, LinearFit, SeriesOptions, Window, WINDOW_FRACTION,
};
use koopdyn_core::profiles::{build_dictionary, ProfileFamily};
use koopdyn_core::sparse::{decompose, sparse_reconstruct, SparseDecomposition, SparseDecompositionJson};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{CancelKind, ExperimentConfig, SystemConfig, ValidationError};
use crate::CliError;

/// Files and bytes read by a command, hashed into every JSON output.
#[derive(Default)]
pub struct Inputs {
    hasher: Sha256,
}

impl Inputs {
    pub fn add(&mut self, bytes: &[u8]) {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.add(&bytes);
        Ok(bytes)
    }

    pub fn digest(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

pub struct Context {
    pub config: Option<ExperimentConfig>,
    pub out: PathBuf,
    pub inputs: Inputs,
}

impl Context {
    fn config(&self) -> Result<&ExperimentConfig, CliError> {
        self.config.as_ref().ok_or_else(|| {
            CliError::Validation(ValidationError { line: None, message: "this command needs --config".into() })
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create<F>(&self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(fs::File) -> koopdyn_core::Result<()>,
    {
        let path = self.path(name);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write(file)?;
        Ok(())
    }

    /// Wraps `result` with the resolved config and the input hash.
    fn finish(self, command: &str, result: Value) -> Result<(), CliError> {
        let config = match &self.config {
            Some(c) => serde_json::to_value(c).map_err(koopdyn_core::Error::from)?,
            None => Value::Null,
        };
        let path = self.out.join(format!("{command}.json"));
        let doc = json!({
            "tool": "koopdyn",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
            "input_hash": self.inputs.digest(),
            "result": result,
        });
        let mut text = serde_json::to_string_pretty(&doc).map_err(koopdyn_core::Error::from)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    Ok(serde_json::to_value(v).map_err(koopdyn_core::Error::from)?)
}

fn grid(cfg: &ExperimentConfig) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::uniform(cfg.grid.start, cfg.grid.end, cfg.grid.samples)?)
}

fn system(cfg: &ExperimentConfig) -> Result<Option<(SystemSpec, DVector<f64>)>, CliError> {
    let one = |v: f64| DVector::from_element(1, v);
    Ok(Some(match &cfg.system {
        SystemConfig::FiniteTime { x0 } => (finite_time_system(), one(x0.unwrap_or(1.0))),
        SystemConfig::Nonlinear2d { x0 } => {
            (nonlinear_2d_system(), DVector::from_row_slice(&x0.unwrap_or([1.0, 1.0])))
        }
        SystemConfig::Cubic { x0 } => (cubic_system(), one(x0.unwrap_or(0.5))),
        SystemConfig::Linear { a, x0 } => {
            let n = x0.len();
            let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
            let x = DVector::from_column_slice(x0);
            (linear_system(m, x.clone())?, x)
        }
        SystemConfig::Pde { .. } => return Ok(None),
    }))
}

/// Trajectory for the configured system, with optional seeded noise.
pub fn trajectory(cfg: &ExperimentConfig) -> Result<Trajectory, CliError> {
    let g = grid(cfg)?;
    let clean = match (&cfg.system, system(cfg)?) {
        (SystemConfig::Pde { lambdas, points }, _) => {
            let (v1, v2) = pde_bump_modes(*points);
            synthetic_pde_trajectory(&v1, &v2, lambdas[0], lambdas[1], &g)?
        }
        (_, Some((sys, x0))) => match sys.sample_closed_form(&g) {
            Some(t) if cfg.closed_form => t?,
            _ => integrate(&sys, &x0, &g)?,
        },
        (_, None) => unreachable!("only the PDE example has no vector field"),
    };
    if cfg.noise == 0.0 {
        return Ok(clean);
    }
    let states = clean.states();
    let scale = states.norm() / (states.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noisy = states.map(|v| v + cfg.noise * scale * rng.random_range(-1.0..1.0));
    Ok(Trajectory::new(noisy, g)?)
}

fn read_trajectory(ctx: &mut Context, path: &Path) -> Result<Trajectory, CliError> {
    let bytes = ctx.inputs.read(path)?;
    Ok(Trajectory::read_csv(bytes.as_slice())?)
}

pub fn simulate(ctx: Context) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let traj = trajectory(cfg)?;
    ctx.create("trajectory.csv", |f| traj.write_csv(f))?;
    let result = json!({
        "dimension": traj.dim(),
        "samples": traj.len(),
        "trajectory": "trajectory.csv",
    });
    ctx.finish("simulate", result)
}

pub fn run_dmd(mut ctx: Context, trajectory_csv: &Path) -> Result<(), CliError> {
    let traj = read_trajectory(&mut ctx, trajectory_csv)?;
    let cfg = ctx.config()?;
    let res = dmd(&traj, cfg.dmd.rule())?;
    let recon = res.reconstruct_trajectory(traj.grid())?;
    let err = reconstruction_error(&traj, &recon)?;
    let sweep: Vec<Value> = cfg
        .dmd
        .sweep
        .iter()
        .map(|&r| {
            let e = dmd(&traj, RankRule::Fixed(r))
                .and_then(|d| d.reconstruct_trajectory(traj.grid()))
                .and_then(|t| reconstruction_error(&traj, &t));
            match e {
                Ok(e) => json!({ "rank": r, "relative_error": e.relative_frobenius }),
                Err(e) => json!({ "rank": r, "error": e.to_string() }),
            }
        })
        .collect();
    ctx.create("dmd_reconstruction.csv", |f| recon.write_csv(f))?;
    ctx.create("dmd_error.csv", |f| err.write_csv(f))?;
    let result = json!({
        "dmd": to_value(&DmdResultJson::from(&res))?,
        "continuous_eigenvalues": res.continuous_eigenvalues().iter().map(complex_pair).collect::<Vec<_>>(),
        "relative_error": err.relative_frobenius,
        "rank_sweep": sweep,
    });
    ctx.finish("dmd", result)
}

pub fn run_sparse(mut ctx: Context, trajectory_csv: &Path) -> Result<(), CliError> {
    let traj = read_trajectory(&mut ctx, trajectory_csv)?;
    let cfg = ctx.config()?;
    let spec = cfg.dictionary.as_ref().ok_or_else(|| {
        CliError::Validation(ValidationError { line: None, message: "sparse needs a [dictionary] section".into() })
    })?;
    let dict = build_dictionary(&spec.family()?, traj.grid())?;
    let fit = decompose(traj.states(), &dict, &cfg.sparse.options())?;
    let dec = &fit.decomposition;
    let recon = Trajectory::new(sparse_reconstruct(dec), traj.grid().clone())?;
    let err = reconstruction_error(&traj, &recon)?;
    ctx.create("sparse_modes.csv", |f| dec.write_modes_csv(f))?;
    ctx.create("sparse_reconstruction.csv", |f| recon.write_csv(f))?;
    ctx.create("sparse_error.csv", |f| err.write_csv(f))?;
    let result = json!({
        "decomposition": to_value(&SparseDecompositionJson::from(dec))?,
        "relative_error": err.relative_frobenius,
        "dictionary_size": dict.len(),
        "lasso": {
            "reg": fit.lasso.reg,
            "sweeps": fit.lasso.sweeps,
            "max_kkt_violation": fit.lasso.max_kkt_violation,
        },
        "sweep": to_value(&fit.sweep)?,
        "chosen": fit.chosen,
        "candidates": to_value(&dec.candidates)?,
    });
    ctx.finish("sparse", result)
}

fn analytic_kefs(system: &SystemConfig) -> (Vec<Kef>, Vec<f64>) {
    match system {
        SystemConfig::FiniteTime { x0 } => {
            let x0 = x0.unwrap_or(1.0);
            (vec![finite_time_kef()], vec![x0.sqrt()])
        }
        SystemConfig::Nonlinear2d { .. } => {
            let (a, b) = nonlinear_2d_kefs();
            (vec![a, b], Vec::new())
        }
        SystemConfig::Cubic { .. } => (vec![cubic_kef()], Vec::new()),
        _ => (Vec::new(), Vec::new()),
    }
}

/// Accepts either the `sparse` command output or a bare decomposition.
fn parse_decomposition(bytes: &[u8]) -> Result<SparseDecompositionJson, CliError> {
    let v: Value = serde_json::from_slice(bytes).map_err(koopdyn_core::Error::from)?;
    let inner = v.pointer("/result/decomposition").cloned().unwrap_or(v);
    Ok(serde_json::from_value(inner).map_err(koopdyn_core::Error::from)?)
}

fn fit_value(fit: &Option<LinearFit>) -> Result<Value, CliError> {
    to_value(fit)
}

pub fn run_kef(mut ctx: Context, decomposition_json: &Path, trajectory_csv: &Path) -> Result<(), CliError> {
    let dec_bytes = ctx.inputs.read(decomposition_json)?;
    let traj = read_trajectory(&mut ctx, trajectory_csv)?;
    let cfg = ctx.config()?;
    let stored = parse_decomposition(&dec_bytes)?;
    let modes = stored.modes_matrix()?;
    let family = ProfileFamily::new(stored.profile, stored.lambdas.clone())?;
    let dict = build_dictionary(&family, traj.grid())?;
    let dec = SparseDecomposition::from_parts(
        traj.states(),
        &dict,
        (0..stored.lambdas.len()).collect(),
        modes.clone(),
        stored.reg,
    )?;

    // Dual basis: <w_i, V a> = a_i, scaled so the mapping reads a_i directly.
    let gram = modes.transpose() * &modes;
    let gram_inv = gram
        .cholesky()
        .ok_or(koopdyn_core::Error::IllConditionedModes { condition: f64::INFINITY })?
        .inverse();
    let duals = &modes * gram_inv;
    let extinction: Vec<f64> =
        stored.lambdas.iter().filter_map(|&l| stored.profile.extinction_time(l)).collect();
    let windows = extinction_windows(&traj, &extinction, cfg.kef.rest_tol);
    let mut reports = Vec::new();
    for (i, &lambda) in stored.lambdas.iter().enumerate() {
        let w = duals.column(i).into_owned();
        let mode = &w / w.norm_squared();
        let kef = kef_from_mapping(&family, lambda, &mode, cfg.kef.alpha, cfg.kef.beta)?;
        // the mapping only holds until this mode's own profile vanishes
        let mut own = windows.clone();
        if let Some(t) = stored.profile.extinction_time(lambda) {
            let (t0, t1) = (traj.grid().start(), traj.grid().end());
            if t < t1 {
                own.push(Window { start: t - WINDOW_FRACTION * (t1 - t0), end: t1 });
            }
        }
        let residual = eigen_residual(&kef, &traj, &own);
        reports.push(KefReport::new(&kef, residual, own));
    }

    let (analytic, ext) = analytic_kefs(&cfg.system);
    let analytic_windows = extinction_windows(&traj, &ext, cfg.kef.rest_tol);
    let analytic: Vec<KefReport> = analytic
        .iter()
        .map(|k| KefReport::new(k, eigen_residual(k, &traj, &analytic_windows), analytic_windows.clone()))
        .collect();

    let opts = SeriesOptions { margin: cfg.kef.margin, departure_tol: cfg.kef.departure_tol };
    let series = eigenfunctional_series(&dec, &traj, &opts)?;
    ctx.create("eigenfunctionals.csv", |f| series.write_csv(f))?;
    let summary = series
        .modes
        .iter()
        .map(|m| {
            Ok(json!({
                "lambda": m.lambda,
                "fit": fit_value(&m.fit)?,
                "departure_time": m.departure_time,
            }))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let result = json!({
        "kefs": to_value(&reports)?,
        "analytic": to_value(&analytic)?,
        "series": summary,
    });
    ctx.finish("kef", result)
}

pub fn run_control(ctx: Context) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let c = cfg.control.as_ref().ok_or_else(|| {
        CliError::Validation(ValidationError { line: None, message: "control needs a [control] section".into() })
    })?;
    let sys = cubic_system();
    let cancel = match c.cancel {
        CancelKind::Analytic => cubic_cancel_term(),
        CancelKind::Numeric => feedback_linearize(&cubic_kef(), &sys, c.step)?,
    };
    let target = DVector::from_element(1, c.target);
    let ctrl = Controller::proportional(cancel.clone(), target.clone()).with_domain(|x| x[0].abs() < 1.0);
    let traj = simulate_closed_loop(&sys, &ctrl, &DVector::from_element(1, c.x0), &grid(cfg)?)?;
    let report = ClosedLoopReport::new(&traj, &target);

    let n = c.check_samples;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x = if n > 1 { -0.99 + 1.98 * i as f64 / (n - 1) as f64 } else { 0.0 };
        let x = DVector::from_element(1, x);
        worst = worst.max((sys.eval(&x) + cancel(&x)?).norm());
    }
    ctx.create("control_trajectory.csv", |f| traj.write_csv(f))?;
    let result = json!({
        "report": to_value(&report)?,
        "max_compensated_rhs": worst,
        "check_samples": n,
    });
    ctx.finish("control", result)
}

/// Relative error restricted to the shared times of two error reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// DMD error over sparse error; `null` in JSON when not finite.
    pub ratio: f64,
    pub dmd_relative_error: f64,
    pub sparse_relative_error: f64,
    pub times: Vec<f64>,
    pub dmd_error: Vec<f64>,
    pub sparse_error: Vec<f64>,
}

pub fn compare_reports(a: &ErrorReport, b: &ErrorReport) -> Result<Comparison, CliError> {
    let same = |s: f64, t: f64| (s - t).abs() <= 1e-9 * s.abs().max(t.abs()).max(1.0);
    let mut pairs = Vec::new();
    let mut j = 0;
    for (i, &t) in a.times.iter().enumerate() {
        while j < b.times.len() && b.times[j] < t && !same(b.times[j], t) {
            j += 1;
        }
        if j < b.times.len() && same(b.times[j], t) {
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Validation(ValidationError {
            line: None,
            message: "the two error files share no time samples".into(),
        }));
    }
    let rel = |r: &ErrorReport, idx: &mut dyn Iterator<Item = usize>| {
        let (mut e, mut n) = (0.0, 0.0);
        for k in idx {
            e += r.column_error[k] * r.column_error[k];
            n += r.column_norm[k] * r.column_norm[k];
        }
        if n > 0.0 {
            (e / n).sqrt()
        } else {
            e.sqrt()
        }
    };
    let ea = rel(a, &mut pairs.iter().map(|p| p.0));
    let eb = rel(b, &mut pairs.iter().map(|p| p.1));
    let ratio = if ea == eb { 1.0 } else { ea / eb };
    Ok(Comparison {
        ratio,
        dmd_relative_error: ea,
        sparse_relative_error: eb,
        times: pairs.iter().map(|p| a.times[p.0]).collect(),
        dmd_error: pairs.iter().map(|p| a.column_error[p.0]).collect(),
        sparse_error: pairs.iter().map(|p| b.column_error[p.1]).collect(),
    })
}

pub fn run_compare(mut ctx: Context, dmd_error: &Path, sparse_error: &Path) -> Result<(), CliError> {
    let a = ErrorReport::read_csv(ctx.inputs.read(dmd_error)?.as_slice())?;
    let b = ErrorReport::read_csv(ctx.inputs.read(sparse_error)?.as_slice())?;
    let cmp = compare_reports(&a, &b)?;
    ctx.finish("compare", to_value(&cmp)?)
}
