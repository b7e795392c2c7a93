//! Experiment execution: instance construction from a config + seed,
//! trajectory runs with per-seed CSV output, the diagnostics report, and
//! rate re-fitting from existing CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lowrank_core::align::default_gl_tol;
use lowrank_core::descent::{default_step, run, DescentConfig, Trajectory};
use lowrank_core::diagnostics::{
    assemble_augmented_hessian, eigen_range, estimate_curvature, estimate_rip_constant,
    fit_contraction, noise_summary, CurvatureEstimate, NoiseSummary, RateFit,
};
use lowrank_core::loss::{BernoulliLoss, LossModel, QuadraticLoss, SensingLoss};
use lowrank_core::matrix::{FactorPoint, GroundTruth, Mode};
use lowrank_core::penalty::PenaltyConfig;
use lowrank_core::synth::{
    gen_bernoulli, gen_gaussian_noise, gen_gaussian_noise_sym, gen_sensing, gen_truth,
    oracle_init, spectral_init_bernoulli, spectral_init_sensing, TruthSpec,
};

use crate::config::{ConfigError, ExperimentConfig, InitKind, ModelKind};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<lowrank_core::Error> for CliError {
    fn from(e: lowrank_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Deterministic sub-seed derivation so each consumer of randomness gets an
/// independent stream from the one experiment seed.
fn subseed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag)
        .rotate_left(17)
        ^ (tag.wrapping_mul(0xD134_2543_DE82_EF95))
}

/// A fully constructed experiment instance for one seed.
pub struct Instance {
    pub truth: GroundTruth,
    pub loss: Box<dyn LossModel>,
    pub init: FactorPoint,
    pub eta: f64,
    pub theorem_rho: f64,
    /// Curvature constants used for the step size.
    pub alpha: f64,
    pub beta: f64,
    /// Monte-Carlo RIP estimate; sensing only.
    pub delta0_hat: Option<f64>,
    pub align_tol: f64,
}

pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> CliResult<Instance> {
    let mode = if cfg.model.is_symmetric() {
        Mode::Symmetric
    } else {
        Mode::Asymmetric
    };
    let spec = TruthSpec {
        n: cfg.n,
        q: if cfg.model.is_symmetric() { None } else { Some(cfg.q) },
        r: cfg.r,
        sigma_min: cfg.sigma_min,
        kappa: cfg.kappa,
        seed: subseed(seed, 1),
    };
    let truth = gen_truth(&spec, mode)?;

    let mut delta0_hat = None;
    let (loss, alpha, beta): (Box<dyn LossModel>, f64, f64) = match cfg.model {
        ModelKind::SymQuadratic => {
            let e = gen_gaussian_noise_sym(cfg.n, cfg.noise, subseed(seed, 2));
            (Box::new(QuadraticLoss::new(truth.x_star(), e)?), 1.0, 1.0)
        }
        ModelKind::AsymQuadratic => {
            let e = gen_gaussian_noise(cfg.n, cfg.q, cfg.noise, subseed(seed, 2));
            (Box::new(QuadraticLoss::new(truth.x_star(), e)?), 1.0, 1.0)
        }
        ModelKind::Sensing => {
            let data = gen_sensing(&truth, cfg.m, cfg.noise, subseed(seed, 2))?;
            let d0 = estimate_rip_constant(&data, 2 * cfg.r, 100, subseed(seed, 4));
            if d0 >= 1.0 {
                return Err(CliError::Runtime(format!(
                    "sensing ensemble is not a restricted isometry: delta0_hat = {d0:.3}"
                )));
            }
            delta0_hat = Some(d0);
            let loss = SensingLoss::new(data).with_truth(truth.x_star())?;
            (Box::new(loss), 1.0 - d0, 1.0 + d0)
        }
        ModelKind::Bernoulli => {
            let data = gen_bernoulli(&truth, cfg.noise, subseed(seed, 2))?;
            let loss = BernoulliLoss::new(data);
            let alpha = loss.meta().declared_alpha.expect("bernoulli declares alpha");
            let beta = loss.meta().declared_beta.expect("bernoulli declares beta");
            (Box::new(loss), alpha, beta)
        }
    };

    let init = match cfg.init {
        InitKind::Oracle => oracle_init(&truth, cfg.phi, cfg.psi, subseed(seed, 3))?,
        InitKind::Spectral => match cfg.model {
            ModelKind::Sensing => {
                let data = gen_sensing(&truth, cfg.m, cfg.noise, subseed(seed, 2))?;
                spectral_init_sensing(&data, cfg.r)?
            }
            ModelKind::Bernoulli => {
                let data = gen_bernoulli(&truth, cfg.noise, subseed(seed, 2))?;
                spectral_init_bernoulli(&data, cfg.r)?
            }
            _ => {
                return Err(CliError::Runtime(
                    "spectral init requires the sensing or bernoulli model".into(),
                ))
            }
        },
    };

    let (eta_auto, theorem_rho) = default_step(alpha, beta, truth.kappa(), truth.sigma_min())?;
    let eta = cfg.eta.unwrap_or(eta_auto);
    let align_tol = cfg.align_tol.unwrap_or_else(|| match truth.tau_star() {
        Some(tau) => default_gl_tol(tau),
        None => 1e-9,
    });

    Ok(Instance {
        truth,
        loss,
        init,
        eta,
        theorem_rho,
        alpha,
        beta,
        delta0_hat,
        align_tol,
    })
}

/// Per-seed summary line of `summary.csv`.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub seed: u64,
    pub rho_hat: Option<f64>,
    pub floor: Option<f64>,
    pub theorem_rho: f64,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub delta2: f64,
    pub delta_inf: f64,
    pub delta_inf_bar: f64,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Trajectory, SummaryRow)> {
    let inst = build_instance(cfg, seed)?;
    let descent = DescentConfig {
        eta: inst.eta,
        max_iter: cfg.max_iter,
        seed,
        record_alignment: cfg.record_alignment,
        align_tol: inst.align_tol,
        stop_grad_norm: None,
    };
    let traj = run(inst.loss.as_ref(), inst.init.clone(), Some(&inst.truth), &descent)?;

    let fit = fit_contraction(&traj).ok();
    let curv = estimate_curvature(
        inst.loss.as_ref(),
        inst.truth.point(),
        100,
        false,
        0.0,
        subseed(seed, 5),
    )?;
    let noise = noise_summary(inst.loss.as_ref(), &inst.truth, 1, 0.0, subseed(seed, 6))?;
    let row = SummaryRow {
        seed,
        rho_hat: fit.as_ref().map(|f| f.rho_hat),
        floor: fit.as_ref().map(|f| f.floor),
        theorem_rho: inst.theorem_rho,
        alpha_hat: curv.alpha_hat,
        beta_hat: curv.beta_hat,
        delta2: noise.delta2,
        delta_inf: noise.delta_inf,
        delta_inf_bar: noise.delta_inf_bar,
    };
    Ok((traj, row))
}

/// Lossless float formatting for the CSV outputs.
fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub const TRAJ_HEADER: &str = "iter,loss,dist2,dist_inf,balance,penalty_grad_norm,grad_norm";
pub const SUMMARY_HEADER: &str =
    "seed,rho_hat,floor,theorem_rho,alpha_hat,beta_hat,delta2,delta_inf,delta_inf_bar";

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(64 * traj.records.len());
    out.push_str(TRAJ_HEADER);
    out.push('\n');
    for rec in &traj.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            rec.iter,
            fmt_f64(rec.loss_value),
            fmt_opt(rec.dist2),
            fmt_opt(rec.dist_inf),
            fmt_opt(rec.balance_residual),
            fmt_opt(rec.penalty_grad_norm),
            fmt_f64(rec.grad_norm)
        );
    }
    out
}

/// Writes a file atomically: temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, contents)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("rename to {}: {e}", path.display())))?;
    Ok(())
}

fn worker_count(n_jobs: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("LOWRANK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(available);
    cap.min(n_jobs).max(1)
}

/// Runs every seed of the experiment, writing `traj_<seed>.csv` per seed
/// and one `summary.csv`, dispatching seeds to a worker pool. Output is
/// byte-identical for a fixed config, regardless of thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Vec<SummaryRow>> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", cfg.out.display())))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult<SummaryRow>>>> =
        Mutex::new((0..cfg.seeds.len()).map(|_| None).collect());
    let workers = worker_count(cfg.seeds.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= cfg.seeds.len() {
                    break;
                }
                let seed = cfg.seeds[idx];
                let outcome = run_seed(cfg, seed).and_then(|(traj, row)| {
                    let path = cfg.out.join(format!("traj_{seed}.csv"));
                    write_atomic(&path, &trajectory_csv(&traj))?;
                    Ok(row)
                });
                results.lock().expect("results lock").get_mut(idx).map(|slot| *slot = Some(outcome));
            });
        }
    });

    let collected = results.into_inner().expect("results lock");
    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for outcome in collected {
        rows.push(outcome.expect("every seed visited")?);
    }

    let mut summary = String::new();
    summary.push_str(SUMMARY_HEADER);
    summary.push('\n');
    for row in &rows {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{}",
            row.seed,
            fmt_opt(row.rho_hat),
            fmt_opt(row.floor),
            fmt_f64(row.theorem_rho),
            fmt_f64(row.alpha_hat),
            fmt_f64(row.beta_hat),
            fmt_f64(row.delta2),
            fmt_f64(row.delta_inf),
            fmt_f64(row.delta_inf_bar)
        );
    }
    write_atomic(&cfg.out.join("summary.csv"), &summary)?;
    Ok(rows)
}

/// One parsed row of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajRow {
    pub iter: usize,
    pub loss: f64,
    pub dist2: Option<f64>,
    pub dist_inf: Option<f64>,
    pub balance: Option<f64>,
    pub penalty_grad_norm: Option<f64>,
    pub grad_norm: f64,
}

/// Reads back a trajectory CSV produced by `run_experiment`.
pub fn parse_trajectory_csv(text: &str) -> CliResult<Vec<TrajRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRAJ_HEADER => {}
        other => {
            return Err(CliError::Runtime(format!(
                "unexpected trajectory header: {other:?}"
            )))
        }
    }
    let parse_f = |tok: &str, what: &str| -> CliResult<f64> {
        tok.parse::<f64>()
            .map_err(|_| CliError::Runtime(format!("bad {what} value `{tok}`")))
    };
    let parse_opt = |tok: &str, what: &str| -> CliResult<Option<f64>> {
        if tok.is_empty() {
            Ok(None)
        } else {
            parse_f(tok, what).map(Some)
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != 7 {
            return Err(CliError::Runtime(format!(
                "expected 7 columns, got {} in `{line}`",
                toks.len()
            )));
        }
        rows.push(TrajRow {
            iter: toks[0]
                .parse()
                .map_err(|_| CliError::Runtime(format!("bad iter `{}`", toks[0])))?,
            loss: parse_f(toks[1], "loss")?,
            dist2: parse_opt(toks[2], "dist2")?,
            dist_inf: parse_opt(toks[3], "dist_inf")?,
            balance: parse_opt(toks[4], "balance")?,
            penalty_grad_norm: parse_opt(toks[5], "penalty_grad_norm")?,
            grad_norm: parse_f(toks[6], "grad_norm")?,
        });
    }
    Ok(rows)
}

/// Re-fits contraction rates from every `traj_*.csv` under a directory.
pub fn fit_directory(dir: &Path) -> CliResult<Vec<(PathBuf, Result<RateFit, String>)>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.starts_with("traj_") && s.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Runtime(format!(
            "no traj_*.csv files under {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))?;
        let rows = parse_trajectory_csv(&text)?;
        let series: Vec<(usize, f64)> = rows
            .iter()
            .filter_map(|r| r.dist2.map(|d| (r.iter, d)))
            .collect();
        let fit = lowrank_core::diagnostics::fit_contraction_series(&series)
            .map_err(|e| e.to_string());
        out.push((path, fit));
    }
    Ok(out)
}

/// Text report of the instance diagnostics for the first seed of a config.
pub fn diagnose(cfg: &ExperimentConfig) -> CliResult<String> {
    let seed = *cfg.seeds.first().ok_or_else(|| {
        CliError::Config(ConfigError {
            field: "seeds".into(),
            message: "no seeds given".into(),
        })
    })?;
    let inst = build_instance(cfg, seed)?;
    let truth = &inst.truth;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model {} ({}x{} rank {}), seed {seed}",
        cfg.model, cfg.n, cfg.q, cfg.r
    );
    let _ = writeln!(
        out,
        "truth: sigma_min {:.6e}, kappa {:.4}, omega* {:.4e}{}",
        truth.sigma_min(),
        truth.kappa(),
        truth.omega_star(),
        truth
            .tau_star()
            .map(|t| format!(", tau* {t:.4e}"))
            .unwrap_or_default()
    );
    let _ = writeln!(
        out,
        "step: eta {:.6e} (alpha {:.6e}, beta {:.6e}), theorem rho {:.6}",
        inst.eta, inst.alpha, inst.beta, inst.theorem_rho
    );
    if let Some(d0) = inst.delta0_hat {
        let _ = writeln!(out, "sensing RIP probe: delta0_hat {d0:.4}");
    }

    let curv: CurvatureEstimate = estimate_curvature(
        inst.loss.as_ref(),
        truth.point(),
        100,
        true,
        0.0,
        subseed(seed, 5),
    )?;
    let _ = writeln!(
        out,
        "curvature (100 tangent probes at truth): alpha_hat {:.6e}, beta_hat {:.6e}, rowwise beta_hat {:.6e}",
        curv.alpha_hat,
        curv.beta_hat,
        curv.rowwise_beta_hat.unwrap_or(f64::NAN)
    );

    let noise: NoiseSummary = noise_summary(inst.loss.as_ref(), truth, 1, 0.0, subseed(seed, 6))?;
    let ratio = noise.delta_inf_bar / (inst.alpha * truth.sigma_min());
    let _ = writeln!(
        out,
        "noise: delta2 {:.6e}, delta_inf {:.6e}, delta_inf_bar {:.6e}",
        noise.delta2, noise.delta_inf, noise.delta_inf_bar
    );
    let _ = writeln!(
        out,
        "  delta_inf_bar / (alpha sigma_min) = {:.4e} [{}]",
        ratio,
        if ratio <= 0.25 {
            "ok: <= 1/4"
        } else {
            "VIOLATED: > 1/4 (worst-direction row-wise condition)"
        }
    );

    let dim = match truth.point() {
        FactorPoint::Symmetric { z } => z.nrows() * z.ncols(),
        FactorPoint::Asymmetric { u, v } => (u.nrows() + v.nrows()) * u.ncols(),
    };
    if dim <= 1500 {
        let pen = PenaltyConfig::new(inst.alpha, truth)?;
        let aug = assemble_augmented_hessian(inst.loss.as_ref(), truth.point(), &pen)?;
        let tiny = PenaltyConfig::new(1e-300, truth)?;
        let raw = assemble_augmented_hessian(inst.loss.as_ref(), truth.point(), &tiny)?;
        let scale = match truth.point() {
            FactorPoint::Symmetric { z } => z.nrows() as f64,
            FactorPoint::Asymmetric { .. } => 1.0,
        };
        let (lo_aug, hi_aug) = eigen_range(&(&aug / scale));
        let (lo_raw, hi_raw) = eigen_range(&(&raw / scale));
        let _ = writeln!(
            out,
            "augmented Hessian at truth (scaled): lambda_min {lo_aug:.6e}, lambda_max {hi_aug:.6e}"
        );
        let _ = writeln!(
            out,
            "raw Hessian at truth (scaled): lambda_min {lo_raw:.6e}, lambda_max {hi_raw:.6e} (degeneracy ratio {:.2e})",
            lo_raw / hi_raw.max(1e-300)
        );
    } else {
        let _ = writeln!(out, "hessian: dimension {dim} > 1500, skipped");
    }
    Ok(out)
}
