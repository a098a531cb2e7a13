//! Config-driven experiment runner behind the `lrednn` binary.

pub mod config;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::evolve::{run, EvolveError, InitialState, RunOutput, RunSettings, SolverKind};
use crate::exec::Execution;
use crate::network::{fit_initial, Architecture, CollocationGrid, FitReport, MlpNetwork};
use crate::subspace::FactoredNetwork;

pub use config::{ConfigError, Equation, Experiment, ExperimentConfig, InitMode, Rank};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("initial fit RMS {rms:.3e} exceeds the gate {gate:.3e} (raise [fit] gate or iterations)")]
    FitGate { rms: f64, gate: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::FitGate { .. } | CliError::Numerical(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn build_grid(cfg: &ExperimentConfig) -> CollocationGrid {
    CollocationGrid::uniform_periodic(&vec![(-1.0, 1.0); cfg.dim], &vec![cfg.points; cfg.dim])
        .expect("validated grid")
}

pub fn architecture(cfg: &ExperimentConfig) -> Architecture {
    Architecture::periodic(cfg.dim, &cfg.hidden, cfg.output_dim())
}

fn max_rank(arch: &Architecture) -> usize {
    arch.layer_shapes().iter().map(|(n, m)| n.min(m)).copied().max().unwrap_or(1)
}

/// Starting network of a run, with the fit report in standard mode.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub state: InitialState,
    pub fit: Option<FitReport>,
}

pub fn prepare_initial(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    cfg.validate()?;
    let arch = architecture(cfg);
    match cfg.mode {
        InitMode::Standard => {
            let grid = build_grid(cfg);
            let net = MlpNetwork::init(&arch, cfg.seed).map_err(|e| CliError::Numerical(e.to_string()))?;
            let target = cfg.initial.sample(&grid);
            let (fitted, report) = fit_initial(&net, &grid, &target, &cfg.fit)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            Ok(Prepared {
                state: InitialState::Network(fitted),
                fit: Some(report),
            })
        }
        InitMode::FactoredInit => {
            let r = match cfg.rank {
                Rank::Full => max_rank(&arch),
                Rank::Fixed(r) => r,
            };
            let f = FactoredNetwork::random(&arch, r, cfg.seed, cfg.output_gain, cfg.output_bias)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            Ok(Prepared {
                state: InitialState::Factored(f),
                fit: None,
            })
        }
    }
}

pub fn solver_kind(cfg: &ExperimentConfig) -> SolverKind {
    match (cfg.rank, cfg.mode) {
        (Rank::Full, _) => SolverKind::Full,
        (Rank::Fixed(_), InitMode::FactoredInit) => SolverKind::Factored,
        (Rank::Fixed(rank), InitMode::Standard) => SolverKind::LowRank {
            rank,
            bias_mode: cfg.bias_mode,
            refresh: cfg.basis_refresh,
        },
    }
}

pub fn run_settings(cfg: &ExperimentConfig, exec: Execution) -> Result<RunSettings, CliError> {
    Ok(RunSettings {
        op: cfg
            .operator()
            .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?,
        grid: build_grid(cfg),
        dt: cfg.dt,
        steps: cfg.steps,
        solver: solver_kind(cfg),
        regularization: cfg.regularization,
        snapshots: cfg.snapshots,
        exec,
    })
}

/// Outcome of one run; `error` is set when the run stopped early.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub output: RunOutput,
    pub fit: Option<FitReport>,
    pub param_count: usize,
    pub error: Option<EvolveError>,
    pub dir: PathBuf,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs from a prepared start and writes the run directory. Evolution
/// failures are reported in the result, after partial outputs are written.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    prepared: Prepared,
    dir: &Path,
    exec: Execution,
) -> Result<RunReport, CliError> {
    cfg.validate()?;
    let settings = run_settings(cfg, exec)?;
    let param_count = prepared.state.network().param_count();
    if let Some(fit) = &prepared.fit {
        if !(fit.rms <= cfg.fit_gate) {
            return Err(CliError::FitGate {
                rms: fit.rms,
                gate: cfg.fit_gate,
            });
        }
    }
    let (output, error) = match run(prepared.state, &settings) {
        Ok(out) => (out, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    let report = RunReport {
        config: cfg.clone(),
        output,
        fit: prepared.fit,
        param_count,
        error,
        dir: dir.to_path_buf(),
    };
    write_run_dir(&report, &settings.grid)?;
    Ok(report)
}

pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, exec: Execution) -> Result<RunReport, CliError> {
    let prepared = prepare_initial(cfg)?;
    run_prepared(cfg, prepared, dir, exec)
}

fn write_run_dir(report: &RunReport, grid: &CollocationGrid) -> Result<(), CliError> {
    let dir = &report.dir;
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps).map_err(io_err(&snaps))?;
    let cfg = &report.config;
    let path = dir.join("config.ini");
    fs::write(&path, cfg.to_ini()).map_err(io_err(&path))?;
    let path = dir.join("diagnostics.csv");
    output::write_diagnostics(&path, &report.output.records).map_err(io_err(&path))?;
    let q = cfg.output_dim();
    for s in &report.output.snapshots {
        let path = snaps.join(output::snapshot_file_name(s.step));
        output::write_snapshot(&path, grid, q, s).map_err(io_err(&path))?;
    }
    let path = dir.join("summary.csv");
    output::write_key_values(&path, &summary_fields(report)).map_err(io_err(&path))
}

fn summary_fields(report: &RunReport) -> Vec<(&'static str, String)> {
    let cfg = &report.config;
    let out = &report.output;
    let f = output::fmt_f64;
    let status = match &report.error {
        None => "ok".to_string(),
        Some(e) => format!("failed: {}", e.to_string().replace(',', ";")),
    };
    let energy_label = cfg.operator().map(|op| op.energy_label()).unwrap_or("unknown");
    vec![
        ("experiment", cfg.experiment.name().to_string()),
        ("energy_functional", energy_label.to_string()),
        ("rank", cfg.rank.label()),
        (
            "mode",
            match cfg.mode {
                InitMode::Standard => "standard".into(),
                InitMode::FactoredInit => "factored_init".into(),
            },
        ),
        ("seed", cfg.seed.to_string()),
        ("dim", cfg.dim.to_string()),
        ("points_per_dim", cfg.points.to_string()),
        ("dt", f(cfg.dt)),
        ("steps", cfg.steps.to_string()),
        ("steps_completed", out.steps_completed.to_string()),
        ("scale", f(cfg.scale)),
        ("lambda", config::lambda_label(cfg.regularization)),
        ("param_count", report.param_count.to_string()),
        (
            "gamma_dim",
            out.records.last().map_or(0, |r| r.gamma_dim).to_string(),
        ),
        ("fit_rms", report.fit.as_ref().map_or("".into(), |r| f(r.rms))),
        ("final_time", f(out.steps_completed as f64 * cfg.dt)),
        ("final_energy", f(out.final_energy)),
        ("final_residual", f(out.final_residual())),
        ("total_seconds", f(out.total_seconds())),
        ("status", status),
    ]
}

/// One line of `sweep_summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub rank: Rank,
    pub status: String,
    pub l2_error: f64,
    pub linf_error: f64,
    pub total_seconds: f64,
    pub gamma_dim: usize,
    pub final_energy: f64,
}

/// `(L2, L∞)` difference of two point-major fields on `grid`.
pub fn field_errors(grid: &CollocationGrid, a: &[f64], b: &[f64]) -> (f64, f64) {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let linf = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ((sq * grid.cell_volume()).sqrt(), linf)
}

/// Runs the full model and every rank in `ranks`, each in its own
/// subdirectory (`full`, `rank_<r>`), and writes `sweep_summary.csv`.
/// A failing rank is recorded and the sweep continues.
pub fn run_rank_sweep(
    cfg: &ExperimentConfig,
    ranks: &[usize],
    dir: &Path,
    exec: Execution,
) -> Result<Vec<SweepEntry>, CliError> {
    if ranks.is_empty() {
        return Err(CliError::Usage("rank sweep needs at least one rank".into()));
    }
    if ranks.contains(&0) {
        return Err(CliError::Usage("ranks must be positive".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    // the fitted start does not depend on the rank in standard mode
    let shared = match cfg.mode {
        InitMode::Standard => Some(prepare_initial(cfg)?),
        InitMode::FactoredInit => None,
    };
    let grid = build_grid(cfg);
    let mut entries = Vec::with_capacity(ranks.len() + 1);
    let mut reference: Option<Vec<f64>> = None;
    for rank in std::iter::once(Rank::Full).chain(ranks.iter().map(|&r| Rank::Fixed(r))) {
        let rcfg = ExperimentConfig {
            rank,
            ..cfg.clone()
        };
        let sub = dir.join(match rank {
            Rank::Full => "full".to_string(),
            Rank::Fixed(r) => format!("rank_{r}"),
        });
        let prepared = match &shared {
            Some(p) => Ok(p.clone()),
            None => prepare_initial(&rcfg),
        };
        let result = prepared.and_then(|p| run_prepared(&rcfg, p, &sub, exec));
        let entry = match result {
            Ok(report) => {
                let last = report.output.final_snapshot().map(|s| s.values.clone());
                if rank == Rank::Full && report.succeeded() {
                    reference = last.clone();
                }
                let (l2, linf) = match (&reference, &last) {
                    (Some(r), Some(v)) if report.succeeded() => field_errors(&grid, v, r),
                    _ => (f64::NAN, f64::NAN),
                };
                SweepEntry {
                    rank,
                    status: match &report.error {
                        None => "ok".into(),
                        Some(e) => format!("failed: {}", e.to_string().replace(',', ";")),
                    },
                    l2_error: l2,
                    linf_error: linf,
                    total_seconds: report.output.total_seconds(),
                    gamma_dim: report.output.records.last().map_or(0, |r| r.gamma_dim),
                    final_energy: report.output.final_energy,
                }
            }
            Err(e) if matches!(e, CliError::Io { .. } | CliError::Config(_)) => return Err(e),
            Err(e) => SweepEntry {
                rank,
                status: format!("failed: {}", e.to_string().replace(',', ";")),
                l2_error: f64::NAN,
                linf_error: f64::NAN,
                total_seconds: 0.0,
                gamma_dim: 0,
                final_energy: f64::NAN,
            },
        };
        entries.push(entry);
    }
    let path = dir.join("sweep_summary.csv");
    let mut text = format!("{}\n", output::SWEEP_HEADER);
    for e in &entries {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.rank.label(),
            e.status,
            output::fmt_f64(e.l2_error),
            output::fmt_f64(e.linf_error),
            output::fmt_f64(e.total_seconds),
            e.gamma_dim,
            output::fmt_f64(e.final_energy)
        ));
    }
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(entries)
}

/// One line per preset for `lrednn presets`.
pub fn preset_table() -> String {
    let mut s = String::from("name            equation    grid      dt       steps  hidden   ranks\n");
    for e in Experiment::PRESETS {
        let c = ExperimentConfig::preset(e);
        let grid = vec![c.points.to_string(); c.dim].join("x");
        let hidden: Vec<String> = c.hidden.iter().map(|w| w.to_string()).collect();
        let ranks: Vec<String> = e
            .reference_ranks()
            .iter()
            .map(|r| r.to_string())
            .chain(["full".to_string()])
            .collect();
        s.push_str(&format!(
            "{:<15} {:<11} {:<9} {:<8.0e} {:<6} {:<8} {}\n",
            e.name(),
            match c.equation {
                Equation::Heat => "heat",
                Equation::PmeDrift => "pme_drift",
                Equation::AllenCahn => "allen_cahn",
                Equation::Burgers => "burgers",
            },
            grid,
            c.dt,
            c.steps,
            hidden.join(","),
            ranks.join(",")
        ));
    }
    s
}
