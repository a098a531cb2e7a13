//! Parameter velocities and the explicit time loop.
//!
//! Each step evaluates jets and the parameter Jacobian `J` on the grid, the
//! operator values `N`, solves the (possibly reduced) normal equations for
//! the velocity and advances the parameters by forward Euler.

use std::time::Instant;

use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::{norm2, solve_normal_system, DenseMatrix, LinalgError, NormalSolveMethod};
use crate::network::{CollocationGrid, MlpNetwork, NetworkError, ParameterVector};
use crate::pde::{PdeError, PdeOperator};
use crate::subspace::{
    build_subspace, BiasMode, FactoredNetwork, SubspaceBasis, SubspaceError, VelocityCoefficients,
    VelocityMap,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{what}: {rows} rows against {len} values")]
    Shape {
        what: &'static str,
        rows: usize,
        len: usize,
    },
    #[error("time step must be positive and finite, got {0}")]
    TimeStep(f64),
    #[error("non-finite {quantity} at step {step}")]
    NonFinite { quantity: &'static str, step: usize },
    #[error("factored solver needs a factored initial state")]
    MissingFactors,
}

/// Tikhonov shift for the normal equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// `λ = c · trace(G) / dim(G)`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Relative(1e-8)
    }
}

impl Regularization {
    pub const NONE: Self = Regularization::Absolute(0.0);

    pub fn lambda(&self, g: &DenseMatrix) -> f64 {
        match *self {
            Regularization::Relative(c) => c * g.trace() / g.rows().max(1) as f64,
            Regularization::Absolute(l) => l,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VelocitySolution {
    /// Reduced coefficients; `None` for the full solve.
    pub gamma: Option<Vec<f64>>,
    pub w_dot: ParameterVector,
    /// `‖J·Ẇ − N‖₂`.
    pub residual_norm: f64,
    pub system_dim: usize,
    pub condition_estimate: f64,
    pub lambda: f64,
    pub method: NormalSolveMethod,
}

fn check_rows(j: &DenseMatrix, n: &[f64]) -> Result<(), EvolveError> {
    if j.rows() != n.len() {
        return Err(EvolveError::Shape {
            what: "jacobian",
            rows: j.rows(),
            len: n.len(),
        });
    }
    Ok(())
}

fn residual(j: &DenseMatrix, w_dot: &[f64], n: &[f64]) -> f64 {
    let mut r = j.matvec(w_dot);
    for (ri, ni) in r.iter_mut().zip(n) {
        *ri -= ni;
    }
    norm2(&r)
}

/// Solves `(AᵀA + λI) x = Aᵀ n`.
fn normal_solve(
    a: &DenseMatrix,
    n: &[f64],
    reg: Regularization,
) -> Result<(Vec<f64>, f64, f64, NormalSolveMethod), EvolveError> {
    let g = a.gram();
    let rhs = a.tr_matvec(n);
    let lambda = reg.lambda(&g);
    let sol = solve_normal_system(&g, &rhs, lambda)?;
    Ok((sol.x, lambda, sol.condition_estimate, sol.method))
}

/// `JᵀJ Ẇ = JᵀN` over all parameters.
pub fn solve_velocity_full(
    j: &DenseMatrix,
    n: &[f64],
    reg: Regularization,
) -> Result<VelocitySolution, EvolveError> {
    check_rows(j, n)?;
    let (x, lambda, cond, method) = normal_solve(j, n, reg)?;
    Ok(VelocitySolution {
        residual_norm: residual(j, &x, n),
        system_dim: x.len(),
        w_dot: x.into(),
        gamma: None,
        condition_estimate: cond,
        lambda,
        method,
    })
}

/// Reduced solve through an arbitrary velocity map.
pub fn solve_velocity_mapped(
    j: &DenseMatrix,
    n: &[f64],
    map: &VelocityMap,
    reg: Regularization,
    exec: Execution,
) -> Result<VelocitySolution, EvolveError> {
    check_rows(j, n)?;
    let jl = map.assemble(j, exec)?;
    let (gamma, lambda, cond, method) = normal_solve(&jl, n, reg)?;
    let w_dot = map.apply(&gamma)?;
    Ok(VelocitySolution {
        residual_norm: residual(j, w_dot.as_slice(), n),
        system_dim: gamma.len(),
        w_dot,
        gamma: Some(gamma),
        condition_estimate: cond,
        lambda,
        method,
    })
}

/// `(JL)ᵀ(JL) γ = (JL)ᵀN`, `Ẇ = L γ` with `L` from the SVD basis.
pub fn solve_velocity_lowrank(
    j: &DenseMatrix,
    n: &[f64],
    basis: &SubspaceBasis,
    reg: Regularization,
    exec: Execution,
) -> Result<VelocitySolution, EvolveError> {
    solve_velocity_mapped(j, n, &basis.map, reg, exec)
}

/// Reduced solve in the factor velocities of a factored network.
pub fn solve_velocity_factored(
    j: &DenseMatrix,
    n: &[f64],
    factored: &FactoredNetwork,
    reg: Regularization,
    exec: Execution,
) -> Result<(VelocityCoefficients, VelocitySolution), EvolveError> {
    let map = factored.velocity_map();
    let sol = solve_velocity_mapped(j, n, &map, reg, exec)?;
    let coeffs = map.split(sol.gamma.as_deref().expect("reduced solve"))?;
    Ok((coeffs, sol))
}

/// `W ← W + Δt·Ẇ`.
pub fn euler_step(
    net: &MlpNetwork,
    w_dot: &ParameterVector,
    dt: f64,
) -> Result<MlpNetwork, EvolveError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EvolveError::TimeStep(dt));
    }
    if w_dot.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(EvolveError::NonFinite {
            quantity: "velocity",
            step: 0,
        });
    }
    let mut params = net.parameters();
    if params.len() != w_dot.len() {
        return Err(NetworkError::ParameterLength {
            expected: params.len(),
            found: w_dot.len(),
        }
        .into());
    }
    for (p, v) in params.as_mut_slice().iter_mut().zip(w_dot.as_slice()) {
        *p += dt * v;
    }
    Ok(net.with_parameters(&params)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Full,
    LowRank {
        rank: usize,
        bias_mode: BiasMode,
        /// Rebuild the SVD basis every this many steps.
        refresh: usize,
    },
    Factored,
}

#[derive(Debug, Clone)]
pub enum InitialState {
    Network(MlpNetwork),
    Factored(FactoredNetwork),
}

impl InitialState {
    pub fn network(&self) -> &MlpNetwork {
        match self {
            InitialState::Network(n) => n,
            InitialState::Factored(f) => &f.net,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub op: PdeOperator,
    pub grid: CollocationGrid,
    pub dt: f64,
    pub steps: usize,
    pub solver: SolverKind,
    pub regularization: Regularization,
    /// Snapshots between the initial and final ones.
    pub snapshots: usize,
    pub exec: Execution,
}

/// Diagnostics of the state at `t_n` and of the step leaving it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub residual: f64,
    /// Basis build, solve and Euler update.
    pub step_seconds: f64,
    pub total_seconds: f64,
    pub gamma_dim: usize,
    /// Ranks of the factored layers after the step (empty otherwise).
    pub factored_ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    /// Point-major values on the grid.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub network: MlpNetwork,
    /// Energy of the last state reached.
    pub final_energy: f64,
    pub steps_completed: usize,
}

impl RunOutput {
    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.total_seconds)
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.residual)
    }
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: EvolveError,
    pub partial: RunOutput,
}

/// Steps at which intermediate snapshots are taken.
pub fn snapshot_stride(steps: usize, snapshots: usize) -> usize {
    if snapshots == 0 {
        steps.max(1) + 1
    } else {
        (steps / snapshots).max(1)
    }
}

enum State {
    Plain(MlpNetwork),
    Factored(FactoredNetwork),
}

impl State {
    fn net(&self) -> &MlpNetwork {
        match self {
            State::Plain(n) => n,
            State::Factored(f) => &f.net,
        }
    }
}

/// Integrates from `init` for `settings.steps` forward-Euler steps.
pub fn run(init: InitialState, settings: &RunSettings) -> Result<RunOutput, RunFailure> {
    let mut state = match (init, settings.solver) {
        (InitialState::Factored(f), SolverKind::Factored) => State::Factored(f),
        (InitialState::Factored(f), _) => State::Plain(f.net),
        (InitialState::Network(n), SolverKind::Factored) => {
            return Err(RunFailure {
                error: EvolveError::MissingFactors,
                partial: empty_output(n),
            })
        }
        (InitialState::Network(n), _) => State::Plain(n),
    };
    let s = settings;
    let stride = snapshot_stride(s.steps, s.snapshots);
    let mut records = Vec::with_capacity(s.steps);
    let mut snapshots = Vec::new();
    let mut basis: Option<SubspaceBasis> = None;
    let mut total = 0.0;
    let mut last_energy = f64::NAN;

    let fail = |error: EvolveError, records: Vec<StepRecord>, snapshots: Vec<Snapshot>, state: &State, energy: f64, done: usize| RunFailure {
        error,
        partial: RunOutput {
            records,
            snapshots,
            network: state.net().clone(),
            final_energy: energy,
            steps_completed: done,
        },
    };
    if !(s.dt > 0.0 && s.dt.is_finite()) {
        return Err(fail(EvolveError::TimeStep(s.dt), records, snapshots, &state, f64::NAN, 0));
    }

    for step in 0..=s.steps {
        let time = step as f64 * s.dt;
        let eval = state.net().evaluate_grid(&s.grid, s.exec);
        let values = eval.values();
        let energy = match s.op.energy(&s.grid, &values, &eval.gradients()) {
            Ok(e) if e.is_finite() => e,
            Ok(_) => {
                let err = EvolveError::NonFinite {
                    quantity: "energy",
                    step,
                };
                return Err(fail(err, records, snapshots, &state, f64::NAN, step));
            }
            Err(e) => return Err(fail(e.into(), records, snapshots, &state, f64::NAN, step)),
        };
        last_energy = energy;
        if step == s.steps || step % stride == 0 {
            snapshots.push(Snapshot { step, time, values });
        }
        if step == s.steps {
            break;
        }
        let n = match s.op.evaluate_grid(&s.grid, &eval.jets, s.exec) {
            Ok(n) => n,
            Err(e) => return Err(fail(e.into(), records, snapshots, &state, energy, step)),
        };

        let started = Instant::now();
        let outcome = advance(&mut state, &mut basis, &eval.jacobian, &n, step, s);
        let elapsed = started.elapsed().as_secs_f64();
        let sol = match outcome {
            Ok(sol) => sol,
            Err(e) => return Err(fail(e, records, snapshots, &state, energy, step)),
        };
        total += elapsed;
        records.push(StepRecord {
            step,
            time,
            energy,
            residual: sol.residual_norm,
            step_seconds: elapsed,
            total_seconds: total,
            gamma_dim: sol.system_dim,
            factored_ranks: match &state {
                State::Factored(f) => match f.numerical_ranks() {
                    Ok(r) => r,
                    Err(e) => return Err(fail(e.into(), records, snapshots, &state, energy, step)),
                },
                State::Plain(_) => Vec::new(),
            },
        });
    }

    let net = state.net().clone();
    Ok(RunOutput {
        records,
        snapshots,
        network: net,
        final_energy: last_energy,
        steps_completed: s.steps,
    })
}

fn advance(
    state: &mut State,
    basis: &mut Option<SubspaceBasis>,
    j: &DenseMatrix,
    n: &[f64],
    step: usize,
    s: &RunSettings,
) -> Result<VelocitySolution, EvolveError> {
    let non_finite = |sol: &VelocitySolution| sol.w_dot.as_slice().iter().any(|v| !v.is_finite());
    match state {
        State::Plain(net) => {
            let sol = match s.solver {
                SolverKind::Full | SolverKind::Factored => {
                    solve_velocity_full(j, n, s.regularization)?
                }
                SolverKind::LowRank {
                    rank,
                    bias_mode,
                    refresh,
                } => {
                    if basis.is_none() || step % refresh.max(1) == 0 {
                        *basis = Some(build_subspace(net, rank, bias_mode)?);
                    }
                    let b = basis.as_ref().expect("basis built above");
                    solve_velocity_lowrank(j, n, b, s.regularization, s.exec)?
                }
            };
            if non_finite(&sol) {
                return Err(EvolveError::NonFinite {
                    quantity: "velocity",
                    step,
                });
            }
            *net = euler_step(net, &sol.w_dot, s.dt)?;
            Ok(sol)
        }
        State::Factored(f) => {
            let (coeffs, sol) = solve_velocity_factored(j, n, f, s.regularization, s.exec)?;
            if non_finite(&sol) {
                return Err(EvolveError::NonFinite {
                    quantity: "velocity",
                    step,
                });
            }
            f.step(&coeffs, s.dt)?;
            Ok(sol)
        }
    }
}

fn empty_output(net: MlpNetwork) -> RunOutput {
    RunOutput {
        records: Vec::new(),
        snapshots: Vec::new(),
        network: net,
        final_energy: f64::NAN,
        steps_completed: 0,
    }
}
