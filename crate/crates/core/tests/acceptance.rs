//! Acceptance report: one PASS/FAIL line per primary criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown.
//! A failing criterion is reported, not raised; the process only exits
//! nonzero when a criterion could not be evaluated at all.

mod common;

use std::fs;
use std::time::Instant;

use lrednn::cli::output::{read_diagnostics, strip_timing};
use lrednn::cli::{
    self, field_errors, prepare_initial, run_rank_sweep, ExperimentConfig, Experiment, Prepared,
    Rank,
};
use lrednn::evolve::{
    run, solve_velocity_full, solve_velocity_lowrank, Regularization, RunOutput, SolverKind,
};
use lrednn::exec::Execution;
use lrednn::linalg::{lstsq_residual, norm2, DenseMatrix};
use lrednn::network::{CollocationGrid, MlpNetwork};
use lrednn::pde::exact_heat_1d;
use lrednn::subspace::{assemble_jl, build_subspace, BiasMode};

use common::*;

type Outcome = Result<(bool, String), String>;

struct Report {
    lines: Vec<(String, Outcome)>,
}

impl Report {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match &outcome {
            Ok((ok, detail)) => println!(
                "[{}] {name} ({secs:.1} s): {detail}",
                if *ok { "PASS" } else { "FAIL" }
            ),
            Err(e) => println!("[ERROR] {name} ({secs:.1} s): {e}"),
        }
        self.lines.push((name.to_string(), outcome));
    }
}

fn preset(e: Experiment, scale: f64) -> ExperimentConfig {
    let cfg = ExperimentConfig::preset(e);
    if scale == 1.0 {
        cfg
    } else {
        cfg.scaled(scale).expect("valid scale")
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn evolve(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<RunOutput, String> {
    let settings = cli::run_settings(cfg, Execution::default()).map_err(err)?;
    run(prepared.state.clone(), &settings).map_err(|f| f.error.to_string())
}

fn worst_increase(out: &RunOutput) -> (f64, f64) {
    let e: Vec<f64> = out.records.iter().map(|r| r.energy).collect();
    let worst = e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    (worst, 1e-6 * e[0].abs())
}

fn oracle_suite() -> Outcome {
    let mut jac = 0.0_f64;
    for (dim, hidden, q, n, seed) in [(1, [10, 10], 1, 16, 2), (2, [6, 5], 2, 5, 9), (2, [8, 6], 1, 6, 4)] {
        let net = seeded_net_with_biases(dim, &hidden, q, seed);
        jac = jac.max(jacobian_fd_error(&net, &CollocationGrid::unit_box(dim, n).map_err(err)?, 1e-6));
    }
    let (mut first, mut second) = (0.0_f64, 0.0_f64);
    for seed in 0..20u64 {
        let (dim, q) = [(1, 1), (2, 1), (1, 1), (2, 2)][seed as usize % 4];
        let net = seeded_net_with_biases(dim, &[12, 9], q, seed);
        for x in sample_points(dim, 10, 100 + seed) {
            let (e1, e2) = jet_fd_errors(&net, &x);
            first = first.max(e1);
            second = second.max(e2);
        }
    }
    let op = operator_oracle_error(200);
    let ok = jac <= 1e-5 && first <= 1e-6 && second <= 1e-4 && op <= 1e-10;
    Ok((
        ok,
        format!(
            "jacobian {jac:.2e} (<= 1e-5), jet first {first:.2e} (<= 1e-6), second {second:.2e} (<= 1e-4), operators {op:.2e} (<= 1e-10)"
        ),
    ))
}

/// First-step system of a prepared benchmark state.
fn first_step(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<(MlpNetwork, DenseMatrix, Vec<f64>), String> {
    let net = prepared.state.network().clone();
    let op = cfg.operator().map_err(err)?;
    let (j, n) = first_step_system(&net, &op, &cli::build_grid(cfg));
    Ok((net, j, n))
}

fn full_rank_equivalence(states: &[(ExperimentConfig, Prepared)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (cfg, prepared) in states {
        let (net, j, n) = first_step(cfg, prepared)?;
        let basis = build_subspace(&net, net.max_rank(), BiasMode::Unconstrained).map_err(err)?;
        let reg = cfg.regularization;
        let full = solve_velocity_full(&j, &n, reg).map_err(err)?.residual_norm;
        let low = solve_velocity_lowrank(&j, &n, &basis, reg, Execution::default()).map_err(err)?.residual_norm;
        let rel = (low - full).abs() / full;
        ok &= rel <= 1e-8;
        // the same comparison on the exact least-squares minimum
        let jl = assemble_jl(&j, &basis, Execution::default()).map_err(err)?;
        let (qf, kf) = lstsq_residual(&j, &n, 1e-12).map_err(err)?;
        let (ql, kl) = lstsq_residual(&jl, &n, 1e-12).map_err(err)?;
        parts.push(format!(
            "{}: solver rel {rel:.2e} | QR rel {:.2e}, /|N| {:.2e}, numerical rank {kf}/{kl}",
            cfg.experiment.name(),
            (ql - qf).abs() / qf,
            (ql - qf).abs() / norm2(&n)
        ));
    }
    Ok((ok, format!("relative residual gap <= 1e-8; {}", parts.join("; "))))
}

fn rank_monotonicity(cfg: &ExperimentConfig, prepared: &Prepared) -> Outcome {
    let (net, j, n) = first_step(cfg, prepared)?;
    let (full, _) = lstsq_residual(&j, &n, 1e-12).map_err(err)?;
    let full_solver = solve_velocity_full(&j, &n, Regularization::NONE).map_err(err)?.residual_norm;
    let mut qr = Vec::new();
    let mut solver = Vec::new();
    for r in 1..=net.max_rank() {
        let basis = build_subspace(&net, r, BiasMode::Unconstrained).map_err(err)?;
        let jl = assemble_jl(&j, &basis, Execution::default()).map_err(err)?;
        qr.push(lstsq_residual(&jl, &n, 1e-12).map_err(err)?.0);
        solver.push(
            solve_velocity_lowrank(&j, &n, &basis, Regularization::NONE, Execution::default())
                .map_err(err)?
                .residual_norm,
        );
    }
    let rise = |v: &[f64], floor: f64| {
        let steps = v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        steps.max(floor - v[v.len() - 1])
    };
    let qr_rise = rise(&qr, full);
    let solver_rise = rise(&solver, full_solver);
    Ok((
        qr_rise <= 1e-10,
        format!(
            "least-squares minimum (pivoted QR) r=1 {:.3e} -> r={} {:.3e}, full {full:.3e}, largest rise {qr_rise:.2e} (<= 1e-10); |N| {:.3e}, rise/|N| {:.1e}; normal-equation pseudo-inverse largest rise {solver_rise:.2e}",
            qr[0],
            qr.len(),
            qr[qr.len() - 1],
            norm2(&n),
            qr_rise / norm2(&n)
        ),
    ))
}

fn heat_validation() -> Outcome {
    let cfg = preset(Experiment::Heat1d, 1.0);
    let prepared = prepare_initial(&cfg).map_err(err)?;
    let fit = prepared.fit.as_ref().map(|f| f.rms).unwrap_or(f64::NAN);
    let out = evolve(&cfg, &prepared)?;
    let grid = cli::build_grid(&cfg);
    let t = cfg.steps as f64 * cfg.dt;
    let exact: Vec<f64> = (0..grid.len()).map(|i| exact_heat_1d(grid.point(i)[0], t, cfg.diffusivity)).collect();
    let last = out.final_snapshot().ok_or("no final snapshot")?;
    let (l2, _) = field_errors(&grid, &last.values, &exact);
    Ok((fit <= 1e-4 && l2 <= 5e-3, format!("fit rms {fit:.2e} (<= 1e-4), final L2 error {l2:.2e} (<= 5e-3) at t={t}")))
}

fn ac1d_reproduction(dir: &std::path::Path) -> Result<(Outcome, RunOutputSummary), String> {
    let cfg = preset(Experiment::Ac1dCase1, 1.0);
    let entries = run_rank_sweep(&cfg, &[1, 2], dir, Execution::default()).map_err(err)?;
    let by = |r: Rank| entries.iter().find(|e| e.rank == r).ok_or("missing sweep entry");
    let (r1, r2) = (by(Rank::Fixed(1))?, by(Rank::Fixed(2))?);
    let full = by(Rank::Full)?;
    if entries.iter().any(|e| e.status != "ok") {
        return Err(format!("sweep failure: {:?}", entries.iter().map(|e| &e.status).collect::<Vec<_>>()));
    }
    let rows = read_diagnostics(&dir.join("full/diagnostics.csv")).map_err(err)?;
    let energies: Vec<f64> = rows.iter().map(|r| r.energy).collect();
    let ok = r2.linf_error <= 5e-2 && r1.linf_error > r2.linf_error;
    let detail = format!(
        "{} points, {} steps: Linf(r=2 - full) {:.2e} (<= 5e-2), Linf(r=1 - full) {:.2e} (> r=2); total time full {:.1} s, r=1 {:.1} s, r=2 {:.1} s",
        cfg.points, cfg.steps, r2.linf_error, r1.linf_error, full.total_seconds, r1.total_seconds, r2.total_seconds
    );
    Ok((Ok((ok, detail)), RunOutputSummary { energies }))
}

struct RunOutputSummary {
    energies: Vec<f64>,
}

fn monotone(e: &[f64]) -> (bool, f64, f64) {
    let worst = e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-6 * e[0].abs();
    (worst <= slack, worst, slack)
}

fn energy_monotonicity(ac1d: &RunOutputSummary, ac2d: &(ExperimentConfig, Prepared)) -> Outcome {
    let (ok1, w1, s1) = monotone(&ac1d.energies);
    let out2 = evolve(&ac2d.0, &ac2d.1)?;
    let (worst2, slack2) = worst_increase(&out2);
    let ok2 = worst2 <= slack2;

    let mut pme = preset(Experiment::PmeDrift, 0.5);
    pme.rank = Rank::Full;
    let full = evolve(&pme, &prepare_initial(&pme).map_err(err)?)?;
    let (wp, sp) = worst_increase(&full);
    pme.rank = Rank::Fixed(3);
    let low = evolve(&pme, &prepare_initial(&pme).map_err(err)?)?;
    let (wl, sl) = worst_increase(&low);
    let pme_ok = wp <= sp;
    Ok((
        ok1 && ok2 && pme_ok,
        format!(
            "AC-1D full: largest rise {w1:.2e} (slack {s1:.2e}) {}; AC-2D full ({}x{}, {} steps): largest rise {worst2:.2e} (slack {slack2:.2e}) {}; PME surrogate full ({} steps): E {:.5} -> {:.5}, largest rise {wp:.2e} (slack {sp:.2e}) {}; PME r=3 (reported only): E {:.5} -> {:.5}, {}",
            pass(ok1),
            ac2d.0.points,
            ac2d.0.points,
            ac2d.0.steps,
            pass(ok2),
            pme.steps,
            full.records[0].energy,
            full.final_energy,
            pass(pme_ok),
            low.records[0].energy,
            low.final_energy,
            if wl <= sl { "monotone" } else { "not monotone" }
        ),
    ))
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "violated"
    }
}

fn mean_step_seconds(cfg: &ExperimentConfig, prepared: &Prepared, steps: usize) -> Result<f64, String> {
    let short = ExperimentConfig { steps, ..cfg.clone() };
    let out = evolve(&short, prepared)?;
    // the first step carries one-time warm-up costs
    let times: Vec<f64> = out.records.iter().skip(1).map(|r| r.step_seconds).collect();
    Ok(times.iter().sum::<f64>() / times.len() as f64)
}

fn runtime_ordering(states: &[(ExperimentConfig, Prepared)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (cfg, full_state) in states {
        let r = cfg.experiment.reference_ranks()[0];
        let low_cfg = ExperimentConfig { rank: Rank::Fixed(r), ..cfg.clone() };
        let low_state = match cfg.mode {
            cli::InitMode::Standard => full_state.clone(),
            cli::InitMode::FactoredInit => prepare_initial(&low_cfg).map_err(err)?,
        };
        let t_full = mean_step_seconds(cfg, full_state, 21)?;
        let t_low = mean_step_seconds(&low_cfg, &low_state, 21)?;
        ok &= t_low < t_full;
        parts.push(format!(
            "{}: r={r} {:.2} ms vs full {:.2} ms",
            cfg.experiment.name(),
            1e3 * t_low,
            1e3 * t_full
        ));
    }
    Ok((ok, format!("mean per-step solve time, smallest rank < full; {}", parts.join("; "))))
}

fn factored_pme() -> Outcome {
    let mut cfg = preset(Experiment::PmeDrift, 0.5);
    cfg.steps = 4000;
    cfg.rank = Rank::Fixed(5);
    let prepared = prepare_initial(&cfg).map_err(err)?;
    let settings = cli::run_settings(&cfg, Execution::default()).map_err(err)?;
    if settings.solver != SolverKind::Factored {
        return Err("preset did not select the factored solver".into());
    }
    let out = run(prepared.state, &settings).map_err(|f| f.error.to_string())?;
    let expected: Vec<usize> = cli::architecture(&cfg)
        .layer_shapes()
        .iter()
        .map(|&(n, m)| 5.min(n).min(m))
        .collect();
    let ranks_ok = out.records.iter().all(|r| r.factored_ranks == expected);
    let finite = out.records.iter().all(|r| r.energy.is_finite()) && out.final_energy.is_finite();
    let ok = out.steps_completed == 4000 && ranks_ok && finite;
    Ok((
        ok,
        format!(
            "{}x{} grid, {} steps completed, layer ranks {:?} at every step: {ranks_ok}, final energy {:.5} finite: {finite}",
            cfg.points, cfg.points, out.steps_completed, expected, out.final_energy
        ),
    ))
}

fn determinism(root: &std::path::Path) -> Outcome {
    let mut burgers = preset(Experiment::BurgersShort, 0.25);
    burgers.rank = Rank::Fixed(4);
    let mut details = Vec::new();
    let mut ok = true;
    for cfg in [preset(Experiment::Heat1d, 1.0), burgers] {
        let name = cfg.experiment.name();
        let (a, b) = (root.join(format!("{name}_a")), root.join(format!("{name}_b")));
        for d in [&a, &b] {
            let report = cli::run_experiment(&cfg, d, Execution::default()).map_err(err)?;
            if let Some(e) = report.error {
                return Err(format!("{name}: {e}"));
            }
        }
        let mut names: Vec<_> = fs::read_dir(a.join("snapshots")).map_err(err)?.map(|e| e.unwrap().file_name()).collect();
        names.sort();
        let same_snaps = names.iter().all(|n| {
            fs::read(a.join("snapshots").join(n)).ok() == fs::read(b.join("snapshots").join(n)).ok()
        });
        let da = read_diagnostics(&a.join("diagnostics.csv")).map_err(err)?;
        let db = read_diagnostics(&b.join("diagnostics.csv")).map_err(err)?;
        let same_diag = strip_timing(&da) == strip_timing(&db);
        ok &= same_snaps && same_diag;
        details.push(format!("{name}: {} snapshot files identical {same_snaps}, diagnostics identical {same_diag}", names.len()));
    }
    Ok((ok, details.join("; ")))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut report = Report { lines: Vec::new() };
    println!("acceptance report ({} threads)", if Execution::default().is_parallel() { "parallel" } else { "sequential" });

    report.check("oracle suite", oracle_suite);

    // fitted (or factored) starting states shared by several criteria
    let t = Instant::now();
    let mut states = Vec::new();
    for e in [Experiment::PmeDrift, Experiment::Ac1dCase1, Experiment::Ac2dCase1, Experiment::BurgersShort] {
        let cfg = preset(e, 0.5);
        match prepare_initial(&cfg) {
            Ok(p) => states.push((cfg, p)),
            Err(e) => println!("[ERROR] preparing {}: {e}", cfg.experiment.name()),
        }
    }
    println!("prepared {} benchmark states at scale 0.5 in {:.1} s", states.len(), t.elapsed().as_secs_f64());
    for (cfg, p) in &states {
        if let Some(f) = &p.fit {
            println!("  {} fit rms {:.2e}", cfg.experiment.name(), f.rms);
        }
    }

    report.check("full-rank equivalence", || full_rank_equivalence(&states));

    let ac1d = preset(Experiment::Ac1dCase1, 1.0);
    let ac1d_state = prepare_initial(&ac1d);
    report.check("rank monotonicity", || {
        let p = ac1d_state.as_ref().map_err(err)?;
        rank_monotonicity(&ac1d, p)
    });

    report.check("heat validation", heat_validation);

    let mut ac1d_energy = None;
    report.check("AC-1D case 1 reproduction", || {
        let (outcome, summary) = ac1d_reproduction(&root.path().join("ac1d_sweep"))?;
        ac1d_energy = Some(summary);
        outcome
    });

    report.check("energy monotonicity", || {
        let ac1d = ac1d_energy.as_ref().ok_or("AC-1D run unavailable")?;
        let ac2d = states
            .iter()
            .find(|(c, _)| c.experiment == Experiment::Ac2dCase1)
            .ok_or("AC-2D state unavailable")?;
        energy_monotonicity(ac1d, ac2d)
    });

    report.check("runtime ordering", || runtime_ordering(&states));
    report.check("factored-path sanity", factored_pme);
    report.check("determinism", || determinism(root.path()));

    let passed = report.lines.iter().filter(|(_, o)| matches!(o, Ok((true, _)))).count();
    let errors = report.lines.iter().filter(|(_, o)| o.is_err()).count();
    println!("{passed}/{} primary criteria pass", report.lines.len());
    if errors > 0 {
        std::process::exit(1);
    }
}
