//! Command drivers behind the CLI: simulate, audit, converge and oracle.
//!
//! Every command reads one config file and writes plain UTF-8 CSV and text
//! reports into the output directory. Exit codes: 0 on success, 1 on
//! configuration problems, 2 when the integration aborted (partial outputs
//! are still written).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::audit::audit_assumptions;
use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::grid::{project_initial, NumberDensity, Projection};
use crate::integrator::{self, RunResult, RunStatus};
use crate::kernels::KernelForm;
use crate::oracles::{
    self, piecewise_l1_distance, smoluchowski_constant_analytic, smoluchowski_constant_m0,
    StudyConfig,
};

/// CSV schema version stamped on every output file.
pub const CSV_SCHEMA_HEADER: &str = "# collide-pbe v1";

/// Exit code for a run that aborted mid-integration.
pub const EXIT_ABORTED: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Audit,
    Converge,
    Oracle,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub command: Command,
    pub config: PathBuf,
    /// Overrides `output.dir` from the config when set.
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Execute a command. `Ok` carries the process exit code for outcomes that
/// still produced outputs; `Err` is for configuration and I/O failures.
pub fn execute(opts: &RunOptions) -> Result<i32> {
    if let Some(threads) = opts.threads.or_else(threads_from_env) {
        // A second initialization in the same process keeps the first pool;
        // that is fine for a CLI invocation.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let cfg = parse_config(&opts.config)?;
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&out_dir)?;

    match opts.command {
        Command::Simulate => simulate(&cfg, &out_dir),
        Command::Audit => audit(&cfg, &out_dir),
        Command::Converge => converge(&cfg, &out_dir),
        Command::Oracle => oracle(&cfg, &out_dir),
    }
}

fn threads_from_env() -> Option<usize> {
    std::env::var("COLLIDE_PBE_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
}

fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let started = Instant::now();
    let grid = cfg.build_grid()?;
    let ws = cfg.build_workspace(grid.clone())?;
    if cfg.dump_tables {
        ws.dump_tables(&out_dir.join("tables"))?;
    }
    let projection = project_initial(&cfg.init, &grid)?;
    let result = integrator::run(&projection.density, &ws, &cfg.time)?;

    write_moments_csv(&out_dir.join("moments.csv"), &result)?;
    let snap_dir = out_dir.join("snapshots");
    std::fs::create_dir_all(&snap_dir)?;
    for snapshot in &result.snapshots {
        write_snapshot_csv(&snap_dir.join(format!("t{}.csv", snapshot.time())), snapshot)?;
    }

    let mut report = String::new();
    writeln!(report, "command: simulate").unwrap();
    describe_run(&mut report, cfg, &projection, &result, started.elapsed().as_secs_f64());
    writeln!(report, "interaction_pairs: {}", ws.pairs().len()).unwrap();
    writeln!(
        report,
        "redistribution_fallback_pairs: {}",
        ws.fallback_pair_count()
    )
    .unwrap();

    let exit = match &result.status {
        RunStatus::Completed => 0,
        RunStatus::StiffnessAbort { t, detail } => {
            // Preserve the last accepted state for post-mortem inspection.
            write_snapshot_csv(&snap_dir.join("abort_state.csv"), &result.final_state)?;
            writeln!(report, "abort_time: {t:.12e}").unwrap();
            writeln!(report, "abort_detail: {detail}").unwrap();
            EXIT_ABORTED
        }
    };
    std::fs::write(out_dir.join("report.txt"), report)?;
    Ok(exit)
}

fn audit(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let report = audit_assumptions(&cfg.kernel, &cfg.probability, &cfg.breakup, &cfg.audit);
    let mut text = String::new();
    writeln!(text, "command: audit").unwrap();
    writeln!(text, "kernel_compliant: {}", cfg.kernel.is_growth_compliant()).unwrap();
    writeln!(text, "allow_noncompliant: {}", cfg.allow_noncompliant).unwrap();
    write!(text, "{report}").unwrap();
    print!("{text}");
    std::fs::write(out_dir.join("report.txt"), text)?;
    Ok(0)
}

fn converge(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let started = Instant::now();
    let study_cfg = StudyConfig {
        zmin: cfg.grid_zmin,
        reference_cells: cfg.grid_cells,
        t_end: cfg.time.t_end,
        steps: cfg.converge_steps,
    };
    let study = oracles::truncation_convergence_study(
        &cfg.kernel,
        &cfg.probability,
        &cfg.breakup,
        &cfg.init,
        &study_cfg,
        &cfg.converge_n,
    )?;

    let mut csv = String::new();
    writeln!(csv, "{CSV_SCHEMA_HEADER}").unwrap();
    writeln!(csv, "case,n,cells,metric,value").unwrap();
    for row in &study.rows {
        writeln!(
            csv,
            "truncation,{},{},l1_distance_to_n{},{:.17e}",
            row.n, row.cells, study.reference_n, row.l1_distance
        )
        .unwrap();
    }
    std::fs::write(out_dir.join("truncation_study.csv"), csv)?;

    let mut report = String::new();
    writeln!(report, "command: converge").unwrap();
    writeln!(report, "reference_n: {}", study.reference_n).unwrap();
    writeln!(report, "t_end: {}", cfg.time.t_end).unwrap();
    writeln!(report, "fixed_steps: {}", cfg.converge_steps).unwrap();
    writeln!(report, "monotone: {}", study.monotone).unwrap();
    for row in &study.rows {
        writeln!(
            report,
            "l1_distance[n={}]: {:.6e}",
            row.n, row.l1_distance
        )
        .unwrap();
    }
    writeln!(report, "runtime_seconds: {:.3}", started.elapsed().as_secs_f64()).unwrap();
    print!("{report}");
    std::fs::write(out_dir.join("report.txt"), report)?;
    Ok(0)
}

/// Benchmark against the constant-kernel closed form. The config must
/// actually describe that case; anything else is rejected up front.
fn oracle(cfg: &RunConfig, out_dir: &Path) -> Result<i32> {
    let mut premise = Vec::new();
    match cfg.kernel.form() {
        KernelForm::Constant { c: 1.0 } => {}
        other => premise.push(format!(
            "oracle requires kernel.form = constant with kernel.c = 1, got {other:?}"
        )),
    }
    if cfg.probability != crate::kernels::CoalescenceProbability::One {
        premise.push("oracle requires probability.form = one".into());
    }
    match cfg.init {
        crate::grid::InitialCondition::Exponential { scale: 1.0 } => {}
        _ => premise.push("oracle requires init.family = exponential with init.scale = 1".into()),
    }
    if !premise.is_empty() {
        return Err(Error::Config(premise));
    }

    let started = Instant::now();
    let grid = cfg.build_grid()?;
    let ws = cfg.build_workspace(grid.clone())?;
    let projection = project_initial(&cfg.init, &grid)?;
    let result = integrator::run(&projection.density, &ws, &cfg.time)?;
    if result.is_aborted() {
        return Err(Error::contract("oracle run aborted; tighten time settings"));
    }

    let t = cfg.time.t_end;
    let exact = analytic_state(&grid, t)?;
    let l1_error = piecewise_l1_distance(&result.final_state, &exact, grid.domain_max());
    let exact_mass: f64 = exact.moment(1.0)?;
    let m0 = result.final_state.moment(0.0)?;
    let m0_exact = smoluchowski_constant_m0(t)?;

    write_moments_csv(&out_dir.join("moments.csv"), &result)?;
    let mut csv = String::new();
    writeln!(csv, "{CSV_SCHEMA_HEADER}").unwrap();
    writeln!(csv, "pivot,numeric_density,analytic_density").unwrap();
    for (k, v) in result.final_state.values().iter().enumerate() {
        writeln!(
            csv,
            "{:.17e},{:.17e},{:.17e}",
            grid.pivot(k),
            v,
            smoluchowski_constant_analytic(grid.pivot(k), t)?
        )
        .unwrap();
    }
    std::fs::write(out_dir.join("comparison.csv"), csv)?;

    let mut report = String::new();
    writeln!(report, "command: oracle").unwrap();
    writeln!(report, "case: constant-kernel coagulation vs closed form").unwrap();
    writeln!(report, "t_end: {t}").unwrap();
    writeln!(report, "l1_density_error: {:.6e}", l1_error / exact_mass.max(1e-300)).unwrap();
    writeln!(report, "l1_density_error_absolute: {l1_error:.6e}").unwrap();
    writeln!(report, "m0_numeric: {m0:.12}").unwrap();
    writeln!(report, "m0_analytic: {m0_exact:.12}").unwrap();
    writeln!(
        report,
        "m0_relative_error: {:.6e}",
        (m0 - m0_exact).abs() / m0_exact
    )
    .unwrap();
    writeln!(report, "runtime_seconds: {:.3}", started.elapsed().as_secs_f64()).unwrap();
    print!("{report}");
    std::fs::write(out_dir.join("report.txt"), report)?;
    Ok(0)
}

/// Analytic constant-kernel density projected onto the grid for comparisons.
fn analytic_state(grid: &std::sync::Arc<crate::grid::VolumeGrid>, t: f64) -> Result<NumberDensity> {
    let values: Result<Vec<f64>> = grid
        .pivots()
        .iter()
        .map(|&p| smoluchowski_constant_analytic(p, t))
        .collect();
    let mut state = NumberDensity::from_values(grid.clone(), values?, t)?;
    state.set_time(t);
    Ok(state)
}

fn describe_run(
    report: &mut String,
    cfg: &RunConfig,
    projection: &Projection,
    result: &RunResult,
    runtime: f64,
) {
    let rows = &result.series.rows;
    let final_drift = rows.last().map_or(0.0, |r| r.mass_drift);
    let max_drift = rows.iter().fold(0.0f64, |m, r| m.max(r.mass_drift.abs()));
    let clips: u64 = result.reports.iter().map(|r| r.negativity_clips).sum();
    let rejected: u64 = result.reports.iter().map(|r| r.rejected_steps).sum();
    writeln!(report, "status: {}", match result.status {
        RunStatus::Completed => "completed",
        RunStatus::StiffnessAbort { .. } => "aborted",
    })
    .unwrap();
    writeln!(report, "grid_cells: {}", cfg.grid_cells).unwrap();
    writeln!(report, "grid_window: ({}, {})", cfg.grid_zmin, cfg.grid_n).unwrap();
    writeln!(report, "kernel_compliant: {}", cfg.kernel.is_growth_compliant()).unwrap();
    writeln!(report, "accepted_steps: {}", result.reports.len()).unwrap();
    writeln!(report, "rejected_steps: {rejected}").unwrap();
    writeln!(report, "negativity_clips: {clips}").unwrap();
    writeln!(report, "clipped_mass_total: {:.6e}", result.clipped_mass_total).unwrap();
    writeln!(report, "final_mass_drift: {final_drift:.6e}").unwrap();
    writeln!(report, "max_abs_mass_drift: {max_drift:.6e}").unwrap();
    writeln!(
        report,
        "unresolved_mass_below_zmin: {:.6e}",
        projection.unresolved_mass_below
    )
    .unwrap();
    writeln!(
        report,
        "unresolved_mass_above_n: {:.6e}",
        projection.unresolved_mass_above
    )
    .unwrap();
    writeln!(report, "growth_warning: {}", result.growth_warning).unwrap();
    writeln!(report, "runtime_seconds: {runtime:.3}").unwrap();
}

fn write_moments_csv(path: &Path, result: &RunResult) -> Result<()> {
    let mut csv = String::new();
    writeln!(csv, "{CSV_SCHEMA_HEADER}").unwrap();
    writeln!(csv, "t,M0,M1,M2,norm_1plusz,mass_drift,dt").unwrap();
    for row in &result.series.rows {
        writeln!(
            csv,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            row.t, row.m0, row.m1, row.m2, row.norm_one_plus_z, row.mass_drift, row.dt
        )
        .unwrap();
    }
    std::fs::write(path, csv)?;
    Ok(())
}

fn write_snapshot_csv(path: &Path, state: &NumberDensity) -> Result<()> {
    let mut csv = String::new();
    writeln!(csv, "{CSV_SCHEMA_HEADER}").unwrap();
    writeln!(csv, "time,pivot,density").unwrap();
    let grid = state.grid();
    for (k, v) in state.values().iter().enumerate() {
        writeln!(csv, "{:.17e},{:.17e},{:.17e}", state.time(), grid.pivot(k), v).unwrap();
    }
    std::fs::write(path, csv)?;
    Ok(())
}
