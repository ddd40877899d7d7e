//! Reference solutions for validating the solver: the constant-kernel
//! analytic density, a literal brute-force transcription of the collision
//! operators for tiny grids, and a truncation self-convergence study.
//!
//! The brute-force evaluator deliberately repeats the redistribution math
//! with plain nested loops and no precomputed tables, so agreement with the
//! workspace operators checks the table assembly, gather ordering and
//! parallel reduction rather than the shared formulas.

use crate::error::{Error, Result};
use crate::grid::{GridSpacing, InitialCondition, NumberDensity, VolumeGrid, project_initial};
use crate::integrator::{self, TimeMethod, TimeStepperConfig};
use crate::kernels::{BreakupDistribution, CoalescenceProbability, CollisionKernel};
use crate::operators::OperatorWorkspace;

/// Analytic density for constant-kernel pure coagulation started from
/// `g0 = exp(-z)`: `g(z, t) = (2 / (2 + t))^2 exp(-2 z / (2 + t))`.
pub fn smoluchowski_constant_analytic(z: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be >= 0, got {t}")));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(format!("volume must be positive, got {z}")));
    }
    let a = 2.0 / (2.0 + t);
    Ok(a * a * (-a * z).exp())
}

/// `M0(t) = 2 / (2 + t)` for the same case.
pub fn smoluchowski_constant_m0(t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be >= 0, got {t}")));
    }
    Ok(2.0 / (2.0 + t))
}

/// Largest grid accepted by [`brute_force_rhs`]; the reference evaluation is
/// cubic in the cell count and exists only to cross-check small cases.
pub const BRUTE_FORCE_MAX_CELLS: usize = 5;

/// Literal evaluation of coagulation gain − collision loss + breakage gain
/// by direct nested loops over ordered pivot pairs.
pub fn brute_force_rhs(
    g: &NumberDensity,
    kernel: &CollisionKernel,
    probability: &CoalescenceProbability,
    breakup: &BreakupDistribution,
) -> Result<Vec<f64>> {
    let grid = g.grid();
    let cells = grid.cells();
    if cells > BRUTE_FORCE_MAX_CELLS {
        return Err(Error::contract(format!(
            "brute-force evaluation is restricted to {BRUTE_FORCE_MAX_CELLS} cells, got {cells}"
        )));
    }
    let pivots = grid.pivots();
    let widths = grid.widths();
    let values = g.values();
    let gain_window = kernel.truncation().min(grid.domain_max());

    let mut rhs = vec![0.0; cells];

    // Collision loss: every represented partner, truncated kernel.
    for k in 0..cells {
        let mut acc = 0.0;
        for j in 0..cells {
            acc += kernel.rate_truncated(pivots[k], pivots[j])? * values[j] * widths[j];
        }
        rhs[k] -= values[k] * acc;
    }

    // Gains over ordered pairs, each with the double-counting factor 1/2.
    let mut row = vec![0.0; cells];
    for i in 0..cells {
        for j in 0..cells {
            let total = pivots[i] + pivots[j];
            if total >= gain_window {
                continue;
            }
            let rate = kernel.rate(pivots[i], pivots[j])?;
            let e = probability.eval(pivots[i], pivots[j]);
            let events = 0.5 * rate * values[i] * widths[i] * values[j] * widths[j];

            let coag_events = e * events;
            if coag_events != 0.0 {
                deposit_merged(pivots, total, |cell, fraction| {
                    rhs[cell] += coag_events * fraction / widths[cell];
                });
            }

            let break_events = (1.0 - e) * events;
            if break_events != 0.0 {
                reference_fragment_row(breakup, grid, total, &mut row);
                for (k, &count) in row.iter().enumerate() {
                    if count != 0.0 {
                        rhs[k] += break_events * count / widths[k];
                    }
                }
            }
        }
    }
    Ok(rhs)
}

/// Fixed-pivot deposit of one merged particle of volume `total`.
fn deposit_merged(pivots: &[f64], total: f64, mut add: impl FnMut(usize, f64)) {
    let last = pivots.len() - 1;
    if total >= pivots[last] {
        add(last, total / pivots[last]);
        return;
    }
    let b = pivots.partition_point(|&p| p <= total);
    let a = b - 1;
    let upper = (total - pivots[a]) / (pivots[b] - pivots[a]);
    let lower = (pivots[b] - total) / (pivots[b] - pivots[a]);
    if lower > 0.0 {
        add(a, lower);
    }
    if upper > 0.0 {
        add(b, upper);
    }
}

/// Reference construction of a fragment redistribution row (per-cell counts
/// for one shattering event of combined volume `total`), written directly
/// from the cell integrals of the spectrum.
fn reference_fragment_row(
    dist: &BreakupDistribution,
    grid: &VolumeGrid,
    total: f64,
    counts: &mut Vec<f64>,
) {
    let pivots = grid.pivots();
    let top = grid
        .locate(total.min(grid.domain_max()))
        .expect("combined pair volume lies inside the window");
    counts.clear();
    counts.resize(grid.cells(), 0.0);

    for k in 0..=top {
        let lo = if k == 0 { 0.0 } else { grid.lower(k) };
        let hi = grid.upper(k).min(total);
        let count = dist.count_integral(total, lo, hi);
        if count <= 0.0 {
            continue;
        }
        let mass = dist.mass_integral(total, lo, hi);
        let mean = mass / count;
        if mean <= pivots[0] {
            counts[0] += mass / pivots[0];
        } else if mean >= pivots[top] {
            counts[top] += mass / pivots[top];
        } else {
            let b = pivots[..=top].partition_point(|&p| p <= mean);
            let a = b - 1;
            let upper_share = (mass - count * pivots[a]) / (pivots[b] - pivots[a]);
            counts[a] += count - upper_share;
            counts[b] += upper_share;
        }
    }

    let raw_count: f64 = counts.iter().sum();
    let raw_mass: f64 = counts.iter().zip(pivots).map(|(c, p)| c * p).sum();
    let target = dist.fragment_count();
    if raw_count <= 0.0 {
        counts.iter_mut().for_each(|c| *c = 0.0);
        counts[top] = total / pivots[top];
        return;
    }
    let spike = if target >= raw_count { 0 } else { top };
    let p_spike = pivots[spike];
    let denom = raw_mass - raw_count * p_spike;
    if denom.abs() <= 1e-12 * raw_mass.abs() {
        let cell = grid
            .locate((raw_mass / raw_count).clamp(grid.zmin(), grid.domain_max()))
            .unwrap_or(top);
        counts.iter_mut().for_each(|c| *c = 0.0);
        counts[cell] = total / pivots[cell];
        return;
    }
    let mu = (total - target * p_spike) / denom;
    let sigma = target - mu * raw_count;
    if mu < 0.0 || sigma < -1e-12 * target {
        counts.iter_mut().for_each(|c| *c = 0.0);
        counts[0] = total / pivots[0];
        return;
    }
    for c in counts.iter_mut() {
        *c *= mu;
    }
    counts[spike] += sigma.max(0.0);
}

/// Configuration of a truncation self-convergence study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Common lower volume cutoff of every grid in the study.
    pub zmin: f64,
    /// Cell count used for the largest truncation volume; smaller windows
    /// get proportionally fewer cells so the edge ratio (and hence the cell
    /// layout on the shared range) stays as close as possible.
    pub reference_cells: usize,
    pub t_end: f64,
    /// Fixed RK4 step count; fixed stepping keeps the step sequence
    /// identical across runs so the measured distances are truncation
    /// differences, not step-control noise.
    pub steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StudyRow {
    pub n: f64,
    pub cells: usize,
    pub l1_distance: f64,
}

#[derive(Debug, Clone)]
pub struct TruncationStudy {
    pub rows: Vec<StudyRow>,
    pub reference_n: f64,
    /// Distances nonincreasing in the truncation volume. Non-monotone
    /// outcomes are flagged here, not treated as fatal.
    pub monotone: bool,
}

/// Run the same physical setup at several truncation volumes and measure the
/// L1 distance of each final density to the largest-volume run on the shared
/// part of the volume axis.
pub fn truncation_convergence_study(
    kernel: &CollisionKernel,
    probability: &CoalescenceProbability,
    breakup: &BreakupDistribution,
    g0: &InitialCondition,
    cfg: &StudyConfig,
    n_values: &[f64],
) -> Result<TruncationStudy> {
    if n_values.is_empty() {
        return Err(Error::Config(vec!["study needs at least one truncation volume".into()]));
    }
    if n_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config(vec![
            "study truncation volumes must be nondecreasing".into(),
        ]));
    }
    if !(cfg.zmin > 0.0) || n_values[0] <= cfg.zmin {
        return Err(Error::Config(vec![format!(
            "study zmin {} must be positive and below the smallest truncation volume",
            cfg.zmin
        )]));
    }
    if cfg.steps == 0 {
        return Err(Error::Config(vec!["study needs at least one time step".into()]));
    }

    let reference_n = *n_values.last().unwrap();
    let log_ref = (reference_n / cfg.zmin).ln();

    let run_one = |n: f64| -> Result<(usize, NumberDensity)> {
        let cells = ((cfg.reference_cells as f64) * (n / cfg.zmin).ln() / log_ref)
            .round()
            .max(2.0) as usize;
        let grid = VolumeGrid::build(cfg.zmin, n, cells, GridSpacing::Geometric)?;
        let ws = OperatorWorkspace::new(
            grid.clone(),
            kernel.with_truncation(n)?,
            *probability,
            breakup.clone(),
        )?;
        let state = project_initial(g0, &grid)?.density;
        let dt = if cfg.t_end > 0.0 {
            cfg.t_end / cfg.steps as f64
        } else {
            1.0
        };
        let time = TimeStepperConfig {
            method: TimeMethod::Rk4,
            dt_init: dt,
            dt_min: dt,
            dt_max: dt,
            t_end: cfg.t_end,
            ..Default::default()
        };
        let result = integrator::run(&state, &ws, &time)?;
        Ok((cells, result.final_state))
    };

    let (_, reference) = run_one(reference_n)?;
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let (cells, state) = run_one(n)?;
        let l1_distance = piecewise_l1_distance(&state, &reference, n);
        rows.push(StudyRow { n, cells, l1_distance });
    }
    let monotone = rows.windows(2).all(|w| w[1].l1_distance <= w[0].l1_distance);
    Ok(TruncationStudy {
        rows,
        reference_n,
        monotone,
    })
}

/// Exact L1 distance between two piecewise-constant densities on the shared
/// axis up to `overlap_max`. Both densities are zero outside their own grid.
pub fn piecewise_l1_distance(a: &NumberDensity, b: &NumberDensity, overlap_max: f64) -> f64 {
    let mut cuts: Vec<f64> = Vec::new();
    for grid in [a.grid(), b.grid()] {
        for &e in grid.edges() {
            if e <= overlap_max {
                cuts.push(e);
            }
        }
    }
    cuts.push(overlap_max);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // Collapse near-coincident edges from independently built grids.
    cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-9 * y.abs());

    let value_at = |g: &NumberDensity, z: f64| -> f64 {
        g.grid().locate(z).map_or(0.0, |cell| g.values()[cell])
    };

    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        total += (value_at(a, mid) - value_at(b, mid)).abs() * (hi - lo);
    }
    total
}

/// Reference kind used when describing validation cases in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    AnalyticClosedForm,
    RefinedSelfConvergence,
    BruteForceSmallGrid,
}

/// A named validation case: a model setup plus the reference it is judged
/// against and the tolerance it must meet.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub name: &'static str,
    pub reference: ReferenceKind,
    pub tolerance: f64,
}

impl OracleCase {
    pub const SMOLUCHOWSKI_L1: OracleCase = OracleCase {
        name: "constant-kernel coagulation vs analytic density",
        reference: ReferenceKind::AnalyticClosedForm,
        tolerance: 0.02,
    };
    pub const SMOLUCHOWSKI_M0: OracleCase = OracleCase {
        name: "constant-kernel coagulation vs analytic count",
        reference: ReferenceKind::AnalyticClosedForm,
        tolerance: 0.01,
    };
    pub const BRUTE_FORCE: OracleCase = OracleCase {
        name: "workspace operators vs brute-force transcription",
        reference: ReferenceKind::BruteForceSmallGrid,
        tolerance: 1e-12,
    };
    pub const TRUNCATION: OracleCase = OracleCase {
        name: "truncation self-convergence",
        reference: ReferenceKind::RefinedSelfConvergence,
        tolerance: 0.0,
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_solution_reduces_to_initial_condition() {
        assert_relative_eq!(
            smoluchowski_constant_analytic(1.0, 0.0).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
        assert!(smoluchowski_constant_analytic(1.0, -0.5).is_err());
        assert!(smoluchowski_constant_analytic(0.0, 1.0).is_err());
    }

    #[test]
    fn analytic_moments() {
        // M1 = 1 for all t (frozen from symbolic integration of
        // z (2/(2+t))^2 exp(-2z/(2+t))), M0 = 2/(2+t).
        for &t in &[0.0, 0.5, 1.0, 2.0, 7.5] {
            let a = 2.0 / (2.0 + t);
            let m0 = crate::quad::adaptive_simpson(
                |z| smoluchowski_constant_analytic(z, t).unwrap(),
                1e-12,
                400.0 / a,
                1e-12,
                1e-300,
            );
            let m1 = crate::quad::adaptive_simpson(
                |z| z * smoluchowski_constant_analytic(z, t).unwrap(),
                1e-12,
                400.0 / a,
                1e-12,
                1e-300,
            );
            assert_relative_eq!(m0, smoluchowski_constant_m0(t).unwrap(), max_relative = 1e-9);
            assert_relative_eq!(m1, 1.0, max_relative = 1e-9);
        }
        assert_relative_eq!(smoluchowski_constant_m0(2.0).unwrap(), 0.5);
    }

    #[test]
    fn brute_force_refuses_large_grids() {
        let grid = VolumeGrid::build(0.1, 10.0, 6, GridSpacing::Geometric).unwrap();
        let g = NumberDensity::zeros(grid);
        let kernel = CollisionKernel::constant(1.0).unwrap();
        let prob = CoalescenceProbability::One;
        let dist = BreakupDistribution::power_law(0.0).unwrap();
        assert!(matches!(
            brute_force_rhs(&g, &kernel, &prob, &dist),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn brute_force_zero_state() {
        let grid = VolumeGrid::build(0.1, 10.0, 4, GridSpacing::Geometric).unwrap();
        let g = NumberDensity::zeros(grid);
        let kernel = CollisionKernel::constant(1.0).unwrap().with_truncation(10.0).unwrap();
        let prob = CoalescenceProbability::constant(0.5).unwrap();
        let dist = BreakupDistribution::power_law(-0.5).unwrap();
        let rhs = brute_force_rhs(&g, &kernel, &prob, &dist).unwrap();
        assert!(rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn breakage_scales_linearly_in_shatter_probability() {
        // The breakage part of the rhs is proportional to (1 - E).
        let grid = VolumeGrid::build(0.1, 10.0, 4, GridSpacing::Geometric).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let values: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let g = NumberDensity::from_values(grid.clone(), values, 0.0).unwrap();
        let kernel = CollisionKernel::constant(1.0).unwrap().with_truncation(10.0).unwrap();
        let dist = BreakupDistribution::power_law(0.0).unwrap();

        let rhs_at = |e0: f64| {
            let prob = CoalescenceProbability::constant(e0).unwrap();
            brute_force_rhs(&g, &kernel, &prob, &dist).unwrap()
        };
        let full = rhs_at(0.0);
        let none = rhs_at(1.0);
        let half = rhs_at(0.5);
        for k in 0..4 {
            // rhs(E) = E * rhs_coag-part + (1-E) * rhs_break-part, affine in E.
            let interpolated = 0.5 * (full[k] + none[k]);
            assert_relative_eq!(half[k], interpolated, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn brute_force_matches_workspace_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for &cells in &[2usize, 3, 5] {
            for &nu in &[0.0, -0.5] {
                let grid = VolumeGrid::build(0.05, 8.0, cells, GridSpacing::Geometric).unwrap();
                let kernel = CollisionKernel::product_sum(1.0, 0.3, 0.7)
                    .unwrap()
                    .with_truncation(8.0)
                    .unwrap();
                let prob = CoalescenceProbability::constant(0.4).unwrap();
                let dist = BreakupDistribution::power_law(nu).unwrap();
                let ws = OperatorWorkspace::new(grid.clone(), kernel, prob, dist.clone()).unwrap();
                for _ in 0..20 {
                    let values: Vec<f64> =
                        (0..cells).map(|_| rng.random_range(0.0..3.0)).collect();
                    let g = NumberDensity::from_values(grid.clone(), values, 0.0).unwrap();
                    let fast = ws.rhs(&g).unwrap();
                    let slow = brute_force_rhs(&g, &kernel, &prob, &dist).unwrap();
                    let scale = fast
                        .iter()
                        .map(|v| v.abs())
                        .fold(0.0f64, f64::max)
                        .max(1e-300);
                    for k in 0..cells {
                        assert!(
                            (fast[k] - slow[k]).abs() <= 1e-12 * scale,
                            "cell {k}: {} vs {}",
                            fast[k],
                            slow[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn l1_distance_identical_states_is_zero() {
        let grid = VolumeGrid::build(0.1, 10.0, 16, GridSpacing::Geometric).unwrap();
        let g0 = InitialCondition::exponential(1.0).unwrap();
        let g = project_initial(&g0, &grid).unwrap().density;
        assert_eq!(piecewise_l1_distance(&g, &g, 10.0), 0.0);
    }

    #[test]
    fn l1_distance_between_known_constants() {
        // Two uniform grids on (1, 5); one density 1.0, other 0.25.
        let grid = VolumeGrid::build(1.0, 5.0, 4, GridSpacing::Uniform).unwrap();
        let a = NumberDensity::from_values(grid.clone(), vec![1.0; 4], 0.0).unwrap();
        let b = NumberDensity::from_values(grid.clone(), vec![0.25; 4], 0.0).unwrap();
        assert_relative_eq!(piecewise_l1_distance(&a, &b, 5.0), 3.0, max_relative = 1e-12);
        // Restricting the overlap halves the measured distance.
        assert_relative_eq!(piecewise_l1_distance(&a, &b, 3.0), 1.5, max_relative = 1e-12);
    }

    #[test]
    fn study_no_evolution_distances_vanish() {
        // Initial data supported inside the smallest window and t_end = 0:
        // all runs project the same data, so every distance is zero.
        let kernel = CollisionKernel::constant(1.0).unwrap();
        let prob = CoalescenceProbability::One;
        let dist = BreakupDistribution::power_law(0.0).unwrap();
        let g0 = InitialCondition::uniform(0.2, 0.9).unwrap();
        let cfg = StudyConfig {
            zmin: 10.0 / 1024.0,
            reference_cells: 100,
            t_end: 0.0,
            steps: 1,
        };
        let study =
            truncation_convergence_study(&kernel, &prob, &dist, &g0, &cfg, &[2.5, 5.0, 10.0])
                .unwrap();
        for row in &study.rows {
            assert!(
                row.l1_distance <= 1e-12,
                "expected zero distance, got {:.3e} at n = {}",
                row.l1_distance,
                row.n
            );
        }
        assert!(study.monotone);
    }

    #[test]
    fn study_duplicate_windows_have_zero_distance() {
        // Runs are deterministic, so repeating a truncation volume compares
        // two bitwise-identical states.
        let kernel = CollisionKernel::constant(1.0).unwrap();
        let prob = CoalescenceProbability::One;
        let dist = BreakupDistribution::power_law(0.0).unwrap();
        let g0 = InitialCondition::exponential(1.0).unwrap();
        let cfg = StudyConfig {
            zmin: 0.01,
            reference_cells: 48,
            t_end: 0.2,
            steps: 32,
        };
        let study =
            truncation_convergence_study(&kernel, &prob, &dist, &g0, &cfg, &[5.0, 10.0, 10.0])
                .unwrap();
        assert_eq!(study.rows[1].l1_distance, 0.0);
        assert_eq!(study.rows[2].l1_distance, 0.0);
        assert!(study.rows[0].l1_distance >= 0.0);
    }

    #[test]
    fn study_rejects_bad_inputs() {
        let kernel = CollisionKernel::constant(1.0).unwrap();
        let prob = CoalescenceProbability::One;
        let dist = BreakupDistribution::power_law(0.0).unwrap();
        let g0 = InitialCondition::exponential(1.0).unwrap();
        let cfg = StudyConfig {
            zmin: 0.01,
            reference_cells: 64,
            t_end: 1.0,
            steps: 16,
        };
        assert!(truncation_convergence_study(&kernel, &prob, &dist, &g0, &cfg, &[]).is_err());
        assert!(
            truncation_convergence_study(&kernel, &prob, &dist, &g0, &cfg, &[20.0, 10.0]).is_err()
        );
    }
}
