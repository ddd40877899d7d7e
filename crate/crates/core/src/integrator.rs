//! Explicit time integration of `dg/dt = rhs(g)` with step-doubling error
//! control, nonnegativity enforcement and per-step diagnostics.
//!
//! All methods are explicit; a run that keeps rejecting steps until the step
//! size underflows `dt_min` aborts loudly instead of switching schemes.
//! Setting `dt_min == dt_max` disables the error control entirely and steps
//! at that fixed size, which is what reference studies use to keep the step
//! sequence identical across compared runs.

use crate::error::{Error, Result};
use crate::grid::NumberDensity;
use crate::operators::OperatorWorkspace;

/// Fraction of the current mass that may be clipped away per accepted step
/// before the step is rejected instead.
const CLIP_BUDGET: f64 = 1e-10;

/// Explicit stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMethod {
    Rk4,
    Heun,
    Euler,
}

impl TimeMethod {
    fn order(self) -> i32 {
        match self {
            TimeMethod::Rk4 => 4,
            TimeMethod::Heun => 2,
            TimeMethod::Euler => 1,
        }
    }

    /// `2^order - 1`, the step-doubling error divisor.
    fn error_divisor(self) -> f64 {
        (2_f64).powi(self.order()) - 1.0
    }
}

/// Time-stepper configuration.
#[derive(Debug, Clone)]
pub struct TimeStepperConfig {
    pub method: TimeMethod,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
}

impl Default for TimeStepperConfig {
    fn default() -> Self {
        Self {
            method: TimeMethod::Rk4,
            dt_init: 1e-3,
            dt_min: 1e-12,
            dt_max: 0.25,
            rel_tol: 1e-6,
            abs_tol: 1e-12,
            t_end: 1.0,
            snapshot_times: Vec::new(),
        }
    }
}

impl TimeStepperConfig {
    /// Fixed-size stepping (no error control) when the step bounds coincide.
    pub fn is_fixed_step(&self) -> bool {
        self.dt_min == self.dt_max
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.dt_min > 0.0) || !(self.dt_min <= self.dt_init) || !(self.dt_init <= self.dt_max)
        {
            issues.push(format!(
                "time steps must satisfy 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            ));
        }
        if !(self.rel_tol > 0.0) {
            issues.push(format!("time.rel_tol must be positive, got {}", self.rel_tol));
        }
        if !(self.abs_tol >= 0.0) {
            issues.push(format!("time.abs_tol must be nonnegative, got {}", self.abs_tol));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            issues.push(format!("time.t_end must be finite and >= 0, got {}", self.t_end));
        }
        if self
            .snapshot_times
            .iter()
            .any(|&t| !(t >= 0.0) || t > self.t_end)
        {
            issues.push("time.snapshots must lie within [0, t_end]".into());
        }
        issues
    }
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub t: f64,
    pub dt_used: f64,
    /// Relative change of M1 since the start of the run, signed.
    pub mass_drift: f64,
    /// Cells clipped to zero in this step.
    pub negativity_clips: u64,
    /// Error-control rejections it took to accept this step.
    pub rejected_steps: u64,
}

/// One row of the recorded moment series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub norm_one_plus_z: f64,
    pub mass_drift: f64,
    pub dt: f64,
}

/// Time series of moments along a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentSeries {
    pub rows: Vec<MomentRow>,
}

impl MomentSeries {
    fn record(&mut self, g: &NumberDensity, m1_ref: f64, dt: f64) {
        let m0 = g.moment(0.0).unwrap();
        let m1 = g.moment(1.0).unwrap();
        let m2 = g.moment(2.0).unwrap();
        let mass_drift = if m1_ref != 0.0 { (m1 - m1_ref) / m1_ref } else { 0.0 };
        self.rows.push(MomentRow {
            t: g.time(),
            m0,
            m1,
            m2,
            norm_one_plus_z: m0 + m1,
            mass_drift,
            dt,
        });
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The stepper hit `dt_min` while rejecting; state and series hold the
    /// last accepted data.
    StiffnessAbort { t: f64, detail: String },
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub status: RunStatus,
    pub final_state: NumberDensity,
    pub series: MomentSeries,
    pub reports: Vec<StepReport>,
    pub snapshots: Vec<NumberDensity>,
    pub clipped_mass_total: f64,
    /// Super-exponential growth of `∫ (1+z) g dz` was observed.
    pub growth_warning: bool,
}

impl RunResult {
    pub fn is_aborted(&self) -> bool {
        matches!(self.status, RunStatus::StiffnessAbort { .. })
    }
}

/// Adaptive stepper owning the error-control state of one run.
pub struct Stepper<'a> {
    ws: &'a OperatorWorkspace,
    cfg: &'a TimeStepperConfig,
    dt_next: f64,
    m1_ref: f64,
    clipped_mass_total: f64,
}

enum Attempt {
    Accepted {
        values: Vec<f64>,
        clips: u64,
        clipped_mass: f64,
        error_ratio: f64,
    },
    Rejected,
}

impl<'a> Stepper<'a> {
    pub fn new(ws: &'a OperatorWorkspace, cfg: &'a TimeStepperConfig, g0: &NumberDensity) -> Result<Self> {
        let issues = cfg.validate();
        if !issues.is_empty() {
            return Err(Error::Config(issues));
        }
        if !g0.is_nonnegative() {
            return Err(Error::domain("initial state must be nonnegative"));
        }
        Ok(Self {
            ws,
            cfg,
            dt_next: cfg.dt_init.clamp(cfg.dt_min, cfg.dt_max),
            m1_ref: g0.moment(1.0)?,
            clipped_mass_total: 0.0,
        })
    }

    pub fn clipped_mass_total(&self) -> f64 {
        self.clipped_mass_total
    }

    /// One stage-set of the chosen method, returning the raw new values or
    /// `None` when the state blew up to nonfinite values (treated as a
    /// rejection upstream).
    fn advance(&self, g: &NumberDensity, dt: f64) -> Result<Option<Vec<f64>>> {
        let grid = g.grid().clone();
        let y0 = g.values();
        let combine = |base: &[f64], scale: f64, slope: &[f64]| -> Option<NumberDensity> {
            let vals: Vec<f64> = base
                .iter()
                .zip(slope)
                .map(|(y, s)| y + scale * s)
                .collect();
            if vals.iter().all(|v| v.is_finite()) {
                Some(NumberDensity::from_values(grid.clone(), vals, g.time()).unwrap())
            } else {
                None
            }
        };
        let finish = |vals: Vec<f64>| -> Option<Vec<f64>> {
            vals.iter().all(|v| v.is_finite()).then_some(vals)
        };

        let k1 = self.ws.rhs(g)?;
        match self.cfg.method {
            TimeMethod::Euler => Ok(finish(
                y0.iter().zip(&k1).map(|(y, k)| y + dt * k).collect(),
            )),
            TimeMethod::Heun => {
                let Some(predictor) = combine(y0, dt, &k1) else {
                    return Ok(None);
                };
                let k2 = self.ws.rhs(&predictor)?;
                Ok(finish(
                    y0.iter()
                        .zip(k1.iter().zip(&k2))
                        .map(|(y, (a, b))| y + 0.5 * dt * (a + b))
                        .collect(),
                ))
            }
            TimeMethod::Rk4 => {
                let Some(mid1) = combine(y0, 0.5 * dt, &k1) else {
                    return Ok(None);
                };
                let k2 = self.ws.rhs(&mid1)?;
                let Some(mid2) = combine(y0, 0.5 * dt, &k2) else {
                    return Ok(None);
                };
                let k3 = self.ws.rhs(&mid2)?;
                let Some(end) = combine(y0, dt, &k3) else {
                    return Ok(None);
                };
                let k4 = self.ws.rhs(&end)?;
                Ok(finish(
                    (0..y0.len())
                        .map(|i| y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                        .collect(),
                ))
            }
        }
    }

    fn attempt(&self, g: &NumberDensity, dt: f64) -> Result<Attempt> {
        let fixed = self.cfg.is_fixed_step();
        let fine = if fixed {
            match self.advance(g, dt)? {
                Some(v) => v,
                None => return Ok(Attempt::Rejected),
            }
        } else {
            // Step doubling: the fine solution is two half steps, the coarse
            // one a single full step; their gap estimates the local error.
            let Some(coarse) = self.advance(g, dt)? else {
                return Ok(Attempt::Rejected);
            };
            let Some(half) = self.advance(g, 0.5 * dt)? else {
                return Ok(Attempt::Rejected);
            };
            let half_state =
                NumberDensity::from_values(g.grid().clone(), half, g.time())?;
            let Some(fine) = self.advance(&half_state, 0.5 * dt)? else {
                return Ok(Attempt::Rejected);
            };
            let divisor = self.cfg.method.error_divisor();
            let mut ratio: f64 = 0.0;
            for ((c, f), y) in coarse.iter().zip(&fine).zip(g.values()) {
                let scale = self.cfg.abs_tol + self.cfg.rel_tol * f.abs().max(y.abs());
                ratio = ratio.max((c - f).abs() / (divisor * scale));
            }
            if ratio > 1.0 {
                return Ok(Attempt::Rejected);
            }
            let mut fine = fine;
            return self.clip(&mut fine).map(|outcome| match outcome {
                Some((clips, clipped_mass)) => Attempt::Accepted {
                    values: fine,
                    clips,
                    clipped_mass,
                    error_ratio: ratio,
                },
                None => Attempt::Rejected,
            });
        };
        let mut fine = fine;
        // Fixed-step mode clips unconditionally; there is no rejection path.
        let (clips, clipped_mass) = self.clip_unconditional(&mut fine);
        Ok(Attempt::Accepted {
            values: fine,
            clips,
            clipped_mass,
            error_ratio: 0.0,
        })
    }

    /// Clip negative cells to zero. Returns `None` (reject) when the clipped
    /// mass exceeds the per-step budget.
    fn clip(&self, values: &mut [f64]) -> Result<Option<(u64, f64)>> {
        let grid = self.ws.grid();
        let mut clipped_mass = 0.0;
        let mut clips = 0u64;
        let mut m1 = 0.0;
        for (k, v) in values.iter().enumerate() {
            m1 += v.abs() * grid.pivot(k) * grid.width(k);
        }
        for (k, v) in values.iter_mut().enumerate() {
            if *v < 0.0 {
                clipped_mass += -*v * grid.pivot(k) * grid.width(k);
                *v = 0.0;
                clips += 1;
            }
        }
        if clipped_mass > CLIP_BUDGET * m1.max(f64::MIN_POSITIVE) {
            return Ok(None);
        }
        Ok(Some((clips, clipped_mass)))
    }

    fn clip_unconditional(&self, values: &mut [f64]) -> (u64, f64) {
        let grid = self.ws.grid();
        let mut clipped_mass = 0.0;
        let mut clips = 0u64;
        for (k, v) in values.iter_mut().enumerate() {
            if *v < 0.0 {
                clipped_mass += -*v * grid.pivot(k) * grid.width(k);
                *v = 0.0;
                clips += 1;
            }
        }
        (clips, clipped_mass)
    }

    /// Advance `g` by one accepted step, not moving past `t_stop`.
    pub fn step(&mut self, g: &NumberDensity, t_stop: f64) -> Result<(NumberDensity, StepReport)> {
        let remaining = t_stop - g.time();
        debug_assert!(remaining > 0.0);
        let boundary_clamped = remaining < self.dt_next;
        let mut dt = self.dt_next.min(remaining);
        let mut rejections = 0u64;
        loop {
            match self.attempt(g, dt)? {
                Attempt::Accepted {
                    values,
                    clips,
                    clipped_mass,
                    error_ratio,
                } => {
                    let mut next = NumberDensity::from_values(g.grid().clone(), values, 0.0)?;
                    next.set_time(g.time() + dt);
                    self.clipped_mass_total += clipped_mass;
                    // A step shortened only to land on a boundary says nothing
                    // about accuracy; keep the controller's proposal then.
                    if !self.cfg.is_fixed_step() && !(boundary_clamped && rejections == 0) {
                        // Growth limited to 2x per acceptance.
                        let factor = if error_ratio > 0.0 {
                            (0.9 * error_ratio.powf(-1.0 / (self.cfg.method.order() as f64 + 1.0)))
                                .clamp(0.25, 2.0)
                        } else {
                            2.0
                        };
                        self.dt_next = (dt * factor).clamp(self.cfg.dt_min, self.cfg.dt_max);
                    }
                    let m1 = next.moment(1.0)?;
                    let mass_drift = if self.m1_ref != 0.0 {
                        (m1 - self.m1_ref) / self.m1_ref
                    } else {
                        0.0
                    };
                    let report = StepReport {
                        t: next.time(),
                        dt_used: dt,
                        mass_drift,
                        negativity_clips: clips,
                        rejected_steps: rejections,
                    };
                    return Ok((next, report));
                }
                Attempt::Rejected => {
                    rejections += 1;
                    dt *= 0.5;
                    if dt < self.cfg.dt_min {
                        return Err(Error::Stiffness {
                            t: g.time(),
                            dt_min: self.cfg.dt_min,
                            rejections,
                        });
                    }
                }
            }
        }
    }
}

/// Integrate `g0` to `t_end`, recording moments at every accepted step and
/// snapshotting the state at the configured times (plus start and end).
pub fn run(
    g0: &NumberDensity,
    ws: &OperatorWorkspace,
    cfg: &TimeStepperConfig,
) -> Result<RunResult> {
    let mut stepper = Stepper::new(ws, cfg, g0)?;
    let m1_ref = g0.moment(1.0)?;

    let mut boundaries: Vec<f64> = cfg
        .snapshot_times
        .iter()
        .copied()
        .chain(std::iter::once(cfg.t_end))
        .filter(|&t| t > 0.0 && t <= cfg.t_end)
        .collect();
    boundaries.sort_by(|a, b| a.partial_cmp(b).unwrap());
    boundaries.dedup();

    let mut state = g0.clone();
    state.set_time(0.0);
    let mut series = MomentSeries::default();
    series.record(&state, m1_ref, 0.0);
    let mut reports = Vec::new();
    let mut snapshots = vec![state.clone()];
    let mut status = RunStatus::Completed;

    'outer: for &boundary in &boundaries {
        while state.time() < boundary {
            match stepper.step(&state, boundary) {
                Ok((next, report)) => {
                    state = next;
                    series.record(&state, m1_ref, report.dt_used);
                    reports.push(report);
                }
                Err(Error::Stiffness { t, dt_min, rejections }) => {
                    status = RunStatus::StiffnessAbort {
                        t,
                        detail: format!(
                            "step size underflowed dt_min = {dt_min:.3e} after {rejections} rejections"
                        ),
                    };
                    break 'outer;
                }
                Err(other) => return Err(other),
            }
        }
        if state.time() >= boundary && matches!(status, RunStatus::Completed) {
            // The stepper may land an ulp past the boundary; stamp the
            // snapshot with the intended time.
            let mut snapshot = state.clone();
            snapshot.set_time(boundary);
            snapshots.push(snapshot);
        }
    }

    let growth_warning = detect_super_exponential_growth(&series);
    Ok(RunResult {
        status,
        final_state: state,
        series,
        reports,
        snapshots,
        clipped_mass_total: stepper.clipped_mass_total(),
        growth_warning,
    })
}

/// Heuristic a-priori-bound monitor: fit `ln ∫(1+z)g` linearly in `t` and
/// flag any point rising more than a factor 2 above the fit.
fn detect_super_exponential_growth(series: &MomentSeries) -> bool {
    let pts: Vec<(f64, f64)> = series
        .rows
        .iter()
        .filter(|r| r.norm_one_plus_z > 0.0)
        .map(|r| (r.t, r.norm_one_plus_z.ln()))
        .collect();
    if pts.len() < 4 {
        return false;
    }
    let n = pts.len() as f64;
    let sum_t: f64 = pts.iter().map(|p| p.0).sum();
    let sum_y: f64 = pts.iter().map(|p| p.1).sum();
    let sum_tt: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sum_ty: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sum_tt - sum_t * sum_t;
    if denom <= 0.0 {
        return false;
    }
    let slope = (n * sum_ty - sum_t * sum_y) / denom;
    let intercept = (sum_y - slope * sum_t) / n;
    pts.iter()
        .any(|&(t, y)| y - (intercept + slope * t) > std::f64::consts::LN_2)
}
