//! Deterministic sectional solver for the dynamics of particle populations
//! under binary collisions that either coalesce the pair or shatter it with
//! mass transfer.
//!
//! The number density `g(z, t)` over particle volume `z` evolves through
//! three mechanisms: a coagulation gain (two particles merging), a collision
//! loss (every colliding pair leaves its size classes) and a collisional
//! breakage gain (fragments of a shattered pair). Collisions happen at a
//! symmetric rate `phi(z, z1)` and coalesce with probability `E(z, z1)`;
//! otherwise the pair's combined volume redistributes according to a
//! fragment spectrum `P(z | z1; z2)`.
//!
//! The solver truncates the volume axis at a cutoff `n` (dropping pairs
//! whose combined volume would leave the window), discretizes with a
//! fixed-pivot sectional scheme that conserves volume exactly, and
//! integrates in time with explicit step-doubling error control. Moments,
//! snapshots and conservation diagnostics are first-class outputs.
//!
//! Entry points:
//! * [`config::RunConfig`] / [`config::parse_config`] — flat-file setup.
//! * [`operators::OperatorWorkspace`] — precomputed discrete operators.
//! * [`integrator::run`] — time integration with diagnostics.
//! * [`oracles`] — analytic and brute-force references for validation.
//! * [`runner`] — the CLI commands (`simulate`, `audit`, `converge`,
//!   `oracle`).
//!
//! ```
//! use collide_pbe::grid::{project_initial, GridSpacing, InitialCondition, VolumeGrid};
//! use collide_pbe::integrator::{self, TimeStepperConfig};
//! use collide_pbe::kernels::{BreakupDistribution, CoalescenceProbability, CollisionKernel};
//! use collide_pbe::operators::OperatorWorkspace;
//!
//! // Half of the collisions merge, half shatter into two fragments.
//! let n = 10.0;
//! let grid = VolumeGrid::build(1e-3, n, 32, GridSpacing::Geometric)?;
//! let ws = OperatorWorkspace::new(
//!     grid.clone(),
//!     CollisionKernel::product_sum(1.0, 0.3, 0.7)?.with_truncation(n)?,
//!     CoalescenceProbability::constant(0.5)?,
//!     BreakupDistribution::power_law(0.0)?,
//! )?;
//! let g0 = project_initial(&InitialCondition::exponential(1.0)?, &grid)?.density;
//!
//! let cfg = TimeStepperConfig { t_end: 0.1, ..Default::default() };
//! let result = integrator::run(&g0, &ws, &cfg)?;
//!
//! let last = result.series.rows.last().unwrap();
//! assert!(last.mass_drift.abs() < 1e-10); // total volume is conserved
//! # Ok::<(), collide_pbe::Error>(())
//! ```

// Validation throughout uses `!(x > 0.0)`-style comparisons on purpose:
// they reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod config;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod kernels;
pub mod operators;
pub mod oracles;
pub mod quad;
pub mod runner;

pub use audit::{audit_assumptions, AssumptionReport, AuditConfig};
pub use error::{Error, Result};
pub use grid::{GridSpacing, InitialCondition, NumberDensity, VolumeGrid};
pub use integrator::{MomentSeries, RunResult, RunStatus, StepReport, TimeMethod, TimeStepperConfig};
pub use kernels::{
    BreakupDistribution, BreakupForm, CoalescenceProbability, CollisionKernel, FragmentTable,
    KernelForm,
};
pub use operators::OperatorWorkspace;
