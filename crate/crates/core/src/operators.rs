//! Discrete collision operators on a volume grid.
//!
//! Three terms drive the semi-discrete dynamics: the coagulation gain
//! (pairs merging into a bigger particle), the total collision loss (every
//! colliding pair leaves its cells), and the breakage gain (shattering pairs
//! redistributing their combined volume over fragment cells).
//!
//! Discretization choices:
//!
//! * Pairs of pivots whose combined volume reaches the truncation volume are
//!   dropped from gain and loss alike, so the windowed system is closed and
//!   conserves mass exactly.
//! * A merged particle deposits on the two pivots bracketing its volume with
//!   fixed-pivot weights, preserving particle count and volume exactly.
//! * Fragments redistribute through a per-pair table built from exact
//!   per-cell integrals of the fragment spectrum. Each cell's fragment batch
//!   is split between the pivots bracketing its mean volume, and a final
//!   two-parameter correction (a rescale plus a spike at one end) pins the
//!   discrete count to the expected fragment count and the discrete volume
//!   to the combined parent volume, both to rounding accuracy. Pairs too
//!   small to host the full fragment count above the first pivot fall back
//!   to a volume-exact lump there and are counted separately.
//!
//! The workspace precomputes every state-independent table; operator
//! evaluation gathers per output cell in a fixed order, so results are
//! bitwise reproducible regardless of thread count.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{NumberDensity, VolumeGrid};
use crate::kernels::{BreakupDistribution, BreakupForm, CoalescenceProbability, CollisionKernel};

/// Relative slack used when deciding whether the fragment-count closure is
/// feasible for a pair.
const CLOSURE_SLACK: f64 = 1e-12;

/// Statistics of one redistribution row.
#[derive(Debug, Clone, Copy)]
pub struct RowStats {
    /// Discrete fragment count `Σ_k R_k w_k` carried by the row.
    pub count: f64,
    /// Whether the both-identities closure was infeasible and the row fell
    /// back to a volume-exact lump at the first pivot.
    pub fallback: bool,
}

/// Builds fragment redistribution rows for one (distribution, grid) pairing.
///
/// For the power-law family the per-edge powers are cached so each row costs
/// one `powf` per pair instead of two per cell.
struct RowBuilder<'a> {
    grid: &'a VolumeGrid,
    dist: &'a BreakupDistribution,
    /// `edge^(nu+1)` and `edge^(nu+2)` per edge, power-law only.
    edge_pow_count: Vec<f64>,
    edge_pow_mass: Vec<f64>,
    nu: Option<f64>,
}

impl<'a> RowBuilder<'a> {
    fn new(grid: &'a VolumeGrid, dist: &'a BreakupDistribution) -> Self {
        let (edge_pow_count, edge_pow_mass, nu) = match dist.form() {
            BreakupForm::PowerLaw { nu } => {
                let c: Vec<f64> = grid.edges().iter().map(|e| e.powf(nu + 1.0)).collect();
                let m: Vec<f64> = grid.edges().iter().map(|e| e.powf(nu + 2.0)).collect();
                (c, m, Some(*nu))
            }
            BreakupForm::Custom(_) => (Vec::new(), Vec::new(), None),
        };
        Self {
            grid,
            dist,
            edge_pow_count,
            edge_pow_mass,
            nu,
        }
    }

    /// Exact count and volume of the fragment spectrum for combined volume
    /// `total` on cell `k`, with the first cell extended down to zero so the
    /// sub-window tail is accounted for.
    fn chunk(&self, k: usize, total: f64, prefactor: f64, total_pow: (f64, f64)) -> (f64, f64) {
        let lo = if k == 0 { 0.0 } else { self.grid.lower(k) };
        let hi = self.grid.upper(k).min(total);
        if hi <= lo {
            return (0.0, 0.0);
        }
        match self.nu {
            Some(nu) => {
                let lo_c = if k == 0 { 0.0 } else { self.edge_pow_count[k] };
                let lo_m = if k == 0 { 0.0 } else { self.edge_pow_mass[k] };
                let (hi_c, hi_m) = if hi == total {
                    total_pow
                } else {
                    (self.edge_pow_count[k + 1], self.edge_pow_mass[k + 1])
                };
                let count = prefactor * ((hi_c - lo_c) / (nu + 1.0));
                let mass = prefactor * ((hi_m - lo_m) / (nu + 2.0));
                (count, mass)
            }
            None => (
                self.dist.count_integral(total, lo, hi),
                self.dist.mass_integral(total, lo, hi),
            ),
        }
    }

    /// Build the redistribution row for combined parent volume `total`,
    /// emitting per-cell fragment counts into `counts` (resized and zeroed
    /// here). Returns the row statistics.
    fn build(&self, total: f64, counts: &mut Vec<f64>) -> RowStats {
        let grid = self.grid;
        let pivots = grid.pivots();
        let top_cell = grid
            .locate(total.min(grid.domain_max()))
            .expect("combined volume below zmin cannot occur: total >= 2 * pivot(0)");
        counts.clear();
        counts.resize(top_cell + 1, 0.0);

        let (prefactor, total_pow) = match self.nu {
            Some(nu) => (
                (nu + 2.0) / total.powf(nu + 1.0),
                (total.powf(nu + 1.0), total.powf(nu + 2.0)),
            ),
            None => (0.0, (0.0, 0.0)),
        };

        for k in 0..=top_cell {
            let (count, mass) = self.chunk(k, total, prefactor, total_pow);
            if count <= 0.0 {
                continue;
            }
            let mean = mass / count;
            if mean <= pivots[0] {
                // No pivot below the batch mean: lump at the first pivot,
                // keeping volume exact and surrendering count to the closure.
                counts[0] += mass / pivots[0];
            } else if mean >= pivots[top_cell] {
                let last = top_cell;
                counts[last] += mass / pivots[last];
            } else {
                let b = pivots[..=top_cell].partition_point(|&p| p <= mean);
                let a = b - 1;
                let upper_share = (mass - count * pivots[a]) / (pivots[b] - pivots[a]);
                counts[a] += count - upper_share;
                counts[b] += upper_share;
            }
        }

        let raw_count: f64 = counts.iter().sum();
        let raw_mass: f64 = counts
            .iter()
            .zip(pivots)
            .map(|(c, p)| c * p)
            .sum();
        let target = self.dist.fragment_count();

        if raw_count <= 0.0 {
            counts.iter_mut().for_each(|c| *c = 0.0);
            counts[top_cell] = total / pivots[top_cell];
            return RowStats {
                count: counts[top_cell],
                fallback: true,
            };
        }

        // Two-parameter closure: scale the raw row by mu and add sigma
        // fictitious fragments at one end pivot, chosen so both
        //   mu * raw_count + sigma            = target
        //   mu * raw_mass  + sigma * p_spike  = total
        // hold exactly. The spike goes to the end whose lumping produced the
        // count defect: bottom when the row is short on count, top otherwise.
        let spike = if target >= raw_count { 0 } else { top_cell };
        let p_spike = pivots[spike];
        let denom = raw_mass - raw_count * p_spike;
        if denom.abs() <= CLOSURE_SLACK * raw_mass.abs() {
            // Degenerate single-pivot row: volume-exact lump.
            let cell = grid
                .locate((raw_mass / raw_count).clamp(grid.zmin(), grid.domain_max()))
                .unwrap_or(top_cell);
            counts.iter_mut().for_each(|c| *c = 0.0);
            counts[cell] = total / pivots[cell];
            return RowStats {
                count: counts[cell],
                fallback: true,
            };
        }
        let mu = (total - target * p_spike) / denom;
        let sigma = target - mu * raw_count;
        if mu < 0.0 || sigma < -CLOSURE_SLACK * target {
            // The mean fragment volume total / target lies below the first
            // pivot; no nonnegative row can carry both identities. Keep the
            // volume exact and report the reduced count.
            counts.iter_mut().for_each(|c| *c = 0.0);
            counts[0] = total / pivots[0];
            return RowStats {
                count: counts[0],
                fallback: true,
            };
        }
        for c in counts.iter_mut() {
            *c *= mu;
        }
        counts[spike] += sigma.max(0.0);
        RowStats {
            count: target,
            fallback: false,
        }
    }
}

/// Precomputed tables for operator evaluation on one grid.
pub struct OperatorWorkspace {
    grid: Arc<VolumeGrid>,
    kernel: CollisionKernel,
    probability: CoalescenceProbability,
    breakup: BreakupDistribution,

    /// Unordered pivot pairs `(i <= j)` with combined volume inside the
    /// gain window.
    pairs: Vec<(u32, u32)>,
    /// Per-pair coagulation event-rate prefactor `sym * E * K`.
    coag_rate: Vec<f64>,
    /// Per-pair breakage event-rate prefactor `sym * (1 - E) * K`.
    break_rate: Vec<f64>,
    /// Per-pair discrete fragment count of the redistribution row.
    pair_fragment_count: Vec<f64>,
    /// Per-pair particle count deposited by a merger (1 for bracketed
    /// deposits, slightly above 1 for volume-exact lumps at the top pivot).
    pair_merge_count: Vec<f64>,
    fallback_pairs: usize,

    /// Merged-particle deposits, gathered per output cell:
    /// `coef = fixed-pivot fraction / cell width`.
    coag_ptr: Vec<usize>,
    coag_pair: Vec<u32>,
    coag_coef: Vec<f64>,

    /// Fragment redistribution, gathered per output cell; values are the
    /// per-event fragment density `R` (count per volume).
    break_ptr: Vec<usize>,
    break_pair: Vec<u32>,
    break_val: Vec<f64>,

    /// Dense truncated collision rates `K(pivot_k, pivot_j)`, row-major.
    loss_rate: Vec<f64>,
}

impl OperatorWorkspace {
    pub fn new(
        grid: Arc<VolumeGrid>,
        kernel: CollisionKernel,
        probability: CoalescenceProbability,
        breakup: BreakupDistribution,
    ) -> Result<Self> {
        let cells = grid.cells();
        let pivots = grid.pivots().to_vec();
        let widths = grid.widths().to_vec();

        // Loss table keeps the kernel's own truncation: collisions beyond the
        // grid window still remove particles when the kernel allows them,
        // which is how unresolved runaway growth shows up as mass leaving
        // the window.
        let mut loss_rate = vec![0.0; cells * cells];
        for k in 0..cells {
            for j in 0..cells {
                loss_rate[k * cells + j] = kernel.rate_truncated(pivots[k], pivots[j])?;
            }
        }

        // Gains only exist for pairs the grid can represent.
        let gain_window = kernel.truncation().min(grid.domain_max());

        let mut pairs = Vec::new();
        let mut coag_rate = Vec::new();
        let mut break_rate = Vec::new();
        for i in 0..cells {
            for j in i..cells {
                let total = pivots[i] + pivots[j];
                if total >= gain_window {
                    continue;
                }
                let sym = if i == j { 0.5 } else { 1.0 };
                let rate = loss_rate[i * cells + j];
                let e = probability.eval(pivots[i], pivots[j]);
                pairs.push((i as u32, j as u32));
                coag_rate.push(sym * e * rate);
                break_rate.push(sym * (1.0 - e) * rate);
            }
        }

        // Merged-particle deposits via fixed-pivot bracketing.
        let mut coag_cells: Vec<(u32, u32, f64)> = Vec::with_capacity(2 * pairs.len());
        let mut pair_merge_count = vec![1.0; pairs.len()];
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let total = pivots[i as usize] + pivots[j as usize];
            let last = cells - 1;
            if total >= pivots[last] {
                // Above the last pivot: volume-exact lump.
                let count = total / pivots[last];
                coag_cells.push((last as u32, p as u32, count / widths[last]));
                pair_merge_count[p] = count;
            } else {
                let b = pivots.partition_point(|&piv| piv <= total);
                let a = b - 1;
                let upper = (total - pivots[a]) / (pivots[b] - pivots[a]);
                let lower = (pivots[b] - total) / (pivots[b] - pivots[a]);
                if lower > 0.0 {
                    coag_cells.push((a as u32, p as u32, lower / widths[a]));
                }
                if upper > 0.0 {
                    coag_cells.push((b as u32, p as u32, upper / widths[b]));
                }
            }
        }
        let (coag_ptr, coag_pair, coag_coef) = gather_by_cell(cells, &mut coag_cells);

        // Fragment redistribution rows, stored child-major so evaluation can
        // gather per output cell.
        let builder = RowBuilder::new(&grid, &breakup);
        let mut pair_fragment_count = vec![0.0; pairs.len()];
        let mut fallback_pairs = 0usize;
        let mut counts_scratch = Vec::new();
        let mut break_cells: Vec<(u32, u32, f64)> = Vec::new();
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let total = pivots[i as usize] + pivots[j as usize];
            let stats = builder.build(total, &mut counts_scratch);
            pair_fragment_count[p] = stats.count;
            fallback_pairs += stats.fallback as usize;
            for (k, &count) in counts_scratch.iter().enumerate() {
                if count != 0.0 {
                    break_cells.push((k as u32, p as u32, count / widths[k]));
                }
            }
        }
        let (break_ptr, break_pair, break_val) = gather_by_cell(cells, &mut break_cells);

        Ok(Self {
            grid,
            kernel,
            probability,
            breakup,
            pairs,
            coag_rate,
            break_rate,
            pair_fragment_count,
            pair_merge_count,
            fallback_pairs,
            coag_ptr,
            coag_pair,
            coag_coef,
            break_ptr,
            break_pair,
            break_val,
            loss_rate,
        })
    }

    pub fn grid(&self) -> &Arc<VolumeGrid> {
        &self.grid
    }

    pub fn kernel(&self) -> &CollisionKernel {
        &self.kernel
    }

    pub fn probability(&self) -> &CoalescenceProbability {
        &self.probability
    }

    pub fn breakup(&self) -> &BreakupDistribution {
        &self.breakup
    }

    /// Unordered pivot pairs inside the gain window.
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    /// Discrete fragment count carried by each pair's redistribution row.
    pub fn pair_fragment_counts(&self) -> &[f64] {
        &self.pair_fragment_count
    }

    /// Particle count each pair's merger deposit carries (1 except for
    /// volume-exact lumps at the top pivot).
    pub fn pair_merge_counts(&self) -> &[f64] {
        &self.pair_merge_count
    }

    /// Recompute `(Σ_k R w_k, Σ_k R pivot_k w_k)` per pair from the stored
    /// redistribution table: the discrete fragment count and volume each
    /// shattering event deposits.
    pub fn redistribution_row_sums(&self) -> (Vec<f64>, Vec<f64>) {
        let mut counts = vec![0.0; self.pairs.len()];
        let mut masses = vec![0.0; self.pairs.len()];
        for k in 0..self.grid.cells() {
            let w = self.grid.width(k);
            let pw = self.grid.pivot(k) * w;
            for idx in self.break_ptr[k]..self.break_ptr[k + 1] {
                let p = self.break_pair[idx] as usize;
                counts[p] += self.break_val[idx] * w;
                masses[p] += self.break_val[idx] * pw;
            }
        }
        (counts, masses)
    }

    /// Pairs whose redistribution fell back to the volume-exact lump.
    pub fn fallback_pair_count(&self) -> usize {
        self.fallback_pairs
    }

    /// Truncated collision rate between pivots `k` and `j`.
    pub fn collision_rate(&self, k: usize, j: usize) -> f64 {
        self.loss_rate[k * self.grid.cells() + j]
    }

    fn check_state(&self, g: &NumberDensity) -> Result<()> {
        if !Arc::ptr_eq(g.grid(), &self.grid) && g.grid().edges() != self.grid.edges() {
            return Err(Error::contract(
                "density grid does not match workspace grid",
            ));
        }
        Ok(())
    }

    /// `g_i w_i` per cell: the particle content each cell brings to pair rates.
    fn cell_content(&self, g: &NumberDensity) -> Vec<f64> {
        g.values()
            .iter()
            .zip(self.grid.widths())
            .map(|(v, w)| v * w)
            .collect()
    }

    fn pair_factors(&self, rates: &[f64], content: &[f64]) -> Vec<f64> {
        self.pairs
            .iter()
            .zip(rates)
            .map(|(&(i, j), &r)| r * content[i as usize] * content[j as usize])
            .collect()
    }

    fn gather(ptr: &[usize], pair_ids: &[u32], coefs: &[f64], factors: &[f64], k: usize) -> f64 {
        let mut acc = 0.0;
        for idx in ptr[k]..ptr[k + 1] {
            acc += coefs[idx] * factors[pair_ids[idx] as usize];
        }
        acc
    }

    /// Coagulation gain: merged pairs depositing on bracketing pivots.
    pub fn coagulation_gain(&self, g: &NumberDensity) -> Result<Vec<f64>> {
        self.check_state(g)?;
        let content = self.cell_content(g);
        let factors = self.pair_factors(&self.coag_rate, &content);
        Ok((0..self.grid.cells())
            .into_par_iter()
            .map(|k| Self::gather(&self.coag_ptr, &self.coag_pair, &self.coag_coef, &factors, k))
            .collect())
    }

    /// Collision loss: every represented collision removes both partners.
    pub fn collision_loss(&self, g: &NumberDensity) -> Result<Vec<f64>> {
        self.check_state(g)?;
        let content = self.cell_content(g);
        let cells = self.grid.cells();
        let values = g.values();
        Ok((0..cells)
            .into_par_iter()
            .map(|k| {
                let row = &self.loss_rate[k * cells..(k + 1) * cells];
                let mut acc = 0.0;
                for j in 0..cells {
                    acc += row[j] * content[j];
                }
                values[k] * acc
            })
            .collect())
    }

    /// Breakage gain: shattering pairs spreading fragments over child cells.
    pub fn breakage_gain(&self, g: &NumberDensity) -> Result<Vec<f64>> {
        self.check_state(g)?;
        let cells = self.grid.cells();
        if self.break_rate.iter().all(|&r| r == 0.0) {
            // Pure coagulation: identical to the gather below, which would
            // only ever add exact zeros.
            return Ok(vec![0.0; cells]);
        }
        let content = self.cell_content(g);
        let factors = self.pair_factors(&self.break_rate, &content);
        Ok((0..cells)
            .into_par_iter()
            .map(|k| Self::gather(&self.break_ptr, &self.break_pair, &self.break_val, &factors, k))
            .collect())
    }

    /// Full right-hand side: coagulation gain − collision loss + breakage gain.
    pub fn rhs(&self, g: &NumberDensity) -> Result<Vec<f64>> {
        self.check_state(g)?;
        let cells = self.grid.cells();
        let content = self.cell_content(g);
        let coag_factors = self.pair_factors(&self.coag_rate, &content);
        let breakage_active = self.break_rate.iter().any(|&r| r != 0.0);
        let break_factors = if breakage_active {
            self.pair_factors(&self.break_rate, &content)
        } else {
            Vec::new()
        };
        let values = g.values();
        Ok((0..cells)
            .into_par_iter()
            .map(|k| {
                let gain =
                    Self::gather(&self.coag_ptr, &self.coag_pair, &self.coag_coef, &coag_factors, k);
                let row = &self.loss_rate[k * cells..(k + 1) * cells];
                let mut loss = 0.0;
                for j in 0..cells {
                    loss += row[j] * content[j];
                }
                loss *= values[k];
                let breakage = if breakage_active {
                    Self::gather(&self.break_ptr, &self.break_pair, &self.break_val, &break_factors, k)
                } else {
                    0.0
                };
                (gain - loss) + breakage
            })
            .collect())
    }

    /// Dump the kernel, probability and redistribution tables as CSV for
    /// inspection.
    pub fn dump_tables(&self, dir: &Path) -> Result<()> {
        use std::fmt::Write as _;
        std::fs::create_dir_all(dir)?;
        let cells = self.grid.cells();
        let pivots = self.grid.pivots();

        let mut kernel_csv = String::from("i,j,rate\n");
        let mut prob_csv = String::from("i,j,probability\n");
        for i in 0..cells {
            for j in 0..cells {
                writeln!(kernel_csv, "{i},{j},{:.17e}", self.collision_rate(i, j)).unwrap();
                writeln!(prob_csv, "{i},{j},{:.17e}", self.probability.eval(pivots[i], pivots[j]))
                    .unwrap();
            }
        }
        std::fs::write(dir.join("kernel_table.csv"), kernel_csv)?;
        std::fs::write(dir.join("probability_table.csv"), prob_csv)?;

        let mut redist_csv = String::from("parent_i,parent_j,child,weight\n");
        for k in 0..cells {
            for idx in self.break_ptr[k]..self.break_ptr[k + 1] {
                let (i, j) = self.pairs[self.break_pair[idx] as usize];
                writeln!(redist_csv, "{i},{j},{k},{:.17e}", self.break_val[idx]).unwrap();
            }
        }
        std::fs::write(dir.join("redistribution_table.csv"), redist_csv)?;
        Ok(())
    }
}

/// Counting sort of `(cell, pair, value)` triplets into child-major CSR
/// arrays. The relative order of a cell's entries follows pair order, which
/// keeps gather sums deterministic.
fn gather_by_cell(
    cells: usize,
    entries: &mut Vec<(u32, u32, f64)>,
) -> (Vec<usize>, Vec<u32>, Vec<f64>) {
    let mut counts = vec![0usize; cells + 1];
    for &(cell, _, _) in entries.iter() {
        counts[cell as usize + 1] += 1;
    }
    for k in 0..cells {
        counts[k + 1] += counts[k];
    }
    let ptr = counts.clone();
    let mut cursor = counts;
    let mut pair_ids = vec![0u32; entries.len()];
    let mut values = vec![0.0f64; entries.len()];
    for &(cell, pair, value) in entries.iter() {
        let at = cursor[cell as usize];
        pair_ids[at] = pair;
        values[at] = value;
        cursor[cell as usize] += 1;
    }
    entries.clear();
    entries.shrink_to_fit();
    (ptr, pair_ids, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpacing, InitialCondition, project_initial};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn workspace(
        grid: &Arc<VolumeGrid>,
        kernel: CollisionKernel,
        probability: CoalescenceProbability,
        nu: f64,
    ) -> OperatorWorkspace {
        let kernel = kernel.with_truncation(grid.domain_max()).unwrap();
        let breakup = BreakupDistribution::power_law(nu).unwrap();
        OperatorWorkspace::new(grid.clone(), kernel, probability, breakup).unwrap()
    }

    fn random_state(grid: &Arc<VolumeGrid>, rng: &mut ChaCha8Rng) -> NumberDensity {
        let values: Vec<f64> = (0..grid.cells()).map(|_| rng.random_range(0.0..2.0)).collect();
        NumberDensity::from_values(grid.clone(), values, 0.0).unwrap()
    }

    #[test]
    fn zero_state_gives_zero_rates() {
        let grid = VolumeGrid::build(0.01, 10.0, 12, GridSpacing::Geometric).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::constant(1.0).unwrap(),
            CoalescenceProbability::constant(0.5).unwrap(),
            0.0,
        );
        let g = NumberDensity::zeros(grid.clone());
        assert!(ws.coagulation_gain(&g).unwrap().iter().all(|&v| v == 0.0));
        assert!(ws.collision_loss(&g).unwrap().iter().all(|&v| v == 0.0));
        assert!(ws.breakage_gain(&g).unwrap().iter().all(|&v| v == 0.0));
        assert!(ws.rhs(&g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_a_contract_violation() {
        let grid = VolumeGrid::build(0.01, 10.0, 8, GridSpacing::Geometric).unwrap();
        let other = VolumeGrid::build(0.01, 10.0, 9, GridSpacing::Geometric).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::constant(1.0).unwrap(),
            CoalescenceProbability::One,
            0.0,
        );
        let g = NumberDensity::zeros(other);
        assert!(matches!(ws.coagulation_gain(&g), Err(Error::Contract(_))));
    }

    #[test]
    fn coagulation_gain_two_cell_hand_value() {
        // Uniform grid 1..5 with pivots 2 and 4: a (0,0) merger lands exactly
        // on pivot 4. Hand-computed: event rate = K/2 * (g0 w0)^2, density
        // gain in cell 1 = rate / w1.
        let grid = VolumeGrid::build(1.0, 5.0, 2, GridSpacing::Uniform).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::constant(1.0).unwrap(),
            CoalescenceProbability::One,
            0.0,
        );
        let a = 0.7;
        let g = NumberDensity::from_values(grid.clone(), vec![a, 0.0], 0.0).unwrap();
        let gain = ws.coagulation_gain(&g).unwrap();
        assert_eq!(gain[0], 0.0);
        let event_rate = 0.5 * (a * 2.0) * (a * 2.0);
        assert_relative_eq!(gain[1], event_rate / 2.0, max_relative = 1e-14);
        // Total gained volume rate = event rate * (pivot0 + pivot0).
        let mass_rate = gain[1] * grid.pivot(1) * grid.width(1);
        assert_relative_eq!(mass_rate, event_rate * 4.0, max_relative = 1e-14);
    }

    #[test]
    fn coagulation_gain_vanishes_when_nothing_merges() {
        let grid = VolumeGrid::build(0.01, 10.0, 16, GridSpacing::Geometric).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::constant(1.0).unwrap(),
            CoalescenceProbability::Zero,
            0.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_state(&grid, &mut rng);
        assert!(ws.coagulation_gain(&g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_single_occupied_cell() {
        let grid = VolumeGrid::build(0.5, 8.0, 4, GridSpacing::Uniform).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::constant(1.0).unwrap(),
            CoalescenceProbability::One,
            0.0,
        );
        let mut values = vec![0.0; 4];
        values[1] = 1.3;
        let g = NumberDensity::from_values(grid.clone(), values, 0.0).unwrap();
        let loss = ws.collision_loss(&g).unwrap();
        // Only the occupied cell loses, at rate g^2 w (self-collisions).
        assert_relative_eq!(loss[1], 1.3 * 1.3 * grid.width(1), max_relative = 1e-14);
        assert_eq!(loss[0], 0.0);
        assert_eq!(loss[2], 0.0);
    }

    #[test]
    fn loss_respects_truncation_window() {
        // Uniform occupancy: loss_k = g_k * sum over partners with
        // pivot_k + pivot_j < n.
        let grid = VolumeGrid::build(0.5, 8.5, 4, GridSpacing::Uniform).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::constant(1.0).unwrap(),
            CoalescenceProbability::One,
            0.0,
        );
        let g = NumberDensity::from_values(grid.clone(), vec![1.0; 4], 0.0).unwrap();
        let loss = ws.collision_loss(&g).unwrap();
        let pivots = grid.pivots();
        for k in 0..4 {
            let mut expect = 0.0;
            for j in 0..4 {
                if pivots[k] + pivots[j] < 8.5 {
                    expect += grid.width(j);
                }
            }
            assert_relative_eq!(loss[k], expect, max_relative = 1e-14);
        }
        // The largest pivot pair (6.5 + 6.5) is outside the window.
        assert!(pivots[3] + pivots[3] >= 8.5);
        assert!(loss[3] < loss[0]);
    }

    #[test]
    fn breakage_redistribution_rows_carry_exact_count_and_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &nu in &[0.0, -0.25, -0.5, -0.75] {
            let grid = VolumeGrid::build(5e-3, 50.0, 64, GridSpacing::Geometric).unwrap();
            let dist = BreakupDistribution::power_law(nu).unwrap();
            let builder = RowBuilder::new(&grid, &dist);
            let target = dist.fragment_count();
            let mut counts = Vec::new();
            for _ in 0..20 {
                let i = rng.random_range(0..grid.cells());
                let j = rng.random_range(0..grid.cells());
                let total = grid.pivot(i) + grid.pivot(j);
                if total >= grid.domain_max() {
                    continue;
                }
                let stats = builder.build(total, &mut counts);
                let count: f64 = counts.iter().sum();
                let mass: f64 = counts.iter().zip(grid.pivots()).map(|(c, p)| c * p).sum();
                assert_relative_eq!(mass, total, max_relative = 1e-12);
                if !stats.fallback {
                    assert_relative_eq!(count, target, max_relative = 1e-12);
                }
                assert!(counts.iter().all(|&c| c >= 0.0));
            }
        }
    }

    #[test]
    fn smallest_pair_binary_breakage_is_exact() {
        // Parents both in the first cell: the closure must still deliver
        // exactly two fragments carrying the combined volume.
        let grid = VolumeGrid::build(1e-2, 10.0, 32, GridSpacing::Geometric).unwrap();
        let dist = BreakupDistribution::power_law(0.0).unwrap();
        let builder = RowBuilder::new(&grid, &dist);
        let total = 2.0 * grid.pivot(0);
        let mut counts = Vec::new();
        let stats = builder.build(total, &mut counts);
        assert!(!stats.fallback);
        let count: f64 = counts.iter().sum();
        let mass: f64 = counts.iter().zip(grid.pivots()).map(|(c, p)| c * p).sum();
        assert_relative_eq!(count, 2.0, max_relative = 1e-12);
        assert_relative_eq!(mass, total, max_relative = 1e-12);
    }

    #[test]
    fn tabulated_spectrum_rows_conserve_both_identities() {
        // The generic (non-power-law) row path: a ramp spectrum from a table.
        use crate::kernels::FragmentTable;
        let table = FragmentTable::new(vec![0.0, 0.3, 1.0], vec![0.5, 4.0, 0.1]).unwrap();
        let dist = BreakupDistribution::custom(table);
        let target = dist.fragment_count();
        let grid = VolumeGrid::build(0.01, 20.0, 48, GridSpacing::Geometric).unwrap();
        let kernel = CollisionKernel::product_sum(1.0, 0.3, 0.7)
            .unwrap()
            .with_truncation(20.0)
            .unwrap();
        let ws = OperatorWorkspace::new(
            grid.clone(),
            kernel,
            CoalescenceProbability::Zero,
            dist,
        )
        .unwrap();
        let (counts, masses) = ws.redistribution_row_sums();
        let mut exact_counts = 0usize;
        for (p, &(i, j)) in ws.pairs().iter().enumerate() {
            let total = grid.pivot(i as usize) + grid.pivot(j as usize);
            assert_relative_eq!(masses[p], total, max_relative = 1e-12);
            if (counts[p] / target - 1.0).abs() <= 1e-12 {
                exact_counts += 1;
            }
        }
        assert_eq!(exact_counts + ws.fallback_pair_count(), ws.pairs().len());

        // And the assembled rhs still conserves volume.
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let g = random_state(&grid, &mut rng);
        let rhs = ws.rhs(&g).unwrap();
        let drift: f64 = rhs
            .iter()
            .enumerate()
            .map(|(k, v)| v * grid.pivot(k) * grid.width(k))
            .sum();
        let scale: f64 = rhs
            .iter()
            .enumerate()
            .map(|(k, v)| (v * grid.pivot(k) * grid.width(k)).abs())
            .sum();
        assert!(drift.abs() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn uniform_grid_conserves_volume_too() {
        let grid = VolumeGrid::build(0.5, 24.0, 24, GridSpacing::Uniform).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::product_sum(1.0, 0.3, 0.7).unwrap(),
            CoalescenceProbability::constant(0.3).unwrap(),
            -0.5,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let g = random_state(&grid, &mut rng);
        let rhs = ws.rhs(&g).unwrap();
        let drift: f64 = rhs
            .iter()
            .enumerate()
            .map(|(k, v)| v * grid.pivot(k) * grid.width(k))
            .sum();
        let scale: f64 = rhs
            .iter()
            .enumerate()
            .map(|(k, v)| (v * grid.pivot(k) * grid.width(k)).abs())
            .sum();
        assert!(drift.abs() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn breakage_gain_zero_under_pure_coagulation_bitwise() {
        let grid = VolumeGrid::build(0.01, 20.0, 24, GridSpacing::Geometric).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::product_sum(1.0, 0.3, 0.7).unwrap(),
            CoalescenceProbability::One,
            0.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let g = random_state(&grid, &mut rng);
        let gain = ws.breakage_gain(&g).unwrap();
        assert!(gain.iter().all(|&v| v == 0.0 && v.is_sign_positive()));

        // rhs must agree bitwise with composing the three operators, i.e.
        // with the breakage term manually disabled.
        let rhs = ws.rhs(&g).unwrap();
        let coag = ws.coagulation_gain(&g).unwrap();
        let loss = ws.collision_loss(&g).unwrap();
        for k in 0..grid.cells() {
            assert_eq!(rhs[k], (coag[k] - loss[k]) + gain[k]);
            assert_eq!(rhs[k], coag[k] - loss[k]);
        }
    }

    #[test]
    fn breakage_event_count_matches_expected_fragments() {
        // One shattering pair: the integrated gain must equal the event rate
        // times the expected fragment count.
        let grid = VolumeGrid::build(0.05, 12.0, 24, GridSpacing::Geometric).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::constant(1.0).unwrap(),
            CoalescenceProbability::Zero,
            0.0,
        );
        let i = 8;
        let j = 13;
        let mut values = vec![0.0; grid.cells()];
        values[i] = 1.1;
        values[j] = 0.6;
        let g = NumberDensity::from_values(grid.clone(), values, 0.0).unwrap();
        let gain = ws.breakage_gain(&g).unwrap();
        let total_count_rate: f64 = gain
            .iter()
            .zip(grid.widths())
            .map(|(v, w)| v * w)
            .sum();
        let wi = grid.width(i);
        let wj = grid.width(j);
        // Events: (i,j) at rate K gi gj wi wj, plus self pairs (i,i), (j,j).
        let events = 1.1 * 0.6 * wi * wj
            + 0.5 * (1.1 * wi).powi(2)
            + 0.5 * (0.6 * wj).powi(2);
        assert_relative_eq!(total_count_rate, 2.0 * events, max_relative = 1e-12);
    }

    #[test]
    fn rhs_conserves_volume_for_any_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let grid = VolumeGrid::build(0.02, 30.0, 48, GridSpacing::Geometric).unwrap();
        for &nu in &[0.0, -0.5] {
            for prob in [
                CoalescenceProbability::One,
                CoalescenceProbability::Zero,
                CoalescenceProbability::constant(0.37).unwrap(),
                CoalescenceProbability::volume_ratio(0.8, 1.0).unwrap(),
            ] {
                let ws = workspace(
                    &grid,
                    CollisionKernel::product_sum(1.0, 0.3, 0.7).unwrap(),
                    prob,
                    nu,
                );
                for _ in 0..5 {
                    let g = random_state(&grid, &mut rng);
                    let rhs = ws.rhs(&g).unwrap();
                    let drift: f64 = rhs
                        .iter()
                        .enumerate()
                        .map(|(k, v)| v * grid.pivot(k) * grid.width(k))
                        .sum();
                    let scale: f64 = rhs
                        .iter()
                        .enumerate()
                        .map(|(k, v)| (v * grid.pivot(k) * grid.width(k)).abs())
                        .sum();
                    assert!(
                        drift.abs() <= 1e-10 * scale.max(1e-300),
                        "volume drift {drift:.3e} vs scale {scale:.3e} (nu={nu})"
                    );
                }
            }
        }
    }

    #[test]
    fn rhs_number_balance() {
        // M0 rate must equal sum over pairs of events * (-E + (1-E)(N-2)).
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let grid = VolumeGrid::build(0.05, 20.0, 32, GridSpacing::Geometric).unwrap();
        let prob = CoalescenceProbability::constant(0.4).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::product_sum(0.7, 0.3, 0.7).unwrap(),
            prob,
            -0.5,
        );
        let g = random_state(&grid, &mut rng);
        let rhs = ws.rhs(&g).unwrap();
        let m0_rate: f64 = rhs
            .iter()
            .zip(grid.widths())
            .map(|(v, w)| v * w)
            .sum();
        let content: Vec<f64> = g
            .values()
            .iter()
            .zip(grid.widths())
            .map(|(v, w)| v * w)
            .collect();
        let mut expect = 0.0;
        for (p, &(i, j)) in ws.pairs().iter().enumerate() {
            let events_coag = ws.coag_rate[p] * content[i as usize] * content[j as usize];
            let events_break = ws.break_rate[p] * content[i as usize] * content[j as usize];
            expect += events_coag * (ws.pair_merge_counts()[p] - 2.0)
                + events_break * (ws.pair_fragment_counts()[p] - 2.0);
        }
        assert_relative_eq!(m0_rate, expect, max_relative = 1e-10);
    }

    #[test]
    fn binary_exchange_preserves_count_rate() {
        // E = 0, nu = 0: every collision swaps two particles for two
        // fragments, so the number rate vanishes.
        let grid = VolumeGrid::build(5e-3, 50.0, 96, GridSpacing::Geometric).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::product_sum(1.0, 0.3, 0.7).unwrap(),
            CoalescenceProbability::Zero,
            0.0,
        );
        assert_eq!(ws.fallback_pair_count(), 0);
        let g0 = InitialCondition::exponential(1.0).unwrap();
        let g = project_initial(&g0, &grid).unwrap().density;
        let rhs = ws.rhs(&g).unwrap();
        let m0_rate: f64 = rhs.iter().zip(grid.widths()).map(|(v, w)| v * w).sum();
        let m0 = g.moment(0.0).unwrap();
        assert!(
            m0_rate.abs() <= 1e-12 * m0.max(1.0),
            "count rate {m0_rate:.3e} should vanish for binary exchange"
        );
    }

    #[test]
    fn gains_nonnegative_and_loss_zero_on_empty_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let grid = VolumeGrid::build(0.02, 15.0, 24, GridSpacing::Geometric).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::product_sum(1.0, 0.4, 0.6).unwrap(),
            CoalescenceProbability::constant(0.5).unwrap(),
            -0.5,
        );
        for _ in 0..10 {
            let mut g = random_state(&grid, &mut rng);
            let empty = rng.random_range(0..grid.cells());
            g.values_mut()[empty] = 0.0;
            let coag = ws.coagulation_gain(&g).unwrap();
            let brk = ws.breakage_gain(&g).unwrap();
            let loss = ws.collision_loss(&g).unwrap();
            assert!(coag.iter().all(|&v| v >= 0.0));
            assert!(brk.iter().all(|&v| v >= 0.0));
            assert_eq!(loss[empty], 0.0);
            let rhs = ws.rhs(&g).unwrap();
            assert!(rhs[empty] >= 0.0);
        }
    }

    #[test]
    fn parallel_evaluation_is_bitwise_stable() {
        let grid = VolumeGrid::build(0.01, 25.0, 64, GridSpacing::Geometric).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::product_sum(1.0, 0.3, 0.7).unwrap(),
            CoalescenceProbability::constant(0.5).unwrap(),
            -0.5,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let g = random_state(&grid, &mut rng);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| ws.rhs(&g).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| ws.rhs(&g).unwrap());
        assert_eq!(single, many);
    }

    #[test]
    fn dump_tables_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let grid = VolumeGrid::build(0.1, 4.0, 4, GridSpacing::Uniform).unwrap();
        let ws = workspace(
            &grid,
            CollisionKernel::constant(1.0).unwrap(),
            CoalescenceProbability::constant(0.5).unwrap(),
            0.0,
        );
        ws.dump_tables(dir.path()).unwrap();
        for name in ["kernel_table.csv", "probability_table.csv", "redistribution_table.csv"] {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert!(text.lines().count() > 1, "{name} should have rows");
        }
    }
}
