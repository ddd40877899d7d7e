//! Sampled audit of the structural assumptions on the model ingredients:
//! measurability/nonnegativity of the kernel, the product-sum growth band,
//! the local lower bound on the coalescence probability, the vanishing
//! small-set modulus of the fragment spectrum, and its algebraic small-volume
//! envelope.
//!
//! These checks are heuristics, not proofs: set-quantified conditions are
//! probed on randomly drawn sets and the envelope constants are fitted by
//! regression on samples. The report carries the fitted quantities so a
//! reader can judge the fit, and the solver runs regardless of the verdicts.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernels::{BreakupDistribution, CoalescenceProbability, CollisionKernel};

/// Sampling parameters for the audit.
#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub seed: u64,
    /// Sample count per probe (grid resolution, trials per set size, ...).
    pub samples: usize,
    /// Slack applied to strict inequalities checked on samples.
    pub tolerance: f64,
    /// Set sizes for the small-set modulus probe, largest first.
    pub set_sizes: Vec<f64>,
    /// Window sizes `W` for the small-volume envelope probe.
    pub windows: Vec<f64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            samples: 64,
            tolerance: 1e-9,
            set_sizes: vec![1e-1, 1e-2, 1e-3, 1e-4],
            windows: vec![1.0, 4.0],
        }
    }
}

/// Outcome of the assumption audit, one flag per assumption plus the fitted
/// constants behind the verdicts.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Kernel is nonnegative and finite on sampled volumes.
    pub gamma1_ok: bool,
    /// Kernel is product-sum with exponents in the compliant band.
    pub gamma2_ok: bool,
    /// Coalescence probability respects the local lower bound
    /// `(N - 2) / (N - 1)` on the unit square.
    pub gamma3_ok: bool,
    /// Small-set fragment mass modulus decays towards zero.
    pub gamma4_ok: bool,
    /// Fragment spectrum obeys an algebraic envelope `k(W) z^-tau2` with
    /// `tau2` in `[0, 1)`.
    pub gamma5_ok: bool,

    pub k1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau2: f64,
    /// Fitted envelope constant per window size `W`.
    pub k_w: Vec<(f64, f64)>,
    /// `(set size, fitted modulus)` pairs, largest set first.
    pub omega1_samples: Vec<(f64, f64)>,
    pub gamma3_lower_bound: f64,
    /// Smallest sampled coalescence probability on the unit square.
    pub gamma3_min_probability: f64,
    pub fragment_count: f64,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.gamma1_ok && self.gamma2_ok && self.gamma3_ok && self.gamma4_ok && self.gamma5_ok
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gamma1_ok: {}", self.gamma1_ok)?;
        writeln!(f, "gamma2_ok: {}", self.gamma2_ok)?;
        writeln!(f, "gamma3_ok: {}", self.gamma3_ok)?;
        writeln!(f, "gamma4_ok: {}", self.gamma4_ok)?;
        writeln!(f, "gamma5_ok: {}", self.gamma5_ok)?;
        writeln!(f, "kernel_k1: {:.6e}", self.k1)?;
        writeln!(f, "kernel_alpha: {}", self.alpha)?;
        writeln!(f, "kernel_beta: {}", self.beta)?;
        writeln!(f, "fragment_count: {:.12}", self.fragment_count)?;
        writeln!(f, "gamma3_lower_bound: {:.12}", self.gamma3_lower_bound)?;
        writeln!(f, "gamma3_min_probability: {:.12}", self.gamma3_min_probability)?;
        writeln!(f, "tau2: {:.6}", self.tau2)?;
        for (w, k) in &self.k_w {
            writeln!(f, "k_w[{w}]: {k:.6e}")?;
        }
        for (delta, omega) in &self.omega1_samples {
            writeln!(f, "omega1[{delta:.1e}]: {omega:.6e}")?;
        }
        Ok(())
    }
}

/// Run the sampled assumption audit. Failures are reported, never raised.
pub fn audit_assumptions(
    kernel: &CollisionKernel,
    probability: &CoalescenceProbability,
    breakup: &BreakupDistribution,
    cfg: &AuditConfig,
) -> AssumptionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Nonnegativity / finiteness on scattered volumes.
    let mut gamma1_ok = true;
    for _ in 0..cfg.samples * 4 {
        let z = 10f64.powf(rng.random_range(-6.0..3.0));
        let z1 = 10f64.powf(rng.random_range(-6.0..3.0));
        match kernel.rate(z, z1) {
            Ok(v) if v.is_finite() && v >= 0.0 => {}
            _ => gamma1_ok = false,
        }
    }

    let gamma2_ok = kernel.is_growth_compliant();
    let (k1, alpha, beta) = kernel.product_sum_parameters();

    // Local lower bound on the coalescence probability over (0,1)^2,
    // probed on a grid plus random fill-in.
    let n = breakup.fragment_count();
    let gamma3_lower_bound = if n > 1.0 { (n - 2.0) / (n - 1.0) } else { f64::NEG_INFINITY };
    let mut min_e = f64::INFINITY;
    let grid_steps = cfg.samples.max(8);
    for i in 0..grid_steps {
        for j in 0..grid_steps {
            let z = (i as f64 + 0.5) / grid_steps as f64;
            let z1 = (j as f64 + 0.5) / grid_steps as f64;
            min_e = min_e.min(probability.eval(z, z1));
        }
    }
    for _ in 0..cfg.samples {
        let z = rng.random_range(1e-9..1.0);
        let z1 = rng.random_range(1e-9..1.0);
        min_e = min_e.min(probability.eval(z, z1));
    }
    let gamma3_ok = min_e >= gamma3_lower_bound - cfg.tolerance;

    // Small-set modulus: partial fragment counts over shrinking random unions
    // of subintervals of (0, 1), weighted by z1^alpha. The modulus must
    // decay monotonically and reach 1% of its largest-set value.
    let probe_alpha = if gamma2_ok { alpha } else { 0.5 };
    let omega1_samples = omega1_probe(breakup, probe_alpha, cfg, &mut rng);
    let gamma4_ok = omega1_samples.windows(2).all(|w| w[1].1 <= w[0].1)
        && match (omega1_samples.first(), omega1_samples.last()) {
            (Some(&(_, first)), Some(&(_, last))) => last <= 1e-2 * first,
            _ => false,
        };

    // Small-volume envelope: sample the spectrum for combined parent volumes
    // beyond each window and fit log P against log z.
    let mut k_w = Vec::new();
    let mut tau2 = 0.0;
    for &w in &cfg.windows {
        let (k_fit, tau_fit) = envelope_probe(breakup, w, cfg, &mut rng);
        k_w.push((w, k_fit));
        tau2 = tau_fit; // identical across windows for scale-free spectra
    }
    let gamma5_ok = (0.0..1.0).contains(&tau2) && k_w.iter().all(|&(_, k)| k.is_finite() && k > 0.0);

    AssumptionReport {
        gamma1_ok,
        gamma2_ok,
        gamma3_ok,
        gamma4_ok,
        gamma5_ok,
        k1,
        alpha,
        beta,
        tau2,
        k_w,
        omega1_samples,
        gamma3_lower_bound,
        gamma3_min_probability: min_e,
        fragment_count: n,
    }
}

/// For each set size delta: draw unions `U` of random subintervals of (0, 1)
/// with total measure delta, draw `z1` uniformly, and record the largest
/// observed `z1^alpha * ∫_U P(z | z1) dz`.
fn omega1_probe(
    breakup: &BreakupDistribution,
    alpha: f64,
    cfg: &AuditConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    let pieces = 8usize;
    cfg.set_sizes
        .iter()
        .map(|&delta| {
            let mut worst: f64 = 0.0;
            for _ in 0..cfg.samples {
                let intervals = random_union(delta, pieces, rng);
                // Away from the z1 -> 0 corner, where the weighted integral
                // is dominated by the weight, not the set size.
                let z1: f64 = rng.random_range(0.25..1.0);
                let mut integral = 0.0;
                for &(a, b) in &intervals {
                    integral += breakup.count_integral(z1, a, b.min(z1));
                }
                worst = worst.max(z1.powf(alpha) * integral);
            }
            (delta, worst)
        })
        .collect()
}

/// Union of `pieces` disjoint random subintervals of (0, 1) with total
/// measure `delta`, returned sorted.
fn random_union(delta: f64, pieces: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let each = delta / pieces as f64;
    let mut starts: Vec<f64> = (0..pieces)
        .map(|_| rng.random_range(0.0..1.0 - each))
        .collect();
    starts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(pieces);
    for s in starts {
        match intervals.last_mut() {
            Some(last) if s < last.1 => {
                // Overlap: extend so the total measure stays delta.
                last.1 += each;
            }
            _ => intervals.push((s, s + each)),
        }
    }
    for iv in intervals.iter_mut() {
        iv.1 = iv.1.min(1.0);
    }
    intervals
}

/// Fit `P(z | parents) <= k z^-tau2` on `z in (0, W)` for combined parent
/// volumes beyond `W`: log-log regression of the per-z supremum over sampled
/// parent pairs.
fn envelope_probe(
    breakup: &BreakupDistribution,
    window: f64,
    cfg: &AuditConfig,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let pairs: Vec<(f64, f64)> = (0..cfg.samples)
        .map(|_| {
            let total = window * rng.random_range(1.0f64..4.0).max(1.0 + 1e-9);
            let split = rng.random_range(0.1..0.9);
            (total * split, total * (1.0 - split))
        })
        .collect();

    let zs: Vec<f64> = (0..cfg.samples.max(16))
        .map(|i| {
            let t = (i as f64 + 0.5) / cfg.samples.max(16) as f64;
            window * 10f64.powf(-4.0 * (1.0 - t))
        })
        .collect();

    let mut points = Vec::with_capacity(zs.len());
    for &z in &zs {
        let mut sup: f64 = 0.0;
        for &(z1, z2) in &pairs {
            sup = sup.max(breakup.density(z, z1, z2).unwrap_or(0.0));
        }
        if sup > 0.0 {
            points.push((z.ln(), sup.ln()));
        }
    }
    if points.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let tau2 = (-slope).max(0.0);
    // Constant absorbing the fit: supremum of P z^tau2 over all samples.
    let mut k = 0.0f64;
    for &(lz, lp) in &points {
        k = k.max((lp + tau2 * lz).exp());
    }
    (k, tau2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn binary_model() -> (CollisionKernel, CoalescenceProbability, BreakupDistribution) {
        (
            CollisionKernel::product_sum(1.0, 0.3, 0.7).unwrap(),
            CoalescenceProbability::One,
            BreakupDistribution::power_law(0.0).unwrap(),
        )
    }

    #[test]
    fn binary_breakage_with_full_coalescence_passes() {
        let (kernel, prob, dist) = binary_model();
        let report = audit_assumptions(&kernel, &prob, &dist, &AuditConfig::default());
        assert!(report.gamma1_ok);
        assert!(report.gamma2_ok);
        assert!(report.gamma3_ok);
        // N = 2 makes the local lower bound vanish.
        assert_relative_eq!(report.gamma3_lower_bound, 0.0);
        assert!(report.gamma4_ok, "omega1 samples: {:?}", report.omega1_samples);
        assert!(report.gamma5_ok);
        // Flat spectrum: fitted exponent is zero.
        assert!(report.tau2.abs() <= 1e-9, "tau2 = {}", report.tau2);
        assert!(report.all_ok());
    }

    #[test]
    fn constant_kernel_flagged_but_reported() {
        let kernel = CollisionKernel::constant(1.0).unwrap();
        let (_, prob, dist) = binary_model();
        let report = audit_assumptions(&kernel, &prob, &dist, &AuditConfig::default());
        assert!(report.gamma1_ok);
        assert!(!report.gamma2_ok);
        assert_relative_eq!(report.k1, 0.5);
        assert_eq!(report.alpha, 0.0);
        assert_eq!(report.beta, 0.0);
    }

    #[test]
    fn singular_spectrum_fits_its_exponent() {
        let (kernel, prob, _) = binary_model();
        let dist = BreakupDistribution::power_law(-0.5).unwrap();
        let report = audit_assumptions(&kernel, &prob, &dist, &AuditConfig::default());
        assert_relative_eq!(report.tau2, 0.5, max_relative = 1e-6);
        assert!(report.gamma5_ok);
        // N = 3: the local bound becomes 1/2, still met by E = 1.
        assert_relative_eq!(report.gamma3_lower_bound, 0.5);
        assert!(report.gamma3_ok);
    }

    #[test]
    fn low_probability_violates_local_bound() {
        let (kernel, _, _) = binary_model();
        let dist = BreakupDistribution::power_law(-0.5).unwrap(); // bound 1/2
        let prob = CoalescenceProbability::constant(0.2).unwrap();
        let report = audit_assumptions(&kernel, &prob, &dist, &AuditConfig::default());
        assert!(!report.gamma3_ok);
        // Zero probability with binary breakage is fine: the bound is 0.
        let binary = BreakupDistribution::power_law(0.0).unwrap();
        let report = audit_assumptions(&kernel, &CoalescenceProbability::Zero, &binary, &AuditConfig::default());
        assert!(report.gamma3_ok);
    }

    #[test]
    fn omega1_decays_with_set_size() {
        let (kernel, prob, dist) = binary_model();
        let report = audit_assumptions(&kernel, &prob, &dist, &AuditConfig::default());
        let omegas: Vec<f64> = report.omega1_samples.iter().map(|p| p.1).collect();
        assert_eq!(omegas.len(), 4);
        for w in omegas.windows(2) {
            assert!(w[1] <= w[0], "omega1 not monotone: {omegas:?}");
        }
        assert!(omegas[3] <= 1e-2 * omegas[0]);
    }

    #[test]
    fn report_renders_key_value_lines() {
        let (kernel, prob, dist) = binary_model();
        let report = audit_assumptions(&kernel, &prob, &dist, &AuditConfig::default());
        let text = report.to_string();
        for key in ["gamma1_ok:", "gamma5_ok:", "tau2:", "omega1[", "k_w["] {
            assert!(text.contains(key), "missing {key} in report:\n{text}");
        }
    }

    #[test]
    fn audit_is_deterministic() {
        let (kernel, prob, dist) = binary_model();
        let a = audit_assumptions(&kernel, &prob, &dist, &AuditConfig::default());
        let b = audit_assumptions(&kernel, &prob, &dist, &AuditConfig::default());
        assert_eq!(a.omega1_samples, b.omega1_samples);
        assert_eq!(a.tau2, b.tau2);
    }
}
