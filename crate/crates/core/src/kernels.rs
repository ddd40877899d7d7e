//! Model ingredients for binary particle collisions.
//!
//! A collision between particles of volumes `z` and `z1` happens at rate
//! `phi(z, z1)`. With probability `E(z, z1)` the pair coalesces into one
//! particle of volume `z + z1`; otherwise it shatters, and the fragment
//! spectrum is described by a distribution `P(z | z1; z2)` that integrates
//! to the expected fragment count and carries the combined parent volume.
//!
//! All evaluations here are pure and stateless, so they are safe to call
//! from data-parallel loops.

use crate::error::{Error, Result};
use crate::quad::integrate_power;

fn check_volume(name: &str, z: f64) -> Result<()> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(format!(
            "{name} must be a positive finite volume, got {z}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Collision kernel
// ---------------------------------------------------------------------------

/// Functional form of the collision rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelForm {
    /// `k1 * (z^alpha * z1^beta + z1^alpha * z^beta)`.
    ProductSum { k1: f64, alpha: f64, beta: f64 },
    /// Volume-independent rate `c`. The standard analytic-solution case;
    /// not compliant with the product-sum growth bounds.
    Constant { c: f64 },
}

/// Symmetric, nonnegative collision rate with an optional truncation volume.
///
/// The truncated rate vanishes whenever the combined volume `z + z1` reaches
/// `truncation_n`; set the truncation to `f64::INFINITY` to disable it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionKernel {
    form: KernelForm,
    truncation_n: f64,
}

impl CollisionKernel {
    /// Product-sum kernel `k1 (z^alpha z1^beta + z1^alpha z^beta)`.
    ///
    /// Evaluation accepts any `alpha, beta >= 0`; whether the exponents sit
    /// inside the compliant band `0 < alpha <= beta < 1` is a separate
    /// question answered by [`CollisionKernel::is_growth_compliant`].
    pub fn product_sum(k1: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(k1 >= 0.0) || !k1.is_finite() {
            return Err(Error::domain(format!("kernel k1 must be >= 0, got {k1}")));
        }
        if !(alpha >= 0.0) || !(beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::domain(format!(
                "kernel exponents must be >= 0, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self {
            form: KernelForm::ProductSum { k1, alpha, beta },
            truncation_n: f64::INFINITY,
        })
    }

    /// Constant kernel `phi = c`.
    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::domain(format!("constant rate must be >= 0, got {c}")));
        }
        Ok(Self {
            form: KernelForm::Constant { c },
            truncation_n: f64::INFINITY,
        })
    }

    /// Set the truncation volume `n` (positive, or infinite to disable).
    pub fn with_truncation(mut self, n: f64) -> Result<Self> {
        if !(n > 0.0) {
            return Err(Error::domain(format!(
                "truncation volume must be positive, got {n}"
            )));
        }
        self.truncation_n = n;
        Ok(self)
    }

    pub fn form(&self) -> KernelForm {
        self.form
    }

    pub fn truncation(&self) -> f64 {
        self.truncation_n
    }

    /// Collision rate `phi(z, z1)`; symmetric and nonnegative.
    pub fn rate(&self, z: f64, z1: f64) -> Result<f64> {
        check_volume("z", z)?;
        check_volume("z1", z1)?;
        Ok(match self.form {
            KernelForm::ProductSum { k1, alpha, beta } => {
                k1 * (z.powf(alpha) * z1.powf(beta) + z1.powf(alpha) * z.powf(beta))
            }
            KernelForm::Constant { c } => c,
        })
    }

    /// Truncated rate: `phi(z, z1)` while `z + z1 < truncation_n`, else 0.
    pub fn rate_truncated(&self, z: f64, z1: f64) -> Result<f64> {
        let rate = self.rate(z, z1)?;
        if z + z1 < self.truncation_n {
            Ok(rate)
        } else {
            Ok(0.0)
        }
    }

    /// Whether the kernel sits in the compliant product-sum band
    /// `0 < alpha <= beta < 1` with `k1 >= 0`.
    pub fn is_growth_compliant(&self) -> bool {
        match self.form {
            KernelForm::ProductSum { k1, alpha, beta } => {
                k1 >= 0.0 && 0.0 < alpha && alpha <= beta && beta < 1.0
            }
            KernelForm::Constant { .. } => false,
        }
    }

    /// Product-sum parameters `(k1, alpha, beta)`, embedding the constant
    /// kernel as `c/2 * (z^0 z1^0 + z1^0 z^0)`.
    pub fn product_sum_parameters(&self) -> (f64, f64, f64) {
        match self.form {
            KernelForm::ProductSum { k1, alpha, beta } => (k1, alpha, beta),
            KernelForm::Constant { c } => (0.5 * c, 0.0, 0.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Coalescence probability
// ---------------------------------------------------------------------------

/// Probability that a colliding pair merges instead of shattering.
/// Always symmetric and confined to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoalescenceProbability {
    /// Every collision coalesces: pure coagulation dynamics.
    One,
    /// No collision coalesces: pure collisional breakage dynamics.
    Zero,
    /// Volume-independent probability `e0`.
    Constant(f64),
    /// `e0 * (4 z z1 / (z + z1)^2)^exponent`: comparable volumes coalesce
    /// most readily, lopsided pairs tend to shatter.
    VolumeRatio { e0: f64, exponent: f64 },
}

impl CoalescenceProbability {
    pub fn constant(e0: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&e0) {
            return Err(Error::domain(format!(
                "coalescence probability must lie in [0, 1], got {e0}"
            )));
        }
        Ok(Self::Constant(e0))
    }

    pub fn volume_ratio(e0: f64, exponent: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&e0) {
            return Err(Error::domain(format!(
                "coalescence probability must lie in [0, 1], got {e0}"
            )));
        }
        if !(exponent >= 0.0) || !exponent.is_finite() {
            return Err(Error::domain(format!(
                "volume-ratio exponent must be >= 0, got {exponent}"
            )));
        }
        Ok(Self::VolumeRatio { e0, exponent })
    }

    /// `E(z, z1)` for positive volumes.
    pub fn eval(&self, z: f64, z1: f64) -> f64 {
        debug_assert!(z > 0.0 && z1 > 0.0);
        match *self {
            Self::One => 1.0,
            Self::Zero => 0.0,
            Self::Constant(e0) => e0,
            Self::VolumeRatio { e0, exponent } => {
                let sum = z + z1;
                e0 * (4.0 * z * z1 / (sum * sum)).powf(exponent)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Breakup distribution
// ---------------------------------------------------------------------------

/// Tabulated fragment spectrum on the normalized volume `u = z / (z1 + z2)`.
///
/// The table is a piecewise-linear density `q(u)` on knots spanning `[0, 1]`.
/// At construction `q` is rescaled by `1 / ∫ u q(u) du`, which pins the mass
/// identity `∫ u q du = 1` exactly; the fragment count then comes out as
/// `N = ∫ q du`. Both identities therefore hold by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentTable {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl FragmentTable {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() || knots.len() < 2 {
            return Err(Error::domain(
                "fragment table needs matching knot/value lists with at least two entries",
            ));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::domain(
                "fragment table knots must span u = 0 to u = 1",
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain(
                "fragment table knots must be strictly increasing",
            ));
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(
                "fragment table values must be finite and nonnegative",
            ));
        }
        let mut table = Self { knots, values };
        let mass = table.segment_moment(0.0, 1.0, 1);
        if !(mass > 0.0) {
            return Err(Error::domain(
                "fragment table must carry positive mass",
            ));
        }
        for v in &mut table.values {
            *v /= mass;
        }
        Ok(table)
    }

    fn eval(&self, u: f64) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        let idx = match self.knots.binary_search_by(|k| k.partial_cmp(&u).unwrap()) {
            Ok(i) => return self.values[i],
            Err(i) => i - 1,
        };
        let (u0, u1) = (self.knots[idx], self.knots[idx + 1]);
        let (q0, q1) = (self.values[idx], self.values[idx + 1]);
        q0 + (q1 - q0) * (u - u0) / (u1 - u0)
    }

    /// Exact `∫_a^b u^m q(u) du` for `m` in `{0, 1}` over the piecewise-linear
    /// table, clipped to `[0, 1]`.
    fn segment_moment(&self, a: f64, b: f64, m: u32) -> f64 {
        debug_assert!(m <= 1);
        let a = a.max(0.0);
        let b = b.min(1.0);
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        for seg in 0..self.knots.len() - 1 {
            let lo = self.knots[seg].max(a);
            let hi = self.knots[seg + 1].min(b);
            if hi <= lo {
                continue;
            }
            let (u0, u1) = (self.knots[seg], self.knots[seg + 1]);
            let (q0, q1) = (self.values[seg], self.values[seg + 1]);
            let slope = (q1 - q0) / (u1 - u0);
            let c0 = q0 - slope * u0; // q(u) = c0 + slope * u
            total += match m {
                0 => c0 * (hi - lo) + 0.5 * slope * (hi * hi - lo * lo),
                _ => {
                    0.5 * c0 * (hi * hi - lo * lo)
                        + slope * (hi * hi * hi - lo * lo * lo) / 3.0
                }
            };
        }
        total
    }
}

/// Functional form of the fragment spectrum.
#[derive(Debug, Clone, PartialEq)]
pub enum BreakupForm {
    /// `P(z | z1; z2) = (nu + 2) z^nu / (z1 + z2)^(nu + 1)` for `z < z1 + z2`.
    PowerLaw { nu: f64 },
    /// Tabulated density on the normalized fragment volume.
    Custom(FragmentTable),
}

/// Fragment spectrum `P(z | z1; z2)` of a shattering collision.
///
/// Symmetric in the parents, supported on `z <= z1 + z2`, and normalized so
/// that the spectrum integrates to the expected fragment count while the
/// volume-weighted integral returns the combined parent volume.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakupDistribution {
    form: BreakupForm,
    fragment_count: f64,
}

impl BreakupDistribution {
    /// Power-law family with exponent `nu` in `(-1, 0]`.
    ///
    /// `nu = 0` is binary breakage (two fragments). As `nu` decreases the
    /// expected count `(nu + 2) / (nu + 1)` grows, and at `nu <= -1` the
    /// event would spawn infinitely many daughters, which is rejected.
    pub fn power_law(nu: f64) -> Result<Self> {
        if !nu.is_finite() || nu > 0.0 {
            return Err(Error::domain(format!(
                "power-law exponent must lie in (-1, 0], got {nu}"
            )));
        }
        if nu <= -1.0 {
            return Err(Error::UnsupportedRegime(format!(
                "power-law exponent {nu} produces an unbounded number of daughter particles; \
                 supported range is (-1, 0]"
            )));
        }
        Ok(Self {
            form: BreakupForm::PowerLaw { nu },
            fragment_count: (nu + 2.0) / (nu + 1.0),
        })
    }

    /// Custom spectrum from a normalized fragment table.
    pub fn custom(table: FragmentTable) -> Self {
        let count = table.segment_moment(0.0, 1.0, 0);
        Self {
            form: BreakupForm::Custom(table),
            fragment_count: count,
        }
    }

    pub fn form(&self) -> &BreakupForm {
        &self.form
    }

    /// Expected number of fragments per shattering event.
    pub fn fragment_count(&self) -> f64 {
        self.fragment_count
    }

    /// Fragment density `P(z | z1; z2)`; zero beyond the combined parent
    /// volume and symmetric under swapping the parents.
    pub fn density(&self, z: f64, z1: f64, z2: f64) -> Result<f64> {
        check_volume("z", z)?;
        check_volume("z1", z1)?;
        check_volume("z2", z2)?;
        let total = z1 + z2;
        if z > total {
            return Ok(0.0);
        }
        Ok(match &self.form {
            BreakupForm::PowerLaw { nu } => {
                (nu + 2.0) * z.powf(*nu) / total.powf(nu + 1.0)
            }
            BreakupForm::Custom(table) => table.eval(z / total) / total,
        })
    }

    /// Exact `∫ P(z | total) dz` over `(lo, hi)`, clipped to the support
    /// `(0, total)`. `total` is the combined parent volume.
    pub fn count_integral(&self, total: f64, lo: f64, hi: f64) -> f64 {
        debug_assert!(total > 0.0);
        let lo = lo.max(0.0);
        let hi = hi.min(total);
        if hi <= lo {
            return 0.0;
        }
        match &self.form {
            BreakupForm::PowerLaw { nu } => {
                (nu + 2.0) / total.powf(nu + 1.0) * integrate_power(lo, hi, *nu)
            }
            BreakupForm::Custom(table) => table.segment_moment(lo / total, hi / total, 0),
        }
    }

    /// Exact `∫ z P(z | total) dz` over `(lo, hi)`, clipped to the support.
    pub fn mass_integral(&self, total: f64, lo: f64, hi: f64) -> f64 {
        debug_assert!(total > 0.0);
        let lo = lo.max(0.0);
        let hi = hi.min(total);
        if hi <= lo {
            return 0.0;
        }
        match &self.form {
            BreakupForm::PowerLaw { nu } => {
                (nu + 2.0) / total.powf(nu + 1.0) * integrate_power(lo, hi, nu + 1.0)
            }
            BreakupForm::Custom(table) => {
                total * table.segment_moment(lo / total, hi / total, 1)
            }
        }
    }
}
