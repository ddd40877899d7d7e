//! Small quadrature helpers: adaptive Simpson integration and exact power
//! integrals. Used for projecting initial data onto the grid and for the
//! identity checks on fragment distributions.

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
///
/// Recursion stops once the Richardson estimate of the local error drops
/// below `rel_tol * |integral|` (with `abs_tol` as a floor) or the depth
/// limit is reached. Integrable endpoint singularities should be removed by
/// substitution before calling this; see [`integrate_power_weighted`].
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    simpson_recurse(&f, a, b, fa, fm, fb, whole, rel_tol, abs_tol, 48)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    rel_tol: f64,
    abs_tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    let tol = abs_tol.max(rel_tol * (left + right).abs());
    if depth == 0 || delta.abs() <= 15.0 * tol {
        // Richardson extrapolation of the two half-interval estimates.
        return left + right + delta / 15.0;
    }
    simpson_recurse(f, a, m, fa, flm, fm, left, rel_tol, 0.5 * abs_tol, depth - 1)
        + simpson_recurse(f, m, b, fm, frm, fb, right, rel_tol, 0.5 * abs_tol, depth - 1)
}

/// Exact `∫_a^b z^p dz` for `p > -1` and `0 <= a <= b`.
pub fn integrate_power(a: f64, b: f64, p: f64) -> f64 {
    debug_assert!(p > -1.0);
    debug_assert!(a >= 0.0 && b >= a);
    let q = p + 1.0;
    (b.powf(q) - a.powf(q)) / q
}

/// Adaptive quadrature of `∫_a^b z^p · w(z) dz` with `p > -1`, tolerant of the
/// `z -> 0` singularity: the substitution `z = u^16` turns `z^p` into
/// `u^(16p+15)`, which is bounded for `p >= -15/16` and integrable (handled
/// by the adaptive refinement) down to `p > -1`.
pub fn integrate_power_weighted<F: Fn(f64) -> f64>(
    w: F,
    a: f64,
    b: f64,
    p: f64,
    rel_tol: f64,
) -> f64 {
    debug_assert!(p > -1.0);
    if b <= a {
        return 0.0;
    }
    let ua = a.max(0.0).powf(1.0 / 16.0);
    let ub = b.powf(1.0 / 16.0);
    let g = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let z = u.powi(16);
        16.0 * u.powf(16.0 * p + 15.0) * w(z)
    };
    adaptive_simpson(g, ua, ub, rel_tol, 1e-300)
}
