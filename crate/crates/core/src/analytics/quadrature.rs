//! Adaptive Simpson quadrature and the `∫ eʸ/y dy` integral.

use crate::scalar::Real;

use super::AnalyticsError;

/// Absolute tolerance requested from [`exp_integral`].
pub const EXP_INTEGRAL_TOL: f64 = 1e-9;
/// Recursion limit of [`adaptive_simpson`].
pub const MAX_DEPTH: u32 = 60;

struct Panel<T> {
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
}

fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::of(6.0) * (fa + T::of(4.0) * fm + fb)
}

fn refine<T: Real, F: Fn(T) -> T>(f: &F, p: Panel<T>, tol: T, depth: u32) -> T {
    let two = T::of(2.0);
    let m = (p.a + p.b) / two;
    let lm = (p.a + m) / two;
    let rm = (m + p.b) / two;
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(p.a, m, p.fa, flm, p.fm);
    let right = simpson(m, p.b, p.fm, frm, p.fb);
    let delta = left + right - p.whole;
    if depth == 0 || delta.abs() <= T::of(15.0) * tol || m <= p.a || m >= p.b {
        return left + right + delta / T::of(15.0);
    }
    let half = tol / two;
    refine(
        f,
        Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
        },
        half,
        depth - 1,
    ) + refine(
        f,
        Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
        },
        half,
        depth - 1,
    )
}

/// `∫ₐᵇ f` by adaptive Simpson with Richardson correction.
pub fn adaptive_simpson<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, tol: T, max_depth: u32) -> T {
    if a == b {
        return T::zero();
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f((a + b) / T::of(2.0));
    let whole = simpson(a, b, fa, fm, fb);
    refine(&f, Panel { a, b, fa, fm, fb, whole }, tol, max_depth)
}

/// `∫_{c1}^{c2} eʸ/y dy` for `0 < c1 ≤ c2`.
///
/// The tolerance is 1e-9 absolute, relaxed to a few ulps of the result when
/// the scalar cannot resolve that.
pub fn exp_integral<T: Real>(c1: T, c2: T) -> Result<T, AnalyticsError> {
    if !(c1 > T::zero()) {
        return Err(AnalyticsError::IntegralLimit(c1.as_f64()));
    }
    if c2 < c1 {
        return Err(AnalyticsError::IntegralOrder(c1.as_f64(), c2.as_f64()));
    }
    if c1 == c2 {
        return Ok(T::zero());
    }
    let f = |y: T| y.exp() / y;
    let rough = (c2 - c1) * (f(c1) + f(c2)) / T::of(2.0);
    let tol = T::of(EXP_INTEGRAL_TOL).max(T::epsilon() * rough.abs() * T::of(4.0));
    Ok(adaptive_simpson(f, c1, c2, tol, MAX_DEPTH))
}
