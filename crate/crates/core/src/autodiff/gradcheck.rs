//! Central finite-difference checks.

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Central difference of `f` at `x` along direction `d`.
pub fn directional_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], d: &[f64], h: f64) -> f64 {
    let step = |s: f64| x.iter().zip(d).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    (f(&step(h)) - f(&step(-h))) / (2.0 * h)
}

/// Largest coordinate-wise relative error between `grad` and central
/// differences of `f`.
pub fn max_relative_error(
    f: &mut impl FnMut(&[f64]) -> f64,
    x: &[f64],
    grad: &[f64],
    h: f64,
    floor: f64,
) -> f64 {
    (0..x.len())
        .map(|i| relative_error(grad[i], central_difference(f, x, i, h), floor))
        .fold(0.0, f64::max)
}
