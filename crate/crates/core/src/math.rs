//! Small numeric helpers shared across modules.

#[allow(unused_imports)]
pub(crate) use num_traits::Float;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Relative difference `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Convex dissipation dual `C*(x) = 4 cosh(x/2) - 4` and its derivatives.
pub fn cstar(x: f64) -> f64 {
    4.0 * (x / 2.0).cosh() - 4.0
}

pub fn cstar_prime(x: f64) -> f64 {
    2.0 * (x / 2.0).sinh()
}

pub fn cstar_second(x: f64) -> f64 {
    (x / 2.0).cosh()
}
