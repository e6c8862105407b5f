use super::EntropyModel;
use crate::error::Result;
#[allow(unused_imports)]
use crate::math::Float;

/// `c_delta = (1 + p) (delta / p)^{p / (1 + p)}`, the largest constant with
/// `|mu|^q / eta^p >= c_delta |mu|^{q/(1+p)} - delta eta` for all `eta > 0`.
pub fn young_lower_bound_constant(p: f64, delta: f64) -> f64 {
    (1.0 + p) * (delta / p).powf(p / (1.0 + p))
}

/// Slack `|mu|^q / eta^p - (c_delta |mu|^{q/(1+p)} - delta eta)`; negative
/// values are violations.
pub fn young_violation(p: f64, q: f64, delta: f64, mu: f64, eta: f64) -> f64 {
    let c = young_lower_bound_constant(p, delta);
    let m = mu.abs();
    m.powf(q) / eta.powf(p) - (c * m.powf(q / (1.0 + p)) - delta * eta)
}

/// Smallest observed ratio `eta H(mu, eta) / (1 + mu^4)` of the reduced dual
/// over a grid on `[-mu_max, mu_max] x [eta_lo, eta_hi]`.
pub fn growth_certificate<M: EntropyModel + ?Sized>(
    model: &M,
    mu_max: f64,
    eta_lo: f64,
    eta_hi: f64,
    points: usize,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    let n = points.max(2);
    for i in 0..n {
        let mu = -mu_max + 2.0 * mu_max * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let eta = eta_lo * (eta_hi / eta_lo).powf(j as f64 / (n - 1) as f64);
            let h = model.reduced_dual(mu, eta)?;
            best = best.min(eta * h / (1.0 + mu.powi(4)));
        }
    }
    Ok(best)
}
