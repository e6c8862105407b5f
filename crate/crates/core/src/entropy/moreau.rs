use alloc::vec;
use alloc::vec::Vec;

use super::EntropyModel;
use crate::error::{invalid, Error, Result};
use crate::linalg::solve_dense;
#[allow(unused_imports)]
use crate::math::Float;

/// Moreau envelope `H_delta(z) = min_p H(p) + |z - p|^2 / (2 delta)` of `H = -S`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoreauPoint {
    pub value: f64,
    /// Minimiser `p`, the proximal point of `z`.
    pub prox: Vec<f64>,
    /// `DH_delta(z) = (z - p) / delta`.
    pub gradient: Vec<f64>,
    /// `D^2 H_delta(z) = A (I + delta A)^{-1}` with `A = D^2 H(p)`.
    pub hessian: Vec<f64>,
}

const INNER_TOL: f64 = 1e-10;

/// Evaluates the envelope by damped Newton on the inner problem, keeping `p`
/// inside the open positive orthant where `S` is smooth.
pub fn moreau_envelope<M: EntropyModel + ?Sized>(
    model: &M,
    z: &[f64],
    delta: f64,
) -> Result<MoreauPoint> {
    moreau_from(model, z, delta, None)
}

pub(crate) fn moreau_from<M: EntropyModel + ?Sized>(
    model: &M,
    z: &[f64],
    delta: f64,
    warm: Option<&[f64]>,
) -> Result<MoreauPoint> {
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    let d = model.species_count() + 1;
    if z.len() != d {
        return Err(invalid("point has wrong dimension"));
    }
    let phi = |p: &[f64]| -> f64 {
        let (c, u) = p.split_at(d - 1);
        match model.entropy(c, u[0]) {
            Ok(s) => {
                let q: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                -s + q / (2.0 * delta)
            }
            Err(_) => f64::INFINITY,
        }
    };
    let mut p: Vec<f64> = match warm {
        Some(w) if w.iter().all(|x| *x > 0.0) && phi(w).is_finite() => w.to_vec(),
        _ => z.iter().map(|x| x.max(1e-2 * (1.0 + x.abs()))).collect(),
    };
    let mut fp = phi(&p);
    let mut grad = vec![0.0; d];
    let mut iters = 0;
    loop {
        let (c, u) = p.split_at(d - 1);
        let w = model.neg_gradient(c, u[0])?;
        for k in 0..d - 1 {
            grad[k] = w.y[k] + (p[k] - z[k]) / delta;
        }
        grad[d - 1] = w.v + (p[d - 1] - z[d - 1]) / delta;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = 1.0 + p.iter().map(|x| x.abs()).fold(0.0, f64::max) / delta;
        let mut a = model.entropy_hessian(c, u[0])?;
        a.iter_mut().for_each(|x| *x = -*x);
        if gnorm <= INNER_TOL * scale {
            return Ok(finish(z, p, fp, a, delta));
        }
        iters += 1;
        if iters > 200 {
            return Err(Error::NotConverged {
                method: "moreau envelope",
                iterations: iters,
                residual: gnorm,
            });
        }
        let mut hm = a;
        for k in 0..d {
            hm[k * d + k] += 1.0 / delta;
        }
        let mut step: Vec<f64> = grad.iter().map(|g| -g).collect();
        solve_dense(&mut hm, d, &mut step)?;
        // fraction to the boundary of the positive orthant
        let mut t: f64 = 1.0;
        for k in 0..d {
            if step[k] < 0.0 {
                t = t.min(0.95 * p[k] / -step[k]);
            }
        }
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = p.iter().zip(&step).map(|(x, s)| x + t * s).collect();
            let ft = phi(&trial);
            if ft <= fp + 1e-4 * t * slope
                || (ft.is_finite() && (ft - fp).abs() <= 1e-15 * fp.abs().max(1.0))
            {
                p = trial;
                fp = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NotConverged {
                method: "moreau envelope line search",
                iterations: iters,
                residual: gnorm,
            });
        }
    }
}

fn finish(z: &[f64], p: Vec<f64>, value: f64, a: Vec<f64>, delta: f64) -> MoreauPoint {
    let d = z.len();
    let gradient = z.iter().zip(&p).map(|(zi, pi)| (zi - pi) / delta).collect();
    // (I + delta A) X = A, X symmetric because both factors commute
    let mut hessian = vec![0.0; d * d];
    for col in 0..d {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = delta * a[i * d + j] + if i == j { 1.0 } else { 0.0 };
            }
        }
        let mut rhs: Vec<f64> = (0..d).map(|i| a[i * d + col]).collect();
        if solve_dense(&mut m, d, &mut rhs).is_ok() {
            for i in 0..d {
                hessian[i * d + col] = rhs[i];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (hessian[i * d + j] + hessian[j * d + i]);
            hessian[i * d + j] = s;
            hessian[j * d + i] = s;
        }
    }
    MoreauPoint {
        value,
        prox: p,
        gradient,
        hessian,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{fd_gradient, BoltzmannEntropy};

    #[test]
    fn increases_toward_h_as_delta_shrinks() {
        let m = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let z = [1.5, 0.7, 2.0];
        let h = -m.entropy(&z[..2], z[2]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for d in [1e-1, 1e-2, 1e-3] {
            let e = moreau_envelope(&m, &z, d).unwrap().value;
            assert!(e > prev && e <= h);
            prev = e;
        }
        assert!((h - prev).abs() < 1e-2);
    }

    #[test]
    fn finite_outside_domain() {
        let m = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let e = moreau_envelope(&m, &[-1.0, 0.5, -2.0], 0.1).unwrap();
        assert!(e.value.is_finite());
        assert!(e.prox.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let m = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let z = [0.8, -0.3, 1.2];
        let delta = 0.2;
        let e = moreau_envelope(&m, &z, delta).unwrap();
        let fd = fd_gradient(|p| moreau_envelope(&m, p, delta).unwrap().value, &z, 1e-5);
        for k in 0..3 {
            assert!((fd[k] - e.gradient[k]).abs() < 1e-6 * (1.0 + fd[k].abs()));
        }
        for k in 0..3 {
            let col = fd_gradient(
                |p| moreau_envelope(&m, p, delta).unwrap().gradient[k],
                &z,
                1e-5,
            );
            for l in 0..3 {
                assert!((col[l] - e.hessian[k * 3 + l]).abs() < 1e-5 * (1.0 + col[l].abs()));
            }
        }
    }
}
