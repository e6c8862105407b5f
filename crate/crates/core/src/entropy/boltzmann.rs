use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{DualVariables, EntropyModel, Extended, PrimalPoint, ReducedDual};
use crate::error::{domain, invalid, Result};
#[allow(unused_imports)]
use crate::math::Float;

/// Boltzmann-type entropy
///
/// `S(c, u) = b0 w(u) - sum_i (c_i log c_i - c_i - c_i log(b_i (w(u) + w0)))`
///
/// with `w(u) = u^alpha / alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoltzmannEntropy {
    beta0: f64,
    beta: Vec<f64>,
    w0: f64,
    alpha: f64,
    charges: Vec<f64>,
}

impl BoltzmannEntropy {
    pub fn new(beta0: f64, beta: Vec<f64>, w0: f64, alpha: f64, charges: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(invalid("at least one species is required"));
        }
        if beta.len() != charges.len() {
            return Err(invalid(format!(
                "beta has {} entries but charges has {}",
                beta.len(),
                charges.len()
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        if !(beta0 > 0.0 && beta0.is_finite()) || !(w0 > 0.0 && w0.is_finite()) {
            return Err(invalid("beta0 and w0 must be positive"));
        }
        if beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(invalid("all beta_i must be positive"));
        }
        if charges.iter().any(|q| !q.is_finite()) {
            return Err(invalid("charges must be finite"));
        }
        Ok(Self {
            beta0,
            beta,
            w0,
            alpha,
            charges,
        })
    }

    /// Unit-parameter model with `alpha = 1/2`.
    pub fn unit(charges: Vec<f64>) -> Self {
        let n = charges.len();
        Self::new(1.0, vec![1.0; n], 1.0, 0.5, charges).expect("unit parameters are admissible")
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn w(&self, u: f64) -> f64 {
        u.powf(self.alpha) / self.alpha
    }

    pub fn w_prime(&self, u: f64) -> f64 {
        u.powf(self.alpha - 1.0)
    }

    pub fn w_second(&self, u: f64) -> f64 {
        (self.alpha - 1.0) * u.powf(self.alpha - 2.0)
    }

    /// `B(y) = b0 + sum_i b_i e^{y_i}`.
    pub fn b_of_y(&self, y: &[f64]) -> f64 {
        self.beta0
            + self
                .beta
                .iter()
                .zip(y)
                .map(|(b, yi)| b * yi.exp())
                .sum::<f64>()
    }

    fn check_state(&self, c: &[f64], u: f64) -> Result<()> {
        if c.len() != self.beta.len() {
            return Err(invalid("state has wrong species count"));
        }
        if !(u > 0.0) || c.iter().any(|x| !(*x > 0.0)) {
            return Err(domain("Boltzmann entropy requires c > 0 and u > 0"));
        }
        Ok(())
    }

    fn check_dual(&self, y: &[f64], v: f64) -> Result<()> {
        if y.len() != self.beta.len() {
            return Err(invalid("dual point has wrong species count"));
        }
        if !(v < 0.0) {
            return Err(domain("dual variables require v < 0"));
        }
        Ok(())
    }
}

impl EntropyModel for BoltzmannEntropy {
    fn species_count(&self) -> usize {
        self.beta.len()
    }

    fn charges(&self) -> &[f64] {
        &self.charges
    }

    fn entropy(&self, c: &[f64], u: f64) -> Result<f64> {
        self.check_state(c, u)?;
        let w = self.w(u);
        let mut s = self.beta0 * w;
        for (ci, bi) in c.iter().zip(&self.beta) {
            s -= ci * ci.ln() - ci - ci * (bi * (w + self.w0)).ln();
        }
        Ok(s)
    }

    fn neg_gradient(&self, c: &[f64], u: f64) -> Result<DualVariables> {
        self.check_state(c, u)?;
        let ww = self.w(u) + self.w0;
        let y: Vec<f64> = c
            .iter()
            .zip(&self.beta)
            .map(|(ci, bi)| (ci / (bi * ww)).ln())
            .collect();
        // B(y) = b0 + sum c_i / (w + w0)
        let b = self.beta0 + c.iter().sum::<f64>() / ww;
        Ok(DualVariables {
            y,
            v: -self.w_prime(u) * b,
        })
    }

    fn entropy_hessian(&self, c: &[f64], u: f64) -> Result<Vec<f64>> {
        self.check_state(c, u)?;
        let n = c.len();
        let m = n + 1;
        let ww = self.w(u) + self.w0;
        let wp = self.w_prime(u);
        let wpp = self.w_second(u);
        let mut h = vec![0.0; m * m];
        let mut huu = self.beta0 * wpp;
        for i in 0..n {
            h[i * m + i] = -1.0 / c[i];
            h[i * m + n] = wp / ww;
            h[n * m + i] = wp / ww;
            huu += c[i] * (wpp / ww - wp * wp / (ww * ww));
        }
        h[n * m + n] = huu;
        Ok(h)
    }

    fn dual(&self, y: &[f64], v: f64) -> Extended {
        if !(v < 0.0) {
            return Extended::PosInfinity;
        }
        let a = self.alpha;
        let b = self.b_of_y(y);
        let val = (1.0 - a) / a * b.powf(1.0 / (1.0 - a)) / (-v).powf(a / (1.0 - a))
            + (b - self.beta0) * self.w0;
        Extended::Finite(val)
    }

    fn dual_gradient(&self, y: &[f64], v: f64) -> Result<PrimalPoint> {
        self.check_dual(y, v)?;
        let a = self.alpha;
        let b = self.b_of_y(y);
        // u solves w'(u) = -v / B
        let u = (b / -v).powf(1.0 / (1.0 - a));
        let ww = (b / -v).powf(a / (1.0 - a)) / a + self.w0;
        let c = y
            .iter()
            .zip(&self.beta)
            .map(|(yi, bi)| bi * yi.exp() * ww)
            .collect();
        Ok(PrimalPoint { c, u })
    }

    fn dual_hessian(&self, y: &[f64], v: f64) -> Result<Vec<f64>> {
        self.check_dual(y, v)?;
        let a = self.alpha;
        let p = 1.0 / (1.0 - a);
        let ex = a / (1.0 - a);
        let b = self.b_of_y(y);
        let nv = -v;
        let g = (b / nv).powf(ex) / a + self.w0;
        let g_b = p * b.powf(ex - 1.0) * nv.powf(-ex);
        let g_v = p * b.powf(ex) * nv.powf(-ex - 1.0);
        let e: Vec<f64> = y
            .iter()
            .zip(&self.beta)
            .map(|(yi, bi)| bi * yi.exp())
            .collect();
        let n = e.len();
        let m = n + 1;
        let mut h = vec![0.0; m * m];
        for i in 0..n {
            for j in 0..n {
                h[i * m + j] = e[i] * e[j] * g_b;
            }
            h[i * m + i] += e[i] * g;
            h[i * m + n] = e[i] * g_v;
            h[n * m + i] = e[i] * g_v;
        }
        h[n * m + n] = p * b.powf(p) * nv.powf(-p - 1.0);
        Ok(h)
    }

    fn equilibrium_concentrations(&self, u: f64) -> Result<Vec<f64>> {
        if !(u > 0.0) {
            return Err(domain("u must be positive"));
        }
        let ww = self.w(u) + self.w0;
        Ok(self.beta.iter().map(|b| b * ww).collect())
    }

    fn reduced_dual_derivatives(&self, mu: f64, eta: f64) -> Result<ReducedDual> {
        if !(eta > 0.0) {
            return Err(domain("reduced dual requires eta > 0"));
        }
        // b(mu) = b0 + sum b_i e^{-mu q_i}
        let mut b = self.beta0;
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for (bi, qi) in self.beta.iter().zip(&self.charges) {
            let t = bi * (-mu * qi).exp();
            b += t;
            b1 -= qi * t;
            b2 += qi * qi * t;
        }
        let a = self.alpha;
        let k = (1.0 - a) / a;
        let p = 1.0 / (1.0 - a);
        let ex = a / (1.0 - a);
        let eta_m = eta.powf(-ex);
        let bp = b.powf(p);
        let bp1 = b.powf(p - 1.0);
        let bp2 = b.powf(p - 2.0);
        Ok(ReducedDual {
            value: k * bp * eta_m + (b - self.beta0) * self.w0,
            d_mu: k * p * bp1 * b1 * eta_m + b1 * self.w0,
            d_eta: -ex * k * bp * eta_m / eta,
            d_mumu: k * p * ((p - 1.0) * bp2 * b1 * b1 + bp1 * b2) * eta_m + b2 * self.w0,
            d_mueta: -ex * k * p * bp1 * b1 * eta_m / eta,
            d_etaeta: ex * (ex + 1.0) * k * bp * eta_m / (eta * eta),
        })
    }
}
