use alloc::vec;
use alloc::vec::Vec;

use super::{DualVariables, EntropyModel, Extended, PrimalPoint};
use crate::error::{domain, invalid, Result};
#[allow(unused_imports)]
use crate::math::Float;

/// `s log s - s + 1`, extended by `1` at `s = 0`.
pub(crate) fn bfun(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        s * s.ln() - s + 1.0
    }
}

/// Entropy with a finite-volume (size exclusion) constraint `sum c_i <= w(u)`.
///
/// `H(c, u) = -b0 w(u) + sum_{i=0..I} w(u) b(c_i / w(u))`, where the solvent
/// concentration is `c_0 = w(u) - sum c_i` and `b(s) = s log s - s + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeExclusionEntropy {
    beta0: f64,
    alpha: f64,
    charges: Vec<f64>,
}

impl SizeExclusionEntropy {
    pub fn new(beta0: f64, alpha: f64, charges: Vec<f64>) -> Result<Self> {
        if charges.is_empty() {
            return Err(invalid("at least one species is required"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        if !(beta0 > 0.0 && beta0.is_finite()) {
            return Err(invalid("beta0 must be positive"));
        }
        Ok(Self {
            beta0,
            alpha,
            charges,
        })
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn w(&self, u: f64) -> f64 {
        u.powf(self.alpha) / self.alpha
    }

    fn w_prime(&self, u: f64) -> f64 {
        u.powf(self.alpha - 1.0)
    }

    /// `B(y) = b0 - I + log(1 + sum e^{y_j})`.
    pub fn b_of_y(&self, y: &[f64]) -> f64 {
        let n = self.charges.len() as f64;
        self.beta0 - n + log1p_sum_exp(y)
    }

    /// Convex primal value `H(c, u)`, `+inf` outside the closed domain.
    pub fn value(&self, c: &[f64], u: f64) -> Extended {
        if c.len() != self.charges.len() || !(u > 0.0) || c.iter().any(|x| !(*x >= 0.0)) {
            return Extended::PosInfinity;
        }
        let w = self.w(u);
        let c0 = w - c.iter().sum::<f64>();
        if c0 < 0.0 {
            return Extended::PosInfinity;
        }
        let mut h = -self.beta0 * w + w * bfun(c0 / w);
        for ci in c {
            h += w * bfun(ci / w);
        }
        Extended::Finite(h)
    }

    fn check_dual(&self, y: &[f64], v: f64) -> Result<f64> {
        if y.len() != self.charges.len() {
            return Err(invalid("dual point has wrong species count"));
        }
        if !(v < 0.0) {
            return Err(domain("dual variables require v < 0"));
        }
        let b = self.b_of_y(y);
        if !(b > 0.0) {
            return Err(domain("size-exclusion dual requires B(y) > 0"));
        }
        Ok(b)
    }
}

/// `log(1 + sum e^{y_j})`, evaluated without overflow.
fn log1p_sum_exp(y: &[f64]) -> f64 {
    let m = y.iter().fold(0.0f64, |a, &b| a.max(b));
    let s: f64 = (-m).exp() + y.iter().map(|yi| (yi - m).exp()).sum::<f64>();
    m + s.ln()
}

impl EntropyModel for SizeExclusionEntropy {
    fn species_count(&self) -> usize {
        self.charges.len()
    }

    fn charges(&self) -> &[f64] {
        &self.charges
    }

    fn entropy(&self, c: &[f64], u: f64) -> Result<f64> {
        self.value(c, u)
            .finite()
            .map(|h| -h)
            .ok_or_else(|| domain("state outside the size-exclusion domain"))
    }

    fn neg_gradient(&self, c: &[f64], u: f64) -> Result<DualVariables> {
        if c.len() != self.charges.len() {
            return Err(invalid("state has wrong species count"));
        }
        let w = if u > 0.0 { self.w(u) } else { 0.0 };
        let c0 = w - c.iter().sum::<f64>();
        if !(u > 0.0) || !(c0 > 0.0) || c.iter().any(|x| !(*x > 0.0)) {
            return Err(domain("gradient requires an interior point"));
        }
        let n = c.len() as f64;
        Ok(DualVariables {
            y: c.iter().map(|ci| (ci / c0).ln()).collect(),
            v: self.w_prime(u) * (n - self.beta0 + (c0 / w).ln()),
        })
    }

    fn dual(&self, y: &[f64], v: f64) -> Extended {
        if !(v < 0.0) {
            return Extended::PosInfinity;
        }
        let b = self.b_of_y(y);
        if b <= 0.0 {
            // supremum attained at u = 0
            return Extended::Finite(0.0);
        }
        let a = self.alpha;
        let ex = a / (1.0 - a);
        Extended::Finite((1.0 - a) / a * b.powf(1.0 / (1.0 - a)) * (-v).powf(-ex))
    }

    fn dual_gradient(&self, y: &[f64], v: f64) -> Result<PrimalPoint> {
        let b = self.check_dual(y, v)?;
        let a = self.alpha;
        let u = (b / -v).powf(1.0 / (1.0 - a));
        let w = self.w(u);
        let l = log1p_sum_exp(y);
        let c = y.iter().map(|yi| w * (yi - l).exp()).collect();
        Ok(PrimalPoint { c, u })
    }

    fn dual_hessian(&self, y: &[f64], v: f64) -> Result<Vec<f64>> {
        let b = self.check_dual(y, v)?;
        let a = self.alpha;
        let ex = a / (1.0 - a);
        let p = 1.0 / (1.0 - a);
        let nv = -v;
        let l = log1p_sum_exp(y);
        let s: Vec<f64> = y.iter().map(|yi| (yi - l).exp()).collect();
        let n = s.len();
        let m = n + 1;
        let mut h = vec![0.0; m * m];
        let pre = nv.powf(-ex) / a;
        for i in 0..n {
            for j in 0..n {
                let d = if i == j { s[i] } else { 0.0 };
                h[i * m + j] =
                    pre * (ex * b.powf(ex - 1.0) * s[i] * s[j] + b.powf(ex) * (d - s[i] * s[j]));
            }
            let hv = b.powf(ex) * s[i] * ex * nv.powf(-ex - 1.0) / a;
            h[i * m + n] = hv;
            h[n * m + i] = hv;
        }
        h[n * m + n] = p * b.powf(p) * nv.powf(-p - 1.0);
        Ok(h)
    }

    fn equilibrium_concentrations(&self, u: f64) -> Result<Vec<f64>> {
        if !(u > 0.0) {
            return Err(domain("u must be positive"));
        }
        let n = self.charges.len();
        Ok(vec![self.w(u) / (n + 1) as f64; n])
    }
}
