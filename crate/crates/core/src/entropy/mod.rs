//! Concave entropy densities `S(c, u)` and their convex duals.
//!
//! Conventions: `H = -S` is the convex function; `(y, v) = -DS(c, u)` are the
//! dual variables; `H*` is the Legendre transform of `H` and `DH*` inverts
//! `-DS`. Matrices are `(I+1) x (I+1)`, row-major, species first then `u`.

mod boltzmann;
mod exclusion;
mod moreau;
mod oracle;
mod young;

pub use boltzmann::BoltzmannEntropy;
pub use exclusion::SizeExclusionEntropy;
pub(crate) use moreau::moreau_from;
pub use moreau::{moreau_envelope, MoreauPoint};
pub use oracle::{grid_supremum, legendre_oracle, OracleBox};
pub use young::{growth_certificate, young_lower_bound_constant, young_violation};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, Result};
use crate::linalg::invert_dense;
#[allow(unused_imports)]
use crate::math::Float;

/// A state `(c, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalPoint {
    pub c: Vec<f64>,
    pub u: f64,
}

impl PrimalPoint {
    pub fn new(c: Vec<f64>, u: f64) -> Self {
        Self { c, u }
    }

    pub fn as_vec(&self) -> Vec<f64> {
        let mut z = self.c.clone();
        z.push(self.u);
        z
    }

    pub fn from_slice(z: &[f64]) -> Self {
        let (c, u) = z.split_at(z.len() - 1);
        Self {
            c: c.to_vec(),
            u: u[0],
        }
    }
}

/// Dual variables `(y, v)` with `v < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    pub y: Vec<f64>,
    pub v: f64,
}

impl DualVariables {
    pub fn as_vec(&self) -> Vec<f64> {
        let mut w = self.y.clone();
        w.push(self.v);
        w
    }
}

/// Value of a convex function that may be `+inf` outside its domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    Finite(f64),
    PosInfinity,
}

impl Extended {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(x) => Some(x),
            Extended::PosInfinity => None,
        }
    }

    /// The value as `f64`, with `f64::INFINITY` for the infinite case.
    pub fn value(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }
}

/// Reduced dual `H*(-mu q, -eta)` with first and second partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedDual {
    pub value: f64,
    pub d_mu: f64,
    pub d_eta: f64,
    pub d_mumu: f64,
    pub d_mueta: f64,
    pub d_etaeta: f64,
}

impl ReducedDual {
    /// Adds the quadratic tilt `(delta/2) |xi|^2` with `xi = (-mu q, -eta)`.
    pub fn regularized(mut self, delta: f64, q_norm_sq: f64, mu: f64, eta: f64) -> Self {
        if delta != 0.0 {
            self.value += 0.5 * delta * (mu * mu * q_norm_sq + eta * eta);
            self.d_mu += delta * q_norm_sq * mu;
            self.d_eta += delta * eta;
            self.d_mumu += delta * q_norm_sq;
            self.d_etaeta += delta;
        }
        self
    }
}

/// A concave entropy density with closed-form dual.
pub trait EntropyModel: Send + Sync {
    fn species_count(&self) -> usize;

    fn charges(&self) -> &[f64];

    /// `S(c, u)`. Errors outside the closed domain of finiteness.
    fn entropy(&self, c: &[f64], u: f64) -> Result<f64>;

    /// `(y, v) = -DS(c, u)` at an interior point.
    fn neg_gradient(&self, c: &[f64], u: f64) -> Result<DualVariables>;

    /// `H*(y, v)`; `+inf` when `v >= 0`.
    fn dual(&self, y: &[f64], v: f64) -> Extended;

    /// `DH*(y, v)`, the inverse of `-DS`.
    fn dual_gradient(&self, y: &[f64], v: f64) -> Result<PrimalPoint>;

    /// `D^2 H*(y, v)`.
    fn dual_hessian(&self, y: &[f64], v: f64) -> Result<Vec<f64>>;

    /// Maximiser of `S(., u)` for fixed `u`.
    fn equilibrium_concentrations(&self, u: f64) -> Result<Vec<f64>>;

    /// `D^2 S(c, u)`, by default `-(D^2 H*(-DS))^{-1}`.
    fn entropy_hessian(&self, c: &[f64], u: f64) -> Result<Vec<f64>> {
        let w = self.neg_gradient(c, u)?;
        let h = self.dual_hessian(&w.y, w.v)?;
        let n = c.len() + 1;
        let mut inv = invert_dense(&h, n)?;
        for x in inv.iter_mut() {
            *x = -*x;
        }
        Ok(inv)
    }

    fn reduced_dual(&self, mu: f64, eta: f64) -> Result<f64> {
        if !(eta > 0.0) {
            return Err(domain("reduced dual requires eta > 0"));
        }
        let y: Vec<f64> = self.charges().iter().map(|q| -mu * q).collect();
        Ok(self.dual(&y, -eta).value())
    }

    fn reduced_dual_derivatives(&self, mu: f64, eta: f64) -> Result<ReducedDual> {
        if !(eta > 0.0) {
            return Err(domain("reduced dual requires eta > 0"));
        }
        let q = self.charges();
        let n = q.len();
        let y: Vec<f64> = q.iter().map(|qi| -mu * qi).collect();
        let value = self.dual(&y, -eta).value();
        let z = self.dual_gradient(&y, -eta)?;
        let h = self.dual_hessian(&y, -eta)?;
        let m = n + 1;
        let mut d_mumu = 0.0;
        let mut d_mueta = 0.0;
        for i in 0..n {
            for j in 0..n {
                d_mumu += q[i] * h[i * m + j] * q[j];
            }
            d_mueta += q[i] * h[i * m + n];
        }
        Ok(ReducedDual {
            value,
            d_mu: -crate::math::dot(q, &z.c),
            d_eta: -z.u,
            d_mumu,
            d_mueta,
            d_etaeta: h[n * m + n],
        })
    }
}

/// `|q|^2` of a charge vector.
pub fn charge_norm_sq(q: &[f64]) -> f64 {
    q.iter().map(|x| x * x).sum()
}

/// Central finite-difference gradient of `f` at `x` with relative step `rel`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], rel: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = rel * (1.0 + x[k].abs());
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    g
}
