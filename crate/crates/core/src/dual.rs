//! The convex dual functional
//!
//! `K(eta, kappa, lambda) = int H*(-(kappa + lambda) q, -eta) + kappa Q0 + eta E0
//!                          - B(lambda, psi_ext) + B(lambda, lambda) / (2 eta)`
//!
//! its minimisation, and the recovery of the equilibrium state from the
//! minimiser. Integrals use the lumped mass matrix, which makes the discrete
//! problem an exact Fenchel dual of the discrete entropy maximisation.
//!
//! In the pure Neumann case the unknowns are `mu = kappa + lambda` with
//! `kappa` the mean of `mu`, and `Q0 = 0` is required.

use alloc::vec;
use alloc::vec::Vec;

use crate::electrostatics::AssembledOperator;
use crate::entropy::{charge_norm_sq, EntropyModel, ReducedDual};
use crate::error::{invalid, Error, Result};
use crate::linalg::{solve_dense, Tridiagonal};
use crate::math::dot;
#[allow(unused_imports)]
use crate::math::Float;
use crate::mesh::{BoundaryCase, Field, SpeciesField};

/// Point `(eta, kappa, lambda)` of the dual domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub eta: f64,
    pub kappa: f64,
    pub lambda: Field,
}

impl DualPoint {
    /// Checks `eta > 0` and the constraints of `lambda` (zero at Dirichlet
    /// nodes, zero mean in the pure Neumann case).
    pub fn new(eta: f64, kappa: f64, lambda: Field) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta must be positive"));
        }
        if !kappa.is_finite() || lambda.values().iter().any(|l| !l.is_finite()) {
            return Err(invalid("dual point must be finite"));
        }
        let mesh = lambda.mesh().clone();
        let v = lambda.values();
        for i in mesh.endpoint_nodes() {
            if mesh.is_dirichlet_node(i) && v[i] != 0.0 {
                return Err(invalid("lambda must vanish at Dirichlet nodes"));
            }
        }
        if mesh.case() == BoundaryCase::PureNeumann {
            let scale = 1.0 + lambda.linf_norm();
            if lambda.integrate().abs() > 1e-10 * scale * mesh.measure() {
                return Err(invalid(
                    "lambda must have zero mean in the pure Neumann case",
                ));
            }
        }
        Ok(Self { eta, kappa, lambda })
    }

    pub fn constant(
        lambda_mesh: &alloc::sync::Arc<crate::mesh::Mesh>,
        eta: f64,
        kappa: f64,
    ) -> Result<Self> {
        Self::new(eta, kappa, Field::zeros(lambda_mesh))
    }
}

/// Gradient of `K`; `d_lambda` is the Riesz representative in the lumped
/// `L^2` product, zero at Dirichlet nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGradient {
    pub d_eta: f64,
    pub d_kappa: f64,
    pub d_lambda: Field,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    /// Tolerance on the gradient norm relative to `1 + |E0| + |Q0|`.
    pub tol_grad: f64,
    pub max_iter: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub k: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub point: DualPoint,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub trace: Vec<TraceRow>,
}

/// State generated by a dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub c: SpeciesField,
    pub u: Field,
    /// Total potential `Psi = lambda / eta`.
    pub psi: Field,
    pub theta: f64,
    pub eta: f64,
    pub kappa: f64,
    pub lambda: Field,
    /// Regularisation parameter of the functional that produced the point.
    pub delta: f64,
    /// `S(c, u)`, or the regularised entropy `-H_delta` when `delta > 0`.
    pub entropy: f64,
    pub energy_residual: f64,
    pub charge_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumDiagnostics {
    pub energy_residual: f64,
    pub charge_residual: f64,
    /// `(max - min) / mean` of `theta(x) = 1 / D_u S`.
    pub theta_spread: f64,
    /// `max_x max_i |zeta_i q_1 - zeta_1 q_i|` with `zeta = theta D_c S - Psi q`.
    pub zeta_defect: f64,
    /// Sup-norm of `L(Psi - psi_ext) - q.c` on free nodes, relative.
    pub poisson_residual: f64,
    /// `K(point) - S(state)`.
    pub duality_gap: f64,
}

impl EquilibriumDiagnostics {
    pub fn passes(&self, constraint_tol: f64, theta_tol: f64, zeta_tol: f64) -> bool {
        self.energy_residual.abs() <= constraint_tol
            && self.charge_residual.abs() <= constraint_tol
            && self.theta_spread <= theta_tol
            && self.zeta_defect <= zeta_tol
    }
}

/// The functional `K` (or `K_delta`) for fixed data.
pub struct DualLagrangian<'a, M: EntropyModel + ?Sized> {
    model: &'a M,
    op: &'a AssembledOperator,
    e0: f64,
    q0: f64,
    psi_ext: &'a Field,
    a_psi_ext: Vec<f64>,
    delta: f64,
    q_norm_sq: f64,
    /// Node range of the field unknowns.
    lo: usize,
    hi: usize,
}

struct Eval {
    k: f64,
    g_eta: f64,
    g_kappa: f64,
    /// `dK/dlambda_j` (or `dK/dmu_j` in the Neumann case), full length.
    g_field: Vec<f64>,
    rd: Vec<ReducedDual>,
    a_lambda: Vec<f64>,
    lal: f64,
}

impl<'a, M: EntropyModel + ?Sized> DualLagrangian<'a, M> {
    pub fn new(
        model: &'a M,
        op: &'a AssembledOperator,
        e0: f64,
        q0: f64,
        psi_ext: &'a Field,
    ) -> Result<Self> {
        if **psi_ext.mesh() != **op.mesh() {
            return Err(Error::MeshMismatch);
        }
        if op.case() == BoundaryCase::PureNeumann && q0 != 0.0 {
            return Err(Error::Incompatible(
                "pure Neumann case requires zero total charge".into(),
            ));
        }
        let n = op.mesh().len();
        let lo = usize::from(op.mesh().is_dirichlet_node(0));
        let hi = n - usize::from(op.mesh().is_dirichlet_node(n - 1));
        Ok(Self {
            model,
            op,
            e0,
            q0,
            psi_ext,
            a_psi_ext: op.apply(psi_ext.values()),
            delta: 0.0,
            q_norm_sq: charge_norm_sq(model.charges()),
            lo,
            hi,
        })
    }

    /// Switches to `K_delta`, built from `H* + (delta/2)|xi|^2`.
    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(invalid("delta must lie in [0, 1]"));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn neumann(&self) -> bool {
        self.op.case() == BoundaryCase::PureNeumann
    }

    fn reduced(&self, mu: f64, eta: f64) -> Result<ReducedDual> {
        Ok(self.model.reduced_dual_derivatives(mu, eta)?.regularized(
            self.delta,
            self.q_norm_sq,
            mu,
            eta,
        ))
    }

    fn check_point(&self, p: &DualPoint) -> Result<()> {
        if **p.lambda.mesh() != **self.op.mesh() {
            return Err(Error::MeshMismatch);
        }
        if !(p.eta > 0.0) {
            return Err(invalid("eta must be positive"));
        }
        Ok(())
    }

    fn eval(&self, p: &DualPoint) -> Result<Eval> {
        self.check_point(p)?;
        let mesh = self.op.mesh();
        let m = mesh.lumped_mass();
        let lam = p.lambda.values();
        let eta = p.eta;
        let rd = lam
            .iter()
            .map(|l| self.reduced(p.kappa + l, eta))
            .collect::<Result<Vec<_>>>()?;
        let a_lambda = self.op.apply(lam);
        let lal = dot(lam, &a_lambda);
        let mut k =
            p.kappa * self.q0 + eta * self.e0 - dot(lam, &self.a_psi_ext) + lal / (2.0 * eta);
        let mut g_eta = self.e0 - lal / (2.0 * eta * eta);
        let mut g_kappa = self.q0;
        let mut g_field = vec![0.0; lam.len()];
        for j in 0..lam.len() {
            k += m[j] * rd[j].value;
            g_eta += m[j] * rd[j].d_eta;
            g_kappa += m[j] * rd[j].d_mu;
            if (self.lo..self.hi).contains(&j) {
                g_field[j] = m[j] * rd[j].d_mu - self.a_psi_ext[j] + a_lambda[j] / eta;
            }
        }
        Ok(Eval {
            k,
            g_eta,
            g_kappa,
            g_field,
            rd,
            a_lambda,
            lal,
        })
    }

    pub fn k_value(&self, p: &DualPoint) -> Result<f64> {
        Ok(self.eval(p)?.k)
    }

    pub fn k_gradient(&self, p: &DualPoint) -> Result<DualGradient> {
        let e = self.eval(p)?;
        let mesh = self.op.mesh();
        let m = mesh.lumped_mass();
        let mut g = e.g_field;
        if self.neumann() {
            // gradient along mean-zero directions
            let mean = g.iter().sum::<f64>() / mesh.measure();
            for (gj, mj) in g.iter_mut().zip(m) {
                *gj -= mean * mj;
            }
        }
        let d_lambda = g.iter().zip(m).map(|(gj, mj)| gj / mj).collect();
        Ok(DualGradient {
            d_eta: e.g_eta,
            d_kappa: e.g_kappa,
            d_lambda: Field::new(mesh.clone(), d_lambda)?,
        })
    }

    /// Gradient norm relative to `1 + |E0| + |Q0|`.
    pub fn gradient_norm(&self, g: &DualGradient) -> f64 {
        let m = self.op.mesh().lumped_mass();
        let gl: f64 = g
            .d_lambda
            .values()
            .iter()
            .zip(m)
            .map(|(v, mj)| v * v * mj)
            .sum();
        (g.d_eta * g.d_eta + g.d_kappa * g.d_kappa + gl).sqrt() / self.scale()
    }

    fn scale(&self) -> f64 {
        1.0 + self.e0.abs() + self.q0.abs()
    }

    fn eval_norm(&self, e: &Eval) -> f64 {
        let mesh = self.op.mesh();
        let m = mesh.lumped_mass();
        let mut g = e.g_field.clone();
        if self.neumann() {
            let mean = g.iter().sum::<f64>() / mesh.measure();
            for (gj, mj) in g.iter_mut().zip(m) {
                *gj -= mean * mj;
            }
        }
        let gl: f64 = g.iter().zip(m).map(|(v, mj)| v * v / mj).sum();
        (e.g_eta * e.g_eta + e.g_kappa * e.g_kappa + gl).sqrt() / self.scale()
    }

    /// `eta` solving `|Omega| u(0, eta) = E0` for the constant ansatz
    /// `kappa = 0`, `lambda = 0`.
    pub fn initial_eta(&self) -> f64 {
        let measure = self.op.mesh().measure();
        let f = |eta: f64| -> Option<f64> {
            self.reduced(0.0, eta)
                .ok()
                .map(|r| -measure * r.d_eta - self.e0)
        };
        let (mut a, mut b) = (-30.0f64, 30.0f64);
        match (f(a.exp()), f(b.exp())) {
            (Some(fa), Some(fb)) if fa > 0.0 && fb < 0.0 => {}
            _ => return 1.0,
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            match f(mid.exp()) {
                Some(v) if v > 0.0 => a = mid,
                Some(_) => b = mid,
                None => return 1.0,
            }
            if b - a < 1e-14 {
                break;
            }
        }
        (0.5 * (a + b)).exp()
    }

    pub fn initial_point(&self) -> Result<DualPoint> {
        DualPoint::constant(self.op.mesh(), self.initial_eta(), 0.0)
    }

    fn check_feasible(&self) -> Result<()> {
        let v = self.op.min_electro_energy(self.q0, self.psi_ext)?.value;
        if !(self.e0 > v) {
            return Err(Error::Infeasible {
                e0: self.e0,
                minimal_energy: v,
            });
        }
        Ok(())
    }

    /// Damped Newton on `(log eta, kappa, lambda)` with Armijo backtracking.
    pub fn minimize_k(&self, initial: &DualPoint, opts: &DualOptions) -> Result<DualSolution> {
        self.check_feasible()?;
        let mut p = initial.clone();
        if self.neumann() {
            p = self.to_neumann_form(p)?;
        }
        let mut e = self.eval(&p)?;
        let mut gn = self.eval_norm(&e);
        let mut trace = vec![TraceRow {
            iteration: 0,
            k: e.k,
            grad_norm: gn,
            step: 0.0,
        }];
        let mut it = 0;
        while gn > opts.tol_grad {
            if it >= opts.max_iter {
                return Err(Error::NotConverged {
                    method: "dual Newton",
                    iterations: it,
                    residual: gn,
                });
            }
            it += 1;
            let dir = self.newton_direction(&p, &e)?;
            let (np, ne, t) = self.line_search(&p, &e, gn, &dir)?;
            p = np;
            e = ne;
            gn = self.eval_norm(&e);
            trace.push(TraceRow {
                iteration: it,
                k: e.k,
                grad_norm: gn,
                step: t,
            });
        }
        Ok(DualSolution {
            value: e.k,
            point: p,
            iterations: it,
            grad_norm: gn,
            trace,
        })
    }

    #[allow(clippy::too_many_arguments)]
    /// Minimises `K_delta`; equivalent to `with_delta(delta)?.minimize_k(..)`.
    pub fn minimize_k_regularized(
        model: &'a M,
        op: &'a AssembledOperator,
        e0: f64,
        q0: f64,
        psi_ext: &'a Field,
        delta: f64,
        initial: Option<&DualPoint>,
        opts: &DualOptions,
    ) -> Result<DualSolution> {
        let k = Self::new(model, op, e0, q0, psi_ext)?.with_delta(delta)?;
        let start = match initial {
            Some(p) => p.clone(),
            None => k.initial_point()?,
        };
        k.minimize_k(&start, opts)
    }

    fn to_neumann_form(&self, p: DualPoint) -> Result<DualPoint> {
        let mu: Vec<f64> = p.lambda.values().iter().map(|l| l + p.kappa).collect();
        self.point_from_mu(p.eta, mu)
    }

    fn point_from_mu(&self, eta: f64, mu: Vec<f64>) -> Result<DualPoint> {
        let mesh = self.op.mesh();
        let kappa = dot(&mu, mesh.lumped_mass()) / mesh.measure();
        let lambda = mu.iter().map(|m| m - kappa).collect();
        Ok(DualPoint {
            eta,
            kappa,
            lambda: Field::new(mesh.clone(), lambda)?,
        })
    }

    /// Newton direction `(d_field, d_eta, d_kappa)` in the natural
    /// coordinates; the field part has the full node length.
    fn newton_direction(&self, p: &DualPoint, e: &Eval) -> Result<Direction> {
        let mesh = self.op.mesh();
        let m = mesh.lumped_mass();
        let a = self.op.matrix();
        let eta = p.eta;
        let (lo, hi) = (self.lo, self.hi);
        let nf = hi - lo;
        let nb = if self.neumann() { 1 } else { 2 };
        let mut t = Tridiagonal::zeros(nf);
        let mut border = vec![vec![0.0; nf]; nb];
        let mut gx = vec![0.0; nf];
        for k in 0..nf {
            let j = lo + k;
            let r = &e.rd[j];
            t.diag[k] = a.diag[j] / eta + m[j] * r.d_mumu;
            if k + 1 < nf {
                t.upper[k] = a.upper[j] / eta;
                t.lower[k] = a.lower[j] / eta;
            }
            border[0][k] = m[j] * r.d_mueta - e.a_lambda[j] / (eta * eta);
            if nb == 2 {
                border[1][k] = m[j] * r.d_mumu;
            }
            gx[k] = e.g_field[j];
        }
        let mut c = vec![0.0; nb * nb];
        c[0] =
            e.rd.iter()
                .zip(m)
                .map(|(r, mj)| mj * r.d_etaeta)
                .sum::<f64>()
                + e.lal / (eta * eta * eta);
        let mut gy = vec![e.g_eta];
        if nb == 2 {
            let cek: f64 = e.rd.iter().zip(m).map(|(r, mj)| mj * r.d_mueta).sum();
            c[1] = cek;
            c[2] = cek;
            c[3] = e.rd.iter().zip(m).map(|(r, mj)| mj * r.d_mumu).sum();
            gy.push(e.g_kappa);
        }
        let tinv_g = t.solve(&gx)?;
        let tinv_b = border
            .iter()
            .map(|b| t.solve(b))
            .collect::<Result<Vec<_>>>()?;
        let mut schur = c.clone();
        let mut rhs: Vec<f64> = gy.iter().map(|g| -g).collect();
        for r in 0..nb {
            for s in 0..nb {
                schur[r * nb + s] -= dot(&border[r], &tinv_b[s]);
            }
            rhs[r] += dot(&border[r], &tinv_g);
        }
        let dy = solve_spd_shifted(&schur, nb, &rhs)?;
        let mut dx = vec![0.0; mesh.len()];
        for k in 0..nf {
            let mut v = -tinv_g[k];
            for s in 0..nb {
                v -= tinv_b[s][k] * dy[s];
            }
            dx[lo + k] = v;
        }
        Ok(Direction {
            field: dx,
            eta: dy[0],
            kappa: if nb == 2 { dy[1] } else { 0.0 },
        })
    }

    fn apply_step(&self, p: &DualPoint, d: &Direction, t: f64) -> Result<DualPoint> {
        let mesh = self.op.mesh();
        // the eta update follows exp(log eta + t d_eta / eta) to stay positive
        let eta = p.eta * (t * d.eta / p.eta).exp();
        if self.neumann() {
            let mu: Vec<f64> = p
                .lambda
                .values()
                .iter()
                .zip(&d.field)
                .map(|(l, dl)| p.kappa + l + t * dl)
                .collect();
            return self.point_from_mu(eta, mu);
        }
        let lambda = p
            .lambda
            .values()
            .iter()
            .zip(&d.field)
            .map(|(l, dl)| l + t * dl)
            .collect();
        Ok(DualPoint {
            eta,
            kappa: p.kappa + t * d.kappa,
            lambda: Field::new(mesh.clone(), lambda)?,
        })
    }

    fn line_search(
        &self,
        p: &DualPoint,
        e: &Eval,
        gn: f64,
        d: &Direction,
    ) -> Result<(DualPoint, Eval, f64)> {
        let mut d = d.clone();
        let mut slope = dot(&e.g_field, &d.field) + e.g_eta * d.eta + e.g_kappa * d.kappa;
        if !(slope < 0.0) {
            // steepest descent in the lumped metric
            let m = self.op.mesh().lumped_mass();
            d = Direction {
                field: e.g_field.iter().zip(m).map(|(g, mj)| -g / mj).collect(),
                eta: -e.g_eta * p.eta * p.eta,
                kappa: -e.g_kappa,
            };
            slope = dot(&e.g_field, &d.field) + e.g_eta * d.eta + e.g_kappa * d.kappa;
        }
        // keep a single step of log eta within a factor e^3
        let mut t = 1.0f64.min(3.0 / (d.eta / p.eta).abs().max(1e-300));
        for _ in 0..80 {
            let trial = self.apply_step(p, &d, t)?;
            if let Ok(te) = self.eval(&trial) {
                if te.k.is_finite() {
                    if te.k <= e.k + 1e-4 * t * slope {
                        return Ok((trial, te, t));
                    }
                    // round-off plateau next to the minimiser
                    let flat = te.k - e.k <= 8.0 * f64::EPSILON * e.k.abs().max(1.0);
                    if flat && self.eval_norm(&te) < gn {
                        return Ok((trial, te, t));
                    }
                }
            }
            t *= 0.5;
        }
        Err(Error::NotConverged {
            method: "dual line search",
            iterations: 80,
            residual: gn,
        })
    }

    /// `(c, u) = DH*(-(kappa + lambda) q, -eta)` nodewise (plus `delta xi`
    /// for the regularised functional), `Psi = lambda / eta`, `theta = 1/eta`.
    pub fn recover_state(&self, p: &DualPoint) -> Result<EquilibriumResult> {
        self.check_point(p)?;
        let mesh = self.op.mesh();
        let q = self.model.charges();
        let n = mesh.len();
        let eta = p.eta;
        let mut nodal = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut entropy = 0.0;
        let m = mesh.lumped_mass();
        for j in 0..n {
            let mu = p.kappa + p.lambda.values()[j];
            let y: Vec<f64> = q.iter().map(|qi| -mu * qi).collect();
            let z = self.model.dual_gradient(&y, -eta)?;
            let mut cj = z.c;
            let mut uj = z.u;
            if self.delta > 0.0 {
                for (ci, yi) in cj.iter_mut().zip(&y) {
                    *ci += self.delta * yi;
                }
                uj -= self.delta * eta;
                // S_delta(z) = H*_delta(xi) - xi . z
                let hd = self.reduced(mu, eta)?.value;
                entropy += m[j] * (hd - dot(&y, &cj) + eta * uj);
            } else {
                entropy += m[j] * self.model.entropy(&cj, uj)?;
            }
            nodal.push(cj);
            u.push(uj);
        }
        let c = SpeciesField::from_nodal(mesh, &nodal, q)?;
        let u = Field::new(mesh.clone(), u)?;
        let psi = p.lambda.map(|l| l / eta);
        let energy = self.op.total_energy(&c, &u, self.psi_ext)?;
        let charge = self.op.total_charge(&c);
        Ok(EquilibriumResult {
            c,
            u,
            psi,
            theta: 1.0 / eta,
            eta,
            kappa: p.kappa,
            lambda: p.lambda.clone(),
            delta: self.delta,
            entropy,
            energy_residual: energy - self.e0,
            charge_residual: charge - self.q0,
        })
    }

    /// Constraint residuals, constancy of temperature and of the scaled
    /// electrochemical potentials, and the duality gap.
    pub fn verify_equilibrium(&self, r: &EquilibriumResult) -> Result<EquilibriumDiagnostics> {
        let mesh = self.op.mesh();
        let q = self.model.charges();
        let n = mesh.len();
        let energy = self.op.total_energy(&r.c, &r.u, self.psi_ext)?;
        let charge = self.op.total_charge(&r.c);
        let (mut tmin, mut tmax, mut tsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        let mut zeta_defect: f64 = 0.0;
        if r.delta == 0.0 {
            for j in 0..n {
                let cj = r.c.at(j);
                let w = self.model.neg_gradient(&cj, r.u.values()[j])?;
                let theta = -1.0 / w.v;
                tmin = tmin.min(theta);
                tmax = tmax.max(theta);
                tsum += theta;
                let psi = r.psi.values()[j];
                let zeta: Vec<f64> =
                    w.y.iter()
                        .zip(q)
                        .map(|(yi, qi)| -theta * yi - psi * qi)
                        .collect();
                for i in 1..q.len() {
                    zeta_defect = zeta_defect.max((zeta[i] * q[0] - zeta[0] * q[i]).abs());
                }
            }
        } else {
            tmin = r.theta;
            tmax = r.theta;
            tsum = r.theta * n as f64;
        }
        let theta_spread = (tmax - tmin) / (tsum / n as f64);
        let diff = r.psi.zip_with(self.psi_ext, |a, b| a - b)?;
        let lhs = self.op.apply(diff.values());
        let rhs = self.op.density_load(&r.c.charge_density())?;
        let (mut res, mut size) = (0.0f64, 0.0f64);
        for j in self.lo..self.hi {
            res = res.max((lhs[j] - rhs[j]).abs());
            size = size.max(lhs[j].abs()).max(rhs[j].abs());
        }
        let point = DualPoint {
            eta: r.eta,
            kappa: r.kappa,
            lambda: r.lambda.clone(),
        };
        let k = self.k_value(&point)?;
        Ok(EquilibriumDiagnostics {
            energy_residual: energy - self.e0,
            charge_residual: charge - self.q0,
            theta_spread,
            zeta_defect,
            poisson_residual: res / size.max(f64::MIN_POSITIVE),
            duality_gap: k - r.entropy,
        })
    }
}

#[derive(Debug, Clone)]
struct Direction {
    field: Vec<f64>,
    eta: f64,
    kappa: f64,
}

/// Solves a small symmetric system, shifting the diagonal until the matrix
/// is positive definite.
fn solve_spd_shifted(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    let scale = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut shift = 0.0;
    for _ in 0..60 {
        let mut m = a.to_vec();
        for i in 0..n {
            m[i * n + i] += shift;
        }
        let pd = if n == 1 {
            m[0] > 0.0
        } else {
            m[0] > 0.0 && m[0] * m[3] - m[1] * m[2] > 0.0
        };
        if pd {
            let mut x = b.to_vec();
            solve_dense(&mut m, n, &mut x)?;
            return Ok(x);
        }
        shift = if shift == 0.0 {
            1e-10 * scale
        } else {
            shift * 10.0
        };
    }
    Err(Error::Singular(
        "Schur complement of the dual Hessian".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electrostatics::PoissonProblem;
    use crate::entropy::BoltzmannEntropy;
    use crate::mesh::{Boundary, Mesh};

    fn setup(boundary: [Boundary; 2], n: usize) -> (BoltzmannEntropy, AssembledOperator, Field) {
        let mesh = Mesh::uniform(0.0, 1.0, n, boundary).unwrap();
        let op = PoissonProblem::vacuum(&mesh).assemble().unwrap();
        let doping = Field::from_fn(&mesh, |x| x - 0.5);
        let pe = op.solve_external_potential(&doping, [0.0, 0.0]).unwrap();
        (BoltzmannEntropy::unit(vec![-1.0, 1.0]), op, pe)
    }

    const ROBIN: [Boundary; 2] = [
        Boundary::Robin { omega: 1.0 },
        Boundary::Robin { omega: 1.0 },
    ];

    #[test]
    fn zero_multipliers_value() {
        let (m, op, pe) = setup(ROBIN, 11);
        let k = DualLagrangian::new(&m, &op, 5.0, 0.0, &pe).unwrap();
        let p = DualPoint::constant(op.mesh(), 2.0, 0.0).unwrap();
        let expect = m.reduced_dual(0.0, 2.0).unwrap() + 2.0 * 5.0;
        assert!((k.k_value(&p).unwrap() - expect).abs() < 1e-13);
    }

    fn fd_check(boundary: [Boundary; 2], q0: f64) {
        let (m, op, pe) = setup(boundary, 9);
        let k = DualLagrangian::new(&m, &op, 5.0, q0, &pe).unwrap();
        let mesh = op.mesh().clone();
        let mut lam = Field::from_fn(&mesh, |x| 0.3 * (3.0 * x).sin() - 0.1);
        for i in mesh.endpoint_nodes() {
            if mesh.is_dirichlet_node(i) {
                lam.values_mut()[i] = 0.0;
            }
        }
        let p = DualPoint {
            eta: 1.3,
            kappa: 0.2,
            lambda: lam,
        };
        let g = k.k_gradient(&p).unwrap();
        let h = 1e-6;
        let shift = |de: f64, dk: f64| {
            let mut q = p.clone();
            q.eta += de;
            q.kappa += dk;
            k.k_value(&q).unwrap()
        };
        let fd_eta = (shift(h, 0.0) - shift(-h, 0.0)) / (2.0 * h);
        let fd_kappa = (shift(0.0, h) - shift(0.0, -h)) / (2.0 * h);
        assert!((fd_eta - g.d_eta).abs() < 1e-5 * (1.0 + fd_eta.abs()));
        assert!((fd_kappa - g.d_kappa).abs() < 1e-5 * (1.0 + fd_kappa.abs()));
        let ml = mesh.lumped_mass();
        for j in 1..mesh.len() - 1 {
            let mut a = p.clone();
            let mut b = p.clone();
            a.lambda.values_mut()[j] += h;
            b.lambda.values_mut()[j] -= h;
            let fd = (k.k_value(&a).unwrap() - k.k_value(&b).unwrap()) / (2.0 * h);
            assert!(
                (fd - g.d_lambda.values()[j] * ml[j]).abs() < 1e-5 * (1.0 + fd.abs()),
                "{j}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(ROBIN, 0.3);
        fd_check([Boundary::Dirichlet, Boundary::Robin { omega: 2.0 }], -0.4);
    }

    #[test]
    fn d_kappa_is_charge_defect() {
        let (m, op, pe) = setup(ROBIN, 21);
        let k = DualLagrangian::new(&m, &op, 5.0, 0.7, &pe).unwrap();
        let p = DualPoint {
            eta: 0.8,
            kappa: -0.3,
            lambda: Field::from_fn(op.mesh(), |x| x * x),
        };
        let g = k.k_gradient(&p).unwrap();
        let r = k.recover_state(&p).unwrap();
        assert!((g.d_kappa + r.charge_residual).abs() < 1e-12);
    }

    fn converge(boundary: [Boundary; 2], q0: f64) {
        let (m, op, pe) = setup(boundary, 41);
        let k = DualLagrangian::new(&m, &op, 5.0, q0, &pe).unwrap();
        let sol = k
            .minimize_k(&k.initial_point().unwrap(), &DualOptions::default())
            .unwrap();
        assert!(sol.grad_norm <= 1e-8);
        for w in sol.trace.windows(2) {
            assert!(w[1].k <= w[0].k + 1e-12 * w[0].k.abs());
        }
        let r = k.recover_state(&sol.point).unwrap();
        let d = k.verify_equilibrium(&r).unwrap();
        assert!(
            d.energy_residual.abs() < 1e-7 && d.charge_residual.abs() < 1e-7,
            "{d:?}"
        );
        assert!(d.theta_spread < 1e-12 && d.zeta_defect < 1e-9, "{d:?}");
        assert!(
            d.duality_gap.abs() < 1e-8 * (1.0 + r.entropy.abs()),
            "{d:?}"
        );
        assert!(d.poisson_residual < 1e-8, "{d:?}");
        let again = k.minimize_k(&sol.point, &DualOptions::default()).unwrap();
        assert!(again.iterations <= 2);
    }

    #[test]
    fn converges_in_every_boundary_case() {
        converge(ROBIN, 0.0);
        converge(ROBIN, 0.5);
        converge([Boundary::Dirichlet, Boundary::Robin { omega: 1.0 }], 0.3);
        converge([Boundary::Neumann, Boundary::Neumann], 0.0);
    }

    #[test]
    fn infeasible_energy_reports_minimum() {
        let (m, op, _) = setup(ROBIN, 11);
        let pe = Field::zeros(op.mesh());
        let k = DualLagrangian::new(&m, &op, 0.9, 2.0, &pe).unwrap();
        let err = k
            .minimize_k(&k.initial_point().unwrap(), &DualOptions::default())
            .unwrap_err();
        assert!(
            matches!(err, Error::Infeasible { minimal_energy, .. } if (minimal_energy - 1.0).abs() < 1e-14)
        );
    }

    #[test]
    fn constant_dual_data_give_constant_state() {
        let (m, op, pe) = setup(ROBIN, 11);
        let k = DualLagrangian::new(&m, &op, 5.0, 0.0, &pe).unwrap();
        let r = k
            .recover_state(&DualPoint::constant(op.mesh(), 2.0, 0.0).unwrap())
            .unwrap();
        let z = m.dual_gradient(&[0.0, 0.0], -2.0).unwrap();
        for j in 0..11 {
            assert!((r.u.values()[j] - z.u).abs() < 1e-14);
            assert!((r.c.species(1).values()[j] - z.c[1]).abs() < 1e-14);
        }
    }
}
