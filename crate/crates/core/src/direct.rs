//! Constrained entropy maximisation in the primal variables.
//!
//! Iterates stay feasible: every trial point is corrected by a constant
//! species shift that restores the total charge and by a constant shift of
//! `u` that closes the energy gap, so `S` itself serves as merit function.
//! Search directions come from the quadratic model of the Lagrangian, where
//! the electrostatic part of the Hessian is applied through one extra
//! tridiagonal solve.

use alloc::vec;
use alloc::vec::Vec;

use crate::dual::EquilibriumResult;
use crate::electrostatics::AssembledOperator;
use crate::entropy::moreau_from;
use crate::entropy::EntropyModel;
use crate::error::{invalid, Error, Result};
use crate::linalg::{mat_vec, solve_dense, Tridiagonal};
use crate::math::dot;
#[allow(unused_imports)]
use crate::math::Float;
use crate::mesh::{Field, SpeciesField};

/// Nonnegative concentrations and internal energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalState {
    pub c: SpeciesField,
    pub u: Field,
}

impl PrimalState {
    pub fn new(c: SpeciesField, u: Field) -> Result<Self> {
        if !c.species(0).same_mesh(&u) {
            return Err(Error::MeshMismatch);
        }
        Ok(Self { c, u })
    }

    /// Node-major vector `(c_1, .., c_I, u)` per node.
    pub fn to_vec(&self) -> Vec<f64> {
        let n = self.u.len();
        let d = self.c.species_count() + 1;
        let mut z = vec![0.0; n * d];
        for j in 0..n {
            for i in 0..d - 1 {
                z[j * d + i] = self.c.species(i).values()[j];
            }
            z[j * d + d - 1] = self.u.values()[j];
        }
        z
    }

    pub(crate) fn from_vec(like: &PrimalState, z: &[f64]) -> Result<Self> {
        let mesh = like.u.mesh();
        let d = like.c.species_count() + 1;
        let nodal: Vec<Vec<f64>> = z.chunks(d).map(|b| b[..d - 1].to_vec()).collect();
        let u = z.chunks(d).map(|b| b[d - 1]).collect();
        Ok(Self {
            c: SpeciesField::from_nodal(mesh, &nodal, like.c.charges())?,
            u: Field::new(mesh.clone(), u)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCertificate {
    pub state: PrimalState,
    pub energy_residual: f64,
    pub charge_residual: f64,
    pub minimal_energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectOptions {
    /// Tolerance on the relative stationarity residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations without progress in stationarity before giving up.
    pub patience: usize,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 300,
            patience: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalTraceRow {
    pub iteration: usize,
    pub entropy: f64,
    pub stationarity: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalResult {
    pub state: PrimalState,
    /// `S`, or `-H_delta` for the regularised problem.
    pub entropy: f64,
    /// Least-squares multipliers of the energy and charge constraints.
    pub eta: f64,
    pub kappa: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub energy_residual: f64,
    pub charge_residual: f64,
    pub delta: f64,
    pub trace: Vec<PrimalTraceRow>,
}

/// Distances between the states of the two solution routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossValidation {
    /// `L^1` distance of `(c, u)` relative to the `L^1` size of the dual state.
    pub l1_relative: f64,
    pub linf: f64,
    /// `|S_dual - S_primal| / max(1, |S_dual|)`.
    pub entropy_gap: f64,
    pub dual_energy_residual: f64,
    pub dual_charge_residual: f64,
    pub primal_energy_residual: f64,
    pub primal_charge_residual: f64,
}

impl CrossValidation {
    pub fn passes(&self, l1_tol: f64, entropy_tol: f64) -> bool {
        self.l1_relative <= l1_tol && self.entropy_gap <= entropy_tol
    }
}

pub fn cross_validate(dual: &EquilibriumResult, primal: &PrimalResult) -> Result<CrossValidation> {
    let (l1_relative, linf) = state_distance(&primal.state, &dual.c, &dual.u)?;
    Ok(CrossValidation {
        l1_relative,
        linf,
        entropy_gap: (dual.entropy - primal.entropy).abs() / dual.entropy.abs().max(1.0),
        dual_energy_residual: dual.energy_residual,
        dual_charge_residual: dual.charge_residual,
        primal_energy_residual: primal.energy_residual,
        primal_charge_residual: primal.charge_residual,
    })
}

/// `L^1` distance of `(c, u)` from a reference, relative to the `L^1` size of
/// the reference, and the sup-norm distance.
pub fn state_distance(s: &PrimalState, c_ref: &SpeciesField, u_ref: &Field) -> Result<(f64, f64)> {
    if !u_ref.same_mesh(&s.u) {
        return Err(Error::MeshMismatch);
    }
    if c_ref.species_count() != s.c.species_count() {
        return Err(invalid("species counts differ"));
    }
    let du = s.u.zip_with(u_ref, |a, b| a - b)?;
    let mut dist = du.l1_norm();
    let mut size = u_ref.l1_norm();
    let mut linf = du.linf_norm();
    for i in 0..s.c.species_count() {
        let diff = s.c.species(i).zip_with(c_ref.species(i), |a, b| a - b)?;
        dist += diff.l1_norm();
        linf = linf.max(diff.linf_norm());
        size += c_ref.species(i).l1_norm();
    }
    Ok((dist / size.max(f64::MIN_POSITIVE), linf))
}

/// Nodal data of the (possibly regularised) entropy at a state.
struct Local {
    entropy: f64,
    /// `DS` per node, node-major.
    grad: Vec<f64>,
    /// `(-D^2 S)^{-1}` per node, `(I+1)^2` row-major blocks.
    winv: Vec<f64>,
    prox: Vec<f64>,
}

pub struct DirectMethod<'a, M: EntropyModel + ?Sized> {
    model: &'a M,
    op: &'a AssembledOperator,
    e0: f64,
    q0: f64,
    psi_ext: &'a Field,
    delta: f64,
    lo: usize,
    hi: usize,
}

impl<'a, M: EntropyModel + ?Sized> DirectMethod<'a, M> {
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
        let n = op.mesh().len();
        Ok(Self {
            model,
            op,
            e0,
            q0,
            psi_ext,
            delta: 0.0,
            lo: usize::from(op.mesh().is_dirichlet_node(0)),
            hi: n - usize::from(op.mesh().is_dirichlet_node(n - 1)),
        })
    }

    /// Replaces `H = -S` by its Moreau envelope `H_delta`.
    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(invalid("delta must lie in [0, 1]"));
        }
        self.delta = delta;
        Ok(self)
    }

    fn dim(&self) -> usize {
        self.model.species_count() + 1
    }

    /// Total potential `Psi = psi_{q.c} + psi_ext` of a node-major state.
    fn potential(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let q = self.model.charges();
        let m = self.op.mesh().lumped_mass();
        let load: Vec<f64> = z
            .chunks(d)
            .zip(m)
            .map(|(b, mj)| mj * dot(q, &b[..d - 1]))
            .collect();
        let psi = self.op.solve_load(&load)?;
        Ok(psi
            .iter()
            .zip(self.psi_ext.values())
            .map(|(a, b)| a + b)
            .collect())
    }

    fn energy_of(&self, z: &[f64], big_psi: &[f64]) -> f64 {
        let d = self.dim();
        let m = self.op.mesh().lumped_mass();
        let u: f64 = z.chunks(d).zip(m).map(|(b, mj)| mj * b[d - 1]).sum();
        0.5 * self.op.bilinear(big_psi, big_psi) + u
    }

    fn charge_of(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let q = self.model.charges();
        let m = self.op.mesh().lumped_mass();
        z.chunks(d)
            .zip(m)
            .map(|(b, mj)| mj * dot(q, &b[..d - 1]))
            .sum()
    }

    pub fn energy(&self, s: &PrimalState) -> Result<f64> {
        self.op.total_energy(&s.c, &s.u, self.psi_ext)
    }

    pub fn charge(&self, s: &PrimalState) -> f64 {
        self.op.total_charge(&s.c)
    }

    /// `S(c, u)` (or `-H_delta`) integrated with the lumped mass.
    pub fn entropy(&self, s: &PrimalState) -> Result<f64> {
        Ok(self.local(&s.to_vec(), None, false)?.entropy)
    }

    fn local(&self, z: &[f64], warm: Option<&[f64]>, derivatives: bool) -> Result<Local> {
        let d = self.dim();
        let m = self.op.mesh().lumped_mass();
        let n = m.len();
        let mut entropy = 0.0;
        let mut grad = vec![0.0; if derivatives { n * d } else { 0 }];
        let mut winv = vec![0.0; if derivatives { n * d * d } else { 0 }];
        let mut prox = vec![0.0; if self.delta > 0.0 { n * d } else { 0 }];
        for j in 0..n {
            let zj = &z[j * d..(j + 1) * d];
            if self.delta > 0.0 {
                let w = warm.map(|p| &p[j * d..(j + 1) * d]);
                let mp = moreau_from(self.model, zj, self.delta, w)?;
                entropy -= m[j] * mp.value;
                prox[j * d..(j + 1) * d].copy_from_slice(&mp.prox);
                if derivatives {
                    let xi = &mp.gradient;
                    let h = self.model.dual_hessian(&xi[..d - 1], xi[d - 1])?;
                    for k in 0..d {
                        grad[j * d + k] = -xi[k];
                    }
                    let block = &mut winv[j * d * d..(j + 1) * d * d];
                    block.copy_from_slice(&h);
                    for k in 0..d {
                        block[k * d + k] += self.delta;
                    }
                }
            } else {
                let (c, u) = zj.split_at(d - 1);
                entropy += m[j] * self.model.entropy(c, u[0])?;
                if derivatives {
                    let w = self.model.neg_gradient(c, u[0])?;
                    let h = self.model.dual_hessian(&w.y, w.v)?;
                    for k in 0..d - 1 {
                        grad[j * d + k] = -w.y[k];
                    }
                    grad[j * d + d - 1] = -w.v;
                    winv[j * d * d..(j + 1) * d * d].copy_from_slice(&h);
                }
            }
        }
        Ok(Local {
            entropy,
            grad,
            winv,
            prox,
        })
    }

    /// Constant species shift restoring `Q = Q0`, then constant `u` shift
    /// restoring `E = E0`.
    fn repair_vec(&self, z: &mut [f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let q = self.model.charges();
        let measure = self.op.mesh().measure();
        let gap = (self.q0 - self.charge_of(z)) / measure;
        if gap != 0.0 {
            let k = extreme_species(q, gap > 0.0);
            let shift = gap / q[k];
            for b in z.chunks_mut(d) {
                b[k] += shift;
            }
        }
        let psi = self.potential(z)?;
        let du = (self.e0 - self.energy_of(z, &psi)) / measure;
        for b in z.chunks_mut(d) {
            b[d - 1] += du;
        }
        Ok(psi)
    }

    /// Charge restoration followed by the energy-gap repair.
    pub fn repair(&self, s: &PrimalState) -> Result<PrimalState> {
        let mut z = s.to_vec();
        self.repair_vec(&mut z)?;
        PrimalState::from_vec(s, &z)
    }

    /// A feasible state built from the minimal-energy charge profile, split
    /// over the two extreme-charge species, plus `background` times a neutral
    /// positive species profile. `u` is constant and closes the energy gap.
    pub fn feasible_point(&self, background: f64) -> Result<FeasibilityCertificate> {
        if !(background >= 0.0) {
            return Err(invalid("background must be nonnegative"));
        }
        let min = self.op.min_electro_energy(self.q0, self.psi_ext)?;
        if !(self.e0 > min.value) {
            return Err(Error::Infeasible {
                e0: self.e0,
                minimal_energy: min.value,
            });
        }
        let mesh = self.op.mesh();
        let q = self.model.charges();
        let ni = q.len();
        let hi = extreme_species(q, true);
        let lo = extreme_species(q, false);
        let mut rho = self.op.minimal_energy_density(self.q0, self.psi_ext)?;
        let representable = |r: &Field| {
            r.values()
                .iter()
                .all(|&v| (v >= 0.0 || q[lo] < 0.0) && (v <= 0.0 || q[hi] > 0.0))
        };
        if !representable(&rho) {
            rho = Field::constant(mesh, self.q0 / mesh.measure());
            let e = self.op.electrostatic_energy(&rho, self.psi_ext)?;
            if !representable(&rho) || e > self.e0 {
                return Err(invalid(
                    "charge profile not representable by the sign pattern of q",
                ));
            }
        }
        // neutral positive background: ones, with the net charge compensated
        let mut bg = vec![1.0; ni];
        let net: f64 = q.iter().sum();
        if net > 0.0 && q[lo] < 0.0 {
            bg[lo] += net / -q[lo];
        } else if net < 0.0 && q[hi] > 0.0 {
            bg[hi] += -net / q[hi];
        } else if net != 0.0 {
            bg.iter_mut().for_each(|b| *b = 0.0);
        }
        let n = mesh.len();
        let mut nodal = vec![vec![0.0; ni]; n];
        for (j, c) in nodal.iter_mut().enumerate() {
            let r = rho.values()[j];
            if r > 0.0 {
                c[hi] += r / q[hi];
            } else if r < 0.0 {
                c[lo] += r / q[lo];
            }
            for (ci, b) in c.iter_mut().zip(&bg) {
                *ci += background * b;
            }
        }
        let c = SpeciesField::from_nodal(mesh, &nodal, q)?;
        let e_el = self
            .op
            .electrostatic_energy(&c.charge_density(), self.psi_ext)?;
        let u = Field::constant(mesh, (self.e0 - e_el) / mesh.measure());
        let state = PrimalState::new(c, u)?;
        Ok(FeasibilityCertificate {
            energy_residual: self.energy(&state)? - self.e0,
            charge_residual: self.charge(&state) - self.q0,
            state,
            minimal_energy: min.value,
        })
    }

    /// Solves `(M W + eta J) d = M r` with `W = -D^2 S` blockwise and
    /// `J = D^2 E`, eliminating the potential increment.
    fn solve_model(&self, loc: &Local, eta: f64, r: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let q = self.model.charges();
        let m = self.op.mesh().lumped_mass();
        let n = m.len();
        let a = self.op.matrix();
        let mut av = vec![0.0; n * d];
        let mut wq = vec![0.0; n * d];
        let mut qe = vec![0.0; d];
        qe[..d - 1].copy_from_slice(q);
        for j in 0..n {
            let blk = &loc.winv[j * d * d..(j + 1) * d * d];
            av[j * d..(j + 1) * d].copy_from_slice(&mat_vec(blk, d, &r[j * d..(j + 1) * d]));
            wq[j * d..(j + 1) * d].copy_from_slice(&mat_vec(blk, d, &qe));
        }
        let (lo, hi) = (self.lo, self.hi);
        let nf = hi - lo;
        let mut t = Tridiagonal::zeros(nf);
        let mut rhs = vec![0.0; nf];
        for k in 0..nf {
            let j = lo + k;
            let s = dot(&qe, &wq[j * d..(j + 1) * d]);
            t.diag[k] = a.diag[j] + eta * m[j] * s;
            if k + 1 < nf {
                t.upper[k] = a.upper[j];
                t.lower[k] = a.lower[j];
            }
            rhs[k] = m[j] * dot(&qe, &av[j * d..(j + 1) * d]);
        }
        let dpsi = t.solve(&rhs)?;
        for k in 0..nf {
            let j = lo + k;
            for l in 0..d {
                av[j * d + l] -= eta * dpsi[k] * wq[j * d + l];
            }
        }
        Ok(av)
    }

    /// Least-squares `(eta, kappa)` fitting `DS = eta DE + kappa DQ` in the
    /// lumped `L^2` metric, and the relative residual.
    fn multipliers(&self, loc: &Local, big_psi: &[f64]) -> (f64, f64, f64) {
        let d = self.dim();
        let q = self.model.charges();
        let m = self.op.mesh().lumped_mass();
        let qq = dot(q, q);
        let (mut ee, mut eq, mut gq, mut ge, mut gg, mut mm) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (j, mj) in m.iter().enumerate() {
            let g = &loc.grad[j * d..(j + 1) * d];
            let p = big_psi[j];
            let gcq = dot(&g[..d - 1], q);
            ee += mj * (p * p * qq + 1.0);
            eq += mj * p * qq;
            mm += mj * qq;
            ge += mj * (p * gcq + g[d - 1]);
            gq += mj * gcq;
            gg += mj * dot(g, g);
        }
        let det = ee * mm - eq * eq;
        let (eta, kappa) = if det.abs() > 1e-300 && mm > 0.0 {
            ((ge * mm - gq * eq) / det, (ee * gq - eq * ge) / det)
        } else {
            (ge / ee, 0.0)
        };
        let mut res = 0.0;
        for (j, mj) in m.iter().enumerate() {
            let g = &loc.grad[j * d..(j + 1) * d];
            let mu = kappa + eta * big_psi[j];
            for i in 0..d - 1 {
                let r = g[i] - mu * q[i];
                res += mj * r * r;
            }
            let r = g[d - 1] - eta;
            res += mj * r * r;
        }
        (eta, kappa, res.sqrt() / (1.0 + gg.sqrt()))
    }

    /// Feasible ascent from `start`; the start is repaired first.
    pub fn maximize_entropy(
        &self,
        start: &PrimalState,
        opts: &DirectOptions,
    ) -> Result<PrimalResult> {
        let min = self.op.min_electro_energy(self.q0, self.psi_ext)?;
        if !(self.e0 > min.value) {
            return Err(Error::Infeasible {
                e0: self.e0,
                minimal_energy: min.value,
            });
        }
        if start.c.species_count() != self.model.species_count() || !start.u.same_mesh(self.psi_ext)
        {
            return Err(Error::MeshMismatch);
        }
        let d = self.dim();
        let q = self.model.charges();
        let m = self.op.mesh().lumped_mass();
        let n = m.len();
        let positive = self.delta == 0.0;
        let mut z = start.to_vec();
        let mut psi = self.repair_vec(&mut z)?;
        if positive && z.iter().any(|x| !(*x > 0.0)) {
            return Err(invalid("start must be strictly positive after repair"));
        }
        let mut loc = self.local(&z, None, true)?;
        let (mut eta_ls, mut kappa_ls, mut stat) = self.multipliers(&loc, &psi);
        let mut eta_hat = eta_ls.max(0.0);
        let mut trace = vec![PrimalTraceRow {
            iteration: 0,
            entropy: loc.entropy,
            stationarity: stat,
            step: 0.0,
        }];
        let mut best_stat = stat;
        let mut since_best = 0;
        let mut it = 0;
        let mut qe = vec![0.0; d];
        qe[..d - 1].copy_from_slice(q);
        while stat > opts.tol {
            if it >= opts.max_iter || since_best > opts.patience {
                return Err(Error::NotConverged {
                    method: "direct ascent",
                    iterations: it,
                    residual: stat,
                });
            }
            it += 1;
            // constraint gradients per unit mass
            let mut a_e = vec![0.0; n * d];
            let mut a_q = vec![0.0; n * d];
            for j in 0..n {
                for i in 0..d - 1 {
                    a_e[j * d + i] = q[i] * psi[j];
                    a_q[j * d + i] = q[i];
                }
                a_e[j * d + d - 1] = 1.0;
            }
            let dg = self.solve_model(&loc, eta_hat, &loc.grad)?;
            let de = self.solve_model(&loc, eta_hat, &a_e)?;
            let dq = self.solve_model(&loc, eta_hat, &a_q)?;
            let pair = |x: &[f64], y: &[f64]| -> f64 {
                x.chunks(d)
                    .zip(y.chunks(d))
                    .zip(m)
                    .map(|((a, b), mj)| mj * dot(a, b))
                    .sum()
            };
            let mut g2 = [
                pair(&a_e, &de),
                pair(&a_e, &dq),
                pair(&a_q, &de),
                pair(&a_q, &dq),
            ];
            let mut rhs = [pair(&a_e, &dg), pair(&a_q, &dg)];
            let (eta_new, kappa_new) = if solve_dense(&mut g2, 2, &mut rhs).is_ok() {
                (rhs[0], rhs[1])
            } else {
                (eta_ls, kappa_ls)
            };
            let dir: Vec<f64> = (0..n * d)
                .map(|k| dg[k] - eta_new * de[k] - kappa_new * dq[k])
                .collect();
            let slope = pair(&loc.grad, &dir);
            let mut t: f64 = 1.0;
            if positive {
                for (x, dx) in z.iter().zip(&dir) {
                    if *dx < 0.0 {
                        t = t.min(0.99 * x / -dx);
                    }
                }
            }
            let mut accepted = None;
            for _ in 0..60 {
                let mut trial: Vec<f64> = z.iter().zip(&dir).map(|(x, dx)| x + t * dx).collect();
                let tpsi = self.repair_vec(&mut trial)?;
                if !positive || trial.iter().all(|x| *x > 0.0) {
                    if let Ok(tl) = self.local(&trial, Some(&loc.prox), true) {
                        let armijo = tl.entropy >= loc.entropy + 1e-4 * t * slope.max(0.0);
                        let flat = tl.entropy >= loc.entropy - 1e-13 * loc.entropy.abs().max(1.0);
                        let tstat = if armijo {
                            0.0
                        } else {
                            self.multipliers(&tl, &tpsi).2
                        };
                        if armijo || (flat && tstat < stat) {
                            accepted = Some((trial, tpsi, tl));
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            let Some((nz, npsi, nl)) = accepted else {
                return Err(Error::NotConverged {
                    method: "direct ascent line search",
                    iterations: it,
                    residual: stat,
                });
            };
            z = nz;
            psi = npsi;
            loc = nl;
            (eta_ls, kappa_ls, stat) = self.multipliers(&loc, &psi);
            eta_hat = eta_new.max(0.0);
            if stat < best_stat {
                best_stat = stat;
                since_best = 0;
            } else {
                since_best += 1;
            }
            trace.push(PrimalTraceRow {
                iteration: it,
                entropy: loc.entropy,
                stationarity: stat,
                step: t,
            });
        }
        let state = PrimalState::from_vec(start, &z)?;
        Ok(PrimalResult {
            energy_residual: self.energy_of(&z, &psi) - self.e0,
            charge_residual: self.charge_of(&z) - self.q0,
            state,
            entropy: loc.entropy,
            eta: eta_ls,
            kappa: kappa_ls,
            stationarity: stat,
            iterations: it,
            delta: self.delta,
            trace,
        })
    }

    /// Regularised problem: returns the optimiser with `(eta_delta, kappa_delta)`.
    pub fn maximize_entropy_regularized(
        &self,
        delta: f64,
        start: &PrimalState,
        opts: &DirectOptions,
    ) -> Result<PrimalResult> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(invalid("delta must lie in (0, 1]"));
        }
        let reg = DirectMethod { delta, ..*self };
        reg.maximize_entropy(start, opts)
    }

    /// `sqrt(sum m |DH_delta + eta DE + kappa DQ|^2)` at a state, with the
    /// given multipliers.
    pub fn multiplier_residual(&self, s: &PrimalState, eta: f64, kappa: f64) -> Result<f64> {
        let z = s.to_vec();
        let loc = self.local(&z, None, true)?;
        let psi = self.potential(&z)?;
        let d = self.dim();
        let q = self.model.charges();
        let m = self.op.mesh().lumped_mass();
        let mut res = 0.0;
        for (j, mj) in m.iter().enumerate() {
            let g = &loc.grad[j * d..(j + 1) * d];
            for i in 0..d - 1 {
                let r = g[i] - (kappa + eta * psi[j]) * q[i];
                res += mj * r * r;
            }
            res += mj * (g[d - 1] - eta) * (g[d - 1] - eta);
        }
        Ok(res.sqrt())
    }
}

impl<M: EntropyModel + ?Sized> Clone for DirectMethod<'_, M> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<M: EntropyModel + ?Sized> Copy for DirectMethod<'_, M> {}

/// Index of the species with the largest (`up`) or smallest charge.
fn extreme_species(q: &[f64], up: bool) -> usize {
    let mut k = 0;
    for (i, qi) in q.iter().enumerate() {
        if (up && *qi > q[k]) || (!up && *qi < q[k]) {
            k = i;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{DualLagrangian, DualOptions};
    use crate::electrostatics::PoissonProblem;
    use crate::entropy::BoltzmannEntropy;
    use crate::mesh::{Boundary, Mesh};

    const ROBIN: [Boundary; 2] = [
        Boundary::Robin { omega: 1.0 },
        Boundary::Robin { omega: 1.0 },
    ];

    fn setup(boundary: [Boundary; 2], n: usize) -> (BoltzmannEntropy, AssembledOperator, Field) {
        let mesh = Mesh::uniform(0.0, 1.0, n, boundary).unwrap();
        let op = PoissonProblem::vacuum(&mesh).assemble().unwrap();
        let doping = Field::from_fn(&mesh, |x| x - 0.5);
        let pe = op.solve_external_potential(&doping, [0.0, 0.0]).unwrap();
        (BoltzmannEntropy::unit(vec![-1.0, 1.0]), op, pe)
    }

    #[test]
    fn zero_charge_feasible_point() {
        let mesh = Mesh::uniform(0.0, 1.0, 11, ROBIN).unwrap();
        let op = PoissonProblem::vacuum(&mesh).assemble().unwrap();
        let pe = Field::zeros(&mesh);
        let m = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let dm = DirectMethod::new(&m, &op, 5.0, 0.0, &pe).unwrap();
        let cert = dm.feasible_point(0.0).unwrap();
        assert!(cert.state.c.species(0).linf_norm() == 0.0);
        assert!(cert
            .state
            .u
            .values()
            .iter()
            .all(|u| (u - 5.0).abs() < 1e-14));
    }

    #[test]
    fn robin_feasible_point_with_charge() {
        let mesh = Mesh::uniform(0.0, 1.0, 41, ROBIN).unwrap();
        let op = PoissonProblem::vacuum(&mesh).assemble().unwrap();
        let pe = Field::zeros(&mesh);
        let m = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let dm = DirectMethod::new(&m, &op, 2.0, 2.0, &pe).unwrap();
        let cert = dm.feasible_point(0.5).unwrap();
        assert!(cert.energy_residual.abs() < 1e-10 && cert.charge_residual.abs() < 1e-10);
        assert!(cert.state.u.values().iter().all(|u| *u >= 0.0));
        let bad = DirectMethod::new(&m, &op, 0.5, 2.0, &pe).unwrap();
        assert!(matches!(
            bad.feasible_point(0.0),
            Err(Error::Infeasible { .. })
        ));
    }

    fn agree(boundary: [Boundary; 2], q0: f64) {
        let (m, op, pe) = setup(boundary, 41);
        let k = DualLagrangian::new(&m, &op, 5.0, q0, &pe).unwrap();
        let sol = k
            .minimize_k(&k.initial_point().unwrap(), &DualOptions::default())
            .unwrap();
        let eq = k.recover_state(&sol.point).unwrap();
        let dm = DirectMethod::new(&m, &op, 5.0, q0, &pe).unwrap();
        let start = dm.feasible_point(1.0).unwrap().state;
        let r = dm
            .maximize_entropy(&start, &DirectOptions::default())
            .unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1].entropy >= w[0].entropy - 1e-12 * w[0].entropy.abs().max(1.0));
        }
        let cv = cross_validate(&eq, &r).unwrap();
        assert!(cv.passes(1e-6, 1e-10), "{cv:?}");
        assert!((r.eta - sol.point.eta).abs() < 1e-6 * sol.point.eta);
        assert!((r.kappa - sol.point.kappa).abs() < 1e-6 * (1.0 + sol.point.kappa.abs()));
    }

    #[test]
    fn agrees_with_dual_route() {
        agree(ROBIN, 0.0);
        agree([Boundary::Dirichlet, Boundary::Robin { omega: 1.0 }], 0.3);
    }

    #[test]
    fn regularized_matches_regularized_dual() {
        let (m, op, pe) = setup(ROBIN, 21);
        let delta = 0.1;
        let k = DualLagrangian::new(&m, &op, 5.0, 0.0, &pe)
            .unwrap()
            .with_delta(delta)
            .unwrap();
        let sol = k
            .minimize_k(&k.initial_point().unwrap(), &DualOptions::default())
            .unwrap();
        let eq = k.recover_state(&sol.point).unwrap();
        let dm = DirectMethod::new(&m, &op, 5.0, 0.0, &pe).unwrap();
        let start = dm.feasible_point(1.0).unwrap().state;
        let r = dm
            .maximize_entropy_regularized(delta, &start, &DirectOptions::default())
            .unwrap();
        let cv = cross_validate(&eq, &r).unwrap();
        assert!(cv.passes(1e-6, 1e-10), "{cv:?}");
        assert!(r.eta > 0.0);
        let reg = DirectMethod::new(&m, &op, 5.0, 0.0, &pe)
            .unwrap()
            .with_delta(delta)
            .unwrap();
        assert!(reg.multiplier_residual(&r.state, r.eta, r.kappa).unwrap() < 1e-7);
    }
}
