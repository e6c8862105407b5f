//! Time integration of the electro-energy-reaction-diffusion gradient system
//!
//! `z' = D_W P*(z; W)`, `W = DS(z)`,
//!
//! with the diffusive potential `P*_diff = 1/2 int M (X, X)` built from the
//! forces `X_i = grad W_ci - W_u q_i grad Psi`, `X_u = grad W_u`, and the
//! Marcelin-de Donder potential `sum_r k_r Pi_r C*(gamma_r . W_c)`.
//!
//! The implicit scheme evaluates `W` at the new state and `grad Psi` at the
//! midpoint of the step, with mobilities and reaction prefactors frozen at
//! the old state. Charge and energy are then conserved up to the Newton
//! residual, and `S(z_{n+1}) - S(z_n) >= dt <W, r> >= 0` by concavity.

use alloc::vec;
use alloc::vec::Vec;

use crate::direct::{state_distance, PrimalState};
use crate::electrostatics::AssembledOperator;
use crate::entropy::EntropyModel;
use crate::error::{invalid, Error, Result};
use crate::linalg::BandMatrix;
#[allow(unused_imports)]
use crate::math::Float;
use crate::math::{cstar_prime, cstar_second, dot};
use crate::mesh::{BoundaryCase, Field};

/// `sum_i alpha_i C_i <-> sum_i beta_i C_i` with rate constant `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    reactions: Vec<Reaction>,
    gamma: Vec<Vec<f64>>,
    species: usize,
}

impl ReactionNetwork {
    /// Validates dimensions, positive rates and charge conservation
    /// `gamma_r . q = 0`.
    pub fn new(reactions: Vec<Reaction>, charges: &[f64]) -> Result<Self> {
        let species = charges.len();
        let mut gamma = Vec::with_capacity(reactions.len());
        for (r, re) in reactions.iter().enumerate() {
            if re.alpha.len() != species || re.beta.len() != species {
                return Err(invalid(alloc::format!(
                    "reaction {r} has wrong species count"
                )));
            }
            if !(re.rate > 0.0 && re.rate.is_finite()) {
                return Err(invalid(alloc::format!(
                    "reaction {r} needs a positive rate"
                )));
            }
            let g: Vec<f64> = re
                .beta
                .iter()
                .zip(&re.alpha)
                .map(|(b, a)| *b as f64 - *a as f64)
                .collect();
            let qn: f64 = charges.iter().map(|q| q.abs()).sum::<f64>().max(1.0);
            if dot(&g, charges).abs() > 1e-12 * qn {
                return Err(invalid(alloc::format!(
                    "reaction {r} does not conserve charge"
                )));
            }
            gamma.push(g);
        }
        Ok(Self {
            reactions,
            gamma,
            species,
        })
    }

    pub fn empty(species: usize) -> Self {
        Self {
            reactions: Vec::new(),
            gamma: Vec::new(),
            species,
        }
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn gamma(&self) -> &[Vec<f64>] {
        &self.gamma
    }

    pub fn len(&self) -> usize {
        self.reactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reactions.is_empty()
    }

    pub fn species_count(&self) -> usize {
        self.species
    }

    /// Rank of the stoichiometric matrix.
    pub fn rank(&self) -> usize {
        let mut m: Vec<Vec<f64>> = self.gamma.clone();
        let mut rank = 0;
        for col in 0..self.species {
            let Some(p) =
                (rank..m.len()).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            else {
                break;
            };
            if m[p][col].abs() < 1e-12 {
                continue;
            }
            m.swap(rank, p);
            for r in 0..m.len() {
                if r != rank {
                    let f = m[r][col] / m[rank][col];
                    for k in 0..self.species {
                        m[r][k] -= f * m[rank][k];
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    /// `ker Gamma = span q`, i.e. charge is the only conserved combination.
    pub fn has_single_conservation_law(&self) -> bool {
        self.rank() + 1 == self.species
    }

    pub fn require_single_conservation_law(self) -> Result<Self> {
        if !self.has_single_conservation_law() {
            return Err(invalid("stoichiometric matrix must have kernel span{q}"));
        }
        Ok(self)
    }
}

/// Diagonal mobility `d_i c_i` for species and `kappa u` for energy.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityModel {
    pub species: Vec<f64>,
    pub heat: f64,
}

impl MobilityModel {
    pub fn new(species: Vec<f64>, heat: f64) -> Result<Self> {
        if species
            .iter()
            .chain(core::iter::once(&heat))
            .any(|d| !(*d > 0.0 && d.is_finite()))
        {
            return Err(invalid("mobility constants must be positive"));
        }
        Ok(Self { species, heat })
    }

    pub fn uniform(species: usize, d: f64, heat: f64) -> Result<Self> {
        Self::new(vec![d; species], heat)
    }

    /// Element mobilities from the endpoint states `za`, `zb`.
    fn element(&self, za: &[f64], zb: &[f64]) -> Vec<f64> {
        let d = za.len();
        let mut mob: Vec<f64> = self
            .species
            .iter()
            .enumerate()
            .map(|(i, di)| di * 0.5 * (za[i] + zb[i]))
            .collect();
        mob.push(self.heat * 0.5 * (za[d - 1] + zb[d - 1]));
        mob
    }
}

/// `Pi_r = prod_i (c_i / w_i(u))^{(alpha_i + beta_i)/2}` with `w(u)` the
/// equilibrium concentrations at `u`.
pub fn reaction_prefactors<M: EntropyModel + ?Sized>(
    network: &ReactionNetwork,
    model: &M,
    c: &[f64],
    u: f64,
) -> Result<Vec<f64>> {
    if c.iter().any(|x| !(*x > 0.0)) || !(u > 0.0) {
        return Err(crate::error::domain("reaction rates need a positive state"));
    }
    let w = model.equilibrium_concentrations(u)?;
    Ok(network
        .reactions
        .iter()
        .map(|r| {
            c.iter()
                .zip(&w)
                .zip(r.alpha.iter().zip(&r.beta))
                .map(|((ci, wi), (a, b))| (ci / wi).powf(0.5 * (*a + *b) as f64))
                .product()
        })
        .collect())
}

/// Reactive species rate `sum_r k_r Pi_r(c, u) C*'(gamma_r . w_c) gamma_r`,
/// where `w_c` is the concentration part of the `W = DS` slot.
pub fn reactive_rate<M: EntropyModel + ?Sized>(
    network: &ReactionNetwork,
    model: &M,
    c: &[f64],
    u: f64,
    w_c: &[f64],
) -> Result<Vec<f64>> {
    let pre = reaction_prefactors(network, model, c, u)?;
    let mut rate = vec![0.0; c.len()];
    for ((r, g), p) in network.reactions.iter().zip(&network.gamma).zip(&pre) {
        let f = r.rate * p * cstar_prime(dot(g, w_c));
        for (ri, gi) in rate.iter_mut().zip(g) {
            *ri += f * gi;
        }
    }
    Ok(rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Newton iteration to convergence on the implicit system.
    Implicit,
    /// A single Newton iteration per step.
    LinearlyImplicit,
}

/// Nodal rate densities at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub diffusive: Vec<Field>,
    pub energy: Field,
    pub reactive: Vec<Field>,
    /// `<DS, z'>`.
    pub entropy_production: f64,
}

impl Rates {
    /// Largest nodal rate in absolute value.
    pub fn max_norm(&self) -> f64 {
        self.diffusive
            .iter()
            .chain(&self.reactive)
            .chain(core::iter::once(&self.energy))
            .map(Field::linf_norm)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub t_end: f64,
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Keep every `stride`-th accepted state.
    pub stride: usize,
    /// Stop once the relative `L^1` distance to the reference drops below.
    pub tol_distance: f64,
    /// Tolerated entropy decrease per step.
    pub entropy_slack: f64,
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            t_end: 50.0,
            dt0: 1e-3,
            dt_min: 1e-10,
            dt_max: 5.0,
            stride: 10,
            tol_distance: 0.0,
            entropy_slack: 1e-10,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub energy: Vec<f64>,
    pub charge: Vec<f64>,
    /// Relative `L^1` distance to the reference (NaN without reference).
    pub distance: Vec<f64>,
    pub theta_spread: Vec<f64>,
    pub snapshots: Vec<(f64, PrimalState)>,
    pub final_state: PrimalState,
    pub rejected_steps: usize,
    /// Largest entropy decrease over a step (0 if none).
    pub max_entropy_decrease: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PrimalState,
    pub newton_iterations: usize,
}

pub struct Evolution<'a, M: EntropyModel + ?Sized> {
    model: &'a M,
    op: &'a AssembledOperator,
    psi_ext: &'a Field,
    network: &'a ReactionNetwork,
    mobility: &'a MobilityModel,
    scheme: Scheme,
}

struct Frozen {
    mob: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl<'a, M: EntropyModel + ?Sized> Evolution<'a, M> {
    pub fn new(
        model: &'a M,
        op: &'a AssembledOperator,
        psi_ext: &'a Field,
        network: &'a ReactionNetwork,
        mobility: &'a MobilityModel,
        scheme: Scheme,
    ) -> Result<Self> {
        let ni = model.species_count();
        if network.species_count() != ni || mobility.species.len() != ni {
            return Err(invalid(
                "species counts of model, reactions and mobility differ",
            ));
        }
        if **psi_ext.mesh() != **op.mesh() {
            return Err(Error::MeshMismatch);
        }
        Ok(Self {
            model,
            op,
            psi_ext,
            network,
            mobility,
            scheme,
        })
    }

    fn dim(&self) -> usize {
        self.model.species_count() + 1
    }

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

    fn frozen(&self, z: &[f64]) -> Result<Frozen> {
        let d = self.dim();
        let n = z.len() / d;
        let mob = (0..n - 1)
            .map(|e| {
                self.mobility
                    .element(&z[e * d..(e + 1) * d], &z[(e + 1) * d..(e + 2) * d])
            })
            .collect();
        let pre = z
            .chunks(d)
            .map(|b| reaction_prefactors(self.network, self.model, &b[..d - 1], b[d - 1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Frozen { mob, pre })
    }

    /// `W = DS(z)` per node.
    fn slot(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut w = vec![0.0; z.len()];
        for (b, wb) in z.chunks(d).zip(w.chunks_mut(d)) {
            let g = self.model.neg_gradient(&b[..d - 1], b[d - 1])?;
            for (k, yk) in g.y.iter().enumerate() {
                wb[k] = -yk;
            }
            wb[d - 1] = -g.v;
        }
        Ok(w)
    }

    /// Element contributions `r_a, r_b` of the diffusive rate and, when
    /// requested, their derivatives with respect to `(W_a, W_b, g)`.
    fn element(
        &self,
        wa: &[f64],
        wb: &[f64],
        g: f64,
        h: f64,
        mob: &[f64],
        jac: bool,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = wa.len();
        let ni = d - 1;
        let q = self.model.charges();
        let l = 2 * d + 1;
        let wbar = 0.5 * (wa[ni] + wb[ni]);
        let mut x = vec![0.0; d];
        let mut dx = vec![0.0; if jac { d * l } else { 0 }];
        for i in 0..ni {
            x[i] = (wb[i] - wa[i]) / h - wbar * q[i] * g;
            if jac {
                dx[i * l + i] = -1.0 / h;
                dx[i * l + d + i] = 1.0 / h;
                dx[i * l + ni] = -0.5 * q[i] * g;
                dx[i * l + d + ni] = -0.5 * q[i] * g;
                dx[i * l + 2 * d] = -wbar * q[i];
            }
        }
        x[ni] = (wb[ni] - wa[ni]) / h;
        if jac {
            dx[ni * l + ni] = -1.0 / h;
            dx[ni * l + d + ni] = 1.0 / h;
        }
        let flux: Vec<f64> = x.iter().zip(mob).map(|(a, b)| a * b).collect();
        let sq: f64 = (0..ni).map(|i| q[i] * flux[i]).sum();
        let t = -0.5 * h * g * sq;
        let mut out = vec![0.0; 2 * d];
        for i in 0..ni {
            out[i] = -flux[i];
            out[d + i] = flux[i];
        }
        out[ni] = -flux[ni] + t;
        out[d + ni] = flux[ni] + t;
        let mut dout = vec![0.0; if jac { 2 * d * l } else { 0 }];
        if jac {
            let mut dt = vec![0.0; l];
            for (s, dts) in dt.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..ni {
                    acc += q[i] * mob[i] * dx[i * l + s];
                }
                *dts = -0.5 * h * g * acc;
            }
            dt[2 * d] += -0.5 * h * sq;
            for k in 0..d {
                for s in 0..l {
                    let df = mob[k] * dx[k * l + s];
                    if k < ni {
                        dout[k * l + s] = -df;
                        dout[(d + k) * l + s] = df;
                    } else {
                        dout[k * l + s] = -df + dt[s];
                        dout[(d + k) * l + s] = df + dt[s];
                    }
                }
            }
        }
        (out, dout)
    }

    /// Nodal rate densities at `state`, with `Psi` and mobilities taken from
    /// the state itself.
    pub fn rates(&self, state: &PrimalState) -> Result<Rates> {
        let d = self.dim();
        let ni = d - 1;
        let z = state.to_vec();
        let mesh = self.op.mesh();
        let m = mesh.lumped_mass();
        let n = m.len();
        let psi = self.potential(&z)?;
        let fr = self.frozen(&z)?;
        let w = self.slot(&z)?;
        let mut diff = vec![0.0; n * d];
        for e in 0..n - 1 {
            let h = mesh.element_length(e);
            let g = (psi[e + 1] - psi[e]) / h;
            let (out, _) = self.element(
                &w[e * d..(e + 1) * d],
                &w[(e + 1) * d..(e + 2) * d],
                g,
                h,
                &fr.mob[e],
                false,
            );
            for k in 0..2 * d {
                diff[e * d + k] += out[k];
            }
        }
        let mut reac = vec![0.0; n * ni];
        for j in 0..n {
            let wc = &w[j * d..j * d + ni];
            for ((r, gm), p) in self
                .network
                .reactions
                .iter()
                .zip(&self.network.gamma)
                .zip(&fr.pre[j])
            {
                let f = r.rate * p * cstar_prime(dot(gm, wc));
                for i in 0..ni {
                    reac[j * ni + i] += f * gm[i];
                }
            }
        }
        let mut production = dot(&w, &diff);
        for j in 0..n {
            production += m[j] * dot(&w[j * d..j * d + ni], &reac[j * ni..(j + 1) * ni]);
        }
        let field = |f: &dyn Fn(usize) -> f64| Field::new(mesh.clone(), (0..n).map(f).collect());
        let diffusive = (0..ni)
            .map(|i| field(&|j| diff[j * d + i] / m[j]))
            .collect::<Result<Vec<_>>>()?;
        let reactive = (0..ni)
            .map(|i| field(&|j| reac[j * ni + i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Rates {
            diffusive,
            energy: field(&|j| diff[j * d + ni] / m[j])?,
            reactive,
            entropy_production: production,
        })
    }

    /// Residual of the step equations and its Jacobian, unknowns `(z, Psi)`
    /// per node.
    fn assemble(
        &self,
        x: &[f64],
        zn: &[f64],
        psin: &[f64],
        fr: &Frozen,
        dt: f64,
    ) -> Result<(Vec<f64>, BandMatrix)> {
        let d = self.dim();
        let ni = d - 1;
        let b = d + 1;
        let q = self.model.charges();
        let mesh = self.op.mesh();
        let m = mesh.lumped_mass();
        let n = m.len();
        let a = self.op.matrix();
        let pe = self.psi_ext.values();
        let band = 2 * b - 1;
        let mut jac = BandMatrix::zeros(n * b, band, band);
        let mut f = vec![0.0; n * b];
        let z: Vec<f64> = x.chunks(b).flat_map(|c| c[..d].iter().copied()).collect();
        let psi: Vec<f64> = x.chunks(b).map(|c| c[d]).collect();
        let w = self.slot(&z)?;
        let hs = z
            .chunks(d)
            .map(|c| self.model.entropy_hessian(&c[..ni], c[ni]))
            .collect::<Result<Vec<_>>>()?;
        for j in 0..n {
            for k in 0..d {
                f[j * b + k] = m[j] * (z[j * d + k] - zn[j * d + k]);
                jac.add(j * b + k, j * b + k, m[j]);
            }
        }
        let l = 2 * d + 1;
        for e in 0..n - 1 {
            let h = mesh.element_length(e);
            let g = (psin[e + 1] + psi[e + 1] - psin[e] - psi[e]) / (2.0 * h);
            let (out, dout) = self.element(
                &w[e * d..(e + 1) * d],
                &w[(e + 1) * d..(e + 2) * d],
                g,
                h,
                &fr.mob[e],
                true,
            );
            for o in 0..2 * d {
                let row = (e + o / d) * b + o % d;
                f[row] -= dt * out[o];
                for s in 0..2 * d {
                    let coef = dout[o * l + s];
                    if coef == 0.0 {
                        continue;
                    }
                    let node = e + s / d;
                    let kk = s % d;
                    for k2 in 0..d {
                        let v = hs[node][kk * d + k2];
                        if v != 0.0 {
                            jac.add(row, node * b + k2, -dt * coef * v);
                        }
                    }
                }
                let cg = dout[o * l + 2 * d];
                jac.add(row, e * b + d, dt * cg / (2.0 * h));
                jac.add(row, (e + 1) * b + d, -dt * cg / (2.0 * h));
            }
        }
        for j in 0..n {
            let wc = &w[j * d..j * d + ni];
            for ((r, gm), p) in self
                .network
                .reactions
                .iter()
                .zip(&self.network.gamma)
                .zip(&fr.pre[j])
            {
                let s = dot(gm, wc);
                let fval = m[j] * r.rate * p * cstar_prime(s);
                let fder = m[j] * r.rate * p * cstar_second(s);
                for i in 0..ni {
                    f[j * b + i] -= dt * fval * gm[i];
                    for k2 in 0..d {
                        let mut acc = 0.0;
                        for i2 in 0..ni {
                            acc += gm[i2] * hs[j][i2 * d + k2];
                        }
                        if acc != 0.0 {
                            jac.add(j * b + i, j * b + k2, -dt * fder * gm[i] * acc);
                        }
                    }
                }
            }
        }
        let neumann = self.op.case() == BoundaryCase::PureNeumann;
        for j in 0..n {
            let row = j * b + d;
            if mesh.is_dirichlet_node(j) {
                f[row] = psi[j];
                jac.add(row, row, 1.0);
            } else if neumann && j == 0 {
                f[row] = psi[0] - psin[0];
                jac.add(row, row, 1.0);
            } else {
                let mut v = a.diag[j] * (psi[j] - pe[j]);
                jac.add(row, row, a.diag[j]);
                if j > 0 {
                    v += a.lower[j - 1] * (psi[j - 1] - pe[j - 1]);
                    jac.add(row, (j - 1) * b + d, a.lower[j - 1]);
                }
                if j + 1 < n {
                    v += a.upper[j] * (psi[j + 1] - pe[j + 1]);
                    jac.add(row, (j + 1) * b + d, a.upper[j]);
                }
                v -= m[j] * dot(q, &z[j * d..j * d + ni]);
                for i in 0..ni {
                    jac.add(row, j * b + i, -m[j] * q[i]);
                }
                f[row] = v;
            }
        }
        Ok((f, jac))
    }

    fn scaled_residual(&self, f: &[f64], zn: &[f64]) -> f64 {
        let d = self.dim();
        let b = d + 1;
        let m = self.op.mesh().lumped_mass();
        let zscale = 1.0 + zn.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut r: f64 = 0.0;
        for (j, mj) in m.iter().enumerate() {
            for k in 0..b {
                r = r.max(f[j * b + k].abs() / (mj * zscale));
            }
        }
        r
    }

    /// One step of length `dt`.
    pub fn step(&self, state: &PrimalState, dt: f64) -> Result<StepOutcome> {
        if !(dt >= 0.0) {
            return Err(invalid("dt must be nonnegative"));
        }
        if dt == 0.0 {
            return Ok(StepOutcome {
                state: state.clone(),
                newton_iterations: 0,
            });
        }
        let d = self.dim();
        let b = d + 1;
        let zn = state.to_vec();
        if zn.iter().any(|v| !(*v > 0.0)) {
            return Err(crate::error::domain(
                "evolution needs a strictly positive state",
            ));
        }
        let psin = self.potential(&zn)?;
        let fr = self.frozen(&zn)?;
        let n = psin.len();
        let mut x = vec![0.0; n * b];
        for j in 0..n {
            x[j * b..j * b + d].copy_from_slice(&zn[j * d..(j + 1) * d]);
            x[j * b + d] = psin[j];
        }
        let max_iter = match self.scheme {
            Scheme::Implicit => 25,
            Scheme::LinearlyImplicit => 1,
        };
        let zscale = 1.0 + zn.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let pscale = 1.0 + psin.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut it = 0;
        loop {
            let (f, mut jac) = self.assemble(&x, &zn, &psin, &fr, dt)?;
            if self.scaled_residual(&f, &zn) <= 1e-14 {
                break;
            }
            if it >= max_iter {
                if self.scheme == Scheme::LinearlyImplicit {
                    break;
                }
                return Err(Error::NotConverged {
                    method: "implicit step",
                    iterations: it,
                    residual: self.scaled_residual(&f, &zn),
                });
            }
            jac.factor()?;
            let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
            jac.solve_in_place(&mut delta);
            let mut t = 1.0;
            let mut upd: f64 = 0.0;
            for j in 0..n {
                for k in 0..d {
                    let xv = x[j * b + k];
                    let dv = delta[j * b + k];
                    if dv < 0.0 {
                        t = f64::min(t, 0.9 * xv / -dv);
                    }
                    upd = upd.max(dv.abs() / zscale);
                }
                upd = upd.max(delta[j * b + d].abs() / pscale);
            }
            for (xv, dv) in x.iter_mut().zip(&delta) {
                *xv += t * dv;
            }
            it += 1;
            // a full step this small leaves only round-off in the residual
            if t == 1.0 && upd <= 1e-13 {
                break;
            }
        }
        let z: Vec<f64> = x.chunks(b).flat_map(|c| c[..d].iter().copied()).collect();
        Ok(StepOutcome {
            state: PrimalState::from_vec(state, &z)?,
            newton_iterations: it,
        })
    }

    pub fn entropy(&self, s: &PrimalState) -> Result<f64> {
        let d = self.dim();
        let m = self.op.mesh().lumped_mass();
        let z = s.to_vec();
        let mut total = 0.0;
        for (c, mj) in z.chunks(d).zip(m) {
            total += mj * self.model.entropy(&c[..d - 1], c[d - 1])?;
        }
        Ok(total)
    }

    /// `(max - min) / mean` of `theta = 1 / D_u S`.
    pub fn theta_spread(&self, s: &PrimalState) -> Result<f64> {
        let d = self.dim();
        let z = s.to_vec();
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for c in z.chunks(d) {
            let th = -1.0 / self.model.neg_gradient(&c[..d - 1], c[d - 1])?.v;
            lo = lo.min(th);
            hi = hi.max(th);
            sum += th;
        }
        Ok((hi - lo) / (sum / (z.len() / d) as f64))
    }

    /// Adaptive time stepping until `t_end`, `max_steps`, or the distance to
    /// `reference` falls below `tol_distance`.
    pub fn evolve(
        &self,
        initial: &PrimalState,
        opts: &EvolveOptions,
        reference: Option<&PrimalState>,
    ) -> Result<Trajectory> {
        if !(opts.dt0 > 0.0 && opts.dt_min > 0.0 && opts.dt_max >= opts.dt0) {
            return Err(invalid("time step bounds are inconsistent"));
        }
        let mut state = initial.clone();
        let mut tr = Trajectory {
            times: Vec::new(),
            entropy: Vec::new(),
            energy: Vec::new(),
            charge: Vec::new(),
            distance: Vec::new(),
            theta_spread: Vec::new(),
            snapshots: vec![(0.0, state.clone())],
            final_state: state.clone(),
            rejected_steps: 0,
            max_entropy_decrease: 0.0,
        };
        let mut s_now = self.entropy(&state)?;
        let mut t = 0.0;
        self.record(&mut tr, t, &state, s_now, reference)?;
        let mut dt = opts.dt0;
        let mut steps = 0;
        while t < opts.t_end && steps < opts.max_steps {
            if reference.is_some()
                && tr
                    .distance
                    .last()
                    .is_some_and(|dd| *dd <= opts.tol_distance)
            {
                break;
            }
            let h = dt.min(opts.t_end - t);
            let trial = self.step(&state, h).and_then(|o| {
                let s = self.entropy(&o.state)?;
                Ok((o.state, s))
            });
            match trial {
                Ok((next, s_next)) if s_next >= s_now - opts.entropy_slack => {
                    tr.max_entropy_decrease = tr.max_entropy_decrease.max(s_now - s_next);
                    state = next;
                    s_now = s_next;
                    t += h;
                    steps += 1;
                    self.record(&mut tr, t, &state, s_now, reference)?;
                    if opts.stride > 0 && steps % opts.stride == 0 {
                        tr.snapshots.push((t, state.clone()));
                    }
                    dt = (dt * 1.5).min(opts.dt_max);
                }
                _ => {
                    tr.rejected_steps += 1;
                    dt *= 0.5;
                    if dt < opts.dt_min {
                        return Err(Error::NotConverged {
                            method: "time stepping (dt underflow)",
                            iterations: steps,
                            residual: dt,
                        });
                    }
                }
            }
        }
        if tr.snapshots.last().map(|s| s.0) != Some(t) {
            tr.snapshots.push((t, state.clone()));
        }
        tr.final_state = state;
        Ok(tr)
    }

    fn record(
        &self,
        tr: &mut Trajectory,
        t: f64,
        s: &PrimalState,
        entropy: f64,
        reference: Option<&PrimalState>,
    ) -> Result<()> {
        tr.times.push(t);
        tr.entropy.push(entropy);
        tr.energy
            .push(self.op.total_energy(&s.c, &s.u, self.psi_ext)?);
        tr.charge.push(self.op.total_charge(&s.c));
        tr.distance.push(match reference {
            Some(r) => state_distance(s, &r.c, &r.u)?.0,
            None => f64::NAN,
        });
        tr.theta_spread.push(self.theta_spread(s)?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direct::DirectMethod;
    use crate::electrostatics::PoissonProblem;
    use crate::entropy::BoltzmannEntropy;
    use crate::mesh::{Boundary, Mesh};

    #[test]
    fn marcelin_de_donder_hand_value() {
        let charges = [1.0, 1.0];
        let model = BoltzmannEntropy::unit(charges.to_vec());
        let net = ReactionNetwork::new(
            vec![Reaction {
                alpha: vec![1, 0],
                beta: vec![0, 1],
                rate: 1.0,
            }],
            &charges,
        )
        .unwrap();
        let u = 2.0;
        let c = model.equilibrium_concentrations(u).unwrap();
        let r = reactive_rate(&net, &model, &c, u, &[4f64.ln(), 0.0]).unwrap();
        assert!((r[0] - 1.5).abs() < 1e-14 && (r[1] + 1.5).abs() < 1e-14);
        let zero = reactive_rate(&net, &model, &c, u, &[0.3, 0.3]).unwrap();
        assert!(zero.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn network_validation() {
        let bad = ReactionNetwork::new(
            vec![Reaction {
                alpha: vec![1, 0],
                beta: vec![0, 1],
                rate: 1.0,
            }],
            &[-1.0, 1.0],
        );
        assert!(bad.is_err());
        let pair = ReactionNetwork::new(
            vec![Reaction {
                alpha: vec![0, 0],
                beta: vec![1, 1],
                rate: 1.0,
            }],
            &[-1.0, 1.0],
        )
        .unwrap();
        assert!(pair.has_single_conservation_law());
        assert!(!ReactionNetwork::empty(2).has_single_conservation_law());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mesh = Mesh::uniform(
            0.0,
            1.0,
            5,
            [Boundary::Dirichlet, Boundary::Robin { omega: 1.0 }],
        )
        .unwrap();
        let op = PoissonProblem::vacuum(&mesh).assemble().unwrap();
        let pe = op
            .solve_external_potential(&Field::from_fn(&mesh, |x| x - 0.5), [0.0, 0.3])
            .unwrap();
        let model = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let net = ReactionNetwork::new(
            vec![Reaction {
                alpha: vec![0, 0],
                beta: vec![1, 1],
                rate: 0.7,
            }],
            &[-1.0, 1.0],
        )
        .unwrap();
        let mob = MobilityModel::new(vec![1.0, 0.5], 2.0).unwrap();
        let ev = Evolution::new(&model, &op, &pe, &net, &mob, Scheme::Implicit).unwrap();
        let zn: Vec<f64> = (0..15).map(|k| 1.0 + 0.1 * ((k * 7 % 5) as f64)).collect();
        let psin = ev.potential(&zn).unwrap();
        let fr = ev.frozen(&zn).unwrap();
        let x: Vec<f64> = (0..20).map(|k| 1.2 + 0.13 * ((k * 3 % 7) as f64)).collect();
        let dt = 0.3;
        let (_, jac) = ev.assemble(&x, &zn, &psin, &fr, dt).unwrap();
        for col in 0..20 {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            let (fp, _) = ev.assemble(&xp, &zn, &psin, &fr, dt).unwrap();
            let (fm, _) = ev.assemble(&xm, &zn, &psin, &fr, dt).unwrap();
            for row in 0..20 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let an = jac.get(row, col);
                assert!(
                    (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                    "({row},{col}) fd {fd} an {an}"
                );
            }
        }
    }

    #[test]
    fn implicit_step_conserves_and_produces_entropy() {
        let mesh = Mesh::uniform(
            0.0,
            1.0,
            21,
            [
                Boundary::Robin { omega: 1.0 },
                Boundary::Robin { omega: 1.0 },
            ],
        )
        .unwrap();
        let op = PoissonProblem::vacuum(&mesh).assemble().unwrap();
        let pe = op
            .solve_external_potential(&Field::from_fn(&mesh, |x| x - 0.5), [0.0, 0.0])
            .unwrap();
        let model = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let net = ReactionNetwork::new(
            vec![Reaction {
                alpha: vec![0, 0],
                beta: vec![1, 1],
                rate: 1.0,
            }],
            &[-1.0, 1.0],
        )
        .unwrap();
        let mob = MobilityModel::uniform(2, 1.0, 1.0).unwrap();
        let ev = Evolution::new(&model, &op, &pe, &net, &mob, Scheme::Implicit).unwrap();
        let dm = DirectMethod::new(&model, &op, 5.0, 0.0, &pe).unwrap();
        let s0 = dm.feasible_point(1.0).unwrap().state;
        let e0 = op.total_energy(&s0.c, &s0.u, &pe).unwrap();
        let q0 = op.total_charge(&s0.c);
        let mut s = s0.clone();
        let mut ent = ev.entropy(&s).unwrap();
        for _ in 0..5 {
            s = ev.step(&s, 0.05).unwrap().state;
            let e = ev.entropy(&s).unwrap();
            assert!(e >= ent - 1e-12);
            ent = e;
        }
        let e1 = op.total_energy(&s.c, &s.u, &pe).unwrap();
        assert!((e1 - e0).abs() < 1e-11 * e0, "{e0} {e1}");
        assert!((op.total_charge(&s.c) - q0).abs() < 1e-12);
        assert_eq!(ev.step(&s, 0.0).unwrap().state, s);
        let rates = ev.rates(&s).unwrap();
        assert!(rates.entropy_production >= 0.0);
    }
}
