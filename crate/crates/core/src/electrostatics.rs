//! Poisson problem `-div(eps grad psi) = rho` with Dirichlet, Robin or
//! Neumann endpoints, the energy and charge functionals, and the minimal
//! electrostatic energy.
//!
//! Loads of densities use the lumped mass matrix, so a nodal density `rho`
//! acts on test functions through `sum_j m_j rho_j phi(x_j)`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::Tridiagonal;
use crate::math::dot;
#[allow(unused_imports)]
use crate::math::Float;
use crate::mesh::{BoundaryCase, Field, Mesh, SpeciesField};

/// Data of the potential equation: permittivity, doping profile and surface
/// charges `g` at the two endpoints (ignored at Dirichlet endpoints).
#[derive(Debug, Clone)]
pub struct PoissonProblem {
    pub permittivity: Field,
    pub doping: Field,
    pub surface_charge: [f64; 2],
}

impl PoissonProblem {
    pub fn new(permittivity: Field, doping: Field, surface_charge: [f64; 2]) -> Result<Self> {
        if !permittivity.same_mesh(&doping) {
            return Err(Error::MeshMismatch);
        }
        if permittivity
            .values()
            .iter()
            .any(|e| !(*e > 0.0 && e.is_finite()))
        {
            return Err(invalid("permittivity must be positive everywhere"));
        }
        Ok(Self {
            permittivity,
            doping,
            surface_charge,
        })
    }

    /// Unit permittivity, no doping and no surface charge.
    pub fn vacuum(mesh: &Arc<Mesh>) -> Self {
        Self {
            permittivity: Field::constant(mesh, 1.0),
            doping: Field::zeros(mesh),
            surface_charge: [0.0, 0.0],
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.permittivity.mesh()
    }

    pub fn assemble(&self) -> Result<AssembledOperator> {
        AssembledOperator::new(&self.permittivity)
    }
}

/// Matrix of the bilinear form on the discrete potential space, with the
/// constraint bookkeeping of its boundary case.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    mesh: Arc<Mesh>,
    matrix: Tridiagonal,
    case: BoundaryCase,
    /// Indices of unknowns kept in the reduced system.
    kept: Vec<usize>,
    reduced: Tridiagonal,
}

impl AssembledOperator {
    pub fn new(permittivity: &Field) -> Result<Self> {
        let mesh = permittivity.mesh().clone();
        if permittivity.values().iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("permittivity must be positive everywhere"));
        }
        let n = mesh.len();
        let mut a = Tridiagonal::zeros(n);
        let eps = permittivity.values();
        for e in 0..mesh.elements() {
            let k = 0.5 * (eps[e] + eps[e + 1]) / mesh.element_length(e);
            a.diag[e] += k;
            a.diag[e + 1] += k;
            a.lower[e] -= k;
            a.upper[e] -= k;
        }
        let [bl, br] = mesh.boundary();
        a.diag[0] += bl.omega();
        a.diag[n - 1] += br.omega();
        let case = mesh.case();
        let kept: Vec<usize> = match case {
            BoundaryCase::SomeDirichlet => (0..n).filter(|&i| !mesh.is_dirichlet_node(i)).collect(),
            BoundaryCase::PureRobin { .. } => (0..n).collect(),
            // pin the first node; the mean is fixed afterwards
            BoundaryCase::PureNeumann => (1..n).collect(),
        };
        let reduced = restrict(&a, &kept);
        Ok(Self {
            mesh,
            matrix: a,
            case,
            kept,
            reduced,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn case(&self) -> BoundaryCase {
        self.case
    }

    /// Full `N x N` matrix, before elimination of constraints.
    pub fn matrix(&self) -> &Tridiagonal {
        &self.matrix
    }

    /// `true` where the potential space allows a nonzero nodal value.
    pub fn is_free(&self, i: usize) -> bool {
        !self.mesh.is_dirichlet_node(i)
    }

    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(psi)
    }

    /// `B(f, g)`.
    pub fn bilinear(&self, f: &[f64], g: &[f64]) -> f64 {
        dot(f, &self.apply(g))
    }

    /// Load vector `M rho` of a nodal density.
    pub fn density_load(&self, rho: &Field) -> Result<Vec<f64>> {
        if **rho.mesh() != *self.mesh {
            return Err(Error::MeshMismatch);
        }
        Ok(rho
            .values()
            .iter()
            .zip(self.mesh.lumped_mass())
            .map(|(r, m)| r * m)
            .collect())
    }

    /// Solves `B(psi, phi) = <load, phi>` for all admissible `phi`.
    pub fn solve_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        let n = self.mesh.len();
        if load.len() != n {
            return Err(Error::MeshMismatch);
        }
        if self.case == BoundaryCase::PureNeumann {
            let total: f64 = load.iter().sum();
            let size: f64 = load.iter().map(|x| x.abs()).sum();
            if total.abs() > 1e-10 * size + 1e-300 {
                return Err(Error::Incompatible(alloc::format!(
                    "pure Neumann problem needs zero total charge, got {total:e}"
                )));
            }
        }
        let rhs: Vec<f64> = self.kept.iter().map(|&i| load[i]).collect();
        let sol = self.reduced.solve(&rhs)?;
        let mut psi = vec![0.0; n];
        for (k, &i) in self.kept.iter().enumerate() {
            psi[i] = sol[k];
        }
        if self.case == BoundaryCase::PureNeumann {
            remove_mean(&self.mesh, &mut psi);
        }
        Ok(psi)
    }

    pub fn solve_internal_potential(&self, rho: &Field) -> Result<Field> {
        let load = self.density_load(rho)?;
        Field::new(self.mesh.clone(), self.solve_load(&load)?)
    }

    /// Load of the external potential: `M D` plus surface charges at the
    /// non-Dirichlet endpoints.
    pub fn external_load(&self, doping: &Field, surface_charge: [f64; 2]) -> Result<Vec<f64>> {
        let mut load = self.density_load(doping)?;
        let [l, r] = self.mesh.endpoint_nodes();
        if self.is_free(l) {
            load[l] += surface_charge[0];
        }
        if self.is_free(r) {
            load[r] += surface_charge[1];
        }
        Ok(load)
    }

    pub fn solve_external_potential(
        &self,
        doping: &Field,
        surface_charge: [f64; 2],
    ) -> Result<Field> {
        let load = self.external_load(doping, surface_charge)?;
        Field::new(self.mesh.clone(), self.solve_load(&load)?)
    }

    /// `E = 1/2 B(psi_rho + psi_ext, psi_rho + psi_ext)` for a density `rho`.
    pub fn electrostatic_energy(&self, rho: &Field, psi_ext: &Field) -> Result<f64> {
        let load = self.density_load(rho)?;
        self.electrostatic_energy_of_load(&load, psi_ext)
    }

    /// Same as [`Self::electrostatic_energy`] for a general functional given by
    /// its load vector (which may carry point charges at the endpoints).
    pub fn electrostatic_energy_of_load(&self, load: &[f64], psi_ext: &Field) -> Result<f64> {
        let (compact, expanded) = self.energy_forms(load, psi_ext)?;
        debug_assert!(
            (compact - expanded).abs() <= 1e-10 * (1.0 + compact.abs()),
            "energy identity defect {compact} vs {expanded}"
        );
        Ok(compact)
    }

    /// Compact form and the three-term expansion
    /// `1/2 B(psi_rho) + <rho, psi_ext> + 1/2 B(psi_ext)` of the energy.
    pub fn energy_forms(&self, load: &[f64], psi_ext: &Field) -> Result<(f64, f64)> {
        let psi = self.solve_load(load)?;
        let pe = psi_ext.values();
        let total: Vec<f64> = psi.iter().zip(pe).map(|(a, b)| a + b).collect();
        let compact = 0.5 * self.bilinear(&total, &total);
        let expanded =
            0.5 * self.bilinear(&psi, &psi) + self.pairing(load, pe) + 0.5 * self.bilinear(pe, pe);
        Ok((compact, expanded))
    }

    /// `<load, phi>` restricted to the admissible nodes.
    fn pairing(&self, load: &[f64], phi: &[f64]) -> f64 {
        (0..load.len())
            .filter(|&i| self.is_free(i))
            .map(|i| load[i] * phi[i])
            .sum()
    }

    /// Dual norm `sqrt(<rho, L^{-1} rho>)` of a load.
    pub fn dual_norm_of_load(&self, load: &[f64]) -> Result<f64> {
        let psi = self.solve_load(load)?;
        Ok(self.pairing(load, &psi).max(0.0).sqrt())
    }

    pub fn dual_norm(&self, rho: &Field) -> Result<f64> {
        self.dual_norm_of_load(&self.density_load(rho)?)
    }

    /// Total potential `Psi = psi_{q.c} + psi_ext`.
    pub fn total_potential(&self, c: &SpeciesField, psi_ext: &Field) -> Result<Field> {
        let psi = self.solve_internal_potential(&c.charge_density())?;
        psi.zip_with(psi_ext, |a, b| a + b)
    }

    /// `E(c, u) = 1/2 B(psi_{q.c} + psi_ext) + int u`.
    pub fn total_energy(&self, c: &SpeciesField, u: &Field, psi_ext: &Field) -> Result<f64> {
        Ok(self.electrostatic_energy(&c.charge_density(), psi_ext)? + u.integrate())
    }

    /// `Q(c) = int q.c`.
    pub fn total_charge(&self, c: &SpeciesField) -> f64 {
        c.charge_density().integrate()
    }

    /// Minimal electrostatic energy at total charge `q0`.
    pub fn min_electro_energy(&self, q0: f64, psi_ext: &Field) -> Result<MinimalEnergy> {
        match self.case {
            BoundaryCase::SomeDirichlet => Ok(MinimalEnergy {
                case: self.case,
                value: 0.0,
                kappa_star: None,
            }),
            BoundaryCase::PureNeumann => {
                if q0 != 0.0 {
                    return Err(Error::Incompatible(
                        "pure Neumann case requires zero total charge".into(),
                    ));
                }
                Ok(MinimalEnergy {
                    case: self.case,
                    value: 0.0,
                    kappa_star: None,
                })
            }
            BoundaryCase::PureRobin { total_omega } => {
                let s = q0 + self.robin_flux(psi_ext.values());
                Ok(MinimalEnergy {
                    case: self.case,
                    value: s * s / (2.0 * total_omega),
                    kappa_star: Some(s / total_omega),
                })
            }
        }
    }

    /// `sum_endpoints omega * f(endpoint)`.
    fn robin_flux(&self, f: &[f64]) -> f64 {
        let [bl, br] = self.mesh.boundary();
        let [l, r] = self.mesh.endpoint_nodes();
        bl.omega() * f[l] + br.omega() * f[r]
    }

    /// Load vector of a charge distribution attaining the minimal energy:
    /// `L(kappa* - psi_ext)` in the Robin case, `-L psi_ext` otherwise. In the
    /// Dirichlet case the charge deficit sits on a Dirichlet node, where it
    /// does not generate a potential.
    pub fn minimal_energy_load(&self, q0: f64, psi_ext: &Field) -> Result<Vec<f64>> {
        let min = self.min_electro_energy(q0, psi_ext)?;
        let pe = psi_ext.values();
        let mut load: Vec<f64> = match min.kappa_star {
            Some(k) => {
                let shifted: Vec<f64> = pe.iter().map(|p| k - p).collect();
                self.apply(&shifted)
            }
            None => self.apply(pe).iter().map(|x| -x).collect(),
        };
        if self.case == BoundaryCase::SomeDirichlet {
            let n = load.len();
            for (i, l) in load.iter_mut().enumerate() {
                if !self.is_free(i) {
                    *l = 0.0;
                }
            }
            let deficit = q0 - load.iter().sum::<f64>();
            let d = if self.is_free(0) { n - 1 } else { 0 };
            load[d] += deficit;
        }
        Ok(load)
    }

    /// Nodal density whose lumped load is [`Self::minimal_energy_load`].
    pub fn minimal_energy_density(&self, q0: f64, psi_ext: &Field) -> Result<Field> {
        let load = self.minimal_energy_load(q0, psi_ext)?;
        let rho = load
            .iter()
            .zip(self.mesh.lumped_mass())
            .map(|(b, m)| b / m)
            .collect();
        Field::new(self.mesh.clone(), rho)
    }

    /// Smallest Rayleigh quotient `<L psi, psi> / |psi|_{H1}^2` over the
    /// constrained space, by inverse iteration.
    pub fn coercivity_constant(&self) -> Result<f64> {
        let n = self.mesh.len();
        let mut gram = Tridiagonal::zeros(n);
        for e in 0..self.mesh.elements() {
            let h = self.mesh.element_length(e);
            gram.diag[e] += 1.0 / h + h / 3.0;
            gram.diag[e + 1] += 1.0 / h + h / 3.0;
            gram.lower[e] += -1.0 / h + h / 6.0;
            gram.upper[e] += -1.0 / h + h / 6.0;
        }
        let mut x: Vec<f64> = (0..n)
            .map(|i| {
                if self.is_free(i) {
                    1.0 + 0.3 * (i as f64 * 1.7).sin()
                } else {
                    0.0
                }
            })
            .collect();
        if self.case == BoundaryCase::PureNeumann {
            remove_mean(&self.mesh, &mut x);
        }
        let mut rq = f64::INFINITY;
        for _ in 0..100 {
            let mut b = gram.mul_vec(&x);
            if self.case == BoundaryCase::PureNeumann {
                let t: f64 = b.iter().sum::<f64>() / self.mesh.measure();
                for (bi, m) in b.iter_mut().zip(self.mesh.lumped_mass()) {
                    *bi -= t * m;
                }
            }
            for (i, bi) in b.iter_mut().enumerate() {
                if !self.is_free(i) {
                    *bi = 0.0;
                }
            }
            x = self.solve_load(&b)?;
            let nx = dot(&x, &gram.mul_vec(&x)).sqrt();
            x.iter_mut().for_each(|v| *v /= nx);
            let next = self.bilinear(&x, &x);
            if (next - rq).abs() <= 1e-12 * next {
                rq = next;
                break;
            }
            rq = next;
        }
        Ok(rq)
    }

    /// Normalised indicator of the strip of width `|Omega| / n` next to a
    /// Dirichlet endpoint.
    pub fn dirichlet_charge_concentration(&self, n: usize) -> Result<Field> {
        dirichlet_charge_concentration(&self.mesh, n)
    }
}

/// Minimal electrostatic energy and, in the Robin case, the optimal constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimalEnergy {
    pub case: BoundaryCase,
    pub value: f64,
    pub kappa_star: Option<f64>,
}

fn restrict(a: &Tridiagonal, kept: &[usize]) -> Tridiagonal {
    let m = kept.len();
    let mut r = Tridiagonal::zeros(m);
    for (k, &i) in kept.iter().enumerate() {
        r.diag[k] = a.diag[i];
        if k + 1 < m {
            let j = kept[k + 1];
            if j == i + 1 {
                r.upper[k] = a.upper[i];
                r.lower[k] = a.lower[i];
            }
        }
    }
    r
}

/// Subtracts the mean value so that `int psi = 0`.
pub fn remove_mean(mesh: &Mesh, psi: &mut [f64]) {
    let mean = dot(psi, mesh.lumped_mass()) / mesh.measure();
    psi.iter_mut().for_each(|p| *p -= mean);
}

pub fn dirichlet_charge_concentration(mesh: &Arc<Mesh>, n: usize) -> Result<Field> {
    let [bl, br] = mesh.boundary();
    if !bl.is_dirichlet() && !br.is_dirichlet() {
        return Err(invalid("charge concentration needs a Dirichlet endpoint"));
    }
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let width = mesh.measure() / n as f64;
    let x = mesh.nodes();
    let len = x.len();
    let (origin, dist): (f64, fn(f64, f64) -> f64) = if bl.is_dirichlet() {
        (x[0], |x, o| x - o)
    } else {
        (x[len - 1], |x, o| o - x)
    };
    let tol = 1e-12 * mesh.measure();
    let mut values = vec![0.0; len];
    let mut elements_in_strip = 0;
    for e in 0..len - 1 {
        let (a, b) = (dist(x[e], origin), dist(x[e + 1], origin));
        if a.max(b) <= width + tol {
            elements_in_strip += 1;
        }
    }
    if elements_in_strip < 2 {
        return Err(invalid("strip is resolved by fewer than 2 elements"));
    }
    // a node carries mass only if its whole outward element lies in the strip
    for j in 0..len {
        let outward = if bl.is_dirichlet() {
            j + 1
        } else {
            j.wrapping_sub(1)
        };
        if outward < len && dist(x[outward], origin) <= width + tol {
            values[j] = 1.0;
        }
    }
    let f = Field::new(mesh.clone(), values)?;
    let total = f.integrate();
    Ok(f.map(|v| v / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Boundary;

    #[test]
    fn hand_assembled_stiffness() {
        let m = Mesh::uniform(0.0, 1.0, 3, [Boundary::Dirichlet, Boundary::Dirichlet]).unwrap();
        let op = PoissonProblem::vacuum(&m).assemble().unwrap();
        assert_eq!(op.matrix().diag[1], 4.0);
        assert_eq!(op.matrix().lower[0], -2.0);
        assert_eq!(op.matrix().upper[1], -2.0);
    }

    #[test]
    fn robin_adds_omega() {
        let m0 = Mesh::uniform(0.0, 1.0, 5, [Boundary::Dirichlet, Boundary::Neumann]).unwrap();
        let m1 = Mesh::uniform(
            0.0,
            1.0,
            5,
            [Boundary::Dirichlet, Boundary::Robin { omega: 1.0 }],
        )
        .unwrap();
        let a0 = PoissonProblem::vacuum(&m0).assemble().unwrap();
        let a1 = PoissonProblem::vacuum(&m1).assemble().unwrap();
        assert_eq!(a1.matrix().diag[4] - a0.matrix().diag[4], 1.0);
    }

    #[test]
    fn neumann_annihilates_constants() {
        let m = Mesh::uniform(0.0, 1.0, 7, [Boundary::Neumann, Boundary::Neumann]).unwrap();
        let op = PoissonProblem::vacuum(&m).assemble().unwrap();
        assert!(op.apply(&[1.0; 7]).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn dirichlet_quadratic_is_nodally_exact() {
        let m = Mesh::uniform(0.0, 1.0, 21, [Boundary::Dirichlet, Boundary::Dirichlet]).unwrap();
        let op = PoissonProblem::vacuum(&m).assemble().unwrap();
        let psi = op
            .solve_internal_potential(&Field::constant(&m, 1.0))
            .unwrap();
        for (x, p) in m.nodes().iter().zip(psi.values()) {
            assert!((p - x * (1.0 - x) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn external_potential_mixed() {
        let m = Mesh::uniform(
            0.0,
            1.0,
            11,
            [Boundary::Dirichlet, Boundary::Robin { omega: 1.0 }],
        )
        .unwrap();
        let op = PoissonProblem::vacuum(&m).assemble().unwrap();
        let psi = op
            .solve_external_potential(&Field::zeros(&m), [0.0, 1.0])
            .unwrap();
        for (x, p) in m.nodes().iter().zip(psi.values()) {
            assert!((p - x / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn neumann_compatibility_and_mean() {
        let m = Mesh::uniform(0.0, 1.0, 11, [Boundary::Neumann, Boundary::Neumann]).unwrap();
        let op = PoissonProblem::vacuum(&m).assemble().unwrap();
        assert!(matches!(
            op.solve_internal_potential(&Field::constant(&m, 1.0)),
            Err(Error::Incompatible(_))
        ));
        let rho = Field::from_fn(&m, |x| x - 0.5);
        let psi = op.solve_internal_potential(&rho).unwrap();
        assert!(psi.integrate().abs() < 1e-14);
    }

    #[test]
    fn robin_minimal_energy() {
        let m = Mesh::uniform(
            0.0,
            1.0,
            11,
            [
                Boundary::Robin { omega: 1.0 },
                Boundary::Robin { omega: 1.0 },
            ],
        )
        .unwrap();
        let op = PoissonProblem::vacuum(&m).assemble().unwrap();
        let pe = Field::zeros(&m);
        let v = op.min_electro_energy(2.0, &pe).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(v.kappa_star, Some(1.0));
        let load = op.minimal_energy_load(2.0, &pe).unwrap();
        assert!((load.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        assert!((op.electrostatic_energy_of_load(&load, &pe).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concentration_strip() {
        let m = Mesh::uniform(0.0, 1.0, 41, [Boundary::Dirichlet, Boundary::Neumann]).unwrap();
        let r = dirichlet_charge_concentration(&m, 4).unwrap();
        assert!((r.integrate() - 1.0).abs() < 1e-14);
        for (x, v) in m.nodes().iter().zip(r.values()) {
            if *x > 0.25 + 1e-12 {
                assert_eq!(*v, 0.0);
            }
        }
        let m = Mesh::uniform(0.0, 1.0, 41, [Boundary::Neumann, Boundary::Dirichlet]).unwrap();
        let r = dirichlet_charge_concentration(&m, 4).unwrap();
        assert!((r.integrate() - 1.0).abs() < 1e-14);
        assert!(r.values()[0] == 0.0 && r.values()[40] > 0.0);
    }
}
