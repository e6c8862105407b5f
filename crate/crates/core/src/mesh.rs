//! One-dimensional P1 finite elements: meshes, nodal fields and quadrature.
//!
//! Integrals of a single field use the trapezoid rule, which is exact for
//! piecewise-linear functions and coincides with the lumped mass matrix used
//! by the solvers. Products of two fields are integrated exactly.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
#[allow(unused_imports)]
use crate::math::Float;

/// Boundary condition attached to one endpoint of the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    Dirichlet,
    /// `eps * dpsi/dn + omega * psi = g`, with `omega >= 0`.
    Robin {
        omega: f64,
    },
    Neumann,
}

impl Boundary {
    /// Robin weight seen by the bilinear form. Neumann is Robin with zero weight.
    pub fn omega(&self) -> f64 {
        match self {
            Boundary::Robin { omega } => *omega,
            _ => 0.0,
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, Boundary::Dirichlet)
    }
}

/// Classification of the potential space by boundary data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCase {
    /// At least one Dirichlet endpoint; potentials vanish there.
    SomeDirichlet,
    /// No Dirichlet part and zero total Robin weight; potentials have zero mean.
    PureNeumann,
    /// No Dirichlet part and positive total Robin weight.
    PureRobin { total_omega: f64 },
}

impl BoundaryCase {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryCase::SomeDirichlet => "some_dirichlet",
            BoundaryCase::PureNeumann => "pure_neumann",
            BoundaryCase::PureRobin { .. } => "pure_robin",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<f64>,
    boundary: [Boundary; 2],
    lumped: Vec<f64>,
}

impl Mesh {
    pub fn uniform(
        x_left: f64,
        x_right: f64,
        n: usize,
        boundary: [Boundary; 2],
    ) -> Result<Arc<Mesh>> {
        if !(x_left.is_finite() && x_right.is_finite()) || x_left >= x_right {
            return Err(invalid("mesh bounds must satisfy x_left < x_right"));
        }
        if n < 2 {
            return Err(invalid("a mesh needs at least 2 nodes"));
        }
        let h = (x_right - x_left) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| x_left + h * i as f64).collect();
        nodes[n - 1] = x_right;
        Self::from_nodes(nodes, boundary)
    }

    pub fn from_nodes(nodes: Vec<f64>, boundary: [Boundary; 2]) -> Result<Arc<Mesh>> {
        if nodes.len() < 2 {
            return Err(invalid("a mesh needs at least 2 nodes"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("mesh nodes must be strictly increasing"));
        }
        for b in &boundary {
            if let Boundary::Robin { omega } = b {
                if !(omega.is_finite() && *omega >= 0.0) {
                    return Err(invalid("Robin weight must be finite and nonnegative"));
                }
            }
        }
        let n = nodes.len();
        let mut lumped = vec![0.0; n];
        for e in 0..n - 1 {
            let h = nodes[e + 1] - nodes[e];
            lumped[e] += h / 2.0;
            lumped[e + 1] += h / 2.0;
        }
        Ok(Arc::new(Mesh {
            nodes,
            boundary,
            lumped,
        }))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn boundary(&self) -> [Boundary; 2] {
        self.boundary
    }

    pub fn x_left(&self) -> f64 {
        self.nodes[0]
    }

    pub fn x_right(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn measure(&self) -> f64 {
        self.x_right() - self.x_left()
    }

    pub fn element_length(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    pub fn h_max(&self) -> f64 {
        (0..self.elements())
            .map(|e| self.element_length(e))
            .fold(0.0, f64::max)
    }

    /// Diagonal of the lumped mass matrix (trapezoid weights).
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    /// Node index of each endpoint: `[0, n - 1]`.
    pub fn endpoint_nodes(&self) -> [usize; 2] {
        [0, self.len() - 1]
    }

    pub fn case(&self) -> BoundaryCase {
        if self.boundary.iter().any(Boundary::is_dirichlet) {
            BoundaryCase::SomeDirichlet
        } else {
            let total: f64 = self.boundary.iter().map(Boundary::omega).sum();
            if total > 0.0 {
                BoundaryCase::PureRobin { total_omega: total }
            } else {
                BoundaryCase::PureNeumann
            }
        }
    }

    /// `true` for nodes carrying a homogeneous Dirichlet condition.
    pub fn is_dirichlet_node(&self, i: usize) -> bool {
        (i == 0 && self.boundary[0].is_dirichlet())
            || (i == self.len() - 1 && self.boundary[1].is_dirichlet())
    }
}

/// Nodal values of a continuous piecewise-linear function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

// Three-point Gauss-Legendre rule on [0, 1].
const GAUSS_X: [f64; 3] = [0.112_701_665_379_258_31, 0.5, 0.887_298_334_620_741_7];
const GAUSS_W: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

impl Field {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::MeshMismatch);
        }
        Ok(Self { mesh, values })
    }

    pub fn constant(mesh: &Arc<Mesh>, value: f64) -> Self {
        Self {
            values: vec![value; mesh.len()],
            mesh: mesh.clone(),
        }
    }

    pub fn zeros(mesh: &Arc<Mesh>) -> Self {
        Self::constant(mesh, 0.0)
    }

    /// Nodal interpolant of `f`.
    pub fn from_fn(mesh: &Arc<Mesh>, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: mesh.nodes().iter().map(|&x| f(x)).collect(),
            mesh: mesh.clone(),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_mesh(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    fn check(&self, other: &Field) -> Result<()> {
        if self.same_mesh(other) {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check(other)?;
        Ok(Field {
            mesh: self.mesh.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn integrate(&self) -> f64 {
        self.values
            .iter()
            .zip(self.mesh.lumped_mass())
            .map(|(v, m)| v * m)
            .sum()
    }

    /// Exact integral of the product of two P1 functions.
    pub fn integrate_product(&self, other: &Field) -> Result<f64> {
        self.check(other)?;
        let (f, g) = (&self.values, &other.values);
        let mut s = 0.0;
        for e in 0..self.mesh.elements() {
            let h = self.mesh.element_length(e);
            s += h / 6.0
                * (2.0 * f[e] * g[e]
                    + f[e] * g[e + 1]
                    + f[e + 1] * g[e]
                    + 2.0 * f[e + 1] * g[e + 1]);
        }
        Ok(s)
    }

    pub fn l2_norm(&self) -> f64 {
        self.integrate_product(self).unwrap_or(0.0).max(0.0).sqrt()
    }

    pub fn h1_seminorm(&self) -> f64 {
        let v = &self.values;
        let mut s = 0.0;
        for e in 0..self.mesh.elements() {
            let d = v[e + 1] - v[e];
            s += d * d / self.mesh.element_length(e);
        }
        s.sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l1_norm(&self) -> f64 {
        // exact for P1 including sign changes inside an element
        let v = &self.values;
        let mut s = 0.0;
        for e in 0..self.mesh.elements() {
            let h = self.mesh.element_length(e);
            let (a, b) = (v[e], v[e + 1]);
            if a * b >= 0.0 {
                s += h * (a.abs() + b.abs()) / 2.0;
            } else {
                s += h * (a * a + b * b) / (2.0 * (a.abs() + b.abs()));
            }
        }
        s
    }

    /// L2 distance between the P1 function and `f`, by 3-point Gauss quadrature.
    pub fn l2_error_against(&self, f: impl Fn(f64) -> f64) -> f64 {
        let x = self.mesh.nodes();
        let v = &self.values;
        let mut s = 0.0;
        for e in 0..self.mesh.elements() {
            let h = x[e + 1] - x[e];
            for k in 0..3 {
                let t = GAUSS_X[k];
                let xe = x[e] + t * h;
                let ph = v[e] * (1.0 - t) + v[e + 1] * t;
                let d = ph - f(xe);
                s += GAUSS_W[k] * h * d * d;
            }
        }
        s.sqrt()
    }

    /// Value at `x` by linear interpolation, clamped to the interval.
    pub fn eval(&self, x: f64) -> f64 {
        let nodes = self.mesh.nodes();
        if x <= nodes[0] {
            return self.values[0];
        }
        let n = nodes.len();
        if x >= nodes[n - 1] {
            return self.values[n - 1];
        }
        let e = nodes.partition_point(|&p| p <= x) - 1;
        let t = (x - nodes[e]) / (nodes[e + 1] - nodes[e]);
        self.values[e] * (1.0 - t) + self.values[e + 1] * t
    }
}

impl core::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// `I` stacked concentration fields together with the charge vector `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesField {
    species: Vec<Field>,
    charges: Vec<f64>,
}

impl SpeciesField {
    pub fn new(species: Vec<Field>, charges: Vec<f64>) -> Result<Self> {
        if species.is_empty() {
            return Err(invalid("at least one species is required"));
        }
        if species.len() != charges.len() {
            return Err(invalid("charge vector length differs from species count"));
        }
        let first = &species[0];
        if species.iter().any(|f| !f.same_mesh(first)) {
            return Err(Error::MeshMismatch);
        }
        Ok(Self { species, charges })
    }

    /// Builds from node-major values `c[j][i]`.
    pub fn from_nodal(mesh: &Arc<Mesh>, nodal: &[Vec<f64>], charges: &[f64]) -> Result<Self> {
        let i_count = charges.len();
        if nodal.len() != mesh.len() || nodal.iter().any(|c| c.len() != i_count) {
            return Err(Error::MeshMismatch);
        }
        let species = (0..i_count)
            .map(|i| Field {
                mesh: mesh.clone(),
                values: nodal.iter().map(|c| c[i]).collect(),
            })
            .collect();
        Self::new(species, charges.to_vec())
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn species(&self, i: usize) -> &Field {
        &self.species[i]
    }

    pub fn species_mut(&mut self, i: usize) -> &mut Field {
        &mut self.species[i]
    }

    pub fn all(&self) -> &[Field] {
        &self.species
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.species[0].mesh()
    }

    /// Concentration vector at node `j`.
    pub fn at(&self, j: usize) -> Vec<f64> {
        self.species.iter().map(|f| f.values[j]).collect()
    }

    pub fn set_at(&mut self, j: usize, c: &[f64]) {
        for (f, &v) in self.species.iter_mut().zip(c) {
            f.values[j] = v;
        }
    }

    /// Charge density `q . c`.
    pub fn charge_density(&self) -> Field {
        let n = self.mesh().len();
        let mut values = vec![0.0; n];
        for (f, q) in self.species.iter().zip(&self.charges) {
            for (r, v) in values.iter_mut().zip(&f.values) {
                *r += q * v;
            }
        }
        Field {
            mesh: self.mesh().clone(),
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        let m = Mesh::uniform(
            0.0,
            1.0,
            3,
            [Boundary::Dirichlet, Boundary::Robin { omega: 1.0 }],
        )
        .unwrap();
        assert_eq!(m.nodes(), &[0.0, 0.5, 1.0]);
        assert_eq!(m.case(), BoundaryCase::SomeDirichlet);
        let m = Mesh::uniform(0.0, 1.0, 11, [Boundary::Neumann, Boundary::Neumann]).unwrap();
        assert_eq!(m.case(), BoundaryCase::PureNeumann);
        let m = Mesh::uniform(
            0.0,
            1.0,
            11,
            [
                Boundary::Robin { omega: 1.0 },
                Boundary::Robin { omega: 2.0 },
            ],
        )
        .unwrap();
        assert_eq!(m.case(), BoundaryCase::PureRobin { total_omega: 3.0 });
    }

    #[test]
    fn robin_zero_is_neumann() {
        let m = Mesh::uniform(
            0.0,
            1.0,
            5,
            [Boundary::Robin { omega: 0.0 }, Boundary::Neumann],
        )
        .unwrap();
        assert_eq!(m.case(), BoundaryCase::PureNeumann);
    }

    #[test]
    fn bad_meshes() {
        assert!(Mesh::uniform(1.0, 0.0, 5, [Boundary::Neumann; 2]).is_err());
        assert!(Mesh::uniform(0.0, 1.0, 1, [Boundary::Neumann; 2]).is_err());
        assert!(Mesh::from_nodes(vec![0.0, 0.5, 0.5], [Boundary::Neumann; 2]).is_err());
        assert!(Mesh::uniform(
            0.0,
            1.0,
            4,
            [Boundary::Robin { omega: -1.0 }, Boundary::Neumann]
        )
        .is_err());
    }

    #[test]
    fn quadrature() {
        let m = Mesh::uniform(0.0, 1.0, 101, [Boundary::Neumann; 2]).unwrap();
        assert!((Field::constant(&m, 1.0).integrate() - 1.0).abs() < 1e-14);
        assert!((Field::from_fn(&m, |x| x).integrate() - 0.5).abs() < 1e-14);
        let m = Mesh::uniform(0.0, 1.0, 11, [Boundary::Neumann; 2]).unwrap();
        let x2 = Field::from_fn(&m, |x| x * x);
        assert!((x2.integrate() - 1.0 / 3.0).abs() < 1e-2);
        let x = Field::from_fn(&m, |x| x);
        assert!((x.integrate_product(&x).unwrap() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn l1_norm_with_sign_change() {
        let m = Mesh::uniform(0.0, 1.0, 2, [Boundary::Neumann; 2]).unwrap();
        let f = Field::new(m, vec![-1.0, 1.0]).unwrap();
        assert!((f.l1_norm() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mismatch_detected() {
        let a = Mesh::uniform(0.0, 1.0, 5, [Boundary::Neumann; 2]).unwrap();
        let b = Mesh::uniform(0.0, 2.0, 5, [Boundary::Neumann; 2]).unwrap();
        let fa = Field::constant(&a, 1.0);
        let fb = Field::constant(&b, 1.0);
        assert_eq!(fa.integrate_product(&fb), Err(Error::MeshMismatch));
    }

    #[test]
    fn interpolation_error_is_second_order() {
        let mut errs = vec![];
        for n in [11, 21, 41] {
            let m = Mesh::uniform(0.0, 1.0, n, [Boundary::Neumann; 2]).unwrap();
            let f = Field::from_fn(&m, |x| (3.0 * x).sin());
            errs.push(f.l2_error_against(|x| (3.0 * x).sin()));
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.1, "order {order}");
        }
    }

    #[test]
    fn charge_density_cancels() {
        let m = Mesh::uniform(0.0, 1.0, 5, [Boundary::Neumann; 2]).unwrap();
        let c = SpeciesField::new(
            vec![Field::constant(&m, 2.0), Field::constant(&m, 2.0)],
            vec![-1.0, 1.0],
        )
        .unwrap();
        assert_eq!(c.charge_density().integrate(), 0.0);
    }
}
