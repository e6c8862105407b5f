//! Scenario files.
//!
//! ```toml
//! name = "bipolar"
//!
//! [mesh]
//! x_left = 0.0
//! x_right = 1.0
//! nodes = 401
//! permittivity = { type = "constant", value = 1.0 }
//! doping = { type = "linear", slope = 1.0, intercept = -0.5 }
//!
//! [boundary]
//! left = { type = "robin", omega = 1.0 }
//! right = { type = "robin", omega = 1.0 }
//! surface_charge = [0.0, 0.0]
//!
//! [entropy]
//! model = "boltzmann"
//! charges = [-1.0, 1.0]
//!
//! [constraints]
//! energy = 5.0
//! charge = 0.0
//! ```

use std::path::Path;
use std::sync::Arc;

use eerds_core::electrostatics::PoissonProblem;
use eerds_core::entropy::{BoltzmannEntropy, EntropyModel, SizeExclusionEntropy};
use eerds_core::evolution::{MobilityModel, Reaction, ReactionNetwork};
use eerds_core::mesh::{Boundary, Field, Mesh};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub mesh: MeshSpec,
    pub boundary: BoundarySpec,
    pub entropy: EntropySpec,
    #[serde(default)]
    pub reactions: ReactionSpec,
    pub constraints: Constraints,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub stages: Stages,
}

fn default_name() -> String {
    "scenario".into()
}

/// Spatial profile on the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `slope * x + intercept`.
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// Piecewise linear through `(x, y)`, constant beyond the end points.
    Tabulated {
        x: Vec<f64>,
        y: Vec<f64>,
    },
}

impl Profile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Linear { slope, intercept } => slope * t + intercept,
            Profile::Tabulated { x, y } => {
                let k = x.partition_point(|v| *v <= t);
                if k == 0 {
                    y[0]
                } else if k == x.len() {
                    y[x.len() - 1]
                } else {
                    let s = (t - x[k - 1]) / (x[k] - x[k - 1]);
                    y[k - 1] + s * (y[k] - y[k - 1])
                }
            }
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if let Profile::Tabulated { x, y } = self {
            if x.is_empty() || x.len() != y.len() {
                return Err(Error::scenario(format!(
                    "{what}: x and y must be non-empty and equally long"
                )));
            }
            if x.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::scenario(format!(
                    "{what}: x must be strictly increasing"
                )));
            }
        }
        Ok(())
    }

    pub fn on(&self, mesh: &Arc<Mesh>) -> Field {
        Field::from_fn(mesh, |t| self.eval(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default)]
    pub x_left: f64,
    #[serde(default = "one")]
    pub x_right: f64,
    pub nodes: usize,
    #[serde(default = "unit_profile")]
    pub permittivity: Profile,
    #[serde(default = "zero_profile")]
    pub doping: Profile,
}

fn one() -> f64 {
    1.0
}

fn unit_profile() -> Profile {
    Profile::Constant { value: 1.0 }
}

fn zero_profile() -> Profile {
    Profile::Constant { value: 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum BoundarySide {
    Dirichlet,
    Neumann,
    Robin { omega: f64 },
}

impl From<BoundarySide> for Boundary {
    fn from(b: BoundarySide) -> Self {
        match b {
            BoundarySide::Dirichlet => Boundary::Dirichlet,
            BoundarySide::Neumann => Boundary::Neumann,
            BoundarySide::Robin { omega } => Boundary::Robin { omega },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub left: BoundarySide,
    pub right: BoundarySide,
    /// Robin data `g` at the left and right end.
    #[serde(default)]
    pub surface_charge: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyFamily {
    Boltzmann,
    Exclusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySpec {
    pub model: EntropyFamily,
    pub charges: Vec<f64>,
    #[serde(default = "one")]
    pub beta0: f64,
    /// Per-species weights; all ones when omitted.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub w0: f64,
    #[serde(default = "half")]
    pub alpha: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionEntry {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    #[serde(default = "one")]
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSpec {
    #[serde(default)]
    pub reaction: Vec<ReactionEntry>,
    /// Require `ker Gamma = span q`.
    #[serde(default)]
    pub single_conservation_law: bool,
    /// Species mobility constants; all ones when omitted.
    #[serde(default)]
    pub diffusivity: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub heat_conductivity: f64,
}

impl Default for ReactionSpec {
    fn default() -> Self {
        Self {
            reaction: Vec::new(),
            single_conservation_law: false,
            diffusivity: None,
            heat_conductivity: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    pub energy: f64,
    #[serde(default)]
    pub charge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol_grad: f64,
    pub max_iter: usize,
    pub direct_tol: f64,
    pub direct_max_iter: usize,
    /// Random dual initialisations used for the uniqueness check.
    pub random_starts: usize,
    pub seed: u64,
    /// Regularisation levels; empty disables continuation.
    pub deltas: Vec<f64>,
    pub cross_l1_tol: f64,
    pub cross_entropy_tol: f64,
    pub theta_tol: f64,
    pub constraint_tol: f64,
    pub zeta_tol: f64,
    pub t_end: f64,
    pub dt0: f64,
    pub dt_max: f64,
    pub stride: usize,
    pub tol_distance: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            tol_grad: 1e-8,
            max_iter: 200,
            direct_tol: 1e-8,
            direct_max_iter: 300,
            random_starts: 2,
            seed: 0,
            deltas: Vec::new(),
            cross_l1_tol: 1e-3,
            cross_entropy_tol: 1e-6,
            theta_tol: 1e-8,
            constraint_tol: 1e-7,
            zeta_tol: 1e-7,
            t_end: 200.0,
            dt0: 1e-3,
            dt_max: 5.0,
            stride: 10,
            tol_distance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stages {
    pub electro: bool,
    pub dual: bool,
    pub direct: bool,
    pub evolve: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            electro: true,
            dual: true,
            direct: true,
            evolve: false,
        }
    }
}

impl Stages {
    pub fn none() -> Self {
        Self {
            electro: false,
            dual: false,
            direct: false,
            evolve: false,
        }
    }

    /// Parses `electro,dual,direct,evolve`.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut st = Self::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "electro" => st.electro = true,
                "dual" => st.dual = true,
                "direct" => st.direct = true,
                "evolve" => st.evolve = true,
                other => return Err(Error::scenario(format!("unknown stage '{other}'"))),
            }
        }
        Ok(st)
    }
}

/// Built numerical objects of a scenario.
pub struct Built {
    pub mesh: Arc<Mesh>,
    pub problem: PoissonProblem,
    pub model: Box<dyn EntropyModel>,
    pub network: ReactionNetwork,
    pub mobility: MobilityModel,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ni = self.entropy.charges.len();
        if ni == 0 {
            return Err(Error::scenario(
                "entropy.charges: at least one species is required",
            ));
        }
        if let Some(b) = &self.entropy.beta {
            if b.len() != ni {
                return Err(Error::scenario(format!(
                    "entropy.beta: expected {ni} entries, got {}",
                    b.len()
                )));
            }
        }
        if let Some(d) = &self.reactions.diffusivity {
            if d.len() != ni {
                return Err(Error::scenario(format!(
                    "reactions.diffusivity: expected {ni} entries, got {}",
                    d.len()
                )));
            }
        }
        for (r, re) in self.reactions.reaction.iter().enumerate() {
            if re.alpha.len() != ni || re.beta.len() != ni {
                return Err(Error::scenario(format!(
                    "reactions.reaction[{r}]: expected {ni} stoichiometric entries"
                )));
            }
        }
        let neumann = matches!(
            (self.boundary.left, self.boundary.right),
            (BoundarySide::Neumann, BoundarySide::Neumann)
        );
        if neumann && self.constraints.charge != 0.0 {
            return Err(Error::scenario(
                "constraints.charge: must be 0 with Neumann conditions on both ends",
            ));
        }
        self.mesh.permittivity.validate("mesh.permittivity")?;
        self.mesh.doping.validate("mesh.doping")?;
        Ok(())
    }

    pub fn build(&self) -> Result<Built> {
        let mesh = Mesh::uniform(
            self.mesh.x_left,
            self.mesh.x_right,
            self.mesh.nodes,
            [self.boundary.left.into(), self.boundary.right.into()],
        )?;
        let problem = PoissonProblem::new(
            self.mesh.permittivity.on(&mesh),
            self.mesh.doping.on(&mesh),
            self.boundary.surface_charge,
        )?;
        let e = &self.entropy;
        let ni = e.charges.len();
        let model: Box<dyn EntropyModel> = match e.model {
            EntropyFamily::Boltzmann => Box::new(BoltzmannEntropy::new(
                e.beta0,
                e.beta.clone().unwrap_or_else(|| vec![1.0; ni]),
                e.w0,
                e.alpha,
                e.charges.clone(),
            )?),
            EntropyFamily::Exclusion => Box::new(SizeExclusionEntropy::new(
                e.beta0,
                e.alpha,
                e.charges.clone(),
            )?),
        };
        let reactions = self
            .reactions
            .reaction
            .iter()
            .map(|r| Reaction {
                alpha: r.alpha.clone(),
                beta: r.beta.clone(),
                rate: r.rate,
            })
            .collect();
        let mut network = ReactionNetwork::new(reactions, &e.charges)?;
        if self.reactions.single_conservation_law {
            network = network.require_single_conservation_law()?;
        }
        let mobility = MobilityModel::new(
            self.reactions
                .diffusivity
                .clone()
                .unwrap_or_else(|| vec![1.0; ni]),
            self.reactions.heat_conductivity,
        )?;
        Ok(Built {
            mesh,
            problem,
            model,
            network,
            mobility,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mesh]
nodes = 11
doping = { type = "tabulated", x = [0.0, 1.0], y = [-1.0, 1.0] }
[boundary]
left = { type = "dirichlet" }
right = { type = "robin", omega = 2.0 }
[entropy]
model = "boltzmann"
charges = [-1.0, 1.0]
[constraints]
energy = 5.0
"#;

    #[test]
    fn defaults_fill_in() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.mesh.x_right, 1.0);
        assert_eq!(s.constraints.charge, 0.0);
        assert!(s.stages.dual && !s.stages.evolve);
        assert!((s.mesh.doping.eval(0.25) + 0.5).abs() < 1e-15);
        assert_eq!(s.mesh.doping.eval(7.0), 1.0);
        s.build().unwrap();
    }

    #[test]
    fn unknown_field_names_the_key() {
        let bad = MINIMAL.replace("energy = 5.0", "energy = 5.0\nenergie = 1.0");
        let msg = Scenario::from_toml(&bad).unwrap_err().to_string();
        assert!(msg.contains("energie") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn neumann_requires_neutrality() {
        let bad = MINIMAL
            .replace(r#"{ type = "dirichlet" }"#, r#"{ type = "neumann" }"#)
            .replace(
                r#"{ type = "robin", omega = 2.0 }"#,
                r#"{ type = "neumann" }"#,
            )
            .replace("energy = 5.0", "energy = 5.0\ncharge = 1.0");
        assert!(Scenario::from_toml(&bad).is_err());
    }

    #[test]
    fn stage_lists() {
        let s = Stages::parse_list("dual, evolve").unwrap();
        assert!(s.dual && s.evolve && !s.electro && !s.direct);
        assert!(Stages::parse_list("dual,plot").is_err());
    }
}
