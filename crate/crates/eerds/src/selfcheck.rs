//! Fast invariant suite behind `eerds selfcheck`.

use std::collections::BTreeMap;
use std::fmt;

use eerds_core::electrostatics::PoissonProblem;
use eerds_core::entropy::{
    legendre_oracle, young_violation, BoltzmannEntropy, EntropyModel, OracleBox,
};
use eerds_core::mesh::{Boundary, Field, Mesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Measured defect; the check passes when it does not exceed `tolerance`.
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name)
            .collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28} {:>12} {:>12}  result",
            "check", "defect", "tolerance"
        )?;
        for c in &self.checks {
            let r = if c.passed() { "pass" } else { "FAIL" };
            writeln!(
                f,
                "{:<28} {:>12.3e} {:>12.3e}  {r}",
                c.name, c.value, c.tolerance
            )?;
        }
        Ok(())
    }
}

pub const CHECK_NAMES: [&str; 6] = [
    "legendre_round_trip",
    "dual_entropy_anchor",
    "legendre_oracle",
    "manufactured_poisson",
    "young_bound",
    "minimal_energy_closed_form",
];

/// Runs every check; `overrides` replaces tolerances by name.
pub fn run(overrides: &BTreeMap<String, f64>) -> Report {
    let tol = |name: &'static str, default: f64| overrides.get(name).copied().unwrap_or(default);
    let checks = vec![
        Check {
            name: "legendre_round_trip",
            value: legendre_round_trip(),
            tolerance: tol("legendre_round_trip", 1e-9),
        },
        Check {
            name: "dual_entropy_anchor",
            value: (BoltzmannEntropy::unit(vec![1.0]).dual(&[0.0], -1.0).value() - 5.0).abs(),
            tolerance: tol("dual_entropy_anchor", 1e-12),
        },
        Check {
            name: "legendre_oracle",
            value: oracle_defect(),
            tolerance: tol("legendre_oracle", 1e-5),
        },
        Check {
            name: "manufactured_poisson",
            value: (poisson_order() - 2.0).abs(),
            tolerance: tol("manufactured_poisson", 0.2),
        },
        Check {
            name: "young_bound",
            value: young_defect(),
            tolerance: tol("young_bound", 0.0),
        },
        Check {
            name: "minimal_energy_closed_form",
            value: minimal_energy_defect(),
            tolerance: tol("minimal_energy_closed_form", 1e-12),
        },
    ];
    Report { checks }
}

/// Largest `|DH*(-DS(z)) - z| / (1 + |z|)` over random positive points.
fn legendre_round_trip() -> f64 {
    let m = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let z: [f64; 3] = [
            rng.gen_range(1e-3..10.0),
            rng.gen_range(1e-3..10.0),
            rng.gen_range(1e-2..10.0),
        ];
        let err = match m
            .neg_gradient(&z[..2], z[2])
            .and_then(|w| m.dual_gradient(&w.y, w.v))
        {
            Ok(p) => {
                let d = [p.c[0] - z[0], p.c[1] - z[1], p.u - z[2]];
                d.iter().map(|x| x * x).sum::<f64>().sqrt()
                    / (1.0 + z.iter().map(|x| x * x).sum::<f64>().sqrt())
            }
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    worst
}

fn oracle_defect() -> f64 {
    let m = BoltzmannEntropy::unit(vec![1.0]);
    let bx = OracleBox {
        lo: 1e-4,
        hi: 30.0,
        points: 21,
    };
    let mut worst: f64 = 0.0;
    for (y, v) in [(0.0, -1.0), (0.5, -2.0), (-1.0, -0.7)] {
        let exact = m.dual(&[y], v).value();
        let approx = legendre_oracle(&m, &[y], v, bx, 12);
        worst = worst.max((exact - approx).abs() / exact.abs().max(1.0));
    }
    worst
}

/// Observed `L^2` order for `-psi'' = pi^2 sin(pi x)` with homogeneous
/// Dirichlet data.
pub fn poisson_order() -> f64 {
    let errors: Vec<(f64, f64)> = [51usize, 101, 201]
        .iter()
        .map(|&n| {
            let mesh = Mesh::uniform(0.0, 1.0, n, [Boundary::Dirichlet, Boundary::Dirichlet])
                .expect("mesh");
            let op = PoissonProblem::vacuum(&mesh).assemble().expect("operator");
            let pi = std::f64::consts::PI;
            let rho = Field::from_fn(&mesh, |x| pi * pi * (pi * x).sin());
            let psi = op.solve_internal_potential(&rho).expect("solve");
            let exact = Field::from_fn(&mesh, |x| (pi * x).sin());
            (
                mesh.h_max(),
                psi.zip_with(&exact, |a, b| a - b)
                    .expect("same mesh")
                    .l2_norm(),
            )
        })
        .collect();
    let (h0, e0) = errors[0];
    let (h1, e1) = errors[errors.len() - 1];
    (e0 / e1).ln() / (h0 / h1).ln()
}

/// Number of grid points violating the Young bound.
fn young_defect() -> f64 {
    let mut bad = 0usize;
    for p in [0.5, 1.0, 2.0] {
        for delta in [0.25, 1.0, 4.0] {
            for i in 0..100 {
                let mu = -10.0 + 20.0 * i as f64 / 99.0;
                for j in 0..100 {
                    let eta = 1e-3 + 10.0 * j as f64 / 99.0;
                    let scale = 1.0 + mu.abs().powf(1.0 + p) / eta.powf(p) + delta * eta;
                    if young_violation(p, 1.0 + p, delta, mu, eta) < -1e-12 * scale {
                        bad += 1;
                    }
                }
            }
        }
    }
    bad as f64
}

fn minimal_energy_defect() -> f64 {
    let mesh = Mesh::uniform(
        0.0,
        1.0,
        101,
        [
            Boundary::Robin { omega: 1.0 },
            Boundary::Robin { omega: 1.0 },
        ],
    )
    .expect("mesh");
    let op = PoissonProblem::vacuum(&mesh).assemble().expect("operator");
    match op.min_electro_energy(2.0, &Field::zeros(&mesh)) {
        Ok(m) => (m.value - 1.0)
            .abs()
            .max((m.kappa_star.unwrap_or(f64::NAN) - 1.0).abs()),
        Err(_) => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let r = run(&BTreeMap::new());
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn injected_tolerance_fails_the_named_check() {
        let mut o = BTreeMap::new();
        o.insert("manufactured_poisson".to_string(), -1.0);
        let r = run(&o);
        assert_eq!(r.failures(), vec!["manufactured_poisson"]);
    }
}
