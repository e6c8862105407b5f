//! electrostatics -> dual -> direct -> evolution.

use std::path::{Path, PathBuf};

use eerds_core::direct::{
    cross_validate, state_distance, DirectMethod, DirectOptions, PrimalResult, PrimalState,
};
use eerds_core::dual::{DualLagrangian, DualOptions, DualPoint, DualSolution, EquilibriumResult};
use eerds_core::electrostatics::AssembledOperator;
use eerds_core::entropy::EntropyModel;
use eerds_core::evolution::{Evolution, EvolveOptions, Scheme};
use eerds_core::mesh::Field;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::report::{write_json, Table, SCHEMA};
use crate::scenario::{Built, Scenario, Stages};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the scenario's stage table.
    pub stages: Option<Stages>,
    pub tol_grad: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
    Infeasible,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElectroSummary {
    pub boundary_case: String,
    pub minimal_energy: f64,
    pub kappa_star: Option<f64>,
    pub feasible: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizationRow {
    pub delta: f64,
    /// Relative `L^1` distance to the unregularised optimiser.
    pub gap: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSummary {
    pub iterations: usize,
    pub grad_norm: f64,
    pub k_value: f64,
    pub eta: f64,
    pub theta: f64,
    pub kappa: f64,
    pub entropy: f64,
    pub energy_residual: f64,
    pub charge_residual: f64,
    pub theta_spread: f64,
    pub zeta_defect: f64,
    pub poisson_residual: f64,
    pub duality_gap: f64,
    /// Largest relative `L^1` distance between optimisers from random starts.
    pub uniqueness_spread: f64,
    pub regularization: Vec<RegularizationRow>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossSummary {
    pub l1_relative: f64,
    pub linf: f64,
    pub entropy_gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectSummary {
    pub iterations: usize,
    pub entropy: f64,
    pub eta: f64,
    pub kappa: f64,
    pub stationarity: f64,
    pub energy_residual: f64,
    pub charge_residual: f64,
    pub cross_validation: Option<CrossSummary>,
    pub regularization: Vec<RegularizationRow>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolveSummary {
    pub steps: usize,
    pub rejected_steps: usize,
    pub final_time: f64,
    pub final_distance: Option<f64>,
    pub max_entropy_decrease: f64,
    pub energy_drift: f64,
    pub charge_drift: f64,
    pub final_theta_spread: f64,
    /// Rate norm at the dual equilibrium.
    pub equilibrium_rate_norm: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub scenario: String,
    pub seed: u64,
    pub nodes: usize,
    pub species: usize,
    pub energy: f64,
    pub charge: f64,
    pub status: Status,
    pub message: Option<String>,
    pub electro: Option<ElectroSummary>,
    pub dual: Option<DualSummary>,
    pub direct: Option<DirectSummary>,
    pub evolve: Option<EvolveSummary>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.status == Status::Ok
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub tables: Vec<Table>,
}

struct Ctx<'a> {
    s: &'a Scenario,
    model: &'a dyn EntropyModel,
    op: &'a AssembledOperator,
    psi_ext: &'a Field,
    built: &'a Built,
    tol_grad: f64,
    seed: u64,
}

/// Runs the enabled stages. Numerical failures are reported in the summary;
/// only scenario construction errors are returned as `Err`.
pub fn run(s: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    let built = s.build()?;
    let op = built.problem.assemble()?;
    let psi_ext =
        op.solve_external_potential(&built.problem.doping, built.problem.surface_charge)?;
    let stages = opts.stages.unwrap_or(s.stages);
    let seed = opts.seed.unwrap_or(s.solver.seed);
    let ctx = Ctx {
        s,
        model: built.model.as_ref(),
        op: &op,
        psi_ext: &psi_ext,
        built: &built,
        tol_grad: opts.tol_grad.unwrap_or(s.solver.tol_grad),
        seed,
    };
    let mut summary = Summary {
        schema: SCHEMA,
        scenario: s.name.clone(),
        seed,
        nodes: built.mesh.len(),
        species: s.entropy.charges.len(),
        energy: s.constraints.energy,
        charge: s.constraints.charge,
        status: Status::Ok,
        message: None,
        electro: None,
        dual: None,
        direct: None,
        evolve: None,
    };
    let mut tables = Vec::new();
    match ctx.stages(stages, &mut summary, &mut tables) {
        Ok(()) => {}
        Err(eerds_core::Error::Infeasible { minimal_energy, .. }) => {
            summary.status = Status::Infeasible;
            summary.message = Some(format!(
                "infeasible: energy {} does not exceed the minimal electrostatic energy V = {minimal_energy}",
                s.constraints.energy
            ));
            if summary.electro.is_none() {
                let min = op.min_electro_energy(s.constraints.charge, &psi_ext)?;
                summary.electro = Some(ctx.electro_summary(min.value, min.kappa_star));
            }
        }
        Err(e) => {
            summary.status = Status::Error;
            summary.message = Some(e.to_string());
        }
    }
    if summary.status == Status::Ok {
        let all = [
            summary.electro.as_ref().map(|x| x.pass),
            summary.dual.as_ref().map(|x| x.pass),
            summary.direct.as_ref().map(|x| x.pass),
            summary.evolve.as_ref().map(|x| x.pass),
        ];
        if all.iter().flatten().any(|p| !p) {
            summary.status = Status::Failed;
        }
    }
    Ok(RunOutcome { summary, tables })
}

impl Ctx<'_> {
    fn electro_summary(&self, v: f64, kappa_star: Option<f64>) -> ElectroSummary {
        let feasible = self.s.constraints.energy > v;
        ElectroSummary {
            boundary_case: self.built.mesh.case().name().into(),
            minimal_energy: v,
            kappa_star,
            feasible,
            pass: feasible,
        }
    }

    fn dual_options(&self) -> DualOptions {
        DualOptions {
            tol_grad: self.tol_grad,
            max_iter: self.s.solver.max_iter,
        }
    }

    fn direct_options(&self) -> DirectOptions {
        DirectOptions {
            tol: self.s.solver.direct_tol,
            max_iter: self.s.solver.direct_max_iter,
            ..DirectOptions::default()
        }
    }

    fn stages(
        &self,
        st: Stages,
        sum: &mut Summary,
        tables: &mut Vec<Table>,
    ) -> eerds_core::Result<()> {
        let (e0, q0) = (self.s.constraints.energy, self.s.constraints.charge);
        if st.electro {
            let min = self.op.min_electro_energy(q0, self.psi_ext)?;
            sum.electro = Some(self.electro_summary(min.value, min.kappa_star));
            let rho = self.op.minimal_energy_density(q0, self.psi_ext)?;
            let mut t = Table::new("electro_minimal_density", &["x", "rho", "psi_ext"]);
            for (j, x) in self.built.mesh.nodes().iter().enumerate() {
                t.push(vec![*x, rho.values()[j], self.psi_ext.values()[j]]);
            }
            tables.push(t);
            if !(e0 > min.value) {
                return Err(eerds_core::Error::Infeasible {
                    e0,
                    minimal_energy: min.value,
                });
            }
        }
        let mut equilibrium = None;
        if st.dual {
            let (summary, sol, eq) = self.dual_stage()?;
            let mut t = Table::new("dual_trace", &["iteration", "k", "grad_norm", "step"]);
            for r in &sol.trace {
                t.push(vec![r.iteration as f64, r.k, r.grad_norm, r.step]);
            }
            tables.push(t);
            let state = PrimalState::new(eq.c.clone(), eq.u.clone())?;
            tables.push(Table::fields("dual_fields", &state, Some(&eq.psi)));
            sum.dual = Some(summary);
            equilibrium = Some(eq);
        }
        if st.direct {
            let (summary, res) = self.direct_stage(equilibrium.as_ref())?;
            let mut t = Table::new(
                "direct_trace",
                &["iteration", "entropy", "stationarity", "step"],
            );
            for r in &res.trace {
                t.push(vec![r.iteration as f64, r.entropy, r.stationarity, r.step]);
            }
            tables.push(t);
            tables.push(Table::fields("direct_fields", &res.state, None));
            sum.direct = Some(summary);
        }
        if st.evolve {
            let summary = self.evolve_stage(equilibrium.as_ref(), tables)?;
            sum.evolve = Some(summary);
        }
        Ok(())
    }

    fn dual_stage(&self) -> eerds_core::Result<(DualSummary, DualSolution, EquilibriumResult)> {
        let sv = &self.s.solver;
        let (e0, q0) = (self.s.constraints.energy, self.s.constraints.charge);
        let k = DualLagrangian::new(self.model, self.op, e0, q0, self.psi_ext)?;
        let opts = self.dual_options();
        let sol = k.minimize_k(&k.initial_point()?, &opts)?;
        let eq = k.recover_state(&sol.point)?;
        let diag = k.verify_equilibrium(&eq)?;
        let state = PrimalState::new(eq.c.clone(), eq.u.clone())?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut spread: f64 = 0.0;
        let eta0 = k.initial_eta();
        for _ in 0..sv.random_starts {
            let start = random_dual_point(&mut rng, self.op, eta0)?;
            let other = k.minimize_k(&start, &opts)?;
            let r = k.recover_state(&other.point)?;
            spread = spread.max(state_distance(&state, &r.c, &r.u)?.0);
        }

        let mut regularization = Vec::new();
        for &delta in &sv.deltas {
            let r = DualLagrangian::minimize_k_regularized(
                self.model,
                self.op,
                e0,
                q0,
                self.psi_ext,
                delta,
                Some(&sol.point),
                &opts,
            )?;
            let kd = DualLagrangian::new(self.model, self.op, e0, q0, self.psi_ext)?
                .with_delta(delta)?;
            let rd = kd.recover_state(&r.point)?;
            regularization.push(RegularizationRow {
                delta,
                gap: state_distance(&state, &rd.c, &rd.u)?.0,
                entropy: rd.entropy,
            });
        }

        let pass = sol.grad_norm <= self.tol_grad
            && diag.passes(sv.constraint_tol, sv.theta_tol, sv.zeta_tol)
            && spread <= 1e-6
            && continuation_ok(&regularization);
        let summary = DualSummary {
            iterations: sol.iterations,
            grad_norm: sol.grad_norm,
            k_value: sol.value,
            eta: eq.eta,
            theta: eq.theta,
            kappa: eq.kappa,
            entropy: eq.entropy,
            energy_residual: diag.energy_residual,
            charge_residual: diag.charge_residual,
            theta_spread: diag.theta_spread,
            zeta_defect: diag.zeta_defect,
            poisson_residual: diag.poisson_residual,
            duality_gap: diag.duality_gap,
            uniqueness_spread: spread,
            regularization,
            pass,
        };
        Ok((summary, sol, eq))
    }

    fn direct_stage(
        &self,
        eq: Option<&EquilibriumResult>,
    ) -> eerds_core::Result<(DirectSummary, PrimalResult)> {
        let sv = &self.s.solver;
        let (e0, q0) = (self.s.constraints.energy, self.s.constraints.charge);
        let dm = DirectMethod::new(self.model, self.op, e0, q0, self.psi_ext)?;
        let start = dm.feasible_point(1.0)?.state;
        let opts = self.direct_options();
        let res = dm.maximize_entropy(&start, &opts)?;
        let cross = match eq {
            Some(eq) => {
                let cv = cross_validate(eq, &res)?;
                Some(CrossSummary {
                    l1_relative: cv.l1_relative,
                    linf: cv.linf,
                    entropy_gap: cv.entropy_gap,
                    pass: cv.passes(sv.cross_l1_tol, sv.cross_entropy_tol),
                })
            }
            None => None,
        };
        let mut regularization = Vec::new();
        for &delta in &sv.deltas {
            let r = dm.maximize_entropy_regularized(delta, &res.state, &opts)?;
            regularization.push(RegularizationRow {
                delta,
                gap: state_distance(&res.state, &r.state.c, &r.state.u)?.0,
                entropy: r.entropy,
            });
        }
        let constraints_ok = res.energy_residual.abs() <= sv.constraint_tol
            && res.charge_residual.abs() <= sv.constraint_tol;
        let pass = constraints_ok
            && cross.as_ref().is_none_or(|c| c.pass)
            && continuation_ok(&regularization);
        let summary = DirectSummary {
            iterations: res.iterations,
            entropy: res.entropy,
            eta: res.eta,
            kappa: res.kappa,
            stationarity: res.stationarity,
            energy_residual: res.energy_residual,
            charge_residual: res.charge_residual,
            cross_validation: cross,
            regularization,
            pass,
        };
        Ok((summary, res))
    }

    fn evolve_stage(
        &self,
        eq: Option<&EquilibriumResult>,
        tables: &mut Vec<Table>,
    ) -> eerds_core::Result<EvolveSummary> {
        let sv = &self.s.solver;
        let (e0, q0) = (self.s.constraints.energy, self.s.constraints.charge);
        let ev = Evolution::new(
            self.model,
            self.op,
            self.psi_ext,
            &self.built.network,
            &self.built.mobility,
            Scheme::Implicit,
        )?;
        let dm = DirectMethod::new(self.model, self.op, e0, q0, self.psi_ext)?;
        let start = dm.feasible_point(1.0)?.state;
        let reference = eq
            .map(|e| PrimalState::new(e.c.clone(), e.u.clone()))
            .transpose()?;
        let opts = EvolveOptions {
            t_end: sv.t_end,
            dt0: sv.dt0,
            dt_max: sv.dt_max,
            stride: sv.stride,
            tol_distance: sv.tol_distance,
            ..EvolveOptions::default()
        };
        let tr = ev.evolve(&start, &opts, reference.as_ref())?;
        let ref_energy = tr.energy[0];
        let energy_drift = tr
            .energy
            .iter()
            .map(|e| (e - ref_energy).abs())
            .fold(0.0, f64::max)
            / ref_energy.abs().max(1e-300);
        let charge_drift = tr.charge.iter().map(|q| (q - q0).abs()).fold(0.0, f64::max);
        let final_distance = reference
            .as_ref()
            .map(|_| *tr.distance.last().unwrap_or(&f64::NAN));
        let equilibrium_rate_norm = match &reference {
            Some(r) => Some(ev.rates(r)?.max_norm()),
            None => None,
        };

        let mut mon = Table::new(
            "evolve_monitor",
            &[
                "t",
                "entropy",
                "energy",
                "charge",
                "distance",
                "theta_spread",
            ],
        );
        for k in 0..tr.times.len() {
            mon.push(vec![
                tr.times[k],
                tr.entropy[k],
                tr.energy[k],
                tr.charge[k],
                tr.distance[k],
                tr.theta_spread[k],
            ]);
        }
        tables.push(mon);
        let ni = self.model.species_count();
        let mut head = vec!["t".to_string(), "x".to_string()];
        head.extend((1..=ni).map(|i| format!("c{i}")));
        head.push("u".into());
        let mut snaps = Table {
            name: "evolve_snapshots".into(),
            header: head,
            rows: Vec::new(),
        };
        for (t, s) in &tr.snapshots {
            for r in Table::fields("", s, None).rows {
                let mut row = vec![*t];
                row.extend(r);
                snaps.rows.push(row);
            }
        }
        tables.push(snaps);
        tables.push(Table::fields("evolve_final", &tr.final_state, None));

        let pass = tr.max_entropy_decrease <= opts.entropy_slack
            && energy_drift <= 1e-8
            && charge_drift <= 1e-10 * q0.abs().max(1.0)
            && final_distance.is_none_or(|d| d <= 1e-4);
        Ok(EvolveSummary {
            steps: tr.times.len() - 1,
            rejected_steps: tr.rejected_steps,
            final_time: *tr.times.last().unwrap_or(&0.0),
            final_distance,
            max_entropy_decrease: tr.max_entropy_decrease,
            energy_drift,
            charge_drift,
            final_theta_spread: *tr.theta_spread.last().unwrap_or(&f64::NAN),
            equilibrium_rate_norm,
            pass,
        })
    }
}

/// Gaps shrink with `delta` and the smallest one is below `1e-3`.
pub fn continuation_ok(rows: &[RegularizationRow]) -> bool {
    if rows.is_empty() {
        return true;
    }
    let mut sorted: Vec<&RegularizationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    sorted.windows(2).all(|w| w[1].gap <= w[0].gap) && sorted.last().is_some_and(|r| r.gap <= 1e-3)
}

fn random_dual_point(
    rng: &mut ChaCha8Rng,
    op: &AssembledOperator,
    eta0: f64,
) -> eerds_core::Result<DualPoint> {
    let mesh = op.mesh();
    let eta = eta0 * rng.gen_range(0.5..2.0);
    let kappa = rng.gen_range(-1.0..1.0);
    let lambda: Vec<f64> = (0..mesh.len())
        .map(|j| {
            if mesh.is_dirichlet_node(j) {
                0.0
            } else {
                rng.gen_range(-0.5..0.5)
            }
        })
        .collect();
    DualPoint::new(eta, kappa, Field::new(mesh.clone(), lambda)?)
}

/// Writes `summary.json` and every table into `dir`.
pub fn write_outcome(out: &RunOutcome, dir: &Path, dat: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let summary = dir.join("summary.json");
    write_json(&summary, &out.summary)?;
    files.push(summary);
    for t in &out.tables {
        files.push(t.write_csv(dir)?);
        if dat {
            files.push(t.write_dat(dir)?);
        }
    }
    Ok(files)
}
