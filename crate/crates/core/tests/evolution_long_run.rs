use eerds_core::direct::{DirectMethod, PrimalState};
use eerds_core::dual::{DualLagrangian, DualOptions};
use eerds_core::electrostatics::PoissonProblem;
use eerds_core::entropy::BoltzmannEntropy;
use eerds_core::evolution::{
    Evolution, EvolveOptions, MobilityModel, Reaction, ReactionNetwork, Scheme,
};
use eerds_core::mesh::{Boundary, Field, Mesh};

#[test]
fn relaxes_to_dual_equilibrium() {
    let mesh = Mesh::uniform(
        0.0,
        1.0,
        101,
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
    let k = DualLagrangian::new(&model, &op, 5.0, 0.0, &pe).unwrap();
    let sol = k
        .minimize_k(&k.initial_point().unwrap(), &DualOptions::default())
        .unwrap();
    let eq = k.recover_state(&sol.point).unwrap();
    let reference = PrimalState::new(eq.c.clone(), eq.u.clone()).unwrap();

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
    let start = DirectMethod::new(&model, &op, 5.0, 0.0, &pe)
        .unwrap()
        .feasible_point(1.0)
        .unwrap()
        .state;
    let opts = EvolveOptions {
        t_end: 200.0,
        tol_distance: 1e-7,
        ..EvolveOptions::default()
    };
    let tr = ev.evolve(&start, &opts, Some(&reference)).unwrap();
    let e0 = tr.energy[0];
    let drift = tr
        .energy
        .iter()
        .map(|e| (e - e0).abs() / e0)
        .fold(0.0, f64::max);
    let qdrift = tr.charge.iter().map(|q| q.abs()).fold(0.0, f64::max);
    assert!(*tr.distance.last().unwrap() <= 1e-4);
    assert!(drift <= 1e-8 && qdrift <= 1e-10);
    assert!(tr.max_entropy_decrease <= 1e-10);

    let rates = ev.rates(&reference).unwrap();
    let h = mesh.h_max();
    assert!(rates.max_norm() <= 10.0 * (h * h + 1e-8));
    let still = ev.step(&reference, 1.0).unwrap().state;
    let (d, _) = eerds_core::direct::state_distance(&still, &reference.c, &reference.u).unwrap();
    assert!(d < 1e-10);
}
