use eerds_core::direct::PrimalState;
use eerds_core::dual::{DualLagrangian, DualPoint};
use eerds_core::electrostatics::PoissonProblem;
use eerds_core::entropy::young_violation;
use eerds_core::entropy::{BoltzmannEntropy, EntropyModel};
use eerds_core::evolution::{Evolution, MobilityModel, Reaction, ReactionNetwork, Scheme};
use eerds_core::math::{cstar, cstar_prime};
use eerds_core::mesh::{Boundary, Field, Mesh, SpeciesField};
use proptest::prelude::*;

fn model() -> impl Strategy<Value = BoltzmannEntropy> {
    (
        0.2f64..3.0,
        0.2f64..3.0,
        0.2f64..3.0,
        0.5f64..2.0,
        0.1f64..0.9,
    )
        .prop_map(|(b0, b1, b2, w0, a)| {
            BoltzmannEntropy::new(b0, vec![b1, b2], w0, a, vec![-1.0, 1.0]).unwrap()
        })
}

fn robin_mesh(n: usize) -> std::sync::Arc<Mesh> {
    Mesh::uniform(
        0.0,
        1.0,
        n,
        [
            Boundary::Robin { omega: 1.0 },
            Boundary::Robin { omega: 1.0 },
        ],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn legendre_round_trip(m in model(), c1 in 1e-3f64..20.0, c2 in 1e-3f64..20.0, u in 1e-2f64..20.0) {
        let w = m.neg_gradient(&[c1, c2], u).unwrap();
        let z = m.dual_gradient(&w.y, w.v).unwrap();
        let scale = 1.0 + (c1 * c1 + c2 * c2 + u * u).sqrt();
        prop_assert!((z.c[0] - c1).abs() <= 1e-9 * scale);
        prop_assert!((z.c[1] - c2).abs() <= 1e-9 * scale);
        prop_assert!((z.u - u).abs() <= 1e-9 * scale);
    }

    #[test]
    fn fenchel_young_inequality(m in model(), c1 in 1e-2f64..10.0, c2 in 1e-2f64..10.0, u in 1e-1f64..10.0,
                                y1 in -3.0f64..3.0, y2 in -3.0f64..3.0, v in -5.0f64..-0.05) {
        let s = m.entropy(&[c1, c2], u).unwrap();
        let hs = m.dual(&[y1, y2], v).value();
        prop_assert!(hs + 1e-10 * (1.0 + hs.abs()) >= c1 * y1 + c2 * y2 + u * v + s);
    }

    #[test]
    fn entropy_is_concave_along_segments(m in model(), a in prop::array::uniform3(0.05f64..5.0), b in prop::array::uniform3(0.05f64..5.0)) {
        let s = |z: [f64; 3]| m.entropy(&z[..2], z[2]).unwrap();
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
        prop_assert!(s(mid) + 1e-12 >= 0.5 * (s(a) + s(b)));
    }

    #[test]
    fn poisson_form_is_symmetric_and_coercive(f in prop::collection::vec(-2.0f64..2.0, 17), g in prop::collection::vec(-2.0f64..2.0, 17),
                                              eps in prop::collection::vec(0.2f64..4.0, 17)) {
        let mesh = robin_mesh(17);
        let op = PoissonProblem::new(Field::new(mesh.clone(), eps).unwrap(), Field::zeros(&mesh), [0.0, 0.0]).unwrap().assemble().unwrap();
        let fg = op.bilinear(&f, &g);
        prop_assert!((fg - op.bilinear(&g, &f)).abs() <= 1e-12 * (1.0 + fg.abs()));
        let ff = op.bilinear(&f, &f);
        let norm2: f64 = f.iter().map(|x| x * x).sum();
        prop_assert!(ff >= 0.0);
        if norm2 > 1e-6 {
            prop_assert!(ff > 0.0);
        }
    }

    #[test]
    fn dual_functional_is_convex(e1 in 0.3f64..3.0, e2 in 0.3f64..3.0, k1 in -1.0f64..1.0, k2 in -1.0f64..1.0,
                                 l1 in prop::collection::vec(-1.0f64..1.0, 9), l2 in prop::collection::vec(-1.0f64..1.0, 9)) {
        let mesh = robin_mesh(9);
        let op = PoissonProblem::vacuum(&mesh).assemble().unwrap();
        let pe = op.solve_external_potential(&Field::from_fn(&mesh, |x| x - 0.5), [0.0, 0.0]).unwrap();
        let m = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let k = DualLagrangian::new(&m, &op, 5.0, 0.0, &pe).unwrap();
        let point = |e: f64, kk: f64, l: &[f64]| DualPoint::new(e, kk, Field::new(mesh.clone(), l.to_vec()).unwrap()).unwrap();
        let a = point(e1, k1, &l1);
        let b = point(e2, k2, &l2);
        let lm: Vec<f64> = l1.iter().zip(&l2).map(|(x, y)| 0.5 * (x + y)).collect();
        let mid = point(0.5 * (e1 + e2), 0.5 * (k1 + k2), &lm);
        let (ka, kb, km) = (k.k_value(&a).unwrap(), k.k_value(&b).unwrap(), k.k_value(&mid).unwrap());
        prop_assert!(km <= 0.5 * (ka + kb) + 1e-10 * (1.0 + ka.abs() + kb.abs()));
    }

    #[test]
    fn young_inequality_holds(p in 0.1f64..4.0, delta in 0.05f64..10.0, mu in -20.0f64..20.0, eta in 1e-3f64..20.0) {
        let q = 1.0 + p;
        let scale = 1.0 + mu.abs().powf(q) / eta.powf(p) + delta * eta;
        prop_assert!(young_violation(p, q, delta, mu, eta) >= -1e-12 * scale);
    }

    #[test]
    fn marcelin_de_donder_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        prop_assert!((cstar_prime(a) - cstar_prime(b)) * (a - b) >= 0.0);
        prop_assert!(cstar(a) >= 0.0);
        prop_assert!((cstar_prime(-a) + cstar_prime(a)).abs() <= 1e-12 * (1.0 + cstar_prime(a).abs()));
    }

    #[test]
    fn implicit_step_keeps_invariants(cs in prop::collection::vec((0.2f64..3.0, 0.2f64..3.0, 0.5f64..4.0), 11), dt in 1e-3f64..0.5) {
        let mesh = robin_mesh(11);
        let op = PoissonProblem::vacuum(&mesh).assemble().unwrap();
        let pe = op.solve_external_potential(&Field::from_fn(&mesh, |x| x - 0.5), [0.0, 0.0]).unwrap();
        let m = BoltzmannEntropy::unit(vec![-1.0, 1.0]);
        let net = ReactionNetwork::new(vec![Reaction { alpha: vec![0, 0], beta: vec![1, 1], rate: 1.0 }], &[-1.0, 1.0]).unwrap();
        let mob = MobilityModel::uniform(2, 1.0, 1.0).unwrap();
        let ev = Evolution::new(&m, &op, &pe, &net, &mob, Scheme::Implicit).unwrap();
        let nodal: Vec<Vec<f64>> = cs.iter().map(|t| vec![t.0, t.1]).collect();
        let s0 = PrimalState::new(
            SpeciesField::from_nodal(&mesh, &nodal, &[-1.0, 1.0]).unwrap(),
            Field::new(mesh.clone(), cs.iter().map(|t| t.2).collect()).unwrap(),
        ).unwrap();
        prop_assert!(ev.rates(&s0).unwrap().entropy_production >= -1e-12);
        let out = ev.step(&s0, dt).unwrap();
        let s1 = out.state;
        let (e0, e1) = (op.total_energy(&s0.c, &s0.u, &pe).unwrap(), op.total_energy(&s1.c, &s1.u, &pe).unwrap());
        prop_assert!((e1 - e0).abs() <= 1e-10 * e0.abs().max(1.0));
        prop_assert!((op.total_charge(&s1.c) - op.total_charge(&s0.c)).abs() <= 1e-11);
        prop_assert!(ev.entropy(&s1).unwrap() >= ev.entropy(&s0).unwrap() - 1e-10);
    }
}
