use meanfield::dynamics::evaluate_on_cloud;
use meanfield::{
    integrate_ensemble, lyap_value, optimal_plan_bruteforce, supergradient, wasserstein, EmpiricalMeasure,
    IntegrationSettings, LyapunovSpec, Method, PerturbationField, VectorFieldSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn cloud(dim: usize, n: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec(-5.0f64..5.0, dim * n).prop_map(move |v| EmpiricalMeasure::from_flat(dim, v).unwrap())
}

fn triple(dim: usize, n: usize) -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure, EmpiricalMeasure)> {
    (cloud(dim, n), cloud(dim, n), cloud(dim, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_matches_enumeration((a, b) in (1usize..4, 2usize..7).prop_flat_map(|(d, n)| (cloud(d, n), cloud(d, n))),
                                  p in prop::sample::select(vec![1.5, 2.0, 3.0])) {
        let fast = wasserstein(&a, &b, p).unwrap().cost();
        let slow = optimal_plan_bruteforce(&a, &b, p).unwrap().cost();
        prop_assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow));
    }

    #[test]
    fn metric_axioms((a, b, c) in triple(2, 6), p in prop::sample::select(vec![1.5, 2.0, 3.0])) {
        let ab = wasserstein(&a, &b, p).unwrap().cost();
        let ba = wasserstein(&b, &a, p).unwrap().cost();
        let bc = wasserstein(&b, &c, p).unwrap().cost();
        let ac = wasserstein(&a, &c, p).unwrap().cost();
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert_eq!(wasserstein(&a, &a, p).unwrap().cost(), 0.0);
    }

    #[test]
    fn half_w2_sq_superdifferential((reference, m) in (cloud(2, 12), cloud(2, 12)),
                                    b in prop::collection::vec(-2.0f64..2.0, 24)) {
        let spec = LyapunovSpec::half_w2_sq(reference);
        let gamma = supergradient(&spec, &m).unwrap();
        let field = PerturbationField::from_flat(2, b).unwrap();
        let phi = lyap_value(&spec, &m).unwrap();
        let pairing = gamma.pairing(&field).unwrap();
        let norm_sq = field.lp_norm(2.0).powi(2);
        for tau in [1.0, 0.1, 0.01] {
            let moved = lyap_value(&spec, &m.perturb(&field, tau).unwrap()).unwrap();
            prop_assert!(moved - phi <= tau * pairing + tau * tau * norm_sq + 1e-9);
        }
    }

    #[test]
    fn linear_mean_follows_mean_ode(m0 in cloud(2, 16), a in prop::collection::vec(-1.0f64..1.0, 4),
                                    b in prop::collection::vec(-1.0f64..1.0, 4)) {
        let a = DMatrix::from_row_slice(2, 2, &a);
        let b = DMatrix::from_row_slice(2, 2, &b);
        let spec = VectorFieldSpec::linear(a.clone(), b.clone()).unwrap();
        let settings = IntegrationSettings::new(0.5, 0.01, Method::Rk4);
        let traj = integrate_ensemble(&spec, &m0, &settings).unwrap();
        let mean_spec = VectorFieldSpec::linear(a + b, DMatrix::zeros(2, 2)).unwrap();
        let mean0 = EmpiricalMeasure::from_flat(2, m0.mean()).unwrap();
        let mean_traj = integrate_ensemble(&mean_spec, &mean0, &settings).unwrap();
        let got = traj.terminal().mean();
        let want = mean_traj.terminal().as_flat();
        for (g, w) in got.iter().zip(want) {
            prop_assert!((g - w).abs() <= 1e-10 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn field_is_affine_in_the_cloud(m in cloud(3, 5)) {
        let a = DMatrix::from_diagonal_element(3, 3, -1.0);
        let b = DMatrix::from_diagonal_element(3, 3, 0.5);
        let spec = VectorFieldSpec::linear(a, b).unwrap();
        let v = evaluate_on_cloud(&spec, &m).unwrap();
        let mean = m.mean();
        for (x, out) in m.points().zip(v.chunks_exact(3)) {
            for k in 0..3 {
                prop_assert!((out[k] - (-x[k] + 0.5 * mean[k])).abs() <= 1e-12);
            }
        }
    }
}
