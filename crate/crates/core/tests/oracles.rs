mod common;

use common::*;
use proptest::prelude::*;
use softcon_core::irl::{expected_feature_counts_with_horizon, log_likelihood, mesc_irl_gradient};
use softcon_core::mdp::{build_grid, GridSpec};
use softcon_core::planner::value_iteration;

#[test]
fn maxent_counts_match_enumeration() {
    let mut r = rng(7);
    for (w, h) in [(2, 2), (3, 2), (1, 4), (3, 3)] {
        for horizon in 1..=4 {
            let mdp = random_small_world(w, h, horizon, 0.1, &mut r);
            let weights = random_weights(mdp.n_features(), -1.5, 0.5, &mut r);
            let brute = enumerate_maxent(&mdp, &weights, horizon);
            let (visits, phi) = expected_feature_counts_with_horizon(&mdp, &weights, horizon).unwrap();
            for (a, b) in phi.iter().zip(&brute.features) {
                assert!((a - b).abs() < 1e-10, "{w}x{h} T={horizon}: {a} vs {b}");
            }
            for (st, d) in visits.iter(&mdp) {
                let expect = brute.visits.get(&st).copied().unwrap_or(0.0);
                assert!((d - expect).abs() < 1e-10);
            }
            assert!((visits.log_partition() - brute.z.ln()).abs() < 1e-10);
        }
    }
}

#[test]
fn log_likelihood_matches_enumerated_partition() {
    let mut r = rng(3);
    let mdp = random_small_world(3, 2, 4, 0.1, &mut r);
    let demos = demo_set(&mdp, 15, 1);
    let omega_r = random_weights(mdp.n_features(), 0.0, 1.0, &mut r);
    let omega_c: Vec<f64> = mdp.weights().iter().zip(&omega_r).map(|(n, x)| n - x).collect();
    let z = enumerate_maxent(&mdp, &omega_c, 4).z;
    let direct: f64 = demos
        .iter()
        .map(|t| {
            let first = t.steps.first().map_or(mdp.start_state(), |s| s.state);
            let mut ll = mdp.start_dist()[first].ln() - z.ln();
            for st in &t.steps {
                ll += mdp.prob(st.state, st.action, st.next).ln() + mdp.reward_with(&omega_c, st.state, st.action, st.next);
            }
            ll
        })
        .sum::<f64>()
        / demos.len() as f64;
    assert!((log_likelihood(&mdp, &demos, &omega_r, 4).unwrap() - direct).abs() < 1e-10);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(11);
    let mut spec = GridSpec::new(3, 3, (0, 0), (2, 2));
    spec.horizon = 8;
    spec.constrained_cells = vec![(1, 1)];
    let mdp = build_grid(&spec).unwrap();
    let demos = demo_set(&mdp, 30, 5);
    let nominal = build_grid(&spec.nominal()).unwrap();
    for _ in 0..3 {
        let omega_r = random_weights(nominal.n_features(), 0.1, 1.5, &mut r);
        let g = mesc_irl_gradient(&nominal, &demos, &omega_r).unwrap();
        let fd = central_difference(|x| log_likelihood(&nominal, &demos, x, spec.horizon).unwrap(), &omega_r, 1e-5);
        assert!(relative_error(&g, &fd) < 1e-5, "{}", relative_error(&g, &fd));
    }
}

#[test]
fn value_iteration_matches_expectimax() {
    let mut r = rng(5);
    for (w, h) in [(2, 2), (3, 2), (3, 3)] {
        for horizon in 1..=3 {
            let mdp = random_small_world(w, h, horizon, 0.1, &mut r);
            let q = value_iteration(&mdp, f64::MIN_POSITIVE).unwrap();
            for s in 0..mdp.n_states() {
                for &a in mdp.available(s) {
                    assert!((q.q(s, a) - expectimax_q(&mdp, s, a, horizon)).abs() < 1e-10);
                }
            }
        }
    }
}

mod properties {
    use super::*;
    use softcon_core::mdft::build_contrast;
    use softcon_core::metrics::{js_divergence, kl_divergence};
    use softcon_core::mdp::Action;
    use softcon_core::orchestrate::{wa_distribution, StateActionScores};
    use softcon_core::planner::softmax;
    use softcon_core::rng::sample_index;

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f64..50.0, 1..9), t in 0.01f64..10.0) {
            let p = softmax(&v, t);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn js_symmetric_and_bounded(p in simplex(5), q in simplex(5)) {
            let a = js_divergence(&p, &q).unwrap();
            let b = js_divergence(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=std::f64::consts::LN_2).contains(&a));
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        }

        #[test]
        fn sampled_index_has_positive_mass(p in simplex(6), u in 0.0f64..1.0) {
            let i = sample_index(&p, u);
            prop_assert!(i < 6 && p[i] > 0.0);
        }

        #[test]
        fn weighted_average_stays_on_simplex(a in simplex(4), b in simplex(4), w in 0.0f64..=1.0) {
            let sc = StateActionScores::from_probabilities(Action::ALL[..4].to_vec(), a, b).unwrap();
            let p = wa_distribution(&sc, w, 1.0 - w);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn contrast_rows_sum_to_zero(k in 2usize..12) {
            let c = build_contrast(k).unwrap();
            for i in 0..k {
                prop_assert!(c.row(i).sum().abs() < 1e-12);
            }
        }

        #[test]
        fn raising_rewards_never_lowers_values(seed in 0u64..1000, bump in 0.0f64..5.0, idx in 0usize..25) {
            let mut r = rng(seed);
            let mdp = random_small_world(3, 3, 4, 0.1, &mut r);
            let mut w = mdp.weights().to_vec();
            let i = idx % w.len();
            w[i] += bump;
            let raised = mdp.with_weights(w).unwrap();
            let q0 = value_iteration(&mdp, f64::MIN_POSITIVE).unwrap();
            let q1 = value_iteration(&raised, f64::MIN_POSITIVE).unwrap();
            for s in 0..mdp.n_states() {
                for &a in mdp.available(s) {
                    prop_assert!(q1.q(s, a) >= q0.q(s, a) - 1e-9);
                }
            }
        }
    }
}
