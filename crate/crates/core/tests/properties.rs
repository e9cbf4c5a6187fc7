//! Property-based invariants of the MDP algebra and the robust recursion.

use proptest::prelude::*;
use tasid_core::envs::{build_random_perturbed_pair, random::build_random_stochastic};
use tasid_core::mdp::{
    apply_perturbation, enumerate_vertex_adversary_value, evaluate_policy,
    sample_random_perturbation, worst_case_policy_value, AbstractPolicy, EpisodicMdp,
};
use tasid_core::robust::robust_dp;
use tasid_core::rng;

fn random_policy(m: &EpisodicMdp, rng: &mut tasid_core::rng::Rng) -> AbstractPolicy {
    use rand::Rng as _;
    AbstractPolicy::new(
        (0..m.horizon())
            .map(|_| {
                (0..m.num_states())
                    .map(|_| rng.gen_range(0..m.num_actions()))
                    .collect()
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every transition row of a perturbed MDP sums to one and matches an
    /// independent triple-loop recomputation of the mixing formula.
    #[test]
    fn perturbation_closure_and_triple_loop_oracle(
        seed in 0u64..1000,
        eta in 0.0f64..0.45,
    ) {
        let (m0, target, kernel) =
            build_random_perturbed_pair(4, 3, 3, eta, &mut rng::from_seed(seed)).unwrap();
        prop_assert!(target.validate().is_ok());
        let dense_t = m0.as_episodic().dense_transitions();
        let dense_r = m0.as_episodic().dense_rewards();
        for h in 0..3 {
            for s in 0..4 {
                for a in 0..3 {
                    let row_sum: f64 = (0..4).map(|s2| target.transition_prob(h, s, a, s2)).sum();
                    prop_assert!((row_sum - 1.0).abs() < 1e-12);
                    let mut reward = 0.0;
                    for (a2, w) in kernel.row(h, s, a) {
                        reward += w * dense_r[h][s][*a2 as usize];
                    }
                    prop_assert!((reward - target.reward(h, s, a)).abs() < 1e-12);
                    for s2 in 0..4 {
                        let mut p = 0.0;
                        for (a2, w) in kernel.row(h, s, a) {
                            p += w * dense_t[h][s][*a2 as usize][s2];
                        }
                        prop_assert!((p - target.transition_prob(h, s, a, s2)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    /// 0 <= V le H - h per layer for rewards in [0, 1], and the adversary
    /// sandwich: worst case <= exact evaluation, with equality at eta = 0.
    #[test]
    fn value_bounds_and_adversary_sandwich(seed in 0u64..1000, eta in 0.0f64..0.45) {
        let mut r = rng::from_seed(seed);
        let m = build_random_stochastic(4, 3, 4, &mut r).unwrap();
        let psi = random_policy(&m, &mut r);
        let value = evaluate_policy(&m, &psi).unwrap();
        for h in 0..=4usize {
            for s in 0..4 {
                let v = value.v[(h, s)];
                prop_assert!(v >= -1e-12 && v <= (4 - h) as f64 + 1e-12);
            }
        }
        let worst = worst_case_policy_value(&m, eta, &psi).unwrap();
        prop_assert!(worst <= value.initial + 1e-12);
        let at_zero = worst_case_policy_value(&m, 0.0, &psi).unwrap();
        prop_assert!(at_zero == value.initial);
    }

    /// The adversarial backward induction agrees with exhaustive vertex
    /// enumeration, in both directions, to 1e-9.
    #[test]
    fn worst_case_equals_vertex_enumeration(seed in 0u64..1000, eta in 0.0f64..0.45) {
        let mut r = rng::from_seed(seed);
        let (m0, _, _) = build_random_perturbed_pair(3, 2, 2, 0.1, &mut r).unwrap();
        let psi = random_policy(m0.as_episodic(), &mut r);
        let fast = worst_case_policy_value(m0.as_episodic(), eta, &psi).unwrap();
        let slow = enumerate_vertex_adversary_value(m0.as_episodic(), eta, &psi).unwrap();
        prop_assert!((fast - slow).abs() < 1e-9, "fast {fast} vs slow {slow}");
    }

    /// Worst-case value is nonincreasing in eta.
    #[test]
    fn worst_case_monotone_in_eta(seed in 0u64..1000) {
        let mut r = rng::from_seed(seed);
        let m = build_random_stochastic(3, 3, 3, &mut r).unwrap();
        let psi = random_policy(&m, &mut r);
        let mut prev = f64::INFINITY;
        for eta in [0.0, 0.1, 0.2, 0.3, 0.4] {
            let v = worst_case_policy_value(&m, eta, &psi).unwrap();
            prop_assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    /// Robust values are bounded by the reward range and nonincreasing in
    /// eta at the initial state.
    #[test]
    fn robust_value_bounds_and_monotonicity(seed in 0u64..1000) {
        let mut r = rng::from_seed(seed);
        let m = build_random_stochastic(4, 3, 4, &mut r).unwrap();
        let mut prev = f64::INFINITY;
        for eta in [0.0, 0.15, 0.3, 0.45] {
            let solution = robust_dp(&m, eta).unwrap();
            for h in 0..=4usize {
                for s in 0..4 {
                    let v = solution.v_tilde[(h, s)];
                    prop_assert!(v >= -1e-12 && v <= (4 - h) as f64 + 1e-12);
                }
            }
            let v0 = solution.v_tilde[(0, m.init_state())];
            prop_assert!(v0 <= prev + 1e-12);
            prev = v0;
        }
    }

    /// Relabeling actions permutes the Q columns and maps the policy
    /// through the same relabeling (ties broken first by a reward jitter).
    #[test]
    fn robust_solution_is_permutation_equivariant(seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut r = rng::from_seed(seed);
        let (hh, n, na) = (3usize, 3usize, 3usize);
        // Jittered rewards make all Q values distinct so argmax is stable.
        let mut t = Vec::new();
        let mut rw = Vec::new();
        {
            use rand::Rng as _;
            for h in 0..hh {
                let mut layer_t = Vec::new();
                let mut layer_r = Vec::new();
                for s in 0..n {
                    let mut rows_t = Vec::new();
                    let mut rows_r = Vec::new();
                    for a in 0..na {
                        let mut dist = vec![0.0; n];
                        dist[r.gen_range(0..n)] = 1.0;
                        rows_t.push(dist);
                        rows_r.push(
                            r.gen::<f64>() * 0.9
                                + 1e-4 * (h * n * na + s * na + a) as f64,
                        );
                    }
                    layer_t.push(rows_t);
                    layer_r.push(rows_r);
                }
                t.push(layer_t);
                rw.push(layer_r);
            }
        }
        let m = EpisodicMdp::from_dense(hh, 0, &t, &rw, (0.0, 1.0)).unwrap();
        let mut sigma: Vec<usize> = (0..na).collect();
        sigma.shuffle(&mut r);
        // Relabeled MDP: action sigma(a) behaves like a did.
        let mut t2 = t.clone();
        let mut rw2 = rw.clone();
        for h in 0..hh {
            for s in 0..n {
                for a in 0..na {
                    t2[h][s][sigma[a]] = t[h][s][a].clone();
                    rw2[h][s][sigma[a]] = rw[h][s][a];
                }
            }
        }
        let m2 = EpisodicMdp::from_dense(hh, 0, &t2, &rw2, (0.0, 1.0)).unwrap();
        let s1 = robust_dp(&m, 0.2).unwrap();
        let s2 = robust_dp(&m2, 0.2).unwrap();
        for h in 0..hh {
            for s in 0..n {
                prop_assert!(s1.v_tilde[(h, s)] == s2.v_tilde[(h, s)]);
                for a in 0..na {
                    prop_assert!(s1.q_tilde[(h, s, a)] == s2.q_tilde[(h, s, sigma[a])]);
                }
                prop_assert_eq!(sigma[s1.rho.action(h, s)], s2.rho.action(h, s));
            }
        }
    }

    /// Sampled kernels keep at least 1 - eta mass on the intended action
    /// and mix to valid MDPs.
    #[test]
    fn sampled_kernels_are_valid(seed in 0u64..1000, eta in 0.0f64..0.45) {
        let mut r = rng::from_seed(seed);
        let m = build_random_stochastic(3, 4, 2, &mut r).unwrap();
        let kernel = sample_random_perturbation(&m, eta, &mut r, None).unwrap();
        prop_assert!(kernel.validate().is_ok());
        let target = apply_perturbation(&m, &kernel).unwrap();
        prop_assert!(target.validate().is_ok());
    }
}
