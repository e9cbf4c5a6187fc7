//! Random deterministic-MDP generator and its perturbed pairs, the driver
//! for property tests.

use crate::error::Result;
use crate::mdp::{
    apply_perturbation, sample_random_perturbation, DeterministicMdp, EpisodicMdp,
    PerturbationKernel,
};
use crate::rng::{self, Rng};
use ndarray::Array3;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Uniformly random next-state table, rewards in [0, 1], and a random
/// trembling-hand kernel at `eta`; the returned target satisfies
/// `apply_perturbation(m0, kernel) = target` exactly.
pub fn build_random_perturbed_pair(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    eta: f64,
    rng: &mut Rng,
) -> Result<(DeterministicMdp, EpisodicMdp, PerturbationKernel)> {
    let mut next = Array3::zeros((horizon, num_states, num_actions));
    let mut rewards = Array3::zeros((horizon, num_states, num_actions));
    for h in 0..horizon {
        for s in 0..num_states {
            for a in 0..num_actions {
                next[(h, s, a)] = rng.gen_range(0..num_states) as u32;
                rewards[(h, s, a)] = rng.gen::<f64>();
            }
        }
    }
    let m0 = DeterministicMdp::from_tables(
        num_states,
        num_actions,
        horizon,
        0,
        next,
        rewards,
        (0.0, 1.0),
    )?;
    let kernel = sample_random_perturbation(m0.as_episodic(), eta, rng, None)?;
    let target = apply_perturbation(m0.as_episodic(), &kernel)?;
    Ok((m0, target, kernel))
}

/// Random stochastic MDP (normalized-uniform transition rows).
pub fn build_random_stochastic(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rng: &mut Rng,
) -> Result<EpisodicMdp> {
    let mut transitions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut layer_t = Vec::with_capacity(num_states);
        let mut layer_r = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            let mut rows_t = Vec::with_capacity(num_actions);
            let mut rows_r = Vec::with_capacity(num_actions);
            for _ in 0..num_actions {
                let mut row: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>()).collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= total);
                rows_t.push(row);
                rows_r.push(rng.gen::<f64>());
            }
            layer_t.push(rows_t);
            layer_r.push(rows_r);
        }
        transitions.push(layer_t);
        rewards.push(layer_r);
    }
    EpisodicMdp::from_dense(horizon, 0, &transitions, &rewards, (0.0, 1.0))
}

pub(crate) fn build_from_spec(
    spec: &RandomMdpSpec,
) -> Result<(DeterministicMdp, EpisodicMdp, PerturbationKernel)> {
    build_random_perturbed_pair(
        spec.num_states,
        spec.num_actions,
        spec.horizon,
        spec.eta,
        &mut rng::substream(spec.seed, 12),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_eta_pair_is_identical() {
        let (m0, target, _) =
            build_random_perturbed_pair(4, 3, 3, 0.0, &mut rng::from_seed(1)).unwrap();
        assert_eq!(m0.as_episodic().dense_transitions(), target.dense_transitions());
        assert_eq!(m0.as_episodic().dense_rewards(), target.dense_rewards());
    }

    #[test]
    fn pair_satisfies_the_perturbation_identity() {
        let (m0, target, kernel) =
            build_random_perturbed_pair(4, 3, 3, 0.2, &mut rng::from_seed(2)).unwrap();
        let recomputed = apply_perturbation(m0.as_episodic(), &kernel).unwrap();
        assert_eq!(recomputed.dense_transitions(), target.dense_transitions());
        assert_eq!(recomputed.dense_rewards(), target.dense_rewards());
    }

    #[test]
    fn seeded_builds_are_reproducible() {
        let (a0, a1, _) =
            build_random_perturbed_pair(5, 2, 4, 0.1, &mut rng::from_seed(3)).unwrap();
        let (b0, b1, _) =
            build_random_perturbed_pair(5, 2, 4, 0.1, &mut rng::from_seed(3)).unwrap();
        assert_eq!(a0.as_episodic().dense_transitions(), b0.as_episodic().dense_transitions());
        assert_eq!(a1.dense_transitions(), b1.dense_transitions());
    }
}
