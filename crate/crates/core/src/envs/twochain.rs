//! Two disjoint combination-lock-style chains behind a stochastic initial
//! state: the controlled environment for the multiple-initial-state path.
//!
//! Each chain is an independent lock (its own hidden good actions); the
//! episode starts in either chain's initial state with equal probability.
//! Observations are one-hot over the joint state space, so a perfect
//! clustering of initial observations is the chain index of the decoded
//! state.

use crate::block::BlockMdp;
use crate::envs::combolock::{build_combination_lock, CombinationLockSpec};
use crate::error::Result;
use crate::mdp::{
    apply_perturbation, sample_random_perturbation, DeterministicMdp, EpisodicMdp,
    PerturbationKernel,
};
use crate::rng;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoChainSpec {
    pub horizon: usize,
    pub num_actions: usize,
    pub eta: f64,
    pub seed: u64,
}

pub struct TwoChainEnv {
    pub m0: DeterministicMdp,
    pub kernel: PerturbationKernel,
    pub target: EpisodicMdp,
    pub block: Arc<BlockMdp>,
    /// Initial state of each chain, in chain order.
    pub initial_states: Vec<usize>,
    /// States per chain (chain of state `s` is `s / states_per_chain`).
    pub states_per_chain: usize,
}

impl TwoChainEnv {
    pub fn chain_of(&self, state: usize) -> usize {
        state / self.states_per_chain
    }
}

pub fn build_two_chain(spec: &TwoChainSpec) -> Result<TwoChainEnv> {
    // Two locks with independently drawn good actions.
    let lock_a = build_combination_lock(&CombinationLockSpec {
        eta: 0.0,
        ..CombinationLockSpec::new(spec.horizon, 0.0, spec.seed.wrapping_mul(2).wrapping_add(1))
    })?;
    let lock_b = build_combination_lock(&CombinationLockSpec {
        eta: 0.0,
        ..CombinationLockSpec::new(spec.horizon, 0.0, spec.seed.wrapping_mul(2).wrapping_add(2))
    })?;
    let per_chain = lock_a.m0.num_states();
    let n = 2 * per_chain;
    let na = spec.num_actions.max(3);
    let hh = spec.horizon;

    let mut next = Array3::zeros((hh, n, na));
    let mut rewards = Array3::zeros((hh, n, na));
    for (chain, lock) in [(0usize, &lock_a), (1usize, &lock_b)] {
        let offset = chain * per_chain;
        for h in 0..hh {
            for s in 0..per_chain {
                for a in 0..na {
                    let a_lock = a.min(lock.m0.num_actions() - 1);
                    next[(h, offset + s, a)] = (offset + lock.m0.next_state(h, s, a_lock)) as u32;
                    rewards[(h, offset + s, a)] = lock.m0.as_episodic().reward(h, s, a_lock);
                }
            }
        }
    }
    let init_a = lock_a.m0.init_state();
    let init_b = per_chain + lock_b.m0.init_state();
    let m0 = DeterministicMdp::from_tables(n, na, hh, init_a, next, rewards, (-1.0, 10.0))?;

    let kernel = sample_random_perturbation(
        m0.as_episodic(),
        spec.eta,
        &mut rng::substream(spec.seed, 12),
        None,
    )?;
    let target = apply_perturbation(m0.as_episodic(), &kernel)?;
    let block = BlockMdp::with_initial_distribution(
        target.clone(),
        Box::new(crate::block::OneHotEmission { num_states: n }),
        vec![init_a, init_b],
        vec![0.5, 0.5],
    )?;
    Ok(TwoChainEnv {
        m0,
        kernel,
        target,
        block: Arc::new(block),
        initial_states: vec![init_a, init_b],
        states_per_chain: per_chain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::EnvOracle;

    #[test]
    fn chains_are_disjoint_and_starts_are_sampled() {
        let env = build_two_chain(&TwoChainSpec {
            horizon: 3,
            num_actions: 4,
            eta: 0.1,
            seed: 5,
        })
        .unwrap();
        // No transition crosses chains.
        for h in 0..3 {
            for s in 0..env.m0.num_states() {
                for a in 0..4 {
                    assert_eq!(
                        env.chain_of(env.m0.next_state(h, s, a)),
                        env.chain_of(s)
                    );
                }
            }
        }
        let mut inst = crate::block::Env::new(env.block.clone(), rng::from_seed(0));
        let mut seen = [false; 2];
        for _ in 0..32 {
            let obs = inst.reset();
            seen[env.chain_of(env.block.decode(&obs))] = true;
        }
        assert!(seen[0] && seen[1]);
    }
}
