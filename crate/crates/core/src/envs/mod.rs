//! Benchmark environments: the combination lock, the noisy gridworld, a
//! random-MDP generator for property tests, and a two-chain environment for
//! the stochastic-initial-state path.
//!
//! Every builder is pure given its seed: the perturbation kernel, hidden
//! action tables and emission parameters are drawn from fixed substreams.

pub mod combolock;
pub mod gridworld;
pub mod random;
pub mod twochain;

pub use combolock::{build_combination_lock, CombinationLockSpec, LockEnv};
pub use gridworld::{build_gridworld, GridworldSpec, GridEnv};
pub use random::{build_random_perturbed_pair, RandomMdpSpec};
pub use twochain::{build_two_chain, TwoChainEnv, TwoChainSpec};

use crate::block::{BlockMdp, Env};
use crate::error::Result;
use crate::mdp::{DeterministicMdp, EpisodicMdp, PerturbationKernel};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Environment configuration, the JSON interface of `gen-env`, `run-tasid`
/// and the experiment harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Combolock(CombinationLockSpec),
    Gridworld(GridworldSpec),
    Random(RandomMdpSpec),
}

impl EnvConfig {
    pub fn seed(&self) -> u64 {
        match self {
            EnvConfig::Combolock(s) => s.seed,
            EnvConfig::Gridworld(s) => s.seed,
            EnvConfig::Random(s) => s.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> EnvConfig {
        let mut out = self.clone();
        match &mut out {
            EnvConfig::Combolock(s) => s.seed = seed,
            EnvConfig::Gridworld(s) => s.seed = seed,
            EnvConfig::Random(s) => s.seed = seed,
        }
        out
    }

    pub fn eta(&self) -> f64 {
        match self {
            EnvConfig::Combolock(s) => s.eta,
            EnvConfig::Gridworld(s) => s.eta,
            EnvConfig::Random(s) => s.eta,
        }
    }

    pub fn with_eta(&self, eta: f64) -> EnvConfig {
        let mut out = self.clone();
        match &mut out {
            EnvConfig::Combolock(s) => s.eta = eta,
            EnvConfig::Gridworld(s) => s.eta = eta,
            EnvConfig::Random(s) => s.eta = eta,
        }
        out
    }

    /// Builds the abstract simulator, realized target, and block MDP.
    pub fn build(&self) -> Result<BuiltEnv> {
        match self {
            EnvConfig::Combolock(spec) => {
                let lock = build_combination_lock(spec)?;
                Ok(BuiltEnv {
                    name: format!("combolock-h{}", spec.horizon),
                    m0: lock.m0,
                    kernel: lock.kernel,
                    target: lock.target,
                    block: lock.block,
                    initial_states: vec![],
                })
            }
            EnvConfig::Gridworld(spec) => {
                let grid = build_gridworld(spec)?;
                Ok(BuiltEnv {
                    name: format!("gridworld-{}x{}", grid.width, grid.height),
                    m0: grid.m0,
                    kernel: grid.kernel,
                    target: grid.target,
                    block: grid.block,
                    initial_states: vec![],
                })
            }
            EnvConfig::Random(spec) => {
                let (m0, target, kernel) = random::build_from_spec(spec)?;
                let block = BlockMdp::new(
                    target.clone(),
                    Box::new(crate::block::OneHotEmission {
                        num_states: target.num_states(),
                    }),
                );
                Ok(BuiltEnv {
                    name: format!("random-s{}a{}h{}", spec.num_states, spec.num_actions, spec.horizon),
                    m0,
                    kernel,
                    target,
                    block: Arc::new(block),
                    initial_states: vec![],
                })
            }
        }
    }
}

/// A built environment: simulator, realized perturbation, and live-instance
/// factory.
pub struct BuiltEnv {
    pub name: String,
    pub m0: DeterministicMdp,
    pub kernel: PerturbationKernel,
    /// The realized perturbed latent MDP.
    pub target: EpisodicMdp,
    pub block: Arc<BlockMdp>,
    /// Initial-state candidates for multi-start environments (empty for
    /// deterministic-start environments).
    pub initial_states: Vec<usize>,
}

impl BuiltEnv {
    pub fn instance(&self, rng: Rng) -> Env {
        Env::new(self.block.clone(), rng)
    }
}
