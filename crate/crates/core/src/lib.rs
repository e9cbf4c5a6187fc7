//! Transfer reinforcement learning from a deterministic abstract simulator to a
//! rich-observation block MDP.
//!
//! The library provides:
//!
//! * tabular episodic MDPs with trembling-hand perturbation algebra ([`mdp`]),
//! * robust dynamic programming over the perturbation set ([`robust`]),
//! * the block-MDP observation layer with oracle-access episodes ([`block`]),
//! * inverse dynamics learners, from a Bayes-optimal oracle to a from-scratch
//!   feedforward classifier ([`invdyn`], [`nn`]),
//! * the simulator-replay decoding algorithm and its stochastic-initial-state
//!   extension ([`tasid`]),
//! * the combination-lock and noisy-gridworld benchmarks ([`envs`]), and
//! * an experiment harness with seed/eta/height/budget sweeps ([`harness`]).

pub mod block;
pub mod envs;
pub mod error;
pub mod harness;
pub mod invdyn;
pub mod mdp;
pub mod nn;
pub mod rng;
pub mod robust;
pub mod tasid;

pub use error::{Error, Result};
