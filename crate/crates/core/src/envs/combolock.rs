//! The combination lock: a diabolical-exploration benchmark with misleading
//! rewards and hidden per-state good actions.
//!
//! Latent states are `(layer, row)` with `layer` in `0..=H` and rows 1..3.
//! Rows 1 and 2 are good, row 3 is absorbing-bad:
//!
//! * from `(l, 1)` one hidden action leads to `(l+1, 1)`, all others to
//!   `(l+1, 2)`;
//! * from `(l, 2)` one hidden action leads to `(l+1, 2)`, another to
//!   `(l+1, 1)`, all others to `(l+1, 3)`;
//! * from `(l, 3)` every action leads to `(l+1, 3)`.
//!
//! Entering the last layer pays 9.5 into `(H, 1)`, 10 into `(H, 2)` and 0
//! into `(H, 3)`. Earlier transitions pay the misleading +1 on
//! `(l, 2) -> (l+1, 3)` and -1/H on `(l, 1) -> (l+1, 1)`, 0 otherwise.
//!
//! Observations: the `(row, layer)` one-hot pair is optionally padded with
//! Bernoulli noise, permuted, blurred with Gaussian noise, and mixed by a
//! Sylvester Hadamard matrix. The inverse transform plus a one-hot argmax is
//! an exact decoder.

use crate::block::{BlockMdp, Emission};
use crate::error::{Error, Result};
use crate::mdp::{
    apply_perturbation, sample_random_perturbation, DeterministicMdp, EpisodicMdp,
    PerturbationKernel,
};
use crate::rng::{self, Rng};
use ndarray::Array3;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinationLockSpec {
    pub horizon: usize,
    #[serde(default = "default_num_actions")]
    pub num_actions: usize,
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Main-text observation variant: pad with i.i.d. Bernoulli noise to
    /// twice the base dimension. Off by default (zero-padding variant).
    #[serde(default)]
    pub bernoulli_padding: bool,
    #[serde(default = "default_sigma")]
    pub gaussian_sigma: f64,
    /// Leave every row-2 state's outgoing transitions unperturbed in the
    /// realized target, which makes the robust policy deliberately
    /// suboptimal there.
    #[serde(default = "default_true")]
    pub exempt_row2: bool,
    /// Restrict the exemption to the single state `(H, 2)` (which has no
    /// outgoing transitions; kept for comparison runs).
    #[serde(default)]
    pub exempt_literal: bool,
}

fn default_num_actions() -> usize {
    10
}

fn default_sigma() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl CombinationLockSpec {
    pub fn new(horizon: usize, eta: f64, seed: u64) -> Self {
        CombinationLockSpec {
            horizon,
            num_actions: default_num_actions(),
            eta,
            seed,
            bernoulli_padding: false,
            gaussian_sigma: default_sigma(),
            exempt_row2: true,
            exempt_literal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("lock horizon must be >= 1".into()));
        }
        if self.num_actions < 3 {
            return Err(Error::InvalidConfig(
                "lock needs at least 3 actions for the row-2 branching".into(),
            ));
        }
        Ok(())
    }
}

/// State id of `(layer, row)` with `row` in 1..=3.
pub fn state_id(layer: usize, row: usize) -> usize {
    3 * layer + (row - 1)
}

pub fn layer_of(state: usize) -> usize {
    state / 3
}

/// Row in 1..=3.
pub fn row_of(state: usize) -> usize {
    state % 3 + 1
}

pub struct LockEnv {
    pub m0: DeterministicMdp,
    pub kernel: PerturbationKernel,
    pub target: EpisodicMdp,
    pub block: Arc<BlockMdp>,
    /// Hidden good action out of `(l, 1)` per layer.
    pub good_row1: Vec<usize>,
    /// Hidden action `(l, 2) -> (l+1, 2)` per layer.
    pub good_row2_stay: Vec<usize>,
    /// Hidden action `(l, 2) -> (l+1, 1)` per layer.
    pub good_row2_up: Vec<usize>,
}

pub fn build_combination_lock(spec: &CombinationLockSpec) -> Result<LockEnv> {
    spec.validate()?;
    let hh = spec.horizon;
    let na = spec.num_actions;
    let n = 3 * (hh + 1);

    let mut action_rng = rng::substream(spec.seed, 11);
    let good_row1: Vec<usize> = (0..hh).map(|_| action_rng.gen_range(0..na)).collect();
    let good_row2_stay: Vec<usize> = (0..hh).map(|_| action_rng.gen_range(0..na)).collect();
    let good_row2_up: Vec<usize> = good_row2_stay
        .iter()
        .map(|&stay| {
            let mut a = action_rng.gen_range(0..na - 1);
            if a >= stay {
                a += 1;
            }
            a
        })
        .collect();

    let mut next = Array3::zeros((hh, n, na));
    let mut rewards = Array3::zeros((hh, n, na));
    for h in 0..hh {
        for s in 0..n {
            let layer = layer_of(s);
            let row = row_of(s);
            for a in 0..na {
                let (next_state, reward) = if layer >= hh {
                    (s, 0.0) // last layer: self-loop, never reached in-episode
                } else {
                    let target_row = match row {
                        1 => {
                            if a == good_row1[layer] {
                                1
                            } else {
                                2
                            }
                        }
                        2 => {
                            if a == good_row2_stay[layer] {
                                2
                            } else if a == good_row2_up[layer] {
                                1
                            } else {
                                3
                            }
                        }
                        _ => 3,
                    };
                    let reward = if layer + 1 == hh {
                        match target_row {
                            1 => 9.5,
                            2 => 10.0,
                            _ => 0.0,
                        }
                    } else if row == 2 && target_row == 3 {
                        1.0
                    } else if row == 1 && target_row == 1 {
                        -1.0 / hh as f64
                    } else {
                        0.0
                    };
                    (state_id(layer + 1, target_row), reward)
                };
                next[(h, s, a)] = next_state as u32;
                rewards[(h, s, a)] = reward;
            }
        }
    }
    let m0 = DeterministicMdp::from_tables(
        n,
        na,
        hh,
        state_id(0, 1),
        next,
        rewards,
        (-1.0, 10.0),
    )?;

    let exempt_row2 = spec.exempt_row2;
    let exempt_literal = spec.exempt_literal;
    let last_row2 = state_id(hh, 2);
    let exempt = move |_h: usize, s: usize| -> bool {
        if exempt_literal {
            s == last_row2
        } else {
            exempt_row2 && row_of(s) == 2
        }
    };
    let kernel = sample_random_perturbation(
        m0.as_episodic(),
        spec.eta,
        &mut rng::substream(spec.seed, 12),
        Some(&exempt),
    )?;
    let target = apply_perturbation(m0.as_episodic(), &kernel)?;

    let mut perm_rng = rng::substream(spec.seed, 13);
    let emission = LockEmission::new(hh, spec.bernoulli_padding, spec.gaussian_sigma, &mut perm_rng);
    let block = Arc::new(BlockMdp::new(target.clone(), Box::new(emission)));

    Ok(LockEnv {
        m0,
        kernel,
        target,
        block,
        good_row1,
        good_row2_stay,
        good_row2_up,
    })
}

/// Sylvester Hadamard entry (+1/-1) at `(i, j)` for a power-of-two size.
#[inline]
fn hadamard_sign(i: usize, j: usize) -> f64 {
    if (i & j).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn next_power_of_two(n: usize) -> usize {
    n.next_power_of_two()
}

/// The lock observation pipeline.
///
/// Base vector (dim `H + 4`): coordinates 0..3 hold the row one-hot and the
/// remaining `H + 1` the layer one-hot. The zero-padding variant adds
/// Gaussian noise to the base coordinates, permutes them, zero-pads to the
/// Hadamard size and mixes. The Bernoulli variant first appends an
/// `(H + 4)`-dim i.i.d. Bernoulli vector, permutes the concatenation, adds
/// Gaussian noise everywhere, zero-pads and mixes.
pub struct LockEmission {
    horizon: usize,
    base_dim: usize,
    perm_dim: usize,
    had_dim: usize,
    perm: Vec<usize>,
    sigma: f64,
    bernoulli: bool,
}

impl LockEmission {
    pub fn new(horizon: usize, bernoulli: bool, sigma: f64, perm_rng: &mut Rng) -> Self {
        let base_dim = horizon + 4;
        let perm_dim = if bernoulli { 2 * base_dim } else { base_dim };
        let had_dim = next_power_of_two(perm_dim);
        let mut perm: Vec<usize> = (0..perm_dim).collect();
        // Fisher-Yates with the dedicated permutation stream.
        for i in (1..perm_dim).rev() {
            let j = perm_rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        LockEmission {
            horizon,
            base_dim,
            perm_dim,
            had_dim,
            perm,
            sigma,
            bernoulli,
        }
    }

    fn gaussian(&self, rng: &mut Rng) -> f64 {
        // Box-Muller; one draw per call keeps the stream simple.
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        self.sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

impl Emission for LockEmission {
    fn obs_dim(&self) -> usize {
        self.had_dim
    }

    fn emit(&self, state: usize, _t: usize, rng: &mut Rng) -> Vec<f64> {
        let layer = layer_of(state);
        let row = row_of(state);
        debug_assert!(layer <= self.horizon);
        let mut base = vec![0.0; self.base_dim];
        base[row - 1] = 1.0;
        base[3 + layer] = 1.0;

        let mut pre_perm = base;
        if self.bernoulli {
            pre_perm.extend((0..self.base_dim).map(|_| f64::from(rng.gen::<bool>())));
        } else {
            for v in pre_perm.iter_mut() {
                *v += self.gaussian(rng);
            }
        }
        let mut padded = vec![0.0; self.had_dim];
        for (i, &p) in self.perm.iter().enumerate() {
            padded[p] = pre_perm[i];
        }
        if self.bernoulli {
            for v in padded.iter_mut().take(self.perm_dim) {
                *v += self.gaussian(rng);
            }
        }
        (0..self.had_dim)
            .map(|i| {
                (0..self.had_dim)
                    .map(|j| hadamard_sign(i, j) * padded[j])
                    .sum()
            })
            .collect()
    }

    fn decode(&self, obs: &[f64]) -> usize {
        let unmixed: Vec<f64> = (0..self.had_dim)
            .map(|j| {
                (0..self.had_dim)
                    .map(|i| hadamard_sign(i, j) * obs[i])
                    .sum::<f64>()
                    / self.had_dim as f64
            })
            .collect();
        let mut base = vec![0.0; self.perm_dim];
        for i in 0..self.perm_dim {
            base[i] = unmixed[self.perm[i]];
        }
        let row = (0..3)
            .max_by(|&a, &b| base[a].total_cmp(&base[b]))
            .unwrap();
        let layer = (0..=self.horizon)
            .max_by(|&a, &b| base[3 + a].total_cmp(&base[3 + b]))
            .unwrap();
        state_id(layer, row + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::value_iteration;
    use crate::robust::robust_dp;

    fn spec(h: usize) -> CombinationLockSpec {
        CombinationLockSpec::new(h, 0.1, 7)
    }

    #[test]
    fn optimal_value_is_ten_ending_in_row_two() {
        let lock = build_combination_lock(&spec(5)).unwrap();
        let (policy, value) = value_iteration(lock.m0.as_episodic()).unwrap();
        assert!((value.initial - 10.0).abs() < 1e-12);
        // Good-row hops are free, so several optimal paths exist; all avoid
        // row 3 and end in (H, 2) collecting the 10.
        let mut s = lock.m0.init_state();
        let mut total = 0.0;
        for h in 0..5 {
            let a = policy.action(h, s);
            total += lock.m0.as_episodic().reward(h, s, a);
            s = lock.m0.next_state(h, s, a);
            assert_ne!(row_of(s), 3, "optimal path never enters row 3");
        }
        assert_eq!(s, state_id(5, 2));
        assert!((total - 10.0).abs() < 1e-12);
    }

    #[test]
    fn robust_policy_rides_row_one() {
        let lock = build_combination_lock(&spec(5)).unwrap();
        let solution = robust_dp(lock.m0.as_episodic(), 0.1).unwrap();
        let mut s = lock.m0.init_state();
        for h in 0..4 {
            s = lock.m0.next_state(h, s, solution.rho.action(h, s));
            assert_eq!(row_of(s), 1, "robust path stays in row 1 before the end");
        }
        // Final step: both surviving rows are good terminals.
        s = lock.m0.next_state(4, s, solution.rho.action(4, s));
        assert_eq!(layer_of(s), 5);
        assert!(row_of(s) <= 2);
        // The robust policy is strictly safer than the optimal one in the
        // worst case.
        let (optimal, _) = value_iteration(lock.m0.as_episodic()).unwrap();
        let worst_robust =
            crate::mdp::worst_case_policy_value(lock.m0.as_episodic(), 0.1, &solution.rho).unwrap();
        let worst_optimal =
            crate::mdp::worst_case_policy_value(lock.m0.as_episodic(), 0.1, &optimal).unwrap();
        assert!(worst_robust > worst_optimal);
    }

    #[test]
    fn lock_dynamics_cardinalities() {
        let lock = build_combination_lock(&spec(4)).unwrap();
        let na = 10;
        for layer in 0..4 {
            let from1 = state_id(layer, 1);
            let mut to_row = [0usize; 4];
            for a in 0..na {
                to_row[row_of(lock.m0.next_state(0, from1, a))] += 1;
            }
            assert_eq!(to_row[1], 1);
            assert_eq!(to_row[2], na - 1);
            let from2 = state_id(layer, 2);
            let mut to_row = [0usize; 4];
            for a in 0..na {
                to_row[row_of(lock.m0.next_state(0, from2, a))] += 1;
            }
            assert_eq!(to_row[1], 1);
            assert_eq!(to_row[2], 1);
            assert_eq!(to_row[3], na - 2);
            let from3 = state_id(layer, 3);
            for a in 0..na {
                assert_eq!(row_of(lock.m0.next_state(0, from3, a)), 3);
            }
        }
    }

    #[test]
    fn reward_table_matches_the_construction() {
        let h = 5;
        let lock = build_combination_lock(&spec(h)).unwrap();
        let m = lock.m0.as_episodic();
        for s in 0..m.num_states() {
            let layer = layer_of(s);
            if layer >= h {
                continue;
            }
            for a in 0..m.num_actions() {
                let s2 = lock.m0.next_state(0, s, a);
                let r = m.reward(0, s, a);
                let expected = if layer + 1 == h {
                    match row_of(s2) {
                        1 => 9.5,
                        2 => 10.0,
                        _ => 0.0,
                    }
                } else if row_of(s) == 2 && row_of(s2) == 3 {
                    1.0
                } else if row_of(s) == 1 && row_of(s2) == 1 {
                    -1.0 / h as f64
                } else {
                    0.0
                };
                assert_eq!(r, expected, "reward at s={s} a={a}");
            }
        }
    }

    #[test]
    fn row_two_exemption_leaves_rows_unperturbed() {
        let lock = build_combination_lock(&spec(4)).unwrap();
        let m0 = lock.m0.as_episodic();
        for h in 0..4 {
            for layer in 0..=4 {
                let s = state_id(layer, 2);
                for a in 0..m0.num_actions() {
                    assert_eq!(
                        lock.target.transition_row(h, s, a),
                        m0.transition_row(h, s, a),
                        "row-2 transitions must be identical to the simulator"
                    );
                }
            }
        }
    }

    #[test]
    fn emission_decodes_exactly() {
        for bernoulli in [false, true] {
            let mut s = spec(6);
            s.bernoulli_padding = bernoulli;
            let lock = build_combination_lock(&s).unwrap();
            let mut rng = rng::from_seed(99);
            for state in 0..lock.target.num_states() {
                for _ in 0..50 {
                    let obs = lock.block.emission().emit(state, 0, &mut rng);
                    assert_eq!(lock.block.decode(&obs), state);
                }
            }
        }
    }

    #[test]
    fn rejects_tiny_action_spaces() {
        let mut s = spec(3);
        s.num_actions = 2;
        assert!(build_combination_lock(&s).is_err());
    }
}
