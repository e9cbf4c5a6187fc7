//! Robust dynamic programming over the trembling-hand perturbation set.
//!
//! The backup alternates a plain Bellman step with the closed-form inner
//! minimization of the action-noise adversary:
//!
//! ```text
//! Q_h(s,a) = R_h(s,a) + sum_s' T_h(s'|s,a) V_{h+1}(s')
//! V_h(s)   = (1 - eta) max_a Q_h(s,a) + eta min_a Q_h(s,a)
//! ```
//!
//! The greedy policy on `Q` is the maximizer of the worst-case value because
//! the `eta * min` term does not depend on the chosen action. At `eta = 0`
//! the recursion collapses to standard value iteration, bit for bit.

use crate::error::{Error, Result};
use crate::mdp::{AbstractPolicy, EpisodicMdp};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Output of [`robust_dp`]: robust value tables and the greedy policy.
#[derive(Debug, Clone)]
pub struct RobustSolution {
    /// `(horizon + 1, num_states)`; terminal layer all zeros.
    pub v_tilde: Array2<f64>,
    /// `(horizon, num_states, num_actions)`.
    pub q_tilde: Array3<f64>,
    pub rho: AbstractPolicy,
    pub eta: f64,
}

impl RobustSolution {
    /// Worst-case value achievable from the initial state.
    pub fn initial_value(&self, m: &EpisodicMdp) -> f64 {
        self.v_tilde[(0, m.init_state())]
    }
}

/// Backward induction with the trembling-hand adversary.
///
/// Accepts stochastic inputs as well; the backup formula needs no
/// determinism even though the transfer guarantees target deterministic
/// simulators. Max/min ties break to the lowest action index.
pub fn robust_dp(m0: &EpisodicMdp, eta: f64) -> Result<RobustSolution> {
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::InvalidEta(eta));
    }
    let (hh, n, na) = (m0.horizon(), m0.num_states(), m0.num_actions());
    let mut v_tilde = Array2::zeros((hh + 1, n));
    let mut q_tilde = Array3::zeros((hh, n, na));
    let mut actions = vec![vec![0usize; n]; hh];
    for h in (0..hh).rev() {
        let (mut upper, lower) = v_tilde.view_mut().split_at(ndarray::Axis(0), h + 1);
        let v_next = lower.row(0);
        let v_next = v_next.as_slice().expect("contiguous layer");
        for s in 0..n {
            let mut q_max = f64::NEG_INFINITY;
            let mut q_min = f64::INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                let q = m0.q_value(h, s, a, v_next);
                q_tilde[(h, s, a)] = q;
                if q > q_max {
                    q_max = q;
                    best_a = a;
                }
                if q < q_min {
                    q_min = q;
                }
            }
            upper[(h, s)] = (1.0 - eta) * q_max + eta * q_min;
            actions[h][s] = best_a;
        }
    }
    Ok(RobustSolution {
        v_tilde,
        q_tilde,
        rho: AbstractPolicy::new(actions),
        eta,
    })
}

/// One robust solve per eta; output sorted by eta (duplicates kept).
pub fn robust_value_curve(m0: &EpisodicMdp, etas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut curve = Vec::with_capacity(etas.len());
    for &eta in etas {
        let solution = robust_dp(m0, eta)?;
        curve.push((eta, solution.initial_value(m0)));
    }
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(curve)
}

/// Wire format for `solve-robust` output.
#[derive(Debug, Serialize, Deserialize)]
pub struct RobustSolutionFile {
    pub eta: f64,
    pub initial_value: f64,
    pub policy: Vec<Vec<usize>>,
    pub v_tilde: Vec<Vec<f64>>,
    pub q_tilde: Vec<Vec<Vec<f64>>>,
}

impl RobustSolutionFile {
    pub fn new(m: &EpisodicMdp, solution: &RobustSolution) -> Self {
        RobustSolutionFile {
            eta: solution.eta,
            initial_value: solution.initial_value(m),
            policy: solution.rho.table().to_vec(),
            v_tilde: solution
                .v_tilde
                .outer_iter()
                .map(|row| row.to_vec())
                .collect(),
            q_tilde: solution
                .q_tilde
                .outer_iter()
                .map(|layer| layer.outer_iter().map(|row| row.to_vec()).collect())
                .collect(),
        }
    }
}
