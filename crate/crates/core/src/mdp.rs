//! Tabular episodic MDPs, trembling-hand perturbation algebra, exact policy
//! evaluation and value iteration.
//!
//! Step indices are 0-based internally: step `h` ranges over `0..horizon` and
//! value tables carry `horizon + 1` layers, the terminal layer being all
//! zeros. Finite-horizon texts usually write steps `1..=H`; subtract one when
//! translating.
//!
//! Transition tensors are stored as sparse rows (one row of `(state, prob)`
//! pairs per `(h, s, a)`), which keeps deterministic simulators and their
//! action-noise perturbations cheap even for large layered state spaces.
//! Rewards are dense `[h][s][a]` tensors.

use crate::error::{Error, Result};
use crate::rng::Rng;
use ndarray::{Array2, Array3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Tolerance for probability-row normalization checks.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Hard cap on vertex-adversary enumeration.
pub const ENUMERATION_LIMIT: u64 = 1 << 20;

pub type TransitionRow = Box<[(u32, f64)]>;

/// A finite episodic MDP `(S, A, s_init, H, T, R)`.
///
/// Rewards live in a declared `reward_range` (`[0, 1]` by default; benchmark
/// environments declare wider signed ranges).
#[derive(Debug, Clone)]
pub struct EpisodicMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    init_state: usize,
    /// Sparse transition rows indexed by `h * S * A + s * A + a`.
    rows: Vec<TransitionRow>,
    /// Dense rewards, shape `(horizon, num_states, num_actions)`.
    rewards: Array3<f64>,
    reward_range: (f64, f64),
}

impl EpisodicMdp {
    /// Builds and validates an MDP from sparse transition rows.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        init_state: usize,
        rows: Vec<TransitionRow>,
        rewards: Array3<f64>,
        reward_range: (f64, f64),
    ) -> Result<Self> {
        let mdp = EpisodicMdp {
            num_states,
            num_actions,
            horizon,
            init_state,
            rows,
            rewards,
            reward_range,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds an MDP from dense `[h][s][a][s']` transition probabilities.
    pub fn from_dense(
        horizon: usize,
        init_state: usize,
        transitions: &[Vec<Vec<Vec<f64>>>],
        rewards: &[Vec<Vec<f64>>],
        reward_range: (f64, f64),
    ) -> Result<Self> {
        if transitions.len() != horizon || rewards.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "expected {horizon} transition/reward layers, got {}/{}",
                transitions.len(),
                rewards.len()
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be at least 1".into()));
        }
        let num_states = transitions[0].len();
        let num_actions = transitions[0].first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(horizon * num_states * num_actions);
        let mut reward_tensor = Array3::zeros((horizon, num_states, num_actions));
        for h in 0..horizon {
            if transitions[h].len() != num_states || rewards[h].len() != num_states {
                return Err(Error::DimensionMismatch(format!(
                    "layer {h} has inconsistent state dimension"
                )));
            }
            for s in 0..num_states {
                if transitions[h][s].len() != num_actions || rewards[h][s].len() != num_actions {
                    return Err(Error::DimensionMismatch(format!(
                        "layer {h} state {s} has inconsistent action dimension"
                    )));
                }
                for a in 0..num_actions {
                    let dist = &transitions[h][s][a];
                    if dist.len() != num_states {
                        return Err(Error::DimensionMismatch(format!(
                            "transition row ({h},{s},{a}) has length {}",
                            dist.len()
                        )));
                    }
                    let row: Vec<(u32, f64)> = dist
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| **p != 0.0)
                        .map(|(s2, p)| (s2 as u32, *p))
                        .collect();
                    rows.push(row.into_boxed_slice());
                    reward_tensor[(h, s, a)] = rewards[h][s][a];
                }
            }
        }
        EpisodicMdp::new(
            num_states,
            num_actions,
            horizon,
            init_state,
            rows,
            reward_tensor,
            reward_range,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be at least 1".into()));
        }
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidMdp("state and action spaces must be nonempty".into()));
        }
        if self.init_state >= self.num_states {
            return Err(Error::InvalidMdp(format!(
                "init_state {} out of range for {} states",
                self.init_state, self.num_states
            )));
        }
        let expected = self.horizon * self.num_states * self.num_actions;
        if self.rows.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} transition rows, got {}",
                self.rows.len()
            )));
        }
        if self.rewards.dim() != (self.horizon, self.num_states, self.num_actions) {
            return Err(Error::DimensionMismatch(format!(
                "reward tensor has shape {:?}",
                self.rewards.dim()
            )));
        }
        let (lo, hi) = self.reward_range;
        if !(lo <= hi) {
            return Err(Error::InvalidMdp(format!("reward range ({lo}, {hi}) is empty")));
        }
        for (idx, row) in self.rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(s2, p) in row.iter() {
                if (s2 as usize) >= self.num_states {
                    return Err(Error::InvalidMdp(format!(
                        "transition row {idx} targets state {s2} out of range"
                    )));
                }
                if !(0.0..=1.0 + ROW_SUM_TOL).contains(&p) {
                    return Err(Error::InvalidMdp(format!(
                        "transition row {idx} has probability {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMdp(format!(
                    "transition row {idx} sums to {sum}"
                )));
            }
        }
        for &r in self.rewards.iter() {
            if !r.is_finite() || r < lo - ROW_SUM_TOL || r > hi + ROW_SUM_TOL {
                return Err(Error::InvalidMdp(format!(
                    "reward {r} outside declared range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn init_state(&self) -> usize {
        self.init_state
    }

    pub fn reward_range(&self) -> (f64, f64) {
        self.reward_range
    }

    pub fn with_init_state(&self, init_state: usize) -> Result<Self> {
        if init_state >= self.num_states {
            return Err(Error::InvalidMdp(format!(
                "init_state {init_state} out of range for {} states",
                self.num_states
            )));
        }
        let mut out = self.clone();
        out.init_state = init_state;
        Ok(out)
    }

    #[inline]
    fn row_index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[(u32, f64)] {
        &self.rows[self.row_index(h, s, a)]
    }

    pub fn transition_prob(&self, h: usize, s: usize, a: usize, s2: usize) -> f64 {
        self.transition_row(h, s, a)
            .iter()
            .find(|(t, _)| *t as usize == s2)
            .map_or(0.0, |(_, p)| *p)
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[(h, s, a)]
    }

    /// Samples a successor state from `T_h(.|s, a)`.
    pub fn sample_next(&self, h: usize, s: usize, a: usize, rng: &mut Rng) -> usize {
        let row = self.transition_row(h, s, a);
        if row.len() == 1 {
            return row[0].0 as usize;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(s2, p) in row {
            acc += p;
            if u < acc {
                return s2 as usize;
            }
        }
        row.last().map(|(s2, _)| *s2 as usize).unwrap_or(s)
    }

    /// Expected reward plus expected continuation under `v_next`.
    #[inline]
    pub fn q_value(&self, h: usize, s: usize, a: usize, v_next: &[f64]) -> f64 {
        let mut q = self.reward(h, s, a);
        for &(s2, p) in self.transition_row(h, s, a) {
            q += p * v_next[s2 as usize];
        }
        q
    }

    /// Dense `[h][s][a][s']` copy of the transition tensor.
    pub fn dense_transitions(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.horizon)
            .map(|h| {
                (0..self.num_states)
                    .map(|s| {
                        (0..self.num_actions)
                            .map(|a| {
                                let mut dist = vec![0.0; self.num_states];
                                for &(s2, p) in self.transition_row(h, s, a) {
                                    dist[s2 as usize] = p;
                                }
                                dist
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn dense_rewards(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.horizon)
            .map(|h| {
                (0..self.num_states)
                    .map(|s| (0..self.num_actions).map(|a| self.reward(h, s, a)).collect())
                    .collect()
            })
            .collect()
    }

    /// True when every transition row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.rows.iter().all(|row| row.len() == 1 && row[0].1 == 1.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        MdpFile::from_mdp(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        MdpFile::load(path)?.into_mdp()
    }
}

/// A deterministic episodic MDP: every transition row is a point mass, and a
/// `(h, s, a) -> s'` table supports O(1) replay.
#[derive(Debug, Clone)]
pub struct DeterministicMdp {
    mdp: EpisodicMdp,
    next: Array3<u32>,
}

impl DeterministicMdp {
    /// Builds from a next-state table and dense rewards.
    pub fn from_tables(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        init_state: usize,
        next: Array3<u32>,
        rewards: Array3<f64>,
        reward_range: (f64, f64),
    ) -> Result<Self> {
        if next.dim() != (horizon, num_states, num_actions) {
            return Err(Error::DimensionMismatch(format!(
                "next-state table has shape {:?}",
                next.dim()
            )));
        }
        let mut rows = Vec::with_capacity(horizon * num_states * num_actions);
        for h in 0..horizon {
            for s in 0..num_states {
                for a in 0..num_actions {
                    let s2 = next[(h, s, a)];
                    rows.push(vec![(s2, 1.0)].into_boxed_slice());
                }
            }
        }
        let mdp = EpisodicMdp::new(
            num_states,
            num_actions,
            horizon,
            init_state,
            rows,
            rewards,
            reward_range,
        )?;
        Ok(DeterministicMdp { mdp, next })
    }

    /// Wraps an existing MDP, checking that it is deterministic.
    pub fn from_episodic(mdp: EpisodicMdp) -> Result<Self> {
        if !mdp.is_deterministic() {
            return Err(Error::InvalidMdp(
                "transition probabilities are not all in {0, 1}".into(),
            ));
        }
        let mut next = Array3::zeros((mdp.horizon, mdp.num_states, mdp.num_actions));
        for h in 0..mdp.horizon {
            for s in 0..mdp.num_states {
                for a in 0..mdp.num_actions {
                    next[(h, s, a)] = mdp.transition_row(h, s, a)[0].0;
                }
            }
        }
        Ok(DeterministicMdp { mdp, next })
    }

    #[inline]
    pub fn next_state(&self, h: usize, s: usize, a: usize) -> usize {
        self.next[(h, s, a)] as usize
    }

    pub fn as_episodic(&self) -> &EpisodicMdp {
        &self.mdp
    }

    pub fn with_init_state(&self, init_state: usize) -> Result<Self> {
        Ok(DeterministicMdp {
            mdp: self.mdp.with_init_state(init_state)?,
            next: self.next.clone(),
        })
    }

    /// Replays an action sequence from the initial state.
    pub fn replay(&self, actions: &[usize]) -> usize {
        let mut s = self.mdp.init_state;
        for (h, &a) in actions.iter().enumerate() {
            s = self.next_state(h, s, a);
        }
        s
    }
}

impl std::ops::Deref for DeterministicMdp {
    type Target = EpisodicMdp;

    fn deref(&self) -> &EpisodicMdp {
        &self.mdp
    }
}

/// Action-noise kernel `xi_h(a'|s, a)` with `xi_h(a|s, a) >= 1 - eta`.
#[derive(Debug, Clone)]
pub struct PerturbationKernel {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    eta: f64,
    /// Sparse rows over `a'`, indexed by `h * S * A + s * A + a`.
    rows: Vec<TransitionRow>,
}

impl PerturbationKernel {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        eta: f64,
        rows: Vec<TransitionRow>,
    ) -> Result<Self> {
        let kernel = PerturbationKernel {
            num_states,
            num_actions,
            horizon,
            eta,
            rows,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    /// The identity kernel (every action kept with probability 1).
    pub fn identity(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let rows = (0..horizon * num_states * num_actions)
            .map(|idx| {
                let a = idx % num_actions;
                vec![(a as u32, 1.0)].into_boxed_slice()
            })
            .collect();
        PerturbationKernel {
            num_states,
            num_actions,
            horizon,
            eta: 0.0,
            rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        let expected = self.horizon * self.num_states * self.num_actions;
        if self.rows.len() != expected {
            return Err(Error::InvalidKernel(format!(
                "expected {expected} rows, got {}",
                self.rows.len()
            )));
        }
        for (idx, row) in self.rows.iter().enumerate() {
            let a = idx % self.num_actions;
            let mut sum = 0.0;
            let mut kept = 0.0;
            for &(a2, p) in row.iter() {
                if (a2 as usize) >= self.num_actions {
                    return Err(Error::InvalidKernel(format!(
                        "row {idx} references action {a2} out of range"
                    )));
                }
                if !(0.0..=1.0 + ROW_SUM_TOL).contains(&p) {
                    return Err(Error::InvalidKernel(format!("row {idx} has mass {p}")));
                }
                sum += p;
                if a2 as usize == a {
                    kept = p;
                }
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidKernel(format!("row {idx} sums to {sum}")));
            }
            if kept < 1.0 - self.eta - ROW_SUM_TOL {
                return Err(Error::InvalidKernel(format!(
                    "row {idx} keeps the intended action with mass {kept} < 1 - eta"
                )));
            }
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[(u32, f64)] {
        &self.rows[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn matches(&self, m: &EpisodicMdp) -> bool {
        self.num_states == m.num_states()
            && self.num_actions == m.num_actions()
            && self.horizon == m.horizon()
    }
}

/// Deterministic state-based policy `(h, s) -> a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractPolicy {
    actions: Vec<Vec<usize>>,
}

impl AbstractPolicy {
    pub fn new(actions: Vec<Vec<usize>>) -> Self {
        AbstractPolicy { actions }
    }

    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        AbstractPolicy {
            actions: vec![vec![action; num_states]; horizon],
        }
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h][s]
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn num_states(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn table(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn matches(&self, m: &EpisodicMdp) -> bool {
        self.horizon() == m.horizon()
            && self.actions.iter().all(|layer| {
                layer.len() == m.num_states() && layer.iter().all(|&a| a < m.num_actions())
            })
    }
}

/// Value table of a policy: `v[(h, s)]` with `horizon + 1` layers.
#[derive(Debug, Clone)]
pub struct PolicyValue {
    pub v: Array2<f64>,
    pub initial: f64,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::InvalidEta(eta));
    }
    Ok(())
}

fn check_policy(m: &EpisodicMdp, psi: &AbstractPolicy) -> Result<()> {
    if !psi.matches(m) {
        return Err(Error::DimensionMismatch(
            "policy table does not match MDP dimensions".into(),
        ));
    }
    Ok(())
}

/// Pushes an MDP through an action-noise kernel:
/// `T'_h(s'|s,a) = sum_a' T_h(s'|s,a') xi_h(a'|s,a)` and likewise for rewards.
pub fn apply_perturbation(m: &EpisodicMdp, k: &PerturbationKernel) -> Result<EpisodicMdp> {
    if !k.matches(m) {
        return Err(Error::DimensionMismatch(
            "kernel dimensions do not match MDP".into(),
        ));
    }
    k.validate()?;
    let n = m.num_states();
    let mut rows = Vec::with_capacity(m.horizon() * n * m.num_actions());
    let mut rewards = Array3::zeros((m.horizon(), n, m.num_actions()));
    let mut scratch = vec![0.0f64; n];
    let mut touched: Vec<u32> = Vec::with_capacity(m.num_actions() * 2);
    for h in 0..m.horizon() {
        for s in 0..n {
            for a in 0..m.num_actions() {
                let mut reward = 0.0;
                for &(a2, w) in k.row(h, s, a) {
                    let a2 = a2 as usize;
                    reward += w * m.reward(h, s, a2);
                    for &(s2, p) in m.transition_row(h, s, a2) {
                        if scratch[s2 as usize] == 0.0 {
                            touched.push(s2);
                        }
                        scratch[s2 as usize] += w * p;
                    }
                }
                touched.sort_unstable();
                let row: Vec<(u32, f64)> = touched
                    .iter()
                    .map(|&s2| {
                        let p = scratch[s2 as usize];
                        scratch[s2 as usize] = 0.0;
                        (s2, p)
                    })
                    .filter(|(_, p)| *p != 0.0)
                    .collect();
                touched.clear();
                rows.push(row.into_boxed_slice());
                rewards[(h, s, a)] = reward;
            }
        }
    }
    EpisodicMdp::new(
        n,
        m.num_actions(),
        m.horizon(),
        m.init_state(),
        rows,
        rewards,
        m.reward_range(),
    )
}

/// Draws a random trembling-hand kernel
/// `xi_h(a'|s,a) = eta * p(a') + (1 - eta) * 1[a' = a]`, with `p` an
/// independent normalized-uniform mass function per `(h, s, a)`.
///
/// Rows where `exempt(h, s)` holds are left as the identity.
pub fn sample_random_perturbation(
    m: &EpisodicMdp,
    eta: f64,
    rng: &mut Rng,
    exempt: Option<&dyn Fn(usize, usize) -> bool>,
) -> Result<PerturbationKernel> {
    check_eta(eta)?;
    if eta == 0.0 {
        return Ok(PerturbationKernel::identity(
            m.num_states(),
            m.num_actions(),
            m.horizon(),
        ));
    }
    let na = m.num_actions();
    let mut rows = Vec::with_capacity(m.horizon() * m.num_states() * na);
    let mut weights = vec![0.0f64; na];
    for h in 0..m.horizon() {
        for s in 0..m.num_states() {
            let is_exempt = exempt.map_or(false, |f| f(h, s));
            for a in 0..na {
                if is_exempt {
                    rows.push(vec![(a as u32, 1.0)].into_boxed_slice());
                    continue;
                }
                let mut total = 0.0;
                for w in weights.iter_mut() {
                    *w = rng.gen::<f64>();
                    total += *w;
                }
                let row: Vec<(u32, f64)> = (0..na)
                    .map(|a2| {
                        let p = if total > 0.0 {
                            weights[a2] / total
                        } else {
                            1.0 / na as f64
                        };
                        let mut mass = eta * p;
                        if a2 == a {
                            mass += 1.0 - eta;
                        }
                        (a2 as u32, mass)
                    })
                    .filter(|(_, p)| *p != 0.0)
                    .collect();
                rows.push(row.into_boxed_slice());
            }
        }
    }
    PerturbationKernel::new(m.num_states(), m.num_actions(), m.horizon(), eta, rows)
}

/// Exact backward-induction evaluation of an abstract policy.
pub fn evaluate_policy(m: &EpisodicMdp, psi: &AbstractPolicy) -> Result<PolicyValue> {
    check_policy(m, psi)?;
    let (hh, n) = (m.horizon(), m.num_states());
    let mut v = Array2::zeros((hh + 1, n));
    for h in (0..hh).rev() {
        let (mut upper, lower) = v.view_mut().split_at(ndarray::Axis(0), h + 1);
        let v_next = lower.row(0);
        let v_next = v_next.as_slice().expect("contiguous row");
        let mut v_h = upper.row_mut(h);
        for s in 0..n {
            v_h[s] = m.q_value(h, s, psi.action(h, s), v_next);
        }
    }
    let initial = v[(0, m.init_state())];
    Ok(PolicyValue { v, initial })
}

/// Standard Bellman-optimality backup. Argmax ties break to the lowest
/// action index.
pub fn value_iteration(m: &EpisodicMdp) -> Result<(AbstractPolicy, PolicyValue)> {
    let (hh, n, na) = (m.horizon(), m.num_states(), m.num_actions());
    let mut v = Array2::zeros((hh + 1, n));
    let mut actions = vec![vec![0usize; n]; hh];
    for h in (0..hh).rev() {
        let (mut upper, lower) = v.view_mut().split_at(ndarray::Axis(0), h + 1);
        let v_next = lower.row(0);
        let v_next = v_next.as_slice().expect("contiguous row");
        let mut v_h = upper.row_mut(h);
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                let q = m.q_value(h, s, a, v_next);
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v_h[s] = best;
            actions[h][s] = best_a;
        }
    }
    let policy = AbstractPolicy::new(actions);
    let initial = v[(0, m.init_state())];
    Ok((policy, PolicyValue { v, initial }))
}

/// Worst-case value of `psi` over all eta-perturbations of `m0`:
/// adversarial backward induction
/// `V_h(s) = (1-eta) Q_h(s, psi_h(s)) + eta min_a' Q_h(s, a')`
/// where `Q` is evaluated against the worst-case continuation.
pub fn worst_case_policy_value(m0: &EpisodicMdp, eta: f64, psi: &AbstractPolicy) -> Result<f64> {
    check_eta(eta)?;
    check_policy(m0, psi)?;
    let (hh, n, na) = (m0.horizon(), m0.num_states(), m0.num_actions());
    let mut v_next = vec![0.0f64; n];
    let mut v_h = vec![0.0f64; n];
    for h in (0..hh).rev() {
        for s in 0..n {
            let q_played = m0.q_value(h, s, psi.action(h, s), &v_next);
            let mut q_min = f64::INFINITY;
            for a in 0..na {
                let q = m0.q_value(h, s, a, &v_next);
                if q < q_min {
                    q_min = q;
                }
            }
            v_h[s] = (1.0 - eta) * q_played + eta * q_min;
        }
        std::mem::swap(&mut v_next, &mut v_h);
    }
    Ok(v_next[m0.init_state()])
}

/// Exhaustive minimum of `evaluate_policy(apply_perturbation(m0, xi), psi)`
/// over all vertex kernels, each routing the eta mass at `(h, s)` to a single
/// action. Independent oracle for [`worst_case_policy_value`] and for the
/// robust Bellman recursion.
pub fn enumerate_vertex_adversary_value(
    m0: &EpisodicMdp,
    eta: f64,
    psi: &AbstractPolicy,
) -> Result<f64> {
    check_eta(eta)?;
    check_policy(m0, psi)?;
    let slots = m0.horizon() * m0.num_states();
    let combinations = (m0.num_actions() as f64).powi(slots as i32);
    if !(combinations <= ENUMERATION_LIMIT as f64) {
        return Err(Error::EnumerationTooLarge {
            combinations,
            limit: ENUMERATION_LIMIT,
        });
    }
    let na = m0.num_actions();
    let mut assignment = vec![0usize; slots];
    let mut best = f64::INFINITY;
    loop {
        let kernel = vertex_kernel(m0, eta, &assignment)?;
        let perturbed = apply_perturbation(m0, &kernel)?;
        let value = evaluate_policy(&perturbed, psi)?.initial;
        if value < best {
            best = value;
        }
        // Odometer increment over the assignment vector.
        let mut i = 0;
        loop {
            if i == slots {
                return Ok(best);
            }
            assignment[i] += 1;
            if assignment[i] < na {
                break;
            }
            assignment[i] = 0;
            i += 1;
        }
    }
}

/// Kernel that keeps each intended action with mass `1 - eta` and routes the
/// remaining `eta` to `assignment[h * S + s]`.
fn vertex_kernel(
    m0: &EpisodicMdp,
    eta: f64,
    assignment: &[usize],
) -> Result<PerturbationKernel> {
    let (hh, n, na) = (m0.horizon(), m0.num_states(), m0.num_actions());
    let mut rows = Vec::with_capacity(hh * n * na);
    for h in 0..hh {
        for s in 0..n {
            let target = assignment[h * n + s];
            for a in 0..na {
                let row: Vec<(u32, f64)> = if target == a || eta == 0.0 {
                    vec![(a as u32, 1.0)]
                } else {
                    let mut pair = vec![(a as u32, 1.0 - eta), (target as u32, eta)];
                    pair.sort_unstable_by_key(|(x, _)| *x);
                    pair
                };
                rows.push(row.into_boxed_slice());
            }
        }
    }
    PerturbationKernel::new(n, na, hh, eta, rows)
}

/// Wire format for MDP files: dense nested arrays, lossless for all finite
/// doubles.
#[derive(Debug, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub init_state: usize,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "default_reward_range")]
    pub reward_range: (f64, f64),
}

fn default_reward_range() -> (f64, f64) {
    (0.0, 1.0)
}

impl MdpFile {
    pub fn from_mdp(m: &EpisodicMdp) -> Self {
        MdpFile {
            num_states: m.num_states(),
            num_actions: m.num_actions(),
            horizon: m.horizon(),
            init_state: m.init_state(),
            transitions: m.dense_transitions(),
            rewards: m.dense_rewards(),
            deterministic: m.is_deterministic(),
            reward_range: m.reward_range(),
        }
    }

    pub fn into_mdp(self) -> Result<EpisodicMdp> {
        let m = EpisodicMdp::from_dense(
            self.horizon,
            self.init_state,
            &self.transitions,
            &self.rewards,
            self.reward_range,
        )?;
        if m.num_states() != self.num_states || m.num_actions() != self.num_actions {
            return Err(Error::DimensionMismatch(format!(
                "file declares {}x{} but tensors are {}x{}",
                self.num_states,
                self.num_actions,
                m.num_states(),
                m.num_actions()
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// 2 states, 2 actions, H = 1: a0 moves 0 -> 1, a1 stays.
    fn two_state() -> EpisodicMdp {
        EpisodicMdp::from_dense(
            1,
            0,
            &[vec![
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            ]],
            &[vec![vec![1.0, 0.0], vec![0.0, 0.0]]],
            (0.0, 1.0),
        )
        .unwrap()
    }

    fn single_state(rewards: [f64; 2]) -> EpisodicMdp {
        EpisodicMdp::from_dense(
            1,
            0,
            &[vec![vec![vec![1.0], vec![1.0]]]],
            &[vec![vec![rewards[0], rewards[1]]]],
            (0.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_is_a_fixed_point() {
        let m = two_state();
        let k = PerturbationKernel::identity(2, 2, 1);
        let m2 = apply_perturbation(&m, &k).unwrap();
        assert_eq!(m.dense_transitions(), m2.dense_transitions());
        assert_eq!(m.dense_rewards(), m2.dense_rewards());
    }

    #[test]
    fn perturbation_mixes_action_rows() {
        // xi(a0|s0,a0) = 0.9, xi(a1|s0,a0) = 0.1 on a deterministic pair of rows.
        let m = EpisodicMdp::from_dense(
            1,
            0,
            &[vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![
                vec![0.0, 1.0],
                vec![0.0, 1.0],
            ]]],
            &[vec![vec![0.0, 0.0], vec![0.0, 0.0]]],
            (0.0, 1.0),
        )
        .unwrap();
        let rows = vec![
            vec![(0u32, 0.9), (1u32, 0.1)].into_boxed_slice(),
            vec![(1u32, 1.0)].into_boxed_slice(),
            vec![(0u32, 1.0)].into_boxed_slice(),
            vec![(1u32, 1.0)].into_boxed_slice(),
        ];
        let k = PerturbationKernel::new(2, 2, 1, 0.1, rows).unwrap();
        let m2 = apply_perturbation(&m, &k).unwrap();
        assert!((m2.transition_prob(0, 0, 0, 1) - 0.9).abs() < 1e-15);
        assert!((m2.transition_prob(0, 0, 0, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn random_kernel_keeps_intended_mass_and_is_reproducible() {
        let m = two_state();
        let k1 = sample_random_perturbation(&m, 0.1, &mut rng::from_seed(3), None).unwrap();
        let k2 = sample_random_perturbation(&m, 0.1, &mut rng::from_seed(3), None).unwrap();
        for h in 0..1 {
            for s in 0..2 {
                for a in 0..2 {
                    assert_eq!(k1.row(h, s, a), k2.row(h, s, a));
                    let kept = k1
                        .row(h, s, a)
                        .iter()
                        .find(|(a2, _)| *a2 as usize == a)
                        .unwrap()
                        .1;
                    assert!(kept >= 0.9 - 1e-12);
                    let sum: f64 = k1.row(h, s, a).iter().map(|(_, p)| p).sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_eta_kernel_is_identity() {
        let m = two_state();
        let k = sample_random_perturbation(&m, 0.0, &mut rng::from_seed(9), None).unwrap();
        let m2 = apply_perturbation(&m, &k).unwrap();
        assert_eq!(m.dense_transitions(), m2.dense_transitions());
    }

    #[test]
    fn eta_out_of_range_is_rejected() {
        let m = two_state();
        assert!(sample_random_perturbation(&m, 0.5, &mut rng::from_seed(0), None).is_err());
        assert!(sample_random_perturbation(&m, -0.1, &mut rng::from_seed(0), None).is_err());
    }

    #[test]
    fn evaluate_single_state() {
        let m = single_state([1.0, 0.0]);
        let psi = AbstractPolicy::constant(1, 1, 0);
        let value = evaluate_policy(&m, &psi).unwrap();
        assert_eq!(value.initial, 1.0);
        let psi1 = AbstractPolicy::constant(1, 1, 1);
        assert_eq!(evaluate_policy(&m, &psi1).unwrap().initial, 0.0);
    }

    #[test]
    fn value_iteration_single_state() {
        let m = single_state([0.2, 0.9]);
        let (policy, value) = value_iteration(&m).unwrap();
        assert_eq!(policy.action(0, 0), 1);
        assert_eq!(value.initial, 0.9);
    }

    #[test]
    fn value_iteration_follows_reward_chain() {
        // 3-state chain, H = 2; only a0 at each step leads to the reward.
        let m = EpisodicMdp::from_dense(
            2,
            0,
            &[
                vec![
                    vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]],
                    vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]],
                    vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
                ],
                vec![
                    vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
                    vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]],
                    vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
                ],
            ],
            &[
                vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]],
                vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]],
            ],
            (0.0, 1.0),
        )
        .unwrap();
        let (policy, value) = value_iteration(&m).unwrap();
        assert_eq!(value.initial, 1.0);
        assert_eq!(policy.action(0, 0), 0);
        assert_eq!(policy.action(1, 1), 0);
    }

    #[test]
    fn worst_case_single_state_closed_form() {
        let m = single_state([1.0, 0.0]);
        let psi = AbstractPolicy::constant(1, 1, 0);
        let v = worst_case_policy_value(&m, 0.2, &psi).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn worst_case_at_zero_eta_equals_evaluation() {
        let m = two_state();
        let psi = AbstractPolicy::constant(1, 2, 0);
        let exact = evaluate_policy(&m, &psi).unwrap().initial;
        let worst = worst_case_policy_value(&m, 0.0, &psi).unwrap();
        assert_eq!(exact, worst);
    }

    #[test]
    fn enumeration_matches_single_state_closed_form() {
        let m = single_state([1.0, 0.0]);
        let psi = AbstractPolicy::constant(1, 1, 0);
        let v = enumerate_vertex_adversary_value(&m, 0.2, &psi).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        let v0 = enumerate_vertex_adversary_value(&m, 0.0, &psi).unwrap();
        assert_eq!(v0, evaluate_policy(&m, &psi).unwrap().initial);
    }

    #[test]
    fn enumeration_guard_reports_bound() {
        // 4 states, 3 actions, H = 4 -> 3^16 > 2^20.
        let next = Array3::from_elem((4, 4, 3), 0u32);
        let rewards = Array3::zeros((4, 4, 3));
        let m = DeterministicMdp::from_tables(4, 3, 4, 0, next, rewards, (0.0, 1.0)).unwrap();
        let psi = AbstractPolicy::constant(4, 4, 0);
        let err = enumerate_vertex_adversary_value(&m, 0.1, &psi).unwrap_err();
        match err {
            Error::EnumerationTooLarge { combinations, .. } => {
                assert!(combinations > (1u64 << 20) as f64);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn deterministic_wrapper_checks_consistency() {
        let m = two_state();
        assert!(DeterministicMdp::from_episodic(m).is_err());
    }

    #[test]
    fn mdp_file_round_trip_is_lossless() {
        let m = two_state();
        let dir = std::env::temp_dir().join("tasid-mdp-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        let m2 = EpisodicMdp::load(&path).unwrap();
        assert_eq!(m.dense_transitions(), m2.dense_transitions());
        assert_eq!(m.dense_rewards(), m2.dense_rewards());
        assert_eq!(m.init_state(), m2.init_state());
        std::fs::remove_file(&path).ok();
    }
}
