//! Rich-observation layer: emission functions, the episodic oracle-access
//! protocol, and practicable-policy execution.
//!
//! Learners see an environment only through [`EnvOracle`]: reset, step, and
//! an episode counter. The perfect decoder and latent traces live on the
//! concrete [`Env`] and are reserved for tests, baselines and diagnostics.

use crate::error::{Error, Result};
use crate::mdp::{AbstractPolicy, EpisodicMdp};
use crate::rng::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// Emission function with the block property: latent states emit from
/// disjoint observation supports, so an exact decoder exists.
pub trait Emission: Send + Sync {
    fn obs_dim(&self) -> usize;

    /// Emits an observation of `state`; `t` is the number of steps taken so
    /// far in the episode (0 for the initial observation). Emissions that do
    /// not encode time ignore `t`.
    fn emit(&self, state: usize, t: usize, rng: &mut Rng) -> Vec<f64>;

    /// Recovers the emitting state; total on every observation this emission
    /// can produce.
    fn decode(&self, obs: &[f64]) -> usize;
}

/// `x = one_hot(s)`: the smallest emission satisfying the block property.
pub struct OneHotEmission {
    pub num_states: usize,
}

impl Emission for OneHotEmission {
    fn obs_dim(&self) -> usize {
        self.num_states
    }

    fn emit(&self, state: usize, _t: usize, _rng: &mut Rng) -> Vec<f64> {
        let mut x = vec![0.0; self.num_states];
        x[state] = 1.0;
        x
    }

    fn decode(&self, obs: &[f64]) -> usize {
        obs.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Initial latent state: fixed, or drawn from a distribution over a small
/// set of starts (the stochastic-initial-state extension).
#[derive(Debug, Clone)]
pub enum InitialState {
    Fixed(usize),
    Stochastic { states: Vec<usize>, weights: Vec<f64> },
}

impl InitialState {
    fn sample(&self, rng: &mut Rng) -> usize {
        match self {
            InitialState::Fixed(s) => *s,
            InitialState::Stochastic { states, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u: f64 = rng.gen::<f64>() * total;
                for (s, w) in states.iter().zip(weights) {
                    if u < *w {
                        return *s;
                    }
                    u -= w;
                }
                *states.last().expect("nonempty initial set")
            }
        }
    }

    pub fn support(&self) -> Vec<usize> {
        match self {
            InitialState::Fixed(s) => vec![*s],
            InitialState::Stochastic { states, .. } => states.clone(),
        }
    }
}

/// Latent MDP plus emission function; the perfect decoder is reachable via
/// [`BlockMdp::decode`] but is not part of the oracle-access surface.
pub struct BlockMdp {
    latent: EpisodicMdp,
    emission: Box<dyn Emission>,
    init: InitialState,
}

impl BlockMdp {
    pub fn new(latent: EpisodicMdp, emission: Box<dyn Emission>) -> Self {
        let init = InitialState::Fixed(latent.init_state());
        BlockMdp {
            latent,
            emission,
            init,
        }
    }

    pub fn with_initial_distribution(
        latent: EpisodicMdp,
        emission: Box<dyn Emission>,
        states: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if states.is_empty() || states.len() != weights.len() {
            return Err(Error::InvalidConfig(
                "initial distribution needs matching nonempty states/weights".into(),
            ));
        }
        if weights.iter().any(|w| *w <= 0.0) {
            return Err(Error::InvalidConfig(
                "initial weights must be positive".into(),
            ));
        }
        Ok(BlockMdp {
            latent,
            emission,
            init: InitialState::Stochastic { states, weights },
        })
    }

    pub fn latent(&self) -> &EpisodicMdp {
        &self.latent
    }

    pub fn emission(&self) -> &dyn Emission {
        self.emission.as_ref()
    }

    pub fn initial(&self) -> &InitialState {
        &self.init
    }

    /// The perfect decoder.
    pub fn decode(&self, obs: &[f64]) -> usize {
        self.emission.decode(obs)
    }
}

pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Oracle access to a target environment: exactly reset, step and episode
/// accounting. Every reset counts one episode toward sample complexity.
pub trait EnvOracle {
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> StepResult;
    fn episode_count(&self) -> u64;
    fn horizon(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
}

/// A live environment instance: owns its RNG and episode state. Single
/// threaded by construction; fork independent instances to parallelize.
pub struct Env {
    block: Arc<BlockMdp>,
    rng: Rng,
    episodes: u64,
    state: usize,
    steps_taken: usize,
    in_episode: bool,
    trace_enabled: bool,
    trace: Vec<usize>,
}

impl Env {
    pub fn new(block: Arc<BlockMdp>, rng: Rng) -> Self {
        Env {
            block,
            rng,
            episodes: 0,
            state: 0,
            steps_taken: 0,
            in_episode: false,
            trace_enabled: false,
            trace: Vec::new(),
        }
    }

    /// A fresh instance over the same block MDP with its own RNG and a zero
    /// episode counter.
    pub fn fork(&self, rng: Rng) -> Env {
        Env::new(self.block.clone(), rng)
    }

    pub fn block(&self) -> &BlockMdp {
        &self.block
    }

    pub fn enable_trace(&mut self, on: bool) {
        self.trace_enabled = on;
    }

    /// Latent states visited in the current episode (trace-debug only).
    pub fn trace(&self) -> &[usize] {
        &self.trace
    }

    /// Perfect decoder handle (trace capability; not part of oracle access).
    pub fn decoder(&self) -> Arc<dyn Fn(&[f64]) -> usize + Send + Sync> {
        let block = self.block.clone();
        Arc::new(move |obs: &[f64]| block.decode(obs))
    }
}

impl EnvOracle for Env {
    fn reset(&mut self) -> Vec<f64> {
        self.episodes += 1;
        self.state = self.block.init.sample(&mut self.rng);
        self.steps_taken = 0;
        self.in_episode = true;
        self.trace.clear();
        if self.trace_enabled {
            self.trace.push(self.state);
        }
        self.block.emission.emit(self.state, 0, &mut self.rng)
    }

    fn step(&mut self, action: usize) -> StepResult {
        assert!(self.in_episode, "step called outside an episode");
        let h = self.steps_taken;
        let latent = &self.block.latent;
        assert!(h < latent.horizon(), "episode already finished");
        let reward = latent.reward(h, self.state, action);
        self.state = latent.sample_next(h, self.state, action, &mut self.rng);
        self.steps_taken += 1;
        if self.trace_enabled {
            self.trace.push(self.state);
        }
        let obs = self
            .block
            .emission
            .emit(self.state, self.steps_taken, &mut self.rng);
        let done = self.steps_taken == latent.horizon();
        if done {
            self.in_episode = false;
        }
        StepResult { obs, reward, done }
    }

    fn episode_count(&self) -> u64 {
        self.episodes
    }

    fn horizon(&self) -> usize {
        self.block.latent.horizon()
    }

    fn num_actions(&self) -> usize {
        self.block.latent.num_actions()
    }

    fn obs_dim(&self) -> usize {
        self.block.emission.obs_dim()
    }
}

/// History-to-action mapping executable in the target environment.
///
/// `history` holds `x_1..x_h` and `h` is the 1-based step index. Learned
/// policies are pure functions of the history; baseline policies may draw
/// from `rng`.
pub trait PracticablePolicy {
    fn act(&self, h: usize, history: &[Vec<f64>], rng: &mut Rng) -> usize;
}

/// Markovian policy `psi` composed with a per-observation decoder.
pub struct DecoderPolicy {
    pub decoder: Arc<dyn Fn(&[f64]) -> usize + Send + Sync>,
    pub policy: AbstractPolicy,
}

impl PracticablePolicy for DecoderPolicy {
    fn act(&self, h: usize, history: &[Vec<f64>], _rng: &mut Rng) -> usize {
        let obs = history.last().expect("nonempty history");
        self.policy.action(h - 1, (self.decoder)(obs))
    }
}

/// Fixed action sequence executed blindly.
pub struct OpenLoopPolicy {
    pub actions: Vec<usize>,
}

impl PracticablePolicy for OpenLoopPolicy {
    fn act(&self, h: usize, _history: &[Vec<f64>], _rng: &mut Rng) -> usize {
        self.actions[h - 1]
    }
}

/// Uniform-random baseline.
pub struct UniformRandomPolicy {
    pub num_actions: usize,
}

impl PracticablePolicy for UniformRandomPolicy {
    fn act(&self, _h: usize, _history: &[Vec<f64>], rng: &mut Rng) -> usize {
        rng.gen_range(0..self.num_actions)
    }
}

/// One full episode: `H + 1` observations, `H` actions and rewards. Latent
/// states are populated only when the environment's trace-debug is enabled.
#[derive(Debug, Clone)]
pub struct Episode {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub latent_states: Option<Vec<usize>>,
}

impl Episode {
    pub fn ret(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Runs one episode under `policy`. Consumes exactly one episode on the
/// oracle counter.
pub fn run_episode(
    env: &mut dyn EnvOracle,
    policy: &dyn PracticablePolicy,
    rng: &mut Rng,
) -> Episode {
    let horizon = env.horizon();
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    observations.push(env.reset());
    for h in 1..=horizon {
        let a = policy.act(h, &observations, rng);
        let step = env.step(a);
        actions.push(a);
        rewards.push(step.reward);
        observations.push(step.obs);
    }
    Episode {
        observations,
        actions,
        rewards,
        latent_states: None,
    }
}

/// Runs one episode on a concrete [`Env`], attaching the latent trace.
pub fn run_episode_traced(env: &mut Env, policy: &dyn PracticablePolicy, rng: &mut Rng) -> Episode {
    let was = env.trace_enabled;
    env.enable_trace(true);
    let mut episode = run_episode(env, policy, rng);
    episode.latent_states = Some(env.trace().to_vec());
    env.enable_trace(was);
    episode
}

/// Finishes an episode whose first observation was already consumed by the
/// caller.
pub fn complete_episode(
    env: &mut dyn EnvOracle,
    first_obs: Vec<f64>,
    policy: &dyn PracticablePolicy,
    rng: &mut Rng,
) -> Episode {
    let horizon = env.horizon();
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    observations.push(first_obs);
    for h in 1..=horizon {
        let a = policy.act(h, &observations, rng);
        let step = env.step(a);
        actions.push(a);
        rewards.push(step.reward);
        observations.push(step.obs);
    }
    Episode {
        observations,
        actions,
        rewards,
        latent_states: None,
    }
}

/// Rolls in with `prefix` for `h - 1` steps, takes a uniformly random
/// action, and returns the transition triple `(x_h, a_h, x_{h+1})`. The
/// whole episode is consumed (and counted) even though only one triple is
/// kept.
pub fn run_exploration_step(
    env: &mut dyn EnvOracle,
    prefix: &dyn PracticablePolicy,
    h: usize,
    rng: &mut Rng,
) -> (Vec<f64>, usize, Vec<f64>) {
    let first = env.reset();
    explore_from(env, first, prefix, h, rng)
}

/// Same as [`run_exploration_step`], but for an episode whose first
/// observation has already been consumed by the caller.
pub fn explore_from(
    env: &mut dyn EnvOracle,
    first_obs: Vec<f64>,
    prefix: &dyn PracticablePolicy,
    h: usize,
    rng: &mut Rng,
) -> (Vec<f64>, usize, Vec<f64>) {
    assert!(h >= 1 && h <= env.horizon());
    let mut history = vec![first_obs];
    for k in 1..h {
        let a = prefix.act(k, &history, rng);
        let step = env.step(a);
        history.push(step.obs);
    }
    let a = rng.gen_range(0..env.num_actions());
    let step = env.step(a);
    let x_h = history.pop().expect("roll-in observation");
    (x_h, a, step.obs)
}

/// Monte Carlo estimate of a policy's value: mean episode return and its
/// standard error over `n_rollouts` episodes.
pub fn estimate_policy_value(
    env: &mut dyn EnvOracle,
    policy: &dyn PracticablePolicy,
    n_rollouts: usize,
    rng: &mut Rng,
) -> (f64, f64) {
    assert!(n_rollouts >= 1);
    let mut returns = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        returns.push(run_episode(env, policy, rng).ret());
    }
    mean_and_se(&returns)
}

pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One line per episode in the JSON-lines episode log.
#[derive(Debug, Serialize, Deserialize)]
pub struct EpisodeLogRow {
    pub episode_index: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub actions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latents: Option<Vec<usize>>,
}

pub fn write_episode_log(path: &Path, rows: &[EpisodeLogRow]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::DeterministicMdp;
    use crate::rng;
    use ndarray::Array3;

    /// Two-state chain: a0 advances 0 -> 1 (reward 1), everything else loops.
    fn chain_env() -> Env {
        let mut next = Array3::zeros((2, 2, 2));
        next[(0, 0, 0)] = 1;
        next[(0, 1, 0)] = 1;
        next[(0, 1, 1)] = 1;
        next[(1, 1, 0)] = 1;
        next[(1, 1, 1)] = 1;
        let mut rewards = Array3::zeros((2, 2, 2));
        rewards[(0, 0, 0)] = 1.0;
        let m = DeterministicMdp::from_tables(2, 2, 2, 0, next, rewards, (0.0, 1.0)).unwrap();
        let block = BlockMdp::new(
            m.as_episodic().clone(),
            Box::new(OneHotEmission { num_states: 2 }),
        );
        Env::new(Arc::new(block), rng::from_seed(0))
    }

    #[test]
    fn episode_shapes_and_accounting() {
        let mut env = chain_env();
        let policy = OpenLoopPolicy { actions: vec![0, 0] };
        let mut prng = rng::from_seed(1);
        let ep = run_episode(&mut env, &policy, &mut prng);
        assert_eq!(ep.observations.len(), 3);
        assert_eq!(ep.actions.len(), 2);
        assert_eq!(ep.rewards.len(), 2);
        assert_eq!(ep.ret(), 1.0);
        assert_eq!(env.episode_count(), 1);
        run_episode(&mut env, &policy, &mut prng);
        assert_eq!(env.episode_count(), 2);
    }

    #[test]
    fn traced_episode_records_latents() {
        let mut env = chain_env();
        let policy = OpenLoopPolicy { actions: vec![0, 1] };
        let mut prng = rng::from_seed(1);
        let ep = run_episode_traced(&mut env, &policy, &mut prng);
        assert_eq!(ep.latent_states, Some(vec![0, 1, 1]));
    }

    #[test]
    fn exploration_step_consumes_one_episode() {
        let mut env = chain_env();
        let policy = OpenLoopPolicy { actions: vec![0, 0] };
        let mut prng = rng::from_seed(2);
        let (x, a, x2) = run_exploration_step(&mut env, &policy, 1, &mut prng);
        assert_eq!(env.episode_count(), 1);
        assert_eq!(x.len(), 2);
        assert_eq!(x2.len(), 2);
        assert!(a < 2);
        // h = 2 rolls in one step with the prefix first.
        let (x, _, _) = run_exploration_step(&mut env, &policy, 2, &mut prng);
        assert_eq!(env.episode_count(), 2);
        assert_eq!(x, vec![0.0, 1.0]);
    }

    #[test]
    fn deterministic_policy_has_zero_se() {
        let mut env = chain_env();
        let policy = OpenLoopPolicy { actions: vec![0, 0] };
        let mut prng = rng::from_seed(3);
        let (mean, se) = estimate_policy_value(&mut env, &policy, 50, &mut prng);
        assert_eq!(mean, 1.0);
        assert_eq!(se, 0.0);
        assert_eq!(env.episode_count(), 50);
    }

    #[test]
    fn decoder_policy_uses_last_observation() {
        let mut env = chain_env();
        let decoder = env.decoder();
        let policy = DecoderPolicy {
            decoder,
            policy: AbstractPolicy::new(vec![vec![0, 1], vec![1, 0]]),
        };
        let mut prng = rng::from_seed(4);
        let ep = run_episode_traced(&mut env, &policy, &mut prng);
        assert_eq!(ep.actions, vec![0, 0]);
    }

    #[test]
    fn stochastic_initial_state_hits_support() {
        let block = {
            let m = chain_env();
            let latent = m.block().latent().clone();
            BlockMdp::with_initial_distribution(
                latent,
                Box::new(OneHotEmission { num_states: 2 }),
                vec![0, 1],
                vec![0.5, 0.5],
            )
            .unwrap()
        };
        let mut env = Env::new(Arc::new(block), rng::from_seed(5));
        let mut seen = [false; 2];
        for _ in 0..64 {
            let obs = env.reset();
            let s = env.block().decode(&obs);
            seen[s] = true;
        }
        assert!(seen[0] && seen[1]);
    }
}
