//! Forward, per-step construction of shadow-action decoders, simulator-replay
//! state decoders, and the composed practicable policy; plus the
//! stochastic-initial-state wrapper built on a per-cluster hypothesis test.
//!
//! The run proceeds step by step: the policy for step 1 is the robust action
//! at the known initial state; for each `h` it gathers transition triples by
//! rolling in under the policy built so far, fits the inverse dynamics model
//! `f_h`, and defines the shadow-action decoder `alpha_h = argmax f_h`, the
//! state decoder (replay of decoded shadow actions through the deterministic
//! simulator), and the next policy step as the robust action at the decoded
//! state. Datasets for step `h + 1` therefore exist only after the step-`h`
//! policy does; the trainer cannot skip steps by construction.

use crate::block::{complete_episode, explore_from, Episode, EnvOracle, PracticablePolicy};
use crate::error::{Error, Result};
use crate::invdyn::{
    argmax_action, fit_tabular, fit_warm, ClassifierConfig, InverseDynamicsModel,
    TransitionDataset,
};
use crate::mdp::{AbstractPolicy, DeterministicMdp};
use crate::robust::{robust_dp, RobustSolution};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Shadow actions explaining a one-step latent transition of the
/// deterministic simulator: `A_h(s, s') = { a : next(h, s, a) = s' }`.
pub struct ShadowActionSet<'a> {
    m0: &'a DeterministicMdp,
}

impl<'a> ShadowActionSet<'a> {
    pub fn new(m0: &'a DeterministicMdp) -> Self {
        ShadowActionSet { m0 }
    }

    #[inline]
    pub fn contains(&self, h: usize, s: usize, s2: usize, a: usize) -> bool {
        self.m0.next_state(h, s, a) == s2
    }

    pub fn actions(&self, h: usize, s: usize, s2: usize) -> Vec<usize> {
        (0..self.m0.num_actions())
            .filter(|&a| self.contains(h, s, s2, a))
            .collect()
    }
}

/// Per-step sample size `n_D = 8 H^2 |A|^3 ln(|F|/delta) / (eps (1-2eta)^2)`.
///
/// Exposed for logging alongside a finite function-class proxy; the harness
/// always allows a direct per-step override since the neural class is
/// unbounded.
pub fn theory_samples_per_step(
    horizon: usize,
    num_actions: usize,
    f_class_size: f64,
    epsilon: f64,
    delta: f64,
    eta: f64,
) -> f64 {
    let h = horizon as f64;
    let a = num_actions as f64;
    8.0 * h * h * a.powi(3) * (f_class_size / delta).ln() / (epsilon * (1.0 - 2.0 * eta).powi(2))
}

/// Learn-phase episode count of the hypothesis test,
/// `n_l = 8 H^4 |A|^3 ln(N^2 |F|/delta) / (eps (1-2eta)^2)`.
pub fn theory_n_learn(
    horizon: usize,
    num_actions: usize,
    n_initial: usize,
    f_class_size: f64,
    epsilon: f64,
    delta: f64,
    eta: f64,
) -> f64 {
    let h = horizon as f64;
    let a = num_actions as f64;
    let n = n_initial as f64;
    8.0 * h.powi(4) * a.powi(3) * ((n * n * f_class_size) / delta).ln()
        / (epsilon * (1.0 - 2.0 * eta).powi(2))
}

/// Test-phase episode count of the hypothesis test,
/// `n_t = H^2 ln(N/delta) / (2 eps^2)`.
pub fn theory_n_test(horizon: usize, n_initial: usize, epsilon: f64, delta: f64) -> f64 {
    let h = horizon as f64;
    h * h * ((n_initial as f64) / delta).ln() / (2.0 * epsilon * epsilon)
}

/// Inverse dynamics learner plugged into a run.
#[derive(Clone)]
pub enum Learner {
    /// From-scratch feedforward classifier; step `h + 1` warm-starts from
    /// step `h` when the config says so.
    Neural(ClassifierConfig),
    /// Exact tabular ERM over a discretization key.
    Tabular {
        key: Arc<dyn Fn(&[f64]) -> u64 + Send + Sync>,
        laplace: f64,
    },
    /// Injected per-step models (e.g. the Bayes-optimal oracle); receives
    /// the 0-based step index.
    Oracle(Arc<dyn Fn(usize) -> InverseDynamicsModel + Send + Sync>),
}

impl std::fmt::Debug for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Learner::Neural(_) => write!(f, "Learner::Neural"),
            Learner::Tabular { laplace, .. } => write!(f, "Learner::Tabular({laplace})"),
            Learner::Oracle(_) => write!(f, "Learner::Oracle"),
        }
    }
}

/// Episode budget: explicit per-step count, or the theory formula under a
/// finite function-class proxy.
#[derive(Debug, Clone)]
pub enum SampleBudget {
    PerStep(usize),
    Theory {
        epsilon: f64,
        delta: f64,
        f_class_size: f64,
    },
}

impl SampleBudget {
    pub fn per_step(&self, horizon: usize, num_actions: usize, eta: f64) -> usize {
        match self {
            SampleBudget::PerStep(n) => *n,
            SampleBudget::Theory {
                epsilon,
                delta,
                f_class_size,
            } => theory_samples_per_step(horizon, num_actions, *f_class_size, *epsilon, *delta, eta)
                .ceil()
                .max(1.0) as usize,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub samples: usize,
    pub final_nll: f64,
    pub epochs: usize,
}

/// The composed practicable policy: constant robust action at step 1,
/// shadow-action decoding plus simulator replay afterwards.
#[derive(Clone)]
pub struct TasidPolicy {
    m0: Arc<DeterministicMdp>,
    models: Arc<Vec<InverseDynamicsModel>>,
    rho: AbstractPolicy,
}

impl TasidPolicy {
    pub fn models(&self) -> &[InverseDynamicsModel] {
        &self.models
    }

    pub fn rho(&self) -> &AbstractPolicy {
        &self.rho
    }

    pub fn simulator(&self) -> &DeterministicMdp {
        &self.m0
    }

    /// Latent state decoded from the history (replay of decoded shadow
    /// actions). When fewer models than `history.len() - 1` exist (a run
    /// still in progress), the remaining steps are completed open-loop with
    /// the robust policy's own actions.
    fn decode(&self, history: &[Vec<f64>]) -> usize {
        let steps = history.len() - 1;
        let available = self.models.len().min(steps);
        let mut s = self.m0.init_state();
        for k in 0..available {
            let a = argmax_action(&self.models[k], &history[k], &history[k + 1])
                .expect("decoder failed on an observed transition");
            s = self.m0.next_state(k, s, a);
        }
        for k in available..steps {
            s = self.m0.next_state(k, s, self.rho.action(k, s));
        }
        s
    }
}

impl PracticablePolicy for TasidPolicy {
    fn act(&self, h: usize, history: &[Vec<f64>], _rng: &mut Rng) -> usize {
        if h == 1 {
            return self.rho.action(0, self.m0.init_state());
        }
        self.rho.action(h - 1, self.decode(&history[..h]))
    }
}

/// Replay of decoded shadow actions through the simulator's next-state
/// table: `history` holds `x_1..x_{h+1}` and the result is the simulator
/// state reached after `h` replayed actions.
pub fn decode_state(
    m0: &DeterministicMdp,
    models: &[InverseDynamicsModel],
    history: &[Vec<f64>],
) -> Result<usize> {
    let mut s = m0.init_state();
    for k in 0..history.len().saturating_sub(1) {
        let a = argmax_action(&models[k], &history[k], &history[k + 1])?;
        s = m0.next_state(k, s, a);
    }
    Ok(s)
}

/// A completed run: robust solution, fitted decoders, composed policy, and
/// sample accounting.
pub struct TasidRun {
    pub robust: RobustSolution,
    pub policy: TasidPolicy,
    pub episodes_used: u64,
    pub n_per_step: usize,
    pub per_step: Vec<StepDiagnostics>,
}

/// Incremental trainer consuming one environment episode at a time. Used
/// directly by the multi-start wrapper, and behind [`tasid`] for the
/// deterministic-start case.
pub struct TasidTrainer {
    m0: Arc<DeterministicMdp>,
    robust: RobustSolution,
    learner: Learner,
    n_per_step: usize,
    obs_dim: usize,
    models: Arc<Vec<InverseDynamicsModel>>,
    buffer: TransitionDataset,
    step: usize,
    per_step: Vec<StepDiagnostics>,
    episodes_fed: u64,
}

impl TasidTrainer {
    pub fn new(
        m0: Arc<DeterministicMdp>,
        eta: f64,
        learner: Learner,
        n_per_step: usize,
        obs_dim: usize,
    ) -> Result<Self> {
        let robust = robust_dp(m0.as_episodic(), eta)?;
        let buffer = TransitionDataset::new(1, obs_dim, m0.num_actions());
        Ok(TasidTrainer {
            m0,
            robust,
            learner,
            n_per_step: n_per_step.max(1),
            obs_dim,
            models: Arc::new(Vec::new()),
            buffer,
            step: 1,
            per_step: Vec::new(),
            episodes_fed: 0,
        })
    }

    /// All `H - 1` decoders fitted.
    pub fn is_done(&self) -> bool {
        self.step >= self.m0.horizon()
    }

    pub fn episodes_fed(&self) -> u64 {
        self.episodes_fed
    }

    pub fn per_step(&self) -> &[StepDiagnostics] {
        &self.per_step
    }

    pub fn robust(&self) -> &RobustSolution {
        &self.robust
    }

    /// The policy composed from the decoders fitted so far.
    pub fn policy(&self) -> TasidPolicy {
        TasidPolicy {
            m0: self.m0.clone(),
            models: self.models.clone(),
            rho: self.robust.rho.clone(),
        }
    }

    /// Consumes one episode whose first observation the caller already
    /// holds. While decoders remain to be fitted this is a data-collection
    /// episode (roll-in, one uniform action, abandon); afterwards it runs
    /// the learned policy to completion.
    pub fn feed(
        &mut self,
        env: &mut dyn EnvOracle,
        first_obs: Vec<f64>,
        rng: &mut Rng,
    ) -> Result<()> {
        self.episodes_fed += 1;
        if self.is_done() {
            let policy = self.policy();
            complete_episode(env, first_obs, &policy, rng);
            return Ok(());
        }
        let prefix = self.policy();
        let (x, a, x2) = explore_from(env, first_obs, &prefix, self.step, rng);
        self.buffer.push(x, a, x2);
        if self.buffer.len() >= self.n_per_step {
            self.fit_current(rng)?;
        }
        Ok(())
    }

    fn fit_current(&mut self, rng: &mut Rng) -> Result<()> {
        let step0 = self.step - 1; // 0-based index of the decoder being fitted
        let fitted = match &self.learner {
            Learner::Neural(config) => fit_warm(&self.buffer, config, self.models.last(), rng)
                .map_err(|e| Error::LearnerFailed {
                    step: self.step,
                    source: Box::new(e),
                })?,
            Learner::Tabular { key, laplace } => fit_tabular(&self.buffer, key.clone(), *laplace),
            Learner::Oracle(factory) => factory(step0),
        };
        self.per_step.push(StepDiagnostics {
            step: self.step,
            samples: self.buffer.len(),
            final_nll: fitted.diagnostics.final_nll,
            epochs: fitted.diagnostics.epochs,
        });
        Arc::make_mut(&mut self.models).push(fitted);
        self.step += 1;
        self.buffer = TransitionDataset::new(self.step, self.obs_dim, self.m0.num_actions());
        Ok(())
    }
}

/// Full run with a deterministic initial state: fits all `H - 1` decoders
/// using `(H - 1) * n_per_step` environment episodes.
pub fn tasid(
    env: &mut dyn EnvOracle,
    m0: &DeterministicMdp,
    eta: f64,
    learner: Learner,
    budget: SampleBudget,
    rng: &mut Rng,
) -> Result<TasidRun> {
    if env.horizon() != m0.horizon() {
        return Err(Error::HorizonMismatch {
            simulator: m0.horizon(),
            environment: env.horizon(),
        });
    }
    let n = budget.per_step(m0.horizon(), m0.num_actions(), eta);
    let mut trainer = TasidTrainer::new(Arc::new(m0.clone()), eta, learner, n, env.obs_dim())?;
    let before = env.episode_count();
    while !trainer.is_done() {
        let first = env.reset();
        trainer.feed(env, first, rng)?;
    }
    let robust = trainer.robust.clone();
    let policy = trainer.policy();
    let per_step = trainer.per_step.clone();
    Ok(TasidRun {
        robust,
        policy,
        episodes_used: env.episode_count() - before,
        n_per_step: n,
        per_step,
    })
}

/// Per-step fraction of decoded shadow actions that fall in the shadow set
/// of the traced latent transition. Diagnostic; requires trace-enabled
/// episodes.
pub fn shadow_hit_rate(
    m0: &DeterministicMdp,
    models: &[InverseDynamicsModel],
    episodes: &[Episode],
) -> Result<Vec<f64>> {
    let shadow = ShadowActionSet::new(m0);
    let mut rates = Vec::with_capacity(models.len());
    for (k, model) in models.iter().enumerate() {
        let mut hits = 0usize;
        let mut total = 0usize;
        for ep in episodes {
            let latents = ep
                .latent_states
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("episodes lack latent traces".into()))?;
            if ep.observations.len() <= k + 1 {
                continue;
            }
            let a = argmax_action(model, &ep.observations[k], &ep.observations[k + 1])?;
            hits += usize::from(shadow.contains(k, latents[k], latents[k + 1], a));
            total += 1;
        }
        rates.push(if total == 0 {
            f64::NAN
        } else {
            hits as f64 / total as f64
        });
    }
    Ok(rates)
}

/// Configuration of the stochastic-initial-state wrapper.
#[derive(Debug, Clone)]
pub struct MultiStartConfig {
    pub eta: f64,
    pub learner: Learner,
    /// Learn-phase episodes per hypothesis (`n_l`).
    pub n_learn: u64,
    /// Evaluation-phase episodes per hypothesis (`n_t`).
    pub n_test: u64,
}

/// Hypothesis-testing state for one observation cluster: runs the trainer
/// for `n_learn` episodes under each candidate initial state, evaluates the
/// learned policy for `n_test` episodes, and resolves to the hypothesis with
/// the highest average return (lowest index on ties). Resolution happens as
/// the final evaluation episode completes, so exactly
/// `N * (n_learn + n_test)` episodes are consumed per cluster.
pub struct InitialStateTest {
    hypothesis: usize,
    cnt: Vec<u64>,
    value_mean: Vec<f64>,
    value_count: Vec<u64>,
    trainers: Vec<Option<TasidTrainer>>,
    resolved: Option<usize>,
    episodes_routed: u64,
    resolved_at: Option<u64>,
}

impl InitialStateTest {
    pub fn new(n_hypotheses: usize) -> Self {
        InitialStateTest {
            hypothesis: 0,
            cnt: vec![0; n_hypotheses],
            value_mean: vec![0.0; n_hypotheses],
            value_count: vec![0; n_hypotheses],
            trainers: (0..n_hypotheses).map(|_| None).collect(),
            resolved: None,
            episodes_routed: 0,
            resolved_at: None,
        }
    }

    pub fn resolved(&self) -> Option<usize> {
        self.resolved
    }

    /// Running-mean evaluation returns per hypothesis.
    pub fn values(&self) -> &[f64] {
        &self.value_mean
    }

    pub fn episodes_routed(&self) -> u64 {
        self.episodes_routed
    }

    /// Episodes this cluster had consumed when its hypothesis sweep
    /// resolved: exactly `N * (n_learn + n_test)`.
    pub fn resolved_at(&self) -> Option<u64> {
        self.resolved_at
    }

    pub fn policy(&self, hypothesis: usize) -> Option<TasidPolicy> {
        self.trainers[hypothesis].as_ref().map(TasidTrainer::policy)
    }

    /// Processes exactly one environment episode routed to this cluster.
    /// Returns the resolved hypothesis index once available (and keeps
    /// returning it, executing the resolved policy on later episodes).
    pub fn process_episode(
        &mut self,
        env: &mut dyn EnvOracle,
        first_obs: Vec<f64>,
        m0: &DeterministicMdp,
        candidates: &[usize],
        config: &MultiStartConfig,
        rng: &mut Rng,
    ) -> Result<Option<usize>> {
        self.episodes_routed += 1;
        if let Some(s) = self.resolved {
            let policy = self.policy(s).expect("resolved hypothesis has a trainer");
            complete_episode(env, first_obs, &policy, rng);
            return Ok(Some(s));
        }
        let s = self.hypothesis;
        if self.trainers[s].is_none() {
            let horizon = m0.horizon().max(2);
            let per_step = ((config.n_learn as usize) / (horizon - 1)).max(1);
            let rebased = Arc::new(m0.with_init_state(candidates[s])?);
            self.trainers[s] = Some(TasidTrainer::new(
                rebased,
                config.eta,
                config.learner.clone(),
                per_step,
                env.obs_dim(),
            )?);
        }
        let trainer = self.trainers[s].as_mut().expect("trainer initialized");
        if self.cnt[s] < config.n_learn {
            trainer.feed(env, first_obs, rng)?;
        } else {
            let policy = trainer.policy();
            let episode = complete_episode(env, first_obs, &policy, rng);
            self.value_count[s] += 1;
            let n = self.value_count[s] as f64;
            self.value_mean[s] += (episode.ret() - self.value_mean[s]) / n;
        }
        self.cnt[s] += 1;

        while self.resolved.is_none()
            && self.hypothesis < candidates.len()
            && self.cnt[self.hypothesis] >= config.n_learn + config.n_test
        {
            self.hypothesis += 1;
            if self.hypothesis == candidates.len() {
                let mut best = 0;
                for (i, v) in self.value_mean.iter().enumerate() {
                    if *v > self.value_mean[best] {
                        best = i;
                    }
                }
                self.resolved = Some(best);
                self.resolved_at = Some(self.episodes_routed);
            }
        }
        Ok(self.resolved)
    }
}

/// Outcome of the multi-start run.
pub struct MultiStartRun {
    /// Resolved hypothesis index per cluster (`None` when the budget ran
    /// out before the cluster's sweep finished).
    pub resolved: Vec<Option<usize>>,
    pub per_cluster_episodes: Vec<u64>,
    /// Episodes each cluster had consumed at resolution time.
    pub resolved_at: Vec<Option<u64>>,
    pub episodes_used: u64,
    pub policies: Vec<Option<TasidPolicy>>,
    /// Average evaluation return per hypothesis, per cluster.
    pub values: Vec<Vec<f64>>,
}

/// Runs the stochastic-initial-state loop: each episode is clustered by its
/// first observation and routed to that cluster's hypothesis test until the
/// cluster resolves; resolved clusters execute their learned policy. Stops
/// early once every cluster has resolved, and never deadlocks on clusters
/// that simply never appear.
pub fn tasid_multi_start(
    env: &mut dyn EnvOracle,
    m0: &DeterministicMdp,
    candidates: &[usize],
    clustering: Arc<dyn Fn(&[f64]) -> usize + Send + Sync>,
    config: &MultiStartConfig,
    max_episodes: u64,
    rng: &mut Rng,
) -> Result<MultiStartRun> {
    if env.horizon() != m0.horizon() {
        return Err(Error::HorizonMismatch {
            simulator: m0.horizon(),
            environment: env.horizon(),
        });
    }
    let n = candidates.len();
    let mut tests: Vec<InitialStateTest> = (0..n).map(|_| InitialStateTest::new(n)).collect();
    let before = env.episode_count();
    for _ in 0..max_episodes {
        if tests.iter().all(|t| t.resolved().is_some()) {
            break;
        }
        let first = env.reset();
        let cluster = clustering(&first);
        if cluster >= n {
            return Err(Error::ClusterOutOfRange {
                id: cluster,
                num_clusters: n,
            });
        }
        tests[cluster].process_episode(env, first, m0, candidates, config, rng)?;
    }
    let resolved: Vec<Option<usize>> = tests.iter().map(|t| t.resolved()).collect();
    let policies = tests
        .iter()
        .zip(&resolved)
        .map(|(t, r)| r.and_then(|s| t.policy(s)))
        .collect();
    Ok(MultiStartRun {
        resolved,
        per_cluster_episodes: tests.iter().map(|t| t.episodes_routed()).collect(),
        resolved_at: tests.iter().map(|t| t.resolved_at()).collect(),
        episodes_used: env.episode_count() - before,
        policies,
        values: tests.iter().map(|t| t.values().to_vec()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{BlockMdp, Env, OneHotEmission};
    use crate::invdyn::bayes_optimal;
    use crate::mdp::{apply_perturbation, evaluate_policy, sample_random_perturbation};
    use crate::rng;
    use ndarray::Array3;

    /// Deterministic chain of length H over H + 1 states: action 0
    /// advances, action 1 stays; advancing into the last state at the final
    /// step pays 1.
    fn chain(horizon: usize) -> DeterministicMdp {
        let n = horizon + 1;
        let mut next = Array3::zeros((horizon, n, 2));
        let mut rewards = Array3::zeros((horizon, n, 2));
        for h in 0..horizon {
            for s in 0..n {
                let adv = (s + 1).min(n - 1);
                next[(h, s, 0)] = adv as u32;
                next[(h, s, 1)] = s as u32;
                if h == horizon - 1 && s == horizon - 1 {
                    rewards[(h, s, 0)] = 1.0;
                }
            }
        }
        DeterministicMdp::from_tables(n, 2, horizon, 0, next, rewards, (0.0, 1.0)).unwrap()
    }

    fn one_hot_env(m: &DeterministicMdp, eta: f64, seed: u64) -> (Env, crate::mdp::EpisodicMdp) {
        let kernel =
            sample_random_perturbation(m.as_episodic(), eta, &mut rng::substream(seed, 2), None)
                .unwrap();
        let target = apply_perturbation(m.as_episodic(), &kernel).unwrap();
        let block = BlockMdp::new(
            target.clone(),
            Box::new(OneHotEmission {
                num_states: m.num_states(),
            }),
        );
        (
            Env::new(std::sync::Arc::new(block), rng::substream(seed, 1)),
            target,
        )
    }

    fn oracle_learner(target: &crate::mdp::EpisodicMdp) -> Learner {
        let latent = Arc::new(target.clone());
        let decoder: Arc<dyn Fn(&[f64]) -> usize + Send + Sync> = Arc::new(|x: &[f64]| {
            x.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap()
        });
        Learner::Oracle(Arc::new(move |h| {
            bayes_optimal(latent.clone(), decoder.clone(), h)
        }))
    }

    #[test]
    fn shadow_sets_match_next_state_table() {
        let m = chain(3);
        let shadow = ShadowActionSet::new(&m);
        assert_eq!(shadow.actions(0, 0, 1), vec![0]);
        assert_eq!(shadow.actions(0, 0, 0), vec![1]);
        assert!(shadow.actions(0, 0, 2).is_empty());
    }

    #[test]
    fn decode_state_replays_shadow_actions() {
        let m = chain(3);
        let (_, target) = one_hot_env(&m, 0.1, 5);
        let models: Vec<InverseDynamicsModel> = (0..3)
            .map(|h| match oracle_learner(&target) {
                Learner::Oracle(f) => f(h),
                _ => unreachable!(),
            })
            .collect();
        let one_hot = |s: usize| {
            let mut v = vec![0.0; m.num_states()];
            v[s] = 1.0;
            v
        };
        // Observation history tracing latent 0 -> 1 -> 1.
        let history = vec![one_hot(0), one_hot(1), one_hot(1)];
        assert_eq!(decode_state(&m, &models, &history[..1]).unwrap(), 0);
        assert_eq!(decode_state(&m, &models, &history).unwrap(), 1);
    }

    #[test]
    fn tasid_with_oracle_decoders_recovers_robust_value_at_zero_eta() {
        let m = chain(4);
        let (mut env, target) = one_hot_env(&m, 0.0, 7);
        let learner = oracle_learner(&target);
        let run = tasid(
            &mut env,
            &m,
            0.0,
            learner,
            SampleBudget::PerStep(4),
            &mut rng::substream(7, 4),
        )
        .unwrap();
        assert_eq!(run.episodes_used, (4 - 1) * 4);
        assert_eq!(env.episode_count(), run.episodes_used);
        // At eta = 0 the target equals the simulator: every rollout follows
        // the robust policy's latent trajectory exactly.
        let exact = evaluate_policy(&target, &run.robust.rho).unwrap().initial;
        let mut eval_env = env.fork(rng::substream(7, 5));
        let (mean, se) = crate::block::estimate_policy_value(
            &mut eval_env,
            &run.policy,
            200,
            &mut rng::substream(7, 6),
        );
        assert_eq!(mean, exact);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn tasid_policy_is_pure() {
        let m = chain(3);
        let (mut env, target) = one_hot_env(&m, 0.2, 9);
        let learner = oracle_learner(&target);
        let run = tasid(
            &mut env,
            &m,
            0.2,
            learner,
            SampleBudget::PerStep(3),
            &mut rng::substream(9, 4),
        )
        .unwrap();
        let one_hot = |s: usize| {
            let mut v = vec![0.0; m.num_states()];
            v[s] = 1.0;
            v
        };
        let history = vec![one_hot(0), one_hot(1)];
        let mut r1 = rng::from_seed(1);
        let mut r2 = rng::from_seed(2);
        assert_eq!(
            run.policy.act(2, &history, &mut r1),
            run.policy.act(2, &history, &mut r2)
        );
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let m = chain(3);
        let (mut env, _) = one_hot_env(&chain(4), 0.0, 1);
        let err = tasid(
            &mut env,
            &m,
            0.0,
            Learner::Tabular {
                key: Arc::new(|x: &[f64]| x[0] as u64),
                laplace: 1.0,
            },
            SampleBudget::PerStep(1),
            &mut rng::from_seed(0),
        )
        .err()
        .expect("horizon mismatch should be rejected");
        assert!(matches!(err, Error::HorizonMismatch { .. }));
    }

    #[test]
    fn theory_formula_matches_hand_computation() {
        // H = 2, |A| = 2, ln(|F|/delta) = 1, eps = 1, eta = 0:
        // n_D = 8 * 4 * 8 = 256.
        let delta = 0.25;
        let n = theory_samples_per_step(2, 2, std::f64::consts::E * delta, 1.0, delta, 0.0);
        assert!((n - 256.0).abs() < 1e-9);
    }

    #[test]
    fn initial_state_test_budget_accounting() {
        // n_l = 1, n_t = 1, single hypothesis: resolves as the second
        // episode completes, having consumed exactly n_l + n_t.
        let m = chain(2);
        let (mut env, target) = one_hot_env(&m, 0.0, 11);
        let config = MultiStartConfig {
            eta: 0.0,
            learner: oracle_learner(&target),
            n_learn: 1,
            n_test: 1,
        };
        let mut test = InitialStateTest::new(1);
        let mut r = rng::from_seed(3);
        let first = env.reset();
        let out = test
            .process_episode(&mut env, first, &m, &[0], &config, &mut r)
            .unwrap();
        assert_eq!(out, None);
        let first = env.reset();
        let out = test
            .process_episode(&mut env, first, &m, &[0], &config, &mut r)
            .unwrap();
        assert_eq!(out, Some(0));
        assert_eq!(test.episodes_routed(), 2);
    }

    #[test]
    fn adversarial_clustering_terminates() {
        // Everything maps to cluster 0 while two clusters are configured:
        // the budget runs out without deadlock, cluster 0 resolves, cluster
        // 1 stays unresolved.
        let m = chain(2);
        let (mut env, target) = one_hot_env(&m, 0.0, 13);
        let config = MultiStartConfig {
            eta: 0.0,
            learner: oracle_learner(&target),
            n_learn: 1,
            n_test: 1,
        };
        let clustering: Arc<dyn Fn(&[f64]) -> usize + Send + Sync> = Arc::new(|_: &[f64]| 0);
        let run = tasid_multi_start(
            &mut env,
            &m,
            &[0, 1],
            clustering,
            &config,
            16,
            &mut rng::from_seed(4),
        )
        .unwrap();
        assert_eq!(run.episodes_used, 16);
        assert!(run.resolved[0].is_some());
        assert!(run.resolved[1].is_none());
    }
}
