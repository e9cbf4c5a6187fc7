//! Experiment orchestration: seed sweeps, eta/height/budget sweeps,
//! threshold metrics, and machine-readable result emission.
//!
//! Every report quotes the exact dynamic-programming value of the robust
//! policy on the realized target (never a Monte Carlo estimate), counts
//! training episodes on the training oracle's own counter, and evaluates
//! checkpoints by Monte Carlo on a forked evaluation instance so that
//! measurement never inflates the training budget. Identical configs and
//! seeds produce byte-identical reports up to the `wall_clock_ms` fields.

use crate::block::{
    estimate_policy_value, DecoderPolicy, EnvOracle, OpenLoopPolicy, PracticablePolicy,
    UniformRandomPolicy,
};
use crate::envs::{BuiltEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::invdyn::{bayes_optimal, ClassifierConfig};
use crate::mdp::{evaluate_policy, value_iteration, AbstractPolicy};
use crate::robust::robust_dp;
use crate::rng::{self, stream};
use crate::tasid::{tasid, tasid_multi_start, Learner, MultiStartConfig, SampleBudget, TasidPolicy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Tasid,
    TasidMultiStart,
    /// The robust abstract policy composed with the perfect decoder
    /// (no learning; a diagnostic upper baseline).
    RobustOracle,
    /// The simulator-optimal action sequence executed blindly.
    OpenLoop,
    Random,
}

impl Algorithm {
    pub fn learns(self) -> bool {
        matches!(self, Algorithm::Tasid | Algorithm::TasidMultiStart)
    }
}

/// Learner selection for the harness. The tabular and oracle variants use
/// the environment's perfect decoder (a trace capability) and exist for
/// controlled experiments; `neural` is the observation-only learner.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LearnerChoice {
    Neural {
        #[serde(default)]
        config: ClassifierConfig,
    },
    Tabular {
        #[serde(default)]
        laplace: f64,
    },
    Oracle,
}

impl Default for LearnerChoice {
    fn default() -> Self {
        LearnerChoice::Neural {
            config: ClassifierConfig::default(),
        }
    }
}

impl LearnerChoice {
    pub fn instantiate(&self, built: &BuiltEnv) -> Learner {
        match self {
            LearnerChoice::Neural { config } => Learner::Neural(config.clone()),
            LearnerChoice::Tabular { laplace } => {
                let block = built.block.clone();
                Learner::Tabular {
                    key: Arc::new(move |obs: &[f64]| block.decode(obs) as u64),
                    laplace: *laplace,
                }
            }
            LearnerChoice::Oracle => {
                let latent = Arc::new(built.target.clone());
                let block = built.block.clone();
                let decoder: Arc<dyn Fn(&[f64]) -> usize + Send + Sync> =
                    Arc::new(move |obs: &[f64]| block.decode(obs));
                Learner::Oracle(Arc::new(move |h| {
                    bayes_optimal(latent.clone(), decoder.clone(), h)
                }))
            }
        }
    }
}

/// Budget schedule: total episodes per run (split over the horizon the way
/// the batch algorithm trains, `n_per_step = floor(b / H)`), or a direct
/// per-step sample count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSchedule {
    TotalEpisodes(Vec<u64>),
    SamplesPerStep(Vec<u64>),
}

impl BudgetSchedule {
    pub fn values(&self) -> &[u64] {
        match self {
            BudgetSchedule::TotalEpisodes(v) | BudgetSchedule::SamplesPerStep(v) => v,
        }
    }

    fn per_step(&self, budget: u64, horizon: usize) -> u64 {
        match self {
            BudgetSchedule::TotalEpisodes(_) => (budget / horizon.max(1) as u64).max(1),
            BudgetSchedule::SamplesPerStep(_) => budget.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiStartParams {
    pub n_learn: u64,
    pub n_test: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub learner: LearnerChoice,
    pub seeds: Vec<u64>,
    pub budgets: BudgetSchedule,
    #[serde(default = "default_eval_rollouts")]
    pub eval_rollouts: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub multi_start: Option<MultiStartParams>,
}

fn default_eval_rollouts() -> u64 {
    1000
}

fn default_threshold() -> f64 {
    0.95
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds list must be nonempty".into()));
        }
        if self.algorithm.learns() && self.budgets.values().iter().any(|&b| b == 0) {
            return Err(Error::InvalidConfig("budgets must be positive".into()));
        }
        if self.eval_rollouts == 0 {
            return Err(Error::InvalidConfig("eval_rollouts must be >= 1".into()));
        }
        if self.algorithm == Algorithm::TasidMultiStart && self.multi_start.is_none() {
            return Err(Error::InvalidConfig(
                "tasid-multi-start requires the multi_start parameters".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetResult {
    pub budget: u64,
    pub n_per_step: u64,
    pub episodes_used: u64,
    pub eval_episodes: u64,
    pub value_mean: f64,
    pub value_se: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    /// Exact DP value of the robust policy on the realized target.
    pub v_rho: f64,
    /// Smallest budget whose evaluated value reached `threshold * v_rho`;
    /// `null` marks budget exhaustion (the infinity marker).
    pub episodes_to_threshold: Option<u64>,
    pub results: Vec<BudgetResult>,
    pub error: Option<String>,
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub artifact_version: String,
    pub config: ExperimentConfig,
    pub median_episodes_to_threshold: Option<u64>,
    pub seeds: Vec<SeedReport>,
    pub wall_clock_ms: u64,
}

impl RunReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(Error::from)?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Runs one seed to completion; module errors abort the seed only.
fn run_seed(config: &ExperimentConfig, seed: u64) -> SeedReport {
    let start = Instant::now();
    match run_seed_inner(config, seed) {
        Ok(mut report) => {
            report.wall_clock_ms = start.elapsed().as_millis() as u64;
            report
        }
        Err(err) => SeedReport {
            seed,
            v_rho: f64::NAN,
            episodes_to_threshold: None,
            results: Vec::new(),
            error: Some(err.to_string()),
            wall_clock_ms: start.elapsed().as_millis() as u64,
        },
    }
}

fn run_seed_inner(config: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let built = config.env.with_seed(seed).build()?;
    let eta = config.env.eta();
    let solution = robust_dp(built.m0.as_episodic(), eta)?;
    let values = evaluate_policy(&built.target, &solution.rho)?;
    let v_rho = match built.block.initial() {
        crate::block::InitialState::Fixed(s) => values.v[(0, *s)],
        crate::block::InitialState::Stochastic { states, weights } => {
            let total: f64 = weights.iter().sum();
            states
                .iter()
                .zip(weights)
                .map(|(s, w)| w / total * values.v[(0, *s)])
                .sum()
        }
    };
    let threshold_value = config.threshold * v_rho;

    let mut results = Vec::new();
    let mut episodes_to_threshold = None;
    if config.algorithm.learns() {
        for (i, &budget) in config.budgets.values().iter().enumerate() {
            let cell = run_learning_cell(config, &built, seed, i as u64, budget)?;
            let passed = cell.value_mean >= threshold_value;
            let cell = BudgetResult { passed, ..cell };
            if passed && episodes_to_threshold.is_none() {
                episodes_to_threshold = Some(budget);
            }
            results.push(cell);
        }
    } else {
        let policy = baseline_policy(config.algorithm, &built, &solution.rho)?;
        let mut eval_env = built.instance(rng::substream(seed, stream::EVAL));
        let (mean, se) = estimate_policy_value(
            &mut eval_env,
            policy.as_ref(),
            config.eval_rollouts as usize,
            &mut rng::substream(seed, stream::POLICY),
        );
        let passed = mean >= threshold_value;
        if passed {
            episodes_to_threshold = Some(0);
        }
        results.push(BudgetResult {
            budget: 0,
            n_per_step: 0,
            episodes_used: 0,
            eval_episodes: eval_env.episode_count(),
            value_mean: mean,
            value_se: se,
            passed,
        });
    }
    Ok(SeedReport {
        seed,
        v_rho,
        episodes_to_threshold,
        results,
        error: None,
        wall_clock_ms: 0,
    })
}

fn run_learning_cell(
    config: &ExperimentConfig,
    built: &BuiltEnv,
    seed: u64,
    budget_index: u64,
    budget: u64,
) -> Result<BudgetResult> {
    let eta = config.env.eta();
    let horizon = built.m0.horizon();
    let learner = config.learner.instantiate(built);
    let mut train_env = built.instance(rng::substream(seed, stream::ENV + 16 * budget_index));
    let mut algo_rng = rng::substream(seed, stream::ALGORITHM + 16 * budget_index);

    let policy: Box<dyn PracticablePolicy> = match config.algorithm {
        Algorithm::Tasid => {
            let n = config.budgets.per_step(budget, horizon);
            let run = tasid(
                &mut train_env,
                &built.m0,
                eta,
                learner,
                SampleBudget::PerStep(n as usize),
                &mut algo_rng,
            )?;
            Box::new(run.policy)
        }
        Algorithm::TasidMultiStart => {
            let params = config.multi_start.expect("validated");
            let candidates = if built.initial_states.is_empty() {
                vec![built.m0.init_state()]
            } else {
                built.initial_states.clone()
            };
            let n = candidates.len() as u64;
            let block = built.block.clone();
            let states = candidates.clone();
            let clustering: Arc<dyn Fn(&[f64]) -> usize + Send + Sync> =
                Arc::new(move |obs: &[f64]| {
                    let s = block.decode(obs);
                    states.iter().position(|&c| c == s).unwrap_or(0)
                });
            let ms_config = MultiStartConfig {
                eta,
                learner,
                n_learn: params.n_learn,
                n_test: params.n_test,
            };
            let cap = 2 * n * n * (params.n_learn + params.n_test) + 16;
            let run = tasid_multi_start(
                &mut train_env,
                &built.m0,
                &candidates,
                clustering.clone(),
                &ms_config,
                cap.min(budget.max(cap)),
                &mut algo_rng,
            )?;
            Box::new(ClusterRoutedPolicy {
                clustering,
                policies: run.policies,
                fallback: UniformRandomPolicy {
                    num_actions: built.m0.num_actions(),
                },
            })
        }
        _ => unreachable!("non-learning algorithms handled by the caller"),
    };

    let mut eval_env =
        built.instance(rng::substream(seed, stream::EVAL + 16 * budget_index));
    let (mean, se) = estimate_policy_value(
        &mut eval_env,
        policy.as_ref(),
        config.eval_rollouts as usize,
        &mut rng::substream(seed, stream::POLICY + 16 * budget_index),
    );
    Ok(BudgetResult {
        budget,
        n_per_step: config.budgets.per_step(budget, horizon),
        episodes_used: train_env.episode_count(),
        eval_episodes: eval_env.episode_count(),
        value_mean: mean,
        value_se: se,
        passed: false,
    })
}

fn baseline_policy(
    algorithm: Algorithm,
    built: &BuiltEnv,
    rho: &AbstractPolicy,
) -> Result<Box<dyn PracticablePolicy>> {
    Ok(match algorithm {
        Algorithm::RobustOracle => {
            let block = built.block.clone();
            Box::new(DecoderPolicy {
                decoder: Arc::new(move |obs: &[f64]| block.decode(obs)),
                policy: rho.clone(),
            })
        }
        Algorithm::OpenLoop => {
            let (optimal, _) = value_iteration(built.m0.as_episodic())?;
            let mut actions = Vec::with_capacity(built.m0.horizon());
            let mut s = built.m0.init_state();
            for h in 0..built.m0.horizon() {
                let a = optimal.action(h, s);
                actions.push(a);
                s = built.m0.next_state(h, s, a);
            }
            Box::new(OpenLoopPolicy { actions })
        }
        Algorithm::Random => Box::new(UniformRandomPolicy {
            num_actions: built.m0.num_actions(),
        }),
        _ => unreachable!("learning algorithms handled by the caller"),
    })
}

/// Routes each episode to the policy of its initial-observation cluster.
struct ClusterRoutedPolicy {
    clustering: Arc<dyn Fn(&[f64]) -> usize + Send + Sync>,
    policies: Vec<Option<TasidPolicy>>,
    fallback: UniformRandomPolicy,
}

impl PracticablePolicy for ClusterRoutedPolicy {
    fn act(&self, h: usize, history: &[Vec<f64>], rng: &mut crate::rng::Rng) -> usize {
        let cluster = (self.clustering)(&history[0]);
        match self.policies.get(cluster).and_then(|p| p.as_ref()) {
            Some(policy) => policy.act(h, history, rng),
            None => self.fallback.act(h, history, rng),
        }
    }
}

/// Runs every seed (in parallel when a rayon pool is configured) and
/// reports the median episodes-to-threshold across seeds, with budget
/// exhaustion sorting above every finite count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let seeds: Vec<SeedReport> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed))
        .collect();
    let mut counts: Vec<Option<u64>> = seeds.iter().map(|s| s.episodes_to_threshold).collect();
    counts.sort_by_key(|c| (c.is_none(), c.unwrap_or(u64::MAX)));
    let median_episodes_to_threshold = counts[(counts.len() - 1) / 2];
    Ok(RunReport {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config: config.clone(),
        median_episodes_to_threshold,
        seeds,
        wall_clock_ms: start.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Eta,
    Height,
    Budget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    /// Mean and standard error over seeds of the final-budget value.
    pub mean_final_value: f64,
    pub se_final_value: f64,
    pub median_final_value: f64,
    pub q25_final_value: f64,
    pub q75_final_value: f64,
    pub mean_v_rho: f64,
    pub median_episodes_to_threshold: Option<u64>,
    pub report: RunReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
}

fn apply_axis(config: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut out = config.clone();
    match axis {
        SweepAxis::Eta => out.env = out.env.with_eta(value),
        SweepAxis::Height => match &mut out.env {
            EnvConfig::Gridworld(spec) => {
                spec.height = value as usize;
                spec.map = None;
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "height sweeps apply to gridworld environments only".into(),
                ))
            }
        },
        SweepAxis::Budget => {
            out.budgets = match out.budgets {
                BudgetSchedule::TotalEpisodes(_) => BudgetSchedule::TotalEpisodes(vec![value as u64]),
                BudgetSchedule::SamplesPerStep(_) => {
                    BudgetSchedule::SamplesPerStep(vec![value as u64])
                }
            };
        }
    }
    Ok(out)
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let rank = |p: f64| -> f64 {
        let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
        sorted[idx]
    };
    (rank(0.25), rank(0.5), rank(0.75))
}

/// One independent experiment per axis value; cells sorted by value.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepTable> {
    let mut cells = Vec::with_capacity(values.len());
    for &value in values {
        let cell_config = apply_axis(config, axis, value)?;
        let report = run_experiment(&cell_config)?;
        let finals: Vec<f64> = report
            .seeds
            .iter()
            .filter_map(|s| s.results.last().map(|r| r.value_mean))
            .collect();
        if finals.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "no successful seeds at axis value {value}"
            )));
        }
        let (mean, se) = crate::block::mean_and_se(&finals);
        let mut sorted = finals.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let (q25, median, q75) = quartiles(&sorted);
        let v_rhos: Vec<f64> = report.seeds.iter().map(|s| s.v_rho).collect();
        let mean_v_rho = v_rhos.iter().sum::<f64>() / v_rhos.len() as f64;
        cells.push(SweepCell {
            value,
            mean_final_value: mean,
            se_final_value: se,
            median_final_value: median,
            q25_final_value: q25,
            q75_final_value: q75,
            mean_v_rho,
            median_episodes_to_threshold: report.median_episodes_to_threshold,
            report,
        });
    }
    cells.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(SweepTable { axis, cells })
}

/// Writes the sweep table as CSV (one row per point) and JSON next to it.
/// Returns the two paths written.
pub fn emit_plot_data(table: &SweepTable, path_base: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let csv_path = path_base.with_extension("csv");
    let json_path = path_base.with_extension("json");
    let mut csv = String::from("axis_value,median,q25,q75,mean,se\n");
    for cell in &table.cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.value,
            cell.median_final_value,
            cell.q25_final_value,
            cell.q75_final_value,
            cell.mean_final_value,
            cell.se_final_value
        ));
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(table)?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(json_path.display().to_string(), e))?;
    Ok((csv_path, json_path))
}
