//! Batch experiment CLI: robust solves, decoder-transfer runs, experiment
//! sweeps and policy evaluation, all emitting machine-readable JSON/CSV.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when one or more
//! seeds failed inside an otherwise valid experiment.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use tasid_core::block::{
    estimate_policy_value, run_episode_traced, DecoderPolicy, EpisodeLogRow, OpenLoopPolicy,
    PracticablePolicy, UniformRandomPolicy,
};
use tasid_core::envs::EnvConfig;
use tasid_core::harness::{
    emit_plot_data, run_experiment, sweep, ExperimentConfig, LearnerChoice, SweepAxis,
    ARTIFACT_VERSION,
};
use tasid_core::invdyn::ClassifierConfig;
use tasid_core::mdp::{evaluate_policy, value_iteration, AbstractPolicy, EpisodicMdp};
use tasid_core::robust::{robust_dp, RobustSolutionFile};
use tasid_core::rng::{self, stream};
use tasid_core::tasid::{shadow_hit_rate, tasid, SampleBudget};

#[derive(Parser)]
#[command(name = "tasid", version, about = "Robust transfer RL from abstract simulators")]
struct Cli {
    /// Base seed for commands that run a single configuration.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for default output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Record latent traces and emit per-step shadow-hit diagnostics.
    #[arg(long, global = true)]
    trace: bool,
    /// Worker threads for seed/axis parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the robust Bellman recursion for an MDP file.
    SolveRobust {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the decoder-transfer algorithm on an environment config.
    RunTasid(RunTasidArgs),
    /// Run a full experiment config (seeds x budgets).
    RunExperiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis of an experiment config; emits CSV + JSON.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Output path base (extension is replaced by .csv/.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate an environment config file (and optionally its simulator).
    GenEnv(GenEnvArgs),
    /// Evaluate a policy on an environment by Monte Carlo rollouts.
    EvalPolicy(EvalPolicyArgs),
}

#[derive(Args)]
struct RunTasidArgs {
    /// Environment config JSON.
    #[arg(long)]
    env: PathBuf,
    /// Abstract simulator MDP file; defaults to the environment's own
    /// simulator.
    #[arg(long = "abstract")]
    abstract_mdp: Option<PathBuf>,
    /// Perturbation level for the robust solve; defaults to the
    /// environment's eta.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    samples_per_step: usize,
    #[arg(long, value_enum, default_value_t = LearnerArg::Neural)]
    learner: LearnerArg,
    /// Laplace smoothing for the tabular learner.
    #[arg(long, default_value_t = 0.0)]
    laplace: f64,
    #[arg(long, default_value_t = 1000)]
    eval_rollouts: usize,
    #[arg(long, default_value_t = 0.95)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Neural,
    Tabular,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Eta,
    Height,
    Budget,
}

impl From<AxisArg> for SweepAxis {
    fn from(axis: AxisArg) -> SweepAxis {
        match axis {
            AxisArg::Eta => SweepAxis::Eta,
            AxisArg::Height => SweepAxis::Height,
            AxisArg::Budget => SweepAxis::Budget,
        }
    }
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    #[arg(long, default_value_t = 10)]
    num_actions: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Gridworld height (default two-route layout).
    #[arg(long, default_value_t = 7)]
    height: usize,
    /// ASCII map file for gridworld (overrides --height).
    #[arg(long)]
    map_file: Option<PathBuf>,
    #[arg(long)]
    pixel_view: bool,
    #[arg(long, default_value_t = 4)]
    num_states: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the abstract simulator as an MDP file.
    #[arg(long)]
    emit_mdp: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Combolock,
    Gridworld,
    Random,
}

#[derive(Args)]
struct EvalPolicyArgs {
    #[arg(long)]
    env: PathBuf,
    /// `robust`, `open-loop`, `random`, or a path to an abstract-policy
    /// JSON file (composed with the perfect decoder).
    #[arg(long)]
    policy: String,
    /// Perturbation level for the robust solve (defaults to the
    /// environment's eta).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    rollouts: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("config error: {err}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("config error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::SolveRobust { mdp, eta, out } => solve_robust(cli, mdp, *eta, out.as_deref()),
        Command::RunTasid(args) => run_tasid_cmd(cli, args),
        Command::RunExperiment { config, out } => run_experiment_cmd(cli, config, out.as_deref()),
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => sweep_cmd(cli, config, *axis, values, out.as_deref()),
        Command::GenEnv(args) => gen_env(cli, args),
        Command::EvalPolicy(args) => eval_policy(cli, args),
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_env_config(path: &Path, seed: u64) -> anyhow::Result<EnvConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: EnvConfig = serde_json::from_str(&text)?;
    Ok(config.with_seed(seed))
}

fn solve_robust(
    cli: &Cli,
    mdp_path: &Path,
    eta: f64,
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let mdp = EpisodicMdp::load(mdp_path)?;
    if !mdp.is_deterministic() {
        eprintln!(
            "warning: input MDP is stochastic; the robust backup is well-defined but the \
             transfer guarantees assume a deterministic simulator"
        );
    }
    let solution = robust_dp(&mdp, eta)?;
    let file = RobustSolutionFile::new(&mdp, &solution);
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out_dir.join("robust-solution.json"));
    write_json(&file, &path)?;
    println!("robust value at the initial state: {}", file.initial_value);
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct TasidReport {
    artifact_version: String,
    env: EnvConfig,
    seed: u64,
    eta: f64,
    learner: String,
    n_per_step: usize,
    /// Episodes consumed by training: (H - 1) * n_per_step.
    episodes_used: u64,
    /// The H * n_per_step total the per-step budget corresponds to.
    planned_total_episodes: u64,
    per_step: Vec<tasid_core::tasid::StepDiagnostics>,
    shadow_hit_rates: Option<Vec<f64>>,
    value_mean: f64,
    value_se: f64,
    eval_rollouts: usize,
    v_rho: f64,
    threshold: f64,
    passed: bool,
    wall_clock_ms: u64,
}

fn run_tasid_cmd(cli: &Cli, args: &RunTasidArgs) -> anyhow::Result<ExitCode> {
    let started = std::time::Instant::now();
    let env_config = load_env_config(&args.env, cli.seed)?;
    let built = env_config.build()?;
    let m0 = match &args.abstract_mdp {
        None => built.m0.clone(),
        Some(path) => {
            let mdp = EpisodicMdp::load(path)?;
            tasid_core::mdp::DeterministicMdp::from_episodic(mdp)?
        }
    };
    let eta = args.eta.unwrap_or_else(|| env_config.eta());
    let learner_choice = match args.learner {
        LearnerArg::Neural => LearnerChoice::Neural {
            config: ClassifierConfig::default(),
        },
        LearnerArg::Tabular => LearnerChoice::Tabular {
            laplace: args.laplace,
        },
        LearnerArg::Oracle => LearnerChoice::Oracle,
    };
    let learner = learner_choice.instantiate(&built);

    let mut train_env = built.instance(rng::substream(cli.seed, stream::ENV));
    let mut algo_rng = rng::substream(cli.seed, stream::ALGORITHM);
    let run = tasid(
        &mut train_env,
        &m0,
        eta,
        learner,
        SampleBudget::PerStep(args.samples_per_step),
        &mut algo_rng,
    )?;

    let mut eval_env = built.instance(rng::substream(cli.seed, stream::EVAL));
    let mut policy_rng = rng::substream(cli.seed, stream::POLICY);
    let (value_mean, value_se) =
        estimate_policy_value(&mut eval_env, &run.policy, args.eval_rollouts, &mut policy_rng);
    let v_rho = evaluate_policy(&built.target, &run.robust.rho)?.initial;

    let shadow_hit_rates = if cli.trace {
        let mut traced_env = built.instance(rng::substream(cli.seed, stream::EVAL + 1));
        let episodes: Vec<_> = (0..200.min(args.eval_rollouts))
            .map(|_| run_episode_traced(&mut traced_env, &run.policy, &mut policy_rng))
            .collect();
        let rates = shadow_hit_rate(&m0, run.policy.models(), &episodes)?;
        let rows: Vec<EpisodeLogRow> = episodes
            .iter()
            .enumerate()
            .map(|(i, ep)| EpisodeLogRow {
                episode_index: i as u64,
                ret: ep.ret(),
                actions: ep.actions.clone(),
                latents: ep.latent_states.clone(),
            })
            .collect();
        let log_path = cli.out_dir.join("episodes.jsonl");
        tasid_core::block::write_episode_log(&log_path, &rows)?;
        println!("wrote {}", log_path.display());
        Some(rates)
    } else {
        None
    };

    let report = TasidReport {
        artifact_version: ARTIFACT_VERSION.to_string(),
        env: env_config,
        seed: cli.seed,
        eta,
        learner: match args.learner {
            LearnerArg::Neural => "neural".into(),
            LearnerArg::Tabular => "tabular".into(),
            LearnerArg::Oracle => "oracle".into(),
        },
        n_per_step: run.n_per_step,
        episodes_used: run.episodes_used,
        planned_total_episodes: (m0.horizon() as u64) * run.n_per_step as u64,
        per_step: run.per_step.clone(),
        shadow_hit_rates,
        value_mean,
        value_se,
        eval_rollouts: args.eval_rollouts,
        v_rho,
        threshold: args.threshold,
        passed: value_mean >= args.threshold * v_rho,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("tasid-report.json"));
    write_json(&report, &path)?;
    println!(
        "value {:.4} +- {:.4} vs {:.2} * v_rho = {:.4} -> {}",
        report.value_mean,
        report.value_se,
        report.threshold,
        report.threshold * report.v_rho,
        if report.passed { "pass" } else { "fail" }
    );
    Ok(ExitCode::SUCCESS)
}

fn load_experiment_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn run_experiment_cmd(cli: &Cli, config: &Path, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let config = load_experiment_config(config)?;
    let report = run_experiment(&config)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out_dir.join("experiment-report.json"));
    write_json(&report, &path)?;
    let failed = report.seeds.iter().filter(|s| s.error.is_some()).count();
    match report.median_episodes_to_threshold {
        Some(n) => println!("median episodes to threshold: {n}"),
        None => println!("median episodes to threshold: inf (budget exhausted)"),
    }
    if failed > 0 {
        eprintln!("{failed} seed(s) failed; see the report for details");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_cmd(
    cli: &Cli,
    config: &Path,
    axis: AxisArg,
    values: &[f64],
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let config = load_experiment_config(config)?;
    let table = sweep(&config, axis.into(), values)?;
    let base = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cli.out_dir.join("sweep"));
    let (csv_path, json_path) = emit_plot_data(&table, &base)?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    let failed = table
        .cells
        .iter()
        .flat_map(|c| c.report.seeds.iter())
        .filter(|s| s.error.is_some())
        .count();
    if failed > 0 {
        eprintln!("{failed} seed(s) failed; see the JSON table for details");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn gen_env(cli: &Cli, args: &GenEnvArgs) -> anyhow::Result<ExitCode> {
    let config = match args.kind {
        KindArg::Combolock => {
            let mut spec =
                tasid_core::envs::CombinationLockSpec::new(args.horizon, args.eta, cli.seed);
            spec.num_actions = args.num_actions;
            EnvConfig::Combolock(spec)
        }
        KindArg::Gridworld => {
            let mut spec = tasid_core::envs::GridworldSpec::new(args.eta, cli.seed);
            spec.height = args.height;
            spec.pixel_view = args.pixel_view;
            if let Some(map_file) = &args.map_file {
                let text = std::fs::read_to_string(map_file)
                    .with_context(|| format!("reading {}", map_file.display()))?;
                spec.map = Some(text.lines().map(str::to_string).collect());
            }
            EnvConfig::Gridworld(spec)
        }
        KindArg::Random => EnvConfig::Random(tasid_core::envs::RandomMdpSpec {
            num_states: args.num_states,
            num_actions: args.num_actions,
            horizon: args.horizon,
            eta: args.eta,
            seed: cli.seed,
        }),
    };
    // Validate by building once.
    let built = config.build()?;
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("env.json"));
    write_json(&config, &path)?;
    if let Some(mdp_path) = &args.emit_mdp {
        built.m0.save(mdp_path)?;
        println!("wrote {}", mdp_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct EvalReport {
    artifact_version: String,
    env: EnvConfig,
    policy: String,
    seed: u64,
    rollouts: usize,
    value_mean: f64,
    value_se: f64,
    /// Exact DP value on the realized target for state-based policies.
    exact_value: Option<f64>,
    wall_clock_ms: u64,
}

fn eval_policy(cli: &Cli, args: &EvalPolicyArgs) -> anyhow::Result<ExitCode> {
    let started = std::time::Instant::now();
    let env_config = load_env_config(&args.env, cli.seed)?;
    let built = env_config.build()?;
    let block = built.block.clone();
    let decoder: Arc<dyn Fn(&[f64]) -> usize + Send + Sync> =
        Arc::new(move |obs: &[f64]| block.decode(obs));
    let eta = args.eta.unwrap_or_else(|| env_config.eta());

    let (policy, exact_value): (Box<dyn PracticablePolicy>, Option<f64>) =
        match args.policy.as_str() {
            "robust" => {
                let solution = robust_dp(built.m0.as_episodic(), eta)?;
                let exact = evaluate_policy(&built.target, &solution.rho)?.initial;
                (
                    Box::new(DecoderPolicy {
                        decoder,
                        policy: solution.rho,
                    }),
                    Some(exact),
                )
            }
            "open-loop" => {
                let (optimal, _) = value_iteration(built.m0.as_episodic())?;
                let mut actions = Vec::new();
                let mut s = built.m0.init_state();
                for h in 0..built.m0.horizon() {
                    let a = optimal.action(h, s);
                    actions.push(a);
                    s = built.m0.next_state(h, s, a);
                }
                (Box::new(OpenLoopPolicy { actions }), None)
            }
            "random" => (
                Box::new(UniformRandomPolicy {
                    num_actions: built.m0.num_actions(),
                }),
                None,
            ),
            path => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading policy file {path}"))?;
                let table: AbstractPolicy = serde_json::from_str(&text)?;
                if !table.matches(built.m0.as_episodic()) {
                    return Err(anyhow!("policy table does not match the environment"));
                }
                let exact = evaluate_policy(&built.target, &table)?.initial;
                (
                    Box::new(DecoderPolicy {
                        decoder,
                        policy: table,
                    }),
                    Some(exact),
                )
            }
        };

    let mut eval_env = built.instance(rng::substream(cli.seed, stream::EVAL));
    let (value_mean, value_se) = estimate_policy_value(
        &mut eval_env,
        policy.as_ref(),
        args.rollouts,
        &mut rng::substream(cli.seed, stream::POLICY),
    );
    let report = EvalReport {
        artifact_version: ARTIFACT_VERSION.to_string(),
        env: env_config,
        policy: args.policy.clone(),
        seed: cli.seed,
        rollouts: args.rollouts,
        value_mean,
        value_se,
        exact_value,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("eval-report.json"));
    write_json(&report, &path)?;
    println!("value {value_mean:.4} +- {value_se:.4}");
    Ok(ExitCode::SUCCESS)
}
