//! Command-line front end: `gen-env`, `learn-dfa`, `train`, `evaluate` and
//! `run`.
//!
//! Every option can also come from a flat `key = value` file passed with
//! `--config`; keys are the long option names (with `-` or `_`). Options on
//! the command line win over the file.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::automata::{fixtures, word_to_string, Dfa, Word};
use crate::error::{AtigError, Result};
use crate::grid_env::{generate_random_env, GridMap};
use crate::irl::{FeatureEncoding, RewardModel, RewardVariant, SolverConfig, TrainConfig};
use crate::lstar::{write_query_log, LoggingOracle, ObservationTable};
use crate::oracle::{load_demos, save_demos, Demonstrator, TaskSpec};
use crate::orchestrator::{
    evaluate_model, evaluate_on_env, exact_positive_words, find_counterexample, learn_reward, mean_std, run_atig,
    run_baseline, AtigConfig, Baseline, CexBudget, EquivalenceMode, IterationLog, RewardConfig, SuccessRatio,
};
use crate::{automata, rng};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

const SEED_TEST_ENVS: u64 = 1000;
const SEED_FINAL_EVAL: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "atig", version, about = "Active task-inference-guided MaxEnt IRL")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random environment file.
    GenEnv(GenEnvArgs),
    /// Infer the task automaton with L* and save it with queries and demos.
    LearnDfa(LearnDfaArgs),
    /// Learn a reward from saved demonstrations and a saved automaton.
    Train(TrainArgs),
    /// Success ratio of a saved model on a saved environment.
    Evaluate(EvaluateArgs),
    /// Full pipeline (or a baseline) plus evaluation on fresh environments.
    Run(RunArgs),
}

#[derive(Debug, Args, Default)]
pub struct EnvArgs {
    /// Environment file; generated from `--env-seed` when absent.
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Regions per type.
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub env_seed: Option<u64>,
    /// Slip probability of generated environments.
    #[arg(long)]
    pub slip: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TaskArgs {
    /// Fixture task 1, 2 or 3.
    #[arg(long)]
    pub task: Option<usize>,
    /// Ground-truth automaton file instead of a fixture.
    #[arg(long)]
    pub task_file: Option<PathBuf>,
    /// Per-subgoal step budget for executing queries.
    #[arg(long)]
    pub task_horizon: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct IrlArgs {
    /// tabular, linear or mlp.
    #[arg(long)]
    pub variant: Option<String>,
    /// Hidden widths, comma separated.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<bool>,
    #[arg(long)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub min_iterations: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub log_floor: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct AtigArgs {
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Rollout horizon; 0 means 4 (W + H).
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub cex_rollouts: Option<usize>,
    #[arg(long)]
    pub cex_random_words: Option<usize>,
    #[arg(long)]
    pub cex_max_len: Option<usize>,
    #[arg(long)]
    pub demos_per_query: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Use the ground-truth automaton for equivalence queries (test mode).
    #[arg(long)]
    pub exact: Option<bool>,
}

#[derive(Debug, Args)]
pub struct GenEnvArgs {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub slip: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnDfaArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub atig: AtigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub irl: IrlArgs,
    #[command(flatten)]
    pub atig: AtigArgs,
    /// Automaton to build the product with.
    #[arg(long)]
    pub dfa: Option<PathBuf>,
    #[arg(long)]
    pub demos: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub irl: IrlArgs,
    #[command(flatten)]
    pub atig: AtigArgs,
    #[arg(long)]
    pub dfa: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub irl: IrlArgs,
    #[command(flatten)]
    pub atig: AtigArgs,
    /// memoryless or info-bits instead of ATIG.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Number of freshly generated evaluation environments.
    #[arg(long)]
    pub test_envs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Configuration file values, looked up by option name.
#[derive(Debug, Default)]
pub struct Settings {
    values: HashMap<String, (usize, String)>,
    source: String,
}

impl Settings {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut values = HashMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AtigError::parse(source, no + 1, "expected `key = value`"))?;
            let key = k.trim().replace('_', "-");
            if values.insert(key.clone(), (no + 1, v.trim().to_string())).is_some() {
                return Err(AtigError::parse(source, no + 1, format!("duplicate key {key:?}")));
            }
        }
        Ok(Settings {
            values,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| AtigError::input(format!("cannot read config {}: {e}", path.display())))?;
        Settings::parse(&text, &path.display().to_string())
    }

    /// Command-line value, else the file value, else `None`.
    fn get<T: FromStr>(&self, key: &str, cli: Option<T>) -> Result<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| AtigError::parse(&self.source, *line, format!("bad value {v:?} for {key}"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, cli: Option<T>, default: T) -> Result<T> {
        Ok(self.get(key, cli)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, key: &str, cli: Option<T>) -> Result<T> {
        self.get(key, cli)?
            .ok_or_else(|| AtigError::input(format!("--{key} is required (on the command line or in the config)")))
    }

    /// Rejects file keys no option of the command knows about.
    fn check_known(&self, known: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.values {
            if !known.contains(&k.as_str()) && k != "config" {
                return Err(AtigError::parse(&self.source, *line, format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }
}

const ENV_KEYS: &[&str] = &["env", "width", "height", "regions", "env-seed", "slip"];
const TASK_KEYS: &[&str] = &["task", "task-file", "task-horizon"];
const IRL_KEYS: &[&str] = &[
    "variant",
    "hidden",
    "window",
    "gamma",
    "tol",
    "max-sweeps",
    "lr",
    "decay",
    "normalize",
    "eval-every",
    "epsilon",
    "min-iterations",
    "max-iterations",
    "log-floor",
];
const ATIG_KEYS: &[&str] = &[
    "kappa",
    "rollouts",
    "horizon",
    "cex-rollouts",
    "cex-random-words",
    "cex-max-len",
    "demos-per-query",
    "max-outer",
    "exact",
];

fn keys(groups: &[&[&'static str]], extra: &[&'static str]) -> Vec<&'static str> {
    groups
        .iter()
        .flat_map(|g| g.iter().copied())
        .chain(extra.iter().copied())
        .collect()
}

fn resolve_env(s: &Settings, a: &EnvArgs) -> Result<GridMap> {
    if let Some(path) = s.get::<PathBuf>("env", a.env.clone())? {
        return GridMap::load(&path).map_err(|e| reclassify_io(e, &format!("environment file {}", path.display())));
    }
    let w = s.or("width", a.width, 12)?;
    let h = s.or("height", a.height, 12)?;
    let r = s.or("regions", a.regions, 1)?;
    let seed = s.required("env-seed", a.env_seed)?;
    let grid = generate_random_env(w, h, r, seed)?;
    match s.get("slip", a.slip)? {
        Some(p) => grid.with_slip(p),
        None => Ok(grid),
    }
}

fn reclassify_io(e: AtigError, what: &str) -> AtigError {
    match e {
        AtigError::Io(io) => AtigError::input(format!("cannot read {what}: {io}")),
        other => other,
    }
}

fn resolve_task(s: &Settings, a: &TaskArgs, grid: &GridMap) -> Result<TaskSpec> {
    let (dfa, name) = match s.get::<PathBuf>("task-file", a.task_file.clone())? {
        Some(path) => (
            Dfa::load(&path).map_err(|e| reclassify_io(e, &format!("task file {}", path.display())))?,
            path.display().to_string(),
        ),
        None => {
            let id: usize = s.required("task", a.task)?;
            let dfa = fixtures::task(id).ok_or_else(|| AtigError::input(format!("unknown task #{id}")))?;
            (dfa, format!("task{id}"))
        }
    };
    let mut task = TaskSpec::for_grid(dfa, name, grid);
    if let Some(h) = s.get("task-horizon", a.task_horizon)? {
        task = TaskSpec::new(task.dfa, task.name, h)?;
    }
    Ok(task)
}

fn resolve_reward(s: &Settings, a: &IrlArgs) -> Result<RewardConfig> {
    let variant: RewardVariant = s.or("variant", a.variant.clone(), "tabular".to_string())?.parse()?;
    let hidden = match s.get::<String>("hidden", a.hidden.clone())? {
        Some(h) => h
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| AtigError::input(format!("bad hidden widths {h:?}")))?,
        None => RewardConfig::default().hidden,
    };
    let window = s.or("window", a.window, FeatureEncoding::default().window)?;
    Ok(RewardConfig {
        variant,
        hidden,
        encoding: FeatureEncoding::new(window, FeatureEncoding::default().dfa_slots)?,
    })
}

fn resolve_train(s: &Settings, a: &IrlArgs, variant: RewardVariant, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::for_variant(variant);
    let cfg = TrainConfig {
        solver: SolverConfig {
            gamma: s.or("gamma", a.gamma, d.solver.gamma)?,
            tol: s.or("tol", a.tol, d.solver.tol)?,
            max_sweeps: s.or("max-sweeps", a.max_sweeps, d.solver.max_sweeps)?,
        },
        lr: s.or("lr", a.lr, d.lr)?,
        decay: s.or("decay", a.decay, d.decay)?,
        normalize: s.or("normalize", a.normalize, d.normalize)?,
        eval_every: s.or("eval-every", a.eval_every, d.eval_every)?,
        epsilon: s.or("epsilon", a.epsilon, d.epsilon)?,
        min_iterations: s.or("min-iterations", a.min_iterations, d.min_iterations)?,
        max_iterations: s.or("max-iterations", a.max_iterations, d.max_iterations)?,
        log_floor: s.or("log-floor", a.log_floor, d.log_floor)?,
        seed,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_atig(s: &Settings, a: &AtigArgs, reward: RewardConfig, seed: u64) -> Result<AtigConfig> {
    let d = AtigConfig::default();
    let exact = s.or("exact", a.exact, false)?;
    let cfg = AtigConfig {
        kappa: s.or("kappa", a.kappa, d.kappa)?,
        rollouts: s.or("rollouts", a.rollouts, d.rollouts)?,
        horizon: s.or("horizon", a.horizon, d.horizon)?,
        cex_rollouts: s.or("cex-rollouts", a.cex_rollouts, d.cex_rollouts)?,
        cex_random_words: s.or("cex-random-words", a.cex_random_words, d.cex_random_words)?,
        cex_max_len: s.or("cex-max-len", a.cex_max_len, d.cex_max_len)?,
        demos_per_query: s.or("demos-per-query", a.demos_per_query, d.demos_per_query)?,
        max_outer: s.or("max-outer", a.max_outer, d.max_outer)?,
        equivalence: if exact {
            EquivalenceMode::Exact
        } else {
            EquivalenceMode::MonteCarlo
        },
        reward,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(s: &Settings, cli: Option<PathBuf>) -> Result<PathBuf> {
    let dir: PathBuf = s.required("out", cli)?;
    fs::create_dir_all(&dir)
        .map_err(|e| AtigError::input(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| AtigError::input(format!("cannot write {}: {e}", path.display())))
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NONCONVERGENCE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &AtigError) -> i32 {
    match e {
        AtigError::Input(_) | AtigError::Parse { .. } | AtigError::Generation(_) | AtigError::Io(_) => EXIT_INPUT,
        AtigError::Convergence { .. } => EXIT_NONCONVERGENCE,
        AtigError::Training { source, .. } => exit_code(source),
        AtigError::State(_) => EXIT_INTERNAL,
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs the parsed command. `Ok(false)` signals non-convergence.
pub fn execute(cli: &Cli) -> Result<bool> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    match &cli.command {
        Command::GenEnv(a) => cmd_gen_env(&settings, a).map(|_| true),
        Command::LearnDfa(a) => cmd_learn_dfa(&settings, a),
        Command::Train(a) => cmd_train(&settings, a).map(|_| true),
        Command::Evaluate(a) => cmd_evaluate(&settings, a).map(|_| true),
        Command::Run(a) => cmd_run(&settings, a),
    }
}

pub fn cmd_gen_env(s: &Settings, a: &GenEnvArgs) -> Result<PathBuf> {
    s.check_known(&["width", "height", "regions", "seed", "slip", "out"])?;
    let w = s.or("width", a.width, 12)?;
    let h = s.or("height", a.height, 12)?;
    let r = s.or("regions", a.regions, 1)?;
    let seed = s.required("seed", a.seed)?;
    let mut grid = generate_random_env(w, h, r, seed)?;
    if let Some(p) = s.get("slip", a.slip)? {
        grid = grid.with_slip(p)?;
    }
    let out: PathBuf = s.required("out", a.out.clone())?;
    write(&out, &grid.to_text())?;
    println!("{}", path_string(&out));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct LearnDfaSummary {
    dfa_path: String,
    query_log_path: String,
    demos_path: String,
    dfa_states: usize,
    membership_queries: usize,
    equivalence_rounds: usize,
    counterexamples: Vec<String>,
    exact_match: bool,
}

pub fn cmd_learn_dfa(s: &Settings, a: &LearnDfaArgs) -> Result<bool> {
    s.check_known(&keys(&[ENV_KEYS, TASK_KEYS, ATIG_KEYS], &["seed", "out"]))?;
    let grid = resolve_env(s, &a.env)?;
    let task = resolve_task(s, &a.task, &grid)?;
    let seed: u64 = s.required("seed", a.seed)?;
    let cfg = resolve_atig(s, &a.atig, RewardConfig::default(), seed)?;
    let out = out_dir(s, a.out.clone())?;
    let mut oracle = LoggingOracle::new(Demonstrator::new(
        &task,
        &grid,
        cfg.demos_per_query,
        rng::derive(seed, 1),
    ));
    let mut table = ObservationTable::new(task.dfa.alphabet(), &mut oracle)?;
    table.close_and_make_consistent(&mut oracle)?;
    let mut hyp = table.build_hypothesis()?;
    let horizon = cfg.horizon_for(&grid);
    let mut cexs = Vec::new();
    let mut found_all = false;
    for round in 0..cfg.max_outer.max(1) * 10 {
        // without a learned policy, rollouts follow the uniform policy
        let product = automata::build_product(&grid, &hyp)?;
        let policy = crate::irl::Policy::uniform(product.num_states(), product.num_actions());
        let budget = CexBudget {
            rollouts: cfg.cex_rollouts,
            random_words: cfg.cex_random_words,
            max_len: cfg.cex_max_len,
            horizon,
            exact: cfg.equivalence == EquivalenceMode::Exact,
        };
        match find_counterexample(
            &grid,
            &task,
            &hyp,
            &product,
            &policy,
            &budget,
            rng::derive(seed, 50 + round as u64),
        )? {
            None => {
                found_all = true;
                break;
            }
            Some(w) => {
                cexs.push(word_to_string(&w));
                oracle.inner_mut().add_positive(&w)?;
                table.process_counterexample(&w, &mut oracle)?;
                table.close_and_make_consistent(&mut oracle)?;
                hyp = table.build_hypothesis()?;
            }
        }
    }
    let dfa_path = out.join("dfa.txt");
    let log_path = out.join("queries.csv");
    let demos_path = out.join("demos.txt");
    write(&dfa_path, &hyp.to_text())?;
    let mut buf = Vec::new();
    write_query_log(oracle.log(), &mut buf)?;
    write(&log_path, &String::from_utf8_lossy(&buf))?;
    save_demos(oracle.inner().demonstrations(), &demos_path)?;
    let summary = LearnDfaSummary {
        dfa_path: path_string(&dfa_path),
        query_log_path: path_string(&log_path),
        demos_path: path_string(&demos_path),
        dfa_states: hyp.num_states(),
        membership_queries: oracle.query_count(),
        equivalence_rounds: cexs.len() + 1,
        counterexamples: cexs,
        exact_match: automata::exact_equivalence(&hyp, &task.dfa)?.is_none(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&out.join("learn_dfa.json"), &json)?;
    println!("{json}");
    Ok(found_all)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    model_path: String,
    metrics_path: String,
    final_beta: f64,
    final_iteration: usize,
    stopped_early: bool,
    demonstrations: usize,
}

pub fn cmd_train(s: &Settings, a: &TrainArgs) -> Result<PathBuf> {
    s.check_known(&keys(
        &[ENV_KEYS, TASK_KEYS, IRL_KEYS, ATIG_KEYS],
        &["dfa", "demos", "seed", "out"],
    ))?;
    let grid = resolve_env(s, &a.env)?;
    let task = resolve_task(s, &a.task, &grid)?;
    let seed: u64 = s.required("seed", a.seed)?;
    let reward = resolve_reward(s, &a.irl)?;
    let train_cfg = resolve_train(s, &a.irl, reward.variant, seed)?;
    let cfg = resolve_atig(s, &a.atig, reward.clone(), seed)?;
    let dfa_path: PathBuf = s.required("dfa", a.dfa.clone())?;
    let dfa = Dfa::load(&dfa_path).map_err(|e| reclassify_io(e, "automaton file"))?;
    let demos_path: PathBuf = s.required("demos", a.demos.clone())?;
    let demos = load_demos(&demos_path, &grid).map_err(|e| reclassify_io(e, "demonstrations file"))?;
    let out = out_dir(s, a.out.clone())?;
    let lr = learn_reward(
        &grid,
        &task,
        &dfa,
        &demos,
        &reward,
        &train_cfg,
        None,
        cfg.rollouts,
        cfg.horizon_for(&grid),
        seed,
    )?;
    let model_path = out.join("model.txt");
    let metrics_path = out.join("metrics.csv");
    lr.model.save(&model_path)?;
    let (final_iteration, stopped_early, csv) = match &lr.report {
        Some(r) => (r.final_iteration, r.stopped_early, r.metrics_csv()),
        None => (0, false, "iteration,log_likelihood,grad_norm,beta\n".to_string()),
    };
    write(&metrics_path, &csv)?;
    let summary = TrainSummary {
        model_path: path_string(&model_path),
        metrics_path: path_string(&metrics_path),
        final_beta: lr.beta,
        final_iteration,
        stopped_early,
        demonstrations: demos.len(),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(model_path)
}

pub fn cmd_evaluate(s: &Settings, a: &EvaluateArgs) -> Result<SuccessRatio> {
    s.check_known(&keys(
        &[ENV_KEYS, TASK_KEYS, IRL_KEYS, ATIG_KEYS],
        &["dfa", "model", "seed"],
    ))?;
    let grid = resolve_env(s, &a.env)?;
    let task = resolve_task(s, &a.task, &grid)?;
    let seed: u64 = s.required("seed", a.seed)?;
    let reward = resolve_reward(s, &a.irl)?;
    let train_cfg = resolve_train(s, &a.irl, reward.variant, seed)?;
    let cfg = resolve_atig(s, &a.atig, reward.clone(), seed)?;
    let dfa_path: PathBuf = s.required("dfa", a.dfa.clone())?;
    let dfa = Dfa::load(&dfa_path).map_err(|e| reclassify_io(e, "automaton file"))?;
    let model_path: PathBuf = s.required("model", a.model.clone())?;
    let model = RewardModel::load(&model_path).map_err(|e| reclassify_io(e, "model file"))?;
    let sr = evaluate_model(
        &grid,
        &task,
        &dfa,
        &model,
        &reward,
        &train_cfg,
        cfg.rollouts,
        cfg.horizon_for(&grid),
        rng::derive(seed, SEED_FINAL_EVAL),
    )?;
    println!("{}", serde_json::to_string_pretty(&sr).expect("ratio serializes"));
    Ok(sr)
}

#[derive(Debug, Serialize)]
pub struct TestEnvReport {
    pub seeds: Vec<u64>,
    pub betas: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub task: String,
    pub method: String,
    pub variant: String,
    pub seed: u64,
    pub converged: bool,
    pub final_beta: f64,
    pub training_beta: f64,
    pub membership_queries: usize,
    pub demonstrations: usize,
    pub dfa_states: usize,
    pub iterations: Vec<IterationLog>,
    pub env_path: String,
    pub dfa_path: String,
    pub hypothesis_paths: Vec<String>,
    pub model_path: String,
    pub metrics_path: String,
    pub query_log_path: Option<String>,
    pub demos_path: String,
    pub test_envs: Option<TestEnvReport>,
}

/// Seeds of the evaluation environments of a run.
pub fn test_env_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| rng::derive(seed, SEED_TEST_ENVS + i)).collect()
}

pub fn cmd_run(s: &Settings, a: &RunArgs) -> Result<bool> {
    s.check_known(&keys(
        &[ENV_KEYS, TASK_KEYS, IRL_KEYS, ATIG_KEYS],
        &["baseline", "test-envs", "seed", "out"],
    ))?;
    let seed: u64 = s.required("seed", a.seed)?;
    let grid = resolve_env(s, &a.env)?;
    let task = resolve_task(s, &a.task, &grid)?;
    let reward = resolve_reward(s, &a.irl)?;
    let train_cfg = resolve_train(s, &a.irl, reward.variant, seed)?;
    let cfg = resolve_atig(s, &a.atig, reward.clone(), seed)?;
    let baseline = s
        .get::<String>("baseline", a.baseline.clone())?
        .map(|b| b.parse::<Baseline>())
        .transpose()?;
    let n_test: usize = s.or("test-envs", a.test_envs, 0)?;
    let out = out_dir(s, a.out.clone())?;

    let env_path = out.join("env.txt");
    write(&env_path, &grid.to_text())?;
    let dfa_path = out.join("dfa.txt");
    let model_path = out.join("model.txt");
    let metrics_path = out.join("metrics.csv");
    let demos_path = out.join("demos.txt");

    struct Result1 {
        method: String,
        dfa: Dfa,
        model: RewardModel,
        metrics: String,
        training_beta: f64,
        converged: bool,
        words: Vec<Word>,
        log: Vec<IterationLog>,
        queries: usize,
        demos: Vec<crate::oracle::Demonstration>,
        hypothesis_paths: Vec<String>,
        query_log_path: Option<String>,
    }
    let empty_csv = || "iteration,log_likelihood,grad_norm,beta\n".to_string();
    let r = match baseline {
        None => {
            let o = run_atig(&grid, &task, &train_cfg, &cfg)?;
            let mut hyp_paths = Vec::new();
            for (k, h) in o.hypotheses.iter().enumerate() {
                let p = out.join(format!("hypothesis_{k}.txt"));
                write(&p, &h.to_text())?;
                hyp_paths.push(path_string(&p));
            }
            let qpath = out.join("queries.csv");
            let mut buf = Vec::new();
            write_query_log(&o.queries, &mut buf)?;
            write(&qpath, &String::from_utf8_lossy(&buf))?;
            Result1 {
                method: "atig".into(),
                dfa: o.dfa.clone(),
                metrics: o
                    .learning
                    .report
                    .as_ref()
                    .map(|r| r.metrics_csv())
                    .unwrap_or_else(empty_csv),
                model: o.learning.model.clone(),
                training_beta: o.learning.beta,
                converged: o.converged,
                words: o.positive_words.clone(),
                queries: o.queries.len(),
                log: o.log,
                demos: o.demos,
                hypothesis_paths: hyp_paths,
                query_log_path: Some(path_string(&qpath)),
            }
        }
        Some(b) => {
            let words = exact_positive_words(&grid, &task, &cfg)?;
            let o = run_baseline(&grid, &task, b, &words, &train_cfg, &cfg)?;
            let demos = crate::orchestrator::demonstrations_for(&grid, &task, &words, &cfg)?;
            Result1 {
                method: b.as_str().into(),
                dfa: o.dfa.clone(),
                metrics: o
                    .learning
                    .report
                    .as_ref()
                    .map(|r| r.metrics_csv())
                    .unwrap_or_else(empty_csv),
                model: o.learning.model.clone(),
                training_beta: o.success.beta,
                converged: true,
                words,
                log: Vec::new(),
                queries: 0,
                demos,
                hypothesis_paths: Vec::new(),
                query_log_path: None,
            }
        }
    };
    write(&dfa_path, &r.dfa.to_text())?;
    r.model.save(&model_path)?;
    write(&metrics_path, &r.metrics)?;
    save_demos(&r.demos, &demos_path)?;

    let final_sr = evaluate_model(
        &grid,
        &task,
        &r.dfa,
        &r.model,
        &reward,
        &train_cfg,
        cfg.rollouts,
        cfg.horizon_for(&grid),
        rng::derive(seed, SEED_FINAL_EVAL),
    )?;

    let test_envs = if n_test > 0 {
        let (w, h) = (grid.width(), grid.height());
        let regions = s.or("regions", a.env.regions, 1)?;
        let seeds = test_env_seeds(seed, n_test);
        let mut betas = Vec::with_capacity(n_test);
        for (i, &es) in seeds.iter().enumerate() {
            let env = generate_random_env(w, h, regions, es)?.with_slip(grid.slip())?;
            let env_task = TaskSpec::new(task.dfa.clone(), task.name.clone(), task.horizon)?;
            let sr = evaluate_on_env(&env, &env_task, &r.dfa, &r.words, &r.model, &train_cfg, &cfg, es)?;
            log::info!("test environment {i}: beta = {:.4}", sr.beta);
            betas.push(sr.beta);
        }
        let (mean, std) = mean_std(&betas);
        Some(TestEnvReport {
            seeds,
            betas,
            mean,
            std,
        })
    } else {
        None
    };

    let summary = RunSummary {
        task: task.name.clone(),
        method: r.method,
        variant: reward.variant.as_str().into(),
        seed,
        converged: r.converged,
        final_beta: final_sr.beta,
        training_beta: r.training_beta,
        membership_queries: r.queries,
        demonstrations: r.demos.len(),
        dfa_states: r.dfa.num_states(),
        iterations: r.log,
        env_path: path_string(&env_path),
        dfa_path: path_string(&dfa_path),
        hypothesis_paths: r.hypothesis_paths,
        model_path: path_string(&model_path),
        metrics_path: path_string(&metrics_path),
        query_log_path: r.query_log_path,
        demos_path: path_string(&demos_path),
        test_envs,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&out.join("summary.json"), &json)?;
    println!("{json}");
    Ok(r.converged)
}
