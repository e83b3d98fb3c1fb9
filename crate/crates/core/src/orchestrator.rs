//! The outer loop: alternate task inference (L*) and reward learning (IRL),
//! score the learned policy by Monte Carlo, and feed counterexamples back.

use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::automata::{
    build_product, exact_equivalence, info_bits_automaton, trivial_automaton, word_to_string, Dfa, ProductMdp, Word,
};
use crate::error::{AtigError, Result};
use crate::grid_env::{Action, GridMap, NUM_REGION_TYPES};
use crate::irl::{
    project_demo, train, FeatureEncoding, Policy, ProjectedDemo, RewardInputs, RewardModel, RewardVariant, TrainConfig,
    TrainReport,
};
use crate::lstar::{initial_hypothesis, learn, LoggingOracle, QueryRecord};
use crate::oracle::{answer_membership, default_horizon, task_eval, Demonstration, Demonstrator, TaskSpec};
use crate::rng;

const SEED_DEMOS: u64 = 1;
const SEED_EVAL: u64 = 2;
const SEED_CEX: u64 = 3;
const SEED_MODEL: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    pub hidden: Vec<usize>,
    pub encoding: FeatureEncoding,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            variant: RewardVariant::Tabular,
            hidden: vec![214, 50],
            encoding: FeatureEncoding::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivalenceMode {
    /// Counterexamples from policy rollouts and random words only.
    MonteCarlo,
    /// Additionally consult the ground-truth automaton; the loop then only
    /// stops on a language-equal hypothesis.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtigConfig {
    /// Stop once `β > kappa`.
    pub kappa: f64,
    pub rollouts: usize,
    /// Rollout horizon; 0 means `4 (W + H)`.
    pub horizon: usize,
    pub cex_rollouts: usize,
    pub cex_random_words: usize,
    pub cex_max_len: usize,
    pub demos_per_query: usize,
    pub max_outer: usize,
    pub equivalence: EquivalenceMode,
    pub reward: RewardConfig,
    pub seed: u64,
}

impl Default for AtigConfig {
    fn default() -> Self {
        AtigConfig {
            kappa: 0.9,
            rollouts: 1000,
            horizon: 0,
            cex_rollouts: 200,
            cex_random_words: 10_000,
            cex_max_len: 8,
            demos_per_query: 10,
            max_outer: 10,
            equivalence: EquivalenceMode::MonteCarlo,
            reward: RewardConfig::default(),
            seed: 0,
        }
    }
}

impl AtigConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(AtigError::input(format!("kappa must lie in (0,1), got {}", self.kappa)));
        }
        if self.rollouts == 0 || self.demos_per_query == 0 || self.max_outer == 0 {
            return Err(AtigError::input(
                "rollouts, demonstrations per query and outer iterations must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn horizon_for(&self, grid: &GridMap) -> usize {
        if self.horizon == 0 {
            default_horizon(grid)
        } else {
            self.horizon
        }
    }

    fn budget(&self, grid: &GridMap) -> CexBudget {
        CexBudget {
            rollouts: self.cex_rollouts,
            random_words: self.cex_random_words,
            max_len: self.cex_max_len,
            horizon: self.horizon_for(grid),
            exact: self.equivalence == EquivalenceMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuccessRatio {
    pub beta: f64,
    pub successes: usize,
    pub rollouts: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub dfa_states: usize,
    /// Distinct membership queries asked so far.
    pub membership_queries: usize,
    pub demonstrations: usize,
    pub train_iterations: usize,
    pub beta: f64,
    pub counterexample: Option<String>,
    pub wall_time_s: f64,
}

/// One Monte Carlo episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rollout {
    pub word: Word,
    pub success: bool,
    pub steps: usize,
}

/// Everything a rollout needs, shared read-only across workers.
struct RolloutCtx<'a> {
    grid: &'a GridMap,
    truth: &'a Dfa,
    truth_trap: Vec<bool>,
    dfa: &'a Dfa,
    product: &'a ProductMdp,
    policy: &'a Policy,
    horizon: usize,
}

impl<'a> RolloutCtx<'a> {
    fn new(
        grid: &'a GridMap,
        task: &'a TaskSpec,
        dfa: &'a Dfa,
        product: &'a ProductMdp,
        policy: &'a Policy,
        horizon: usize,
    ) -> Result<Self> {
        if policy.num_states() != product.num_states() || policy.num_actions != Action::COUNT {
            return Err(AtigError::input("policy is not defined on the product states"));
        }
        if product.grid_cells() != grid.num_cells() || product.dfa_states() != dfa.num_states() {
            return Err(AtigError::input("product does not match the grid and automaton"));
        }
        let mut truth_trap = vec![false; task.dfa.num_states()];
        for q in task.dfa.trap_states() {
            truth_trap[q] = true;
        }
        Ok(RolloutCtx {
            grid,
            truth: &task.dfa,
            truth_trap,
            dfa,
            product,
            policy,
            horizon,
        })
    }

    /// Follows the policy on the product built from the hypothesis while
    /// tracking the ground truth; stops at ground-truth acceptance or trap.
    /// Pairs missing from the product (possible only after the hypothesis
    /// has absorbed) fall back to a uniform action.
    fn run(&self, r: &mut rng::Rng) -> Rollout {
        let mut s = self.grid.sample_initial(r);
        let mut word = Vec::new();
        let first = self.grid.label(s);
        word.extend(first);
        let mut q = self.dfa.advance(self.dfa.init(), first);
        let mut t = self.truth.advance(self.truth.init(), first);
        let mut steps = 0;
        while steps < self.horizon && !self.truth.is_accepting(t) && !self.truth_trap[t] {
            let u: f64 = r.gen();
            let a = match self.product.index_of(s, q) {
                Some(z) => self.policy.sample_with(z, u),
                None => ((u * Action::COUNT as f64) as usize).min(Action::COUNT - 1),
            };
            let action = Action::from_index(a).expect("action index in range");
            s = self.grid.sample_step(s, action, r);
            let l = self.grid.label(s);
            word.extend(l);
            q = self.dfa.advance(q, l);
            t = self.truth.advance(t, l);
            steps += 1;
        }
        Rollout {
            word,
            success: self.truth.is_accepting(t),
            steps,
        }
    }
}

/// `n` independent rollouts of at most `horizon` steps; rollout `i` draws
/// from its own stream of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn rollouts(
    grid: &GridMap,
    task: &TaskSpec,
    dfa: &Dfa,
    product: &ProductMdp,
    policy: &Policy,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Rollout>> {
    let ctx = RolloutCtx::new(grid, task, dfa, product, policy, horizon)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| ctx.run(&mut rng::stream(seed, i)))
        .collect())
}

/// Fraction of `n` rollouts that complete the ground-truth task.
#[allow(clippy::too_many_arguments)]
pub fn success_ratio(
    grid: &GridMap,
    task: &TaskSpec,
    dfa: &Dfa,
    product: &ProductMdp,
    policy: &Policy,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<SuccessRatio> {
    if n == 0 {
        return Err(AtigError::input("success ratio needs at least one rollout"));
    }
    let ctx = RolloutCtx::new(grid, task, dfa, product, policy, horizon)?;
    let successes = (0..n as u64)
        .into_par_iter()
        .filter(|&i| ctx.run(&mut rng::stream(seed, i)).success)
        .count();
    Ok(SuccessRatio {
        beta: successes as f64 / n as f64,
        successes,
        rollouts: n,
        horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CexBudget {
    pub rollouts: usize,
    pub random_words: usize,
    pub max_len: usize,
    pub horizon: usize,
    pub exact: bool,
}

/// Shortest prefix of `word` on which the hypothesis and the task disagree,
/// with the disagreement confirmed by the membership oracle.
fn distinguishing_prefix(grid: &GridMap, task: &TaskSpec, hyp: &Dfa, word: &[usize]) -> Result<Option<Word>> {
    for k in 0..=word.len() {
        let w = &word[..k];
        let h = hyp.accepts(w)?;
        if task_eval(task, w)? != h && answer_membership(task, grid, w)? != h {
            return Ok(Some(w.to_vec()));
        }
    }
    Ok(None)
}

/// Searches, in order, the emissions of policy rollouts, uniformly random
/// words, and (if enabled) the exact product-automaton check for a word the
/// hypothesis classifies wrongly.
#[allow(clippy::too_many_arguments)]
pub fn find_counterexample(
    grid: &GridMap,
    task: &TaskSpec,
    hyp: &Dfa,
    product: &ProductMdp,
    policy: &Policy,
    budget: &CexBudget,
    seed: u64,
) -> Result<Option<Word>> {
    if hyp.alphabet() != task.dfa.alphabet() {
        return Err(AtigError::input("hypothesis and task alphabets differ"));
    }
    if budget.rollouts > 0 {
        let runs = rollouts(grid, task, hyp, product, policy, budget.rollouts, budget.horizon, seed)?;
        for r in runs {
            if let Some(w) = distinguishing_prefix(grid, task, hyp, &r.word)? {
                return Ok(Some(w));
            }
        }
    }
    if budget.random_words > 0 && budget.max_len > 0 {
        let mut r = rng::seeded(rng::derive(seed, 1));
        for _ in 0..budget.random_words {
            let len = r.gen_range(1..=budget.max_len);
            let w: Word = (0..len).map(|_| r.gen_range(0..hyp.alphabet())).collect();
            if let Some(w) = distinguishing_prefix(grid, task, hyp, &w)? {
                return Ok(Some(w));
            }
        }
    }
    if budget.exact {
        if let Some(w) = exact_equivalence(hyp, &task.dfa)? {
            if answer_membership(task, grid, &w)? != hyp.accepts(&w)? {
                return Ok(Some(w));
            }
        }
    }
    Ok(None)
}

/// Reward inputs for `product` on `grid`. The automaton one-hot is widened
/// when the automaton has more states than the configured slots.
pub fn reward_inputs(grid: &GridMap, product: &ProductMdp, cfg: &RewardConfig) -> Result<RewardInputs> {
    Ok(match cfg.variant {
        RewardVariant::Tabular => RewardInputs::Tabular {
            pairs: product.num_pairs(),
        },
        _ => {
            let encoding = FeatureEncoding {
                dfa_slots: cfg.encoding.dfa_slots.max(product.dfa_states()),
                ..cfg.encoding
            };
            RewardInputs::Features(encoding.encode_product(grid, product)?)
        }
    })
}

/// Product, learned reward and policy for a fixed automaton.
#[derive(Debug, Clone)]
pub struct RewardLearning {
    pub product: ProductMdp,
    pub model: RewardModel,
    pub policy: Policy,
    pub report: Option<TrainReport>,
    /// `β` of the returned policy.
    pub beta: f64,
    pub num_demos: usize,
}

/// Runs IRL on `grid ⊗ dfa` from `demos`, scoring with Monte Carlo success
/// against the task. `init` seeds the parameters of non-tabular models.
#[allow(clippy::too_many_arguments)]
pub fn learn_reward(
    grid: &GridMap,
    task: &TaskSpec,
    dfa: &Dfa,
    demos: &[Demonstration],
    reward: &RewardConfig,
    train_cfg: &TrainConfig,
    init: Option<RewardModel>,
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<RewardLearning> {
    let product = build_product(grid, dfa)?;
    let inputs = reward_inputs(grid, &product, reward)?;
    let model = match init {
        Some(m) if m.variant() == reward.variant && m.input_dim().is_some() && m.input_dim() == inputs.dim() => m,
        _ => RewardModel::for_inputs(reward.variant, &inputs, &reward.hidden, rng::derive(seed, SEED_MODEL))?,
    };
    let projected: Vec<ProjectedDemo> = demos
        .iter()
        .map(|d| project_demo(grid, dfa, &product, d))
        .collect::<Result<_>>()?;
    let mut evals = 0u64;
    let eval_seed = rng::derive(seed, SEED_EVAL);
    let mut evaluate = |p: &Policy| -> Result<f64> {
        let s = rng::derive(eval_seed, evals);
        evals += 1;
        Ok(success_ratio(grid, task, dfa, &product, p, rollouts, horizon, s)?.beta)
    };
    if projected.iter().all(|d| d.pairs.is_empty()) {
        let policy = Policy::uniform(product.num_states(), product.num_actions());
        let beta = evaluate(&policy)?;
        return Ok(RewardLearning {
            product,
            model,
            policy,
            report: None,
            beta,
            num_demos: demos.len(),
        });
    }
    let out = train(&product, &projected, model, &inputs, train_cfg, &mut evaluate)?;
    Ok(RewardLearning {
        beta: out.report.final_beta,
        model: out.model,
        policy: out.policy,
        report: Some(out.report),
        product,
        num_demos: demos.len(),
    })
}

/// Policy induced on `grid ⊗ dfa` by an already trained feature-based model.
pub fn policy_from_model(
    grid: &GridMap,
    dfa: &Dfa,
    model: &RewardModel,
    reward: &RewardConfig,
    train_cfg: &TrainConfig,
) -> Result<(ProductMdp, Policy)> {
    let product = build_product(grid, dfa)?;
    let cfg = RewardConfig {
        variant: model.variant(),
        ..reward.clone()
    };
    let inputs = reward_inputs(grid, &product, &cfg)?;
    let q = crate::irl::soft_value_iteration(&product, &model.rewards(&inputs)?, &train_cfg.solver, None)?;
    Ok((product, crate::irl::soft_policy(&q)))
}

/// Success ratio of the soft policy of a saved model on `env ⊗ dfa`, with
/// the soft fixed point solved from scratch. A tabular model must come from
/// the same environment and automaton.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    env: &GridMap,
    task: &TaskSpec,
    dfa: &Dfa,
    model: &RewardModel,
    reward: &RewardConfig,
    train_cfg: &TrainConfig,
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<SuccessRatio> {
    let (product, policy) = policy_from_model(env, dfa, model, reward, train_cfg)?;
    success_ratio(env, task, dfa, &product, &policy, rollouts, horizon, seed)
}

#[derive(Debug, Clone)]
pub struct AtigOutcome {
    pub dfa: Dfa,
    /// Hypothesis used in each outer iteration.
    pub hypotheses: Vec<Dfa>,
    pub learning: RewardLearning,
    pub log: Vec<IterationLog>,
    pub converged: bool,
    pub queries: Vec<QueryRecord>,
    pub demos: Vec<Demonstration>,
    pub positive_words: Vec<Word>,
}

fn check_task(grid: &GridMap, task: &TaskSpec) -> Result<()> {
    let present = grid.present_types();
    let missing: Vec<usize> = (0..task.dfa.alphabet().min(NUM_REGION_TYPES))
        .filter(|t| !present.contains(t))
        .collect();
    if !missing.is_empty() {
        return Err(AtigError::input(format!(
            "environment lacks regions of type(s) {missing:?} used by task {}",
            task.name
        )));
    }
    if task.dfa.alphabet() > NUM_REGION_TYPES {
        return Err(AtigError::input(
            "task alphabet is larger than the number of region types",
        ));
    }
    Ok(())
}

/// Alternates L* (with the executing demonstrator as membership oracle) and
/// reward learning on the hypothesis product until `β > κ` or the outer
/// budget runs out.
pub fn run_atig(grid: &GridMap, task: &TaskSpec, train_cfg: &TrainConfig, cfg: &AtigConfig) -> Result<AtigOutcome> {
    cfg.validate()?;
    train_cfg.validate()?;
    check_task(grid, task)?;
    let horizon = cfg.horizon_for(grid);
    let mut oracle = LoggingOracle::new(Demonstrator::new(
        task,
        grid,
        cfg.demos_per_query,
        rng::derive(cfg.seed, SEED_DEMOS),
    ));
    let (mut table, mut hyp) = initial_hypothesis(task.dfa.alphabet(), &mut oracle)?;
    let mut log = Vec::new();
    let mut hypotheses = Vec::new();
    let mut prev_model: Option<RewardModel> = None;
    let mut converged = false;
    let mut learning = None;
    for k in 0..cfg.max_outer {
        let started = Instant::now();
        hypotheses.push(hyp.clone());
        let round_seed = rng::derive(cfg.seed, 100 + k as u64);
        let lr = learn_reward(
            grid,
            task,
            &hyp,
            oracle.inner().demonstrations(),
            &cfg.reward,
            train_cfg,
            prev_model.take(),
            cfg.rollouts,
            horizon,
            round_seed,
        )?;
        log::info!(
            "outer iteration {k}: {} DFA states, {} demonstrations, beta = {:.4}",
            hyp.num_states(),
            lr.num_demos,
            lr.beta
        );
        let mut entry = IterationLog {
            iteration: k,
            dfa_states: hyp.num_states(),
            membership_queries: oracle.query_count(),
            demonstrations: lr.num_demos,
            train_iterations: lr.report.as_ref().map_or(0, |r| r.final_iteration),
            beta: lr.beta,
            counterexample: None,
            wall_time_s: 0.0,
        };
        let exact = cfg.equivalence == EquivalenceMode::Exact;
        let done = lr.beta > cfg.kappa && (!exact || exact_equivalence(&hyp, &task.dfa)?.is_none());
        let cex = if done {
            None
        } else {
            find_counterexample(
                grid,
                task,
                &hyp,
                &lr.product,
                &lr.policy,
                &cfg.budget(grid),
                rng::derive(round_seed, SEED_CEX),
            )?
        };
        prev_model = Some(lr.model.clone());
        learning = Some(lr);
        match cex {
            Some(w) if k + 1 < cfg.max_outer => {
                entry.counterexample = Some(word_to_string(&w));
                oracle.inner_mut().add_positive(&w)?;
                table.process_counterexample(&w, &mut oracle)?;
                table.close_and_make_consistent(&mut oracle)?;
                hyp = table.build_hypothesis()?;
                entry.wall_time_s = started.elapsed().as_secs_f64();
                log.push(entry);
            }
            other => {
                entry.counterexample = other.as_deref().map(word_to_string);
                entry.wall_time_s = started.elapsed().as_secs_f64();
                log.push(entry);
                converged = done;
                break;
            }
        }
    }
    let learning = learning.expect("at least one outer iteration runs");
    let demonstrator = oracle.inner();
    Ok(AtigOutcome {
        dfa: hypotheses.last().expect("at least one hypothesis").clone(),
        hypotheses,
        demos: demonstrator.demonstrations().to_vec(),
        positive_words: demonstrator.positive_words().to_vec(),
        queries: oracle.log().to_vec(),
        learning,
        log,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Memoryless,
    InfoBits,
}

impl Baseline {
    pub fn automaton(self, alphabet: usize) -> Dfa {
        match self {
            Baseline::Memoryless => trivial_automaton(alphabet),
            Baseline::InfoBits => info_bits_automaton(alphabet),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Memoryless => "memoryless",
            Baseline::InfoBits => "info-bits",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = AtigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memoryless" => Ok(Baseline::Memoryless),
            "info-bits" | "infobits" | "ib" => Ok(Baseline::InfoBits),
            other => Err(AtigError::input(format!("unknown baseline {other:?}"))),
        }
    }
}

/// Demonstrations for the given positive words, generated exactly as the
/// demonstrator inside [`run_atig`] would (same seeds, same order).
pub fn demonstrations_for(
    grid: &GridMap,
    task: &TaskSpec,
    words: &[Word],
    cfg: &AtigConfig,
) -> Result<Vec<Demonstration>> {
    let mut d = Demonstrator::new(task, grid, cfg.demos_per_query, rng::derive(cfg.seed, SEED_DEMOS));
    for w in words {
        d.add_positive(w)?;
    }
    Ok(d.demonstrations().to_vec())
}

/// Positive membership words gathered by L* with exact equivalence queries;
/// the demonstration source for baselines when no ATIG run is at hand.
pub fn exact_positive_words(grid: &GridMap, task: &TaskSpec, cfg: &AtigConfig) -> Result<Vec<Word>> {
    check_task(grid, task)?;
    let mut d = Demonstrator::new(task, grid, 1, rng::derive(cfg.seed, SEED_DEMOS));
    learn(
        task.dfa.alphabet(),
        &mut d,
        |h: &Dfa| exact_equivalence(h, &task.dfa),
        100,
    )?;
    Ok(d.positive_words().to_vec())
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub which: Baseline,
    pub dfa: Dfa,
    pub learning: RewardLearning,
    pub success: SuccessRatio,
}

/// Reward learning with a fixed memory structure in place of the learned
/// automaton, from demonstrations of `words`.
pub fn run_baseline(
    grid: &GridMap,
    task: &TaskSpec,
    which: Baseline,
    words: &[Word],
    train_cfg: &TrainConfig,
    cfg: &AtigConfig,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    check_task(grid, task)?;
    let dfa = which.automaton(task.dfa.alphabet());
    let demos = demonstrations_for(grid, task, words, cfg)?;
    let horizon = cfg.horizon_for(grid);
    let learning = learn_reward(
        grid,
        task,
        &dfa,
        &demos,
        &cfg.reward,
        train_cfg,
        None,
        cfg.rollouts,
        horizon,
        rng::derive(cfg.seed, 200),
    )?;
    let success = SuccessRatio {
        beta: learning.beta,
        successes: (learning.beta * cfg.rollouts as f64).round() as usize,
        rollouts: cfg.rollouts,
        horizon,
    };
    Ok(BaselineOutcome {
        which,
        dfa,
        learning,
        success,
    })
}

/// Success ratio on another environment. A tabular reward is tied to the
/// product it was learned on, so it is relearned there with the same
/// automaton from fresh demonstrations of the same words; feature-based
/// models are applied as they are.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_on_env(
    env: &GridMap,
    task: &TaskSpec,
    dfa: &Dfa,
    words: &[Word],
    model: &RewardModel,
    train_cfg: &TrainConfig,
    cfg: &AtigConfig,
    seed: u64,
) -> Result<SuccessRatio> {
    check_task(env, task)?;
    let horizon = cfg.horizon_for(env);
    let env_cfg = AtigConfig { seed, ..cfg.clone() };
    let (product, policy) = if model.variant() == RewardVariant::Tabular {
        let demos = demonstrations_for(env, task, words, &env_cfg)?;
        let lr = learn_reward(
            env,
            task,
            dfa,
            &demos,
            &cfg.reward,
            train_cfg,
            None,
            cfg.rollouts,
            horizon,
            seed,
        )?;
        (lr.product, lr.policy)
    } else {
        policy_from_model(env, dfa, model, &cfg.reward, train_cfg)?
    };
    success_ratio(
        env,
        task,
        dfa,
        &product,
        &policy,
        cfg.rollouts,
        horizon,
        rng::derive(seed, SEED_EVAL + 10),
    )
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::fixtures;
    use crate::grid_env::generate_random_env;
    use crate::oracle::plan_execution;

    fn env() -> GridMap {
        generate_random_env(12, 12, 1, 7).unwrap()
    }

    #[test]
    fn replayed_plan_succeeds_with_certainty() {
        let g = env();
        let task = TaskSpec::for_grid(fixtures::task3(), "t3", &g);
        let w = vec![0, 1, 2, 3, 0];
        let start = g.start().unwrap();
        let demo = plan_execution(&g, start, &w, task.budget(&w)).unwrap();
        // deterministic on the (cell, automaton state) pairs of the plan
        let dfa = task.dfa.clone();
        let product = build_product(&g, &dfa).unwrap();
        let mut probs = vec![0.25; product.num_pairs()];
        let mut q = dfa.advance(dfa.init(), g.label(g.index_of(start)));
        for (j, a) in demo.actions.iter().enumerate() {
            let z = product.index_of(g.index_of(demo.states[j]), q).unwrap();
            for b in 0..4 {
                probs[z * 4 + b] = if b == a.index() { 1.0 } else { 0.0 };
            }
            q = dfa.advance(q, g.label(g.index_of(demo.states[j + 1])));
        }
        let policy = Policy { probs, num_actions: 4 };
        let sr = success_ratio(&g, &task, &dfa, &product, &policy, 50, 200, 1).unwrap();
        assert_eq!(sr.beta, 1.0);
        assert_eq!(sr.successes, 50);
    }

    #[test]
    fn zero_horizon_never_succeeds_and_is_deterministic() {
        let g = env();
        let task = TaskSpec::for_grid(fixtures::task1(), "t1", &g);
        let dfa = trivial_automaton(4);
        let product = build_product(&g, &dfa).unwrap();
        let policy = Policy::uniform(product.num_states(), 4);
        assert_eq!(
            success_ratio(&g, &task, &dfa, &product, &policy, 100, 0, 3)
                .unwrap()
                .beta,
            0.0
        );
        let a = success_ratio(&g, &task, &dfa, &product, &policy, 500, 100, 3).unwrap();
        let b = success_ratio(&g, &task, &dfa, &product, &policy, 500, 100, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.beta, a.successes as f64 / 500.0);
    }

    #[test]
    fn counterexample_search() {
        let g = env();
        let task = TaskSpec::for_grid(fixtures::task3(), "t3", &g);
        let truth = fixtures::task3();
        let product = build_product(&g, &truth).unwrap();
        let policy = Policy::uniform(product.num_states(), 4);
        let budget = CexBudget {
            rollouts: 50,
            random_words: 200,
            max_len: 7,
            horizon: 96,
            exact: true,
        };
        assert_eq!(
            find_counterexample(&g, &task, &truth, &product, &policy, &budget, 1).unwrap(),
            None
        );
        let zero = CexBudget {
            rollouts: 0,
            random_words: 0,
            exact: false,
            ..budget
        };
        let inter = fixtures::task3_intermediate();
        let p2 = build_product(&g, &inter).unwrap();
        let pol2 = Policy::uniform(p2.num_states(), 4);
        assert_eq!(
            find_counterexample(&g, &task, &inter, &p2, &pol2, &zero, 1).unwrap(),
            None
        );
        let w = find_counterexample(&g, &task, &inter, &p2, &pol2, &budget, 1)
            .unwrap()
            .unwrap();
        assert_ne!(inter.accepts(&w).unwrap(), truth.accepts(&w).unwrap());
        let example = crate::automata::parse_word("0 2 0 1 2 3 0").unwrap();
        assert!(inter.accepts(&example).unwrap() && !truth.accepts(&example).unwrap());
    }

    #[test]
    fn sigma_star_task_single_iteration() {
        let g = env();
        let all = Dfa::new(1, 4, vec![0; 4], 0, &[0]).unwrap();
        let task = TaskSpec::for_grid(all, "all", &g);
        let cfg = AtigConfig {
            rollouts: 100,
            ..AtigConfig::default()
        };
        let tc = TrainConfig {
            max_iterations: 20,
            ..TrainConfig::default()
        };
        let out = run_atig(&g, &task, &tc, &cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.dfa.num_states(), 1);
        assert!(out.converged);
    }

    #[test]
    fn missing_region_type_is_input_error() {
        let g = GridMap::filled(6, 6, crate::grid_env::ObjectKind::Grass).unwrap();
        let task = TaskSpec::for_grid(fixtures::task1(), "t1", &g);
        let r = run_atig(&g, &task, &TrainConfig::default(), &AtigConfig::default());
        assert!(matches!(r, Err(AtigError::Input(_))));
    }
}
