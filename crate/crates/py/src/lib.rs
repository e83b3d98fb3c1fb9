//! Python bindings: grids, automata, membership queries, planning, the full
//! ATIG loop and model evaluation.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use atig::automata::{exact_equivalence, fixtures, Dfa, Word};
use atig::error::AtigError;
use atig::grid_env::{generate_random_env, GridMap};
use atig::irl::{soft_value_iteration, ExplicitMdp, RewardModel, RewardVariant, SolverConfig, TrainConfig};
use atig::oracle::{self, TaskSpec};
use atig::orchestrator::{self, AtigConfig, EquivalenceMode, RewardConfig};

create_exception!(pyatig, AtigException, PyException);

fn err(e: AtigError) -> PyErr {
    match e {
        AtigError::Input(_) | AtigError::Parse { .. } => PyValueError::new_err(e.to_string()),
        other => AtigException::new_err(other.to_string()),
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Grid(GridMap);

#[pymethods]
impl Grid {
    /// Random environment with `regions` 3x3 regions of each type.
    #[staticmethod]
    #[pyo3(signature = (width, height, regions, seed))]
    fn generate(width: usize, height: usize, regions: usize, seed: u64) -> PyResult<Self> {
        generate_random_env(width, height, regions, seed).map(Grid).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        GridMap::parse(text, "<string>").map(Grid).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        GridMap::load(path).map(Grid).map_err(err)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    /// `(x, y, region_type)` for every labeled cell.
    fn labeled_cells(&self) -> Vec<(usize, usize, usize)> {
        self.0.labeled_cells().into_iter().map(|(c, t)| (c.x, c.y, t)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid({}x{}, {} labeled cells)",
            self.0.width(),
            self.0.height(),
            self.0.labeled_cells().len()
        )
    }
}

#[pyclass(name = "Automaton", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Automaton(Dfa);

#[pymethods]
impl Automaton {
    /// Ground-truth automaton of task 1, 2 or 3.
    #[staticmethod]
    fn task(id: usize) -> PyResult<Self> {
        fixtures::task(id)
            .map(Automaton)
            .ok_or_else(|| PyValueError::new_err(format!("unknown task #{id}")))
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Dfa::parse(text, "<string>").map(Automaton).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Dfa::load(path).map(Automaton).map_err(err)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.0.num_states()
    }

    #[getter]
    fn alphabet(&self) -> usize {
        self.0.alphabet()
    }

    fn accepts(&self, word: Word) -> PyResult<bool> {
        self.0.accepts(&word).map_err(err)
    }

    /// A word the two automata disagree on, or `None` if they are equivalent.
    fn counterexample(&self, other: &Automaton) -> PyResult<Option<Word>> {
        exact_equivalence(&self.0, &other.0).map_err(err)
    }

    fn minimize(&self) -> Self {
        Automaton(self.0.minimize())
    }

    fn __repr__(&self) -> String {
        format!(
            "Automaton({} states, {} symbols)",
            self.0.num_states(),
            self.0.alphabet()
        )
    }
}

#[pyclass(name = "RewardModel", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Reward(RewardModel);

#[pymethods]
impl Reward {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        RewardModel::load(path).map(Reward).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        RewardModel::parse(text, "<string>").map(Reward).map_err(err)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.0.variant().as_str()
    }

    fn params(&self) -> Vec<f64> {
        self.0.params()
    }
}

#[pyclass(name = "AtigResult", frozen)]
pub struct AtigResult {
    #[pyo3(get)]
    dfa: Py<Automaton>,
    #[pyo3(get)]
    model: Py<Reward>,
    #[pyo3(get)]
    beta: f64,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    membership_queries: usize,
    #[pyo3(get)]
    demonstrations: usize,
    #[pyo3(get)]
    positive_words: Vec<Word>,
    /// Per-iteration log as a JSON array.
    #[pyo3(get)]
    log_json: String,
}

fn task_for(grid: &GridMap, task: &Automaton) -> TaskSpec {
    TaskSpec::for_grid(task.0.clone(), "task", grid)
}

/// Membership answer for `word` by attempted execution in `grid`.
#[pyfunction]
fn answer_membership(grid: &Grid, task: &Automaton, word: Word) -> PyResult<bool> {
    oracle::answer_membership(&task_for(&grid.0, task), &grid.0, &word).map_err(err)
}

/// Shortest path from the query start emitting exactly `word`, as a list of
/// `(x, y)` cells, or `None` when infeasible.
#[pyfunction]
fn plan_execution(grid: &Grid, word: Word) -> Option<Vec<(usize, usize)>> {
    let g = &grid.0;
    oracle::plan_execution(g, oracle::query_start(g), &word, usize::MAX)
        .map(|d| d.states.iter().map(|c| (c.x, c.y)).collect())
}

/// Soft Q-values of an explicit MDP; `transitions[z * num_actions + a]`
/// lists `(successor, probability)`.
#[pyfunction]
#[pyo3(signature = (num_states, num_actions, transitions, rewards, gamma=0.95, tol=1e-8))]
fn soft_q_values(
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
    gamma: f64,
    tol: f64,
) -> PyResult<Vec<f64>> {
    let mdp = ExplicitMdp::new(num_states, num_actions, transitions).map_err(err)?;
    let cfg = SolverConfig {
        gamma,
        tol,
        ..SolverConfig::default()
    };
    soft_value_iteration(&mdp, &rewards, &cfg, None)
        .map(|q| q.values)
        .map_err(err)
}

fn reward_config(variant: &str) -> PyResult<RewardConfig> {
    Ok(RewardConfig {
        variant: variant.parse::<RewardVariant>().map_err(err)?,
        ..RewardConfig::default()
    })
}

fn train_config(variant: RewardVariant, max_iterations: Option<usize>, seed: u64) -> TrainConfig {
    let d = TrainConfig::for_variant(variant);
    TrainConfig {
        max_iterations: max_iterations.unwrap_or(d.max_iterations),
        min_iterations: d.min_iterations.min(max_iterations.unwrap_or(usize::MAX)),
        seed,
        ..d
    }
}

/// Runs the full task-inference / reward-learning loop.
#[pyfunction]
#[pyo3(signature = (grid, task, seed, exact=false, variant="tabular", max_iterations=None, rollouts=1000, max_outer=10))]
#[allow(clippy::too_many_arguments)]
fn run_atig(
    py: Python<'_>,
    grid: &Grid,
    task: &Automaton,
    seed: u64,
    exact: bool,
    variant: &str,
    max_iterations: Option<usize>,
    rollouts: usize,
    max_outer: usize,
) -> PyResult<AtigResult> {
    let reward = reward_config(variant)?;
    let train_cfg = train_config(reward.variant, max_iterations, seed);
    let cfg = AtigConfig {
        equivalence: if exact {
            EquivalenceMode::Exact
        } else {
            EquivalenceMode::MonteCarlo
        },
        rollouts,
        max_outer,
        reward,
        seed,
        ..AtigConfig::default()
    };
    let t = task_for(&grid.0, task);
    let out = orchestrator::run_atig(&grid.0, &t, &train_cfg, &cfg).map_err(err)?;
    Ok(AtigResult {
        dfa: Py::new(py, Automaton(out.dfa.clone()))?,
        model: Py::new(py, Reward(out.learning.model.clone()))?,
        beta: out.learning.beta,
        converged: out.converged,
        membership_queries: out.queries.len(),
        demonstrations: out.demos.len(),
        positive_words: out.positive_words.clone(),
        log_json: serde_json::to_string(&out.log).map_err(|e| AtigException::new_err(e.to_string()))?,
    })
}

/// Monte Carlo success ratio of a trained model's soft policy on `grid`
/// with automaton `dfa`, judged against `task`.
#[pyfunction]
#[pyo3(signature = (grid, task, dfa, model, seed, rollouts=1000))]
fn evaluate(
    grid: &Grid,
    task: &Automaton,
    dfa: &Automaton,
    model: &Reward,
    seed: u64,
    rollouts: usize,
) -> PyResult<f64> {
    let t = task_for(&grid.0, task);
    let reward = RewardConfig {
        variant: model.0.variant(),
        ..RewardConfig::default()
    };
    let train_cfg = TrainConfig::for_variant(reward.variant);
    let horizon = AtigConfig::default().horizon_for(&grid.0);
    orchestrator::evaluate_model(
        &grid.0, &t, &dfa.0, &model.0, &reward, &train_cfg, rollouts, horizon, seed,
    )
    .map(|s| s.beta)
    .map_err(err)
}

#[pymodule]
fn pyatig(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AtigException", m.py().get_type::<AtigException>())?;
    m.add_class::<Grid>()?;
    m.add_class::<Automaton>()?;
    m.add_class::<Reward>()?;
    m.add_class::<AtigResult>()?;
    m.add_function(wrap_pyfunction!(answer_membership, m)?)?;
    m.add_function(wrap_pyfunction!(plan_execution, m)?)?;
    m.add_function(wrap_pyfunction!(soft_q_values, m)?)?;
    m.add_function(wrap_pyfunction!(run_atig, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
