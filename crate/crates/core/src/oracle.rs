//! Ground-truth task and the simulated demonstrator.
//!
//! A membership query is answered by trying to execute the queried subgoal
//! sequence: the demonstrator looks for a path whose emitted labels are
//! exactly the query. Infeasible queries are answered `false`, feasible ones
//! by the ground-truth automaton.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::automata::{parse_word, word_to_string, Dfa, Word};
use crate::error::{AtigError, Result};
use crate::grid_env::{Action, Cell, GridMap};
use crate::lstar::MembershipOracle;
use crate::rng;

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub dfa: Dfa,
    pub name: String,
    /// Step budget per subgoal symbol when executing a query; a word `ω` may
    /// use up to `horizon * max(1, |ω|)` steps.
    pub horizon: usize,
}

impl TaskSpec {
    pub fn new(dfa: Dfa, name: impl Into<String>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(AtigError::input("task horizon must be at least 1"));
        }
        Ok(TaskSpec {
            dfa,
            name: name.into(),
            horizon,
        })
    }

    /// Task with the default per-subgoal budget `4 (W + H)` for `grid`.
    pub fn for_grid(dfa: Dfa, name: impl Into<String>, grid: &GridMap) -> Self {
        TaskSpec {
            dfa,
            name: name.into(),
            horizon: default_horizon(grid),
        }
    }

    pub fn budget(&self, word: &[usize]) -> usize {
        self.horizon * word.len().max(1)
    }
}

pub fn default_horizon(grid: &GridMap) -> usize {
    4 * (grid.width() + grid.height())
}

/// Ground-truth task mapping: 1 iff the word completes the task.
pub fn task_eval(task: &TaskSpec, word: &[usize]) -> Result<bool> {
    task.dfa.accepts(word)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    /// Visited cells, `actions.len() + 1` of them.
    pub states: Vec<Cell>,
    pub actions: Vec<Action>,
    /// Labels emitted along `states`.
    pub labels: Word,
    /// The query this demonstration realizes.
    pub query: Word,
}

impl Demonstration {
    pub fn start(&self) -> Cell {
        self.states[0]
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Rebuilds a demonstration from a start cell and actions under
    /// deterministic dynamics.
    pub fn replay(grid: &GridMap, start: Cell, actions: &[Action], query: Word) -> Result<Self> {
        grid.check_cell(start)?;
        let mut s = grid.index_of(start);
        let mut states = vec![start];
        for &a in actions {
            s = grid.move_cell(s, a);
            states.push(grid.cell_of(s));
        }
        let labels = grid.emitted_labels(&states)?;
        Ok(Demonstration {
            states,
            actions: actions.to_vec(),
            labels,
            query,
        })
    }

    /// Checks cell continuity under deterministic moves and the stored labels.
    pub fn validate(&self, grid: &GridMap) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(AtigError::state("demonstration has mismatched states and actions"));
        }
        for (i, &a) in self.actions.iter().enumerate() {
            grid.check_cell(self.states[i])?;
            let next = grid.move_cell(grid.index_of(self.states[i]), a);
            if grid.cell_of(next) != self.states[i + 1] {
                return Err(AtigError::state(format!(
                    "step {i}: action {a:?} from {} does not reach {}",
                    self.states[i],
                    self.states[i + 1]
                )));
            }
        }
        if grid.emitted_labels(&self.states)? != self.labels {
            return Err(AtigError::state("stored labels differ from the emitted labels"));
        }
        Ok(())
    }
}

/// Layered search graph: node `(cell, k)` means the first `k` symbols of the
/// word have been emitted and nothing else has.
struct Layered<'a> {
    grid: &'a GridMap,
    word: &'a [usize],
}

impl Layered<'_> {
    fn width(&self) -> usize {
        self.word.len() + 1
    }

    fn node(&self, s: usize, k: usize) -> usize {
        s * self.width() + k
    }

    /// Progress after entering `s` with progress `k`, `None` if entering `s`
    /// would emit a symbol other than the next one.
    fn enter(&self, s: usize, k: usize) -> Option<usize> {
        match self.grid.label(s) {
            None => Some(k),
            Some(l) if k < self.word.len() && self.word[k] == l => Some(k + 1),
            Some(_) => None,
        }
    }

    fn edges(&self, s: usize, k: usize) -> impl Iterator<Item = (Action, usize, usize)> + '_ {
        Action::ALL.into_iter().filter_map(move |a| {
            let t = self.grid.move_cell(s, a);
            if t == s {
                // Bumping into the border; never useful for a shortest path.
                return None;
            }
            self.enter(t, k).map(|k2| (a, t, k2))
        })
    }

    /// BFS distances from the start node; `usize::MAX` when unreachable.
    /// Goal nodes (full progress) are not expanded.
    fn distances(&self, start: usize, k0: usize) -> Vec<usize> {
        let n = self.grid.num_cells() * self.width();
        let mut dist = vec![usize::MAX; n];
        let src = self.node(start, k0);
        dist[src] = 0;
        let mut queue = VecDeque::from([(start, k0)]);
        while let Some((s, k)) = queue.pop_front() {
            if k == self.word.len() {
                continue;
            }
            let d = dist[self.node(s, k)];
            for (_, t, k2) in self.edges(s, k) {
                let id = self.node(t, k2);
                if dist[id] == usize::MAX {
                    dist[id] = d + 1;
                    queue.push_back((t, k2));
                }
            }
        }
        dist
    }
}

/// Shortest path (in steps) from `start` realizing exactly `word`, with ties
/// broken by a fixed action order when `rng` is `None` and uniformly at random
/// per step otherwise.
fn shortest_realization(
    grid: &GridMap,
    start: usize,
    word: &[usize],
    max_steps: usize,
    mut rng: Option<&mut rng::Rng>,
) -> Option<(Vec<usize>, Vec<Action>)> {
    let g = Layered { grid, word };
    let k0 = g.enter(start, 0)?;
    let dist = g.distances(start, k0);
    let goal_layer = word.len();
    let mut best = usize::MAX;
    let mut goals = Vec::new();
    for s in 0..grid.num_cells() {
        let d = dist[g.node(s, goal_layer)];
        if d < best {
            best = d;
            goals.clear();
        }
        if d == best && d != usize::MAX {
            goals.push(s);
        }
    }
    if best == usize::MAX || best > max_steps {
        return None;
    }
    let mut s = match rng.as_deref_mut() {
        Some(r) => goals[r.gen_range(0..goals.len())],
        None => goals[0],
    };
    let mut k = goal_layer;
    let mut states = vec![s];
    let mut actions = Vec::with_capacity(best);
    // Walk back along predecessors one layer of distance at a time.
    for d in (0..best).rev() {
        let mut preds: Vec<(usize, usize, Action)> = Vec::new();
        for p in 0..grid.num_cells() {
            for kp in [k, k.wrapping_sub(1)] {
                if kp > goal_layer || dist[g.node(p, kp)] != d {
                    continue;
                }
                for (a, t, k2) in g.edges(p, kp) {
                    if t == s && k2 == k {
                        preds.push((p, kp, a));
                    }
                }
            }
        }
        let pick = match rng.as_deref_mut() {
            Some(r) => preds[r.gen_range(0..preds.len())],
            None => preds[0],
        };
        s = pick.0;
        k = pick.1;
        states.push(s);
        actions.push(pick.2);
    }
    states.reverse();
    actions.reverse();
    Some((states, actions))
}

/// A shortest path from `start` whose emitted labels are exactly `word`,
/// using at most `max_steps` steps. Requires deterministic dynamics.
pub fn plan_execution(grid: &GridMap, start: Cell, word: &[usize], max_steps: usize) -> Option<Demonstration> {
    if !grid.contains(start) {
        return None;
    }
    let (states, actions) = shortest_realization(grid, grid.index_of(start), word, max_steps, None)?;
    Some(to_demo(grid, states, actions, word))
}

fn to_demo(grid: &GridMap, states: Vec<usize>, actions: Vec<Action>, word: &[usize]) -> Demonstration {
    let labels = grid.emitted_labels_idx(&states);
    Demonstration {
        states: states.into_iter().map(|s| grid.cell_of(s)).collect(),
        actions,
        labels,
        query: word.to_vec(),
    }
}

/// Start cell used to execute membership queries: the fixed start, or the
/// first cell of the initial distribution's support.
pub fn query_start(grid: &GridMap) -> Cell {
    grid.start()
        .unwrap_or_else(|| grid.cell_of(grid.initial_distribution()[0].0))
}

/// Membership answer by attempted execution: `false` when the word cannot be
/// executed, otherwise the ground-truth verdict.
pub fn answer_membership(task: &TaskSpec, grid: &GridMap, word: &[usize]) -> Result<bool> {
    if word.iter().any(|&s| s >= task.dfa.alphabet()) {
        return Err(AtigError::input(format!(
            "query {:?} uses symbols outside the task alphabet",
            word_to_string(word)
        )));
    }
    if plan_execution(grid, query_start(grid), word, task.budget(word)).is_none() {
        return Ok(false);
    }
    task_eval(task, word)
}

/// `n` demonstrations realizing `word`, diversified by random tie-breaking
/// and, for a non-degenerate initial distribution, random start cells.
pub fn demonstrate(task: &TaskSpec, grid: &GridMap, word: &[usize], n: usize, seed: u64) -> Result<Vec<Demonstration>> {
    if !answer_membership(task, grid, word)? {
        return Err(AtigError::state(format!(
            "cannot demonstrate {:?}: it is infeasible or does not complete the task",
            word_to_string(word)
        )));
    }
    let budget = task.budget(word);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    let mut rng = rng::seeded(seed);
    while out.len() < n {
        attempts += 1;
        if attempts > 50 * n.max(1) {
            return Err(AtigError::state(format!(
                "could not sample {n} feasible starts for {:?}",
                word_to_string(word)
            )));
        }
        let start = grid.sample_initial(&mut rng);
        if let Some((states, actions)) = shortest_realization(grid, start, word, budget, Some(&mut rng)) {
            out.push(to_demo(grid, states, actions, word));
        }
    }
    Ok(out)
}

/// Membership oracle that executes queries in a grid and keeps
/// demonstrations for every positive answer.
pub struct Demonstrator<'a> {
    pub task: &'a TaskSpec,
    pub grid: &'a GridMap,
    pub demos_per_query: usize,
    pub seed: u64,
    demos: Vec<Demonstration>,
    positives: Vec<Word>,
}

impl<'a> Demonstrator<'a> {
    pub fn new(task: &'a TaskSpec, grid: &'a GridMap, demos_per_query: usize, seed: u64) -> Self {
        Demonstrator {
            task,
            grid,
            demos_per_query,
            seed,
            demos: Vec::new(),
            positives: Vec::new(),
        }
    }

    pub fn demonstrations(&self) -> &[Demonstration] {
        &self.demos
    }

    /// Words answered positively, in answer order.
    pub fn positive_words(&self) -> &[Word] {
        &self.positives
    }

    /// Records demonstrations for a positive word not seen before, e.g. a
    /// positive counterexample. Returns whether anything was added.
    pub fn add_positive(&mut self, word: &[usize]) -> Result<bool> {
        if self.positives.iter().any(|w| w == word) || !answer_membership(self.task, self.grid, word)? {
            return Ok(false);
        }
        let seed = rng::derive(self.seed, self.positives.len() as u64);
        let demos = demonstrate(self.task, self.grid, word, self.demos_per_query, seed)?;
        self.demos.extend(demos);
        self.positives.push(word.to_vec());
        Ok(true)
    }
}

impl MembershipOracle for Demonstrator<'_> {
    fn query(&mut self, word: &[usize]) -> Result<bool> {
        let answer = answer_membership(self.task, self.grid, word)?;
        if answer {
            self.add_positive(word)?;
        }
        Ok(answer)
    }
}

/// Writes demonstrations, one per line: `x y | ACTIONS | word`.
pub fn demos_to_text(demos: &[Demonstration]) -> String {
    let mut out = String::new();
    for d in demos {
        let acts: String = d.actions.iter().map(|a| a.code()).collect();
        let _ = writeln!(
            out,
            "{} {} | {} | {}",
            d.start().x,
            d.start().y,
            acts,
            word_to_string(&d.labels)
        );
    }
    out
}

pub fn save_demos(demos: &[Demonstration], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, demos_to_text(demos))?;
    Ok(())
}

/// Parses the demonstrations format and replays every record in `grid`; the
/// replayed labels must match the recorded word.
pub fn parse_demos(text: &str, grid: &GridMap, source: &str) -> Result<Vec<Demonstration>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line_no = no + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(AtigError::parse(source, line_no, "expected `x y | actions | word`"));
        }
        let xy: Vec<usize> = fields[0]
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| AtigError::parse(source, line_no, "bad start cell"))?;
        let [x, y] = xy[..] else {
            return Err(AtigError::parse(source, line_no, "start cell needs two coordinates"));
        };
        let actions: Vec<Action> = fields[1]
            .chars()
            .map(|c| Action::from_code(c).ok_or_else(|| AtigError::parse(source, line_no, format!("bad action {c:?}"))))
            .collect::<Result<_>>()?;
        let word = parse_word(fields[2]).map_err(|e| AtigError::parse(source, line_no, e.to_string()))?;
        let demo = Demonstration::replay(grid, Cell::new(x, y), &actions, word.clone())
            .map_err(|e| AtigError::parse(source, line_no, e.to_string()))?;
        if demo.labels != word {
            return Err(AtigError::parse(
                source,
                line_no,
                format!(
                    "replay emits {:?}, record says {:?}",
                    word_to_string(&demo.labels),
                    word_to_string(&word)
                ),
            ));
        }
        out.push(demo);
    }
    Ok(out)
}

pub fn load_demos(path: impl AsRef<Path>, grid: &GridMap) -> Result<Vec<Demonstration>> {
    let path = path.as_ref();
    parse_demos(&fs::read_to_string(path)?, grid, &path.display().to_string())
}
