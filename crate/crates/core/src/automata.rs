//! Deterministic finite automata over region-type symbols, and the product of
//! a grid MDP with such an automaton.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{AtigError, Result};
use crate::grid_env::{Action, GridMap};

type Successors = Vec<(usize, f64)>;

/// A finite sequence of subgoal symbols.
pub type Word = Vec<usize>;

/// Formats a word as space-separated symbols (`ε` prints as the empty string).
pub fn word_to_string(w: &[usize]) -> String {
    let mut s = String::new();
    for (i, x) in w.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

pub fn parse_word(s: &str) -> Result<Word> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| AtigError::input(format!("bad symbol {t:?} in word {s:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dfa {
    num_states: usize,
    alphabet: usize,
    /// Row-major `num_states x alphabet`.
    delta: Vec<usize>,
    init: usize,
    accepting: Vec<bool>,
}

impl Dfa {
    pub fn new(
        num_states: usize,
        alphabet: usize,
        delta: Vec<usize>,
        init: usize,
        accepting: &[usize],
    ) -> Result<Self> {
        if num_states == 0 {
            return Err(AtigError::input("a DFA needs at least one state"));
        }
        if delta.len() != num_states * alphabet {
            return Err(AtigError::input(format!(
                "transition table has {} entries, expected {}",
                delta.len(),
                num_states * alphabet
            )));
        }
        if let Some(bad) = delta.iter().find(|&&q| q >= num_states) {
            return Err(AtigError::input(format!("transition target {bad} out of range")));
        }
        if init >= num_states {
            return Err(AtigError::input(format!("initial state {init} out of range")));
        }
        let mut acc = vec![false; num_states];
        for &q in accepting {
            if q >= num_states {
                return Err(AtigError::input(format!("accepting state {q} out of range")));
            }
            acc[q] = true;
        }
        Ok(Dfa {
            num_states,
            alphabet,
            delta,
            init,
            accepting: acc,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn init(&self) -> usize {
        self.init
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting[q]
    }

    pub fn accepting_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&q| self.accepting[q]).collect()
    }

    pub fn has_accepting(&self) -> bool {
        self.accepting.iter().any(|&a| a)
    }

    pub fn next(&self, q: usize, sym: usize) -> usize {
        self.delta[q * self.alphabet + sym]
    }

    /// Transition on an optional label; unlabeled steps leave `q` unchanged.
    pub fn advance(&self, q: usize, label: Option<usize>) -> usize {
        match label {
            Some(sym) => self.next(q, sym),
            None => q,
        }
    }

    fn check_word(&self, w: &[usize]) -> Result<()> {
        match w.iter().find(|&&s| s >= self.alphabet) {
            Some(s) => Err(AtigError::input(format!(
                "symbol {s} outside alphabet of size {}",
                self.alphabet
            ))),
            None => Ok(()),
        }
    }

    /// State sequence `q0 .. qk` visited while reading `w`.
    pub fn run(&self, w: &[usize]) -> Result<Vec<usize>> {
        self.check_word(w)?;
        let mut out = Vec::with_capacity(w.len() + 1);
        let mut q = self.init;
        out.push(q);
        for &s in w {
            q = self.next(q, s);
            out.push(q);
        }
        Ok(out)
    }

    pub fn final_state(&self, w: &[usize]) -> Result<usize> {
        self.check_word(w)?;
        Ok(w.iter().fold(self.init, |q, &s| self.next(q, s)))
    }

    pub fn accepts(&self, w: &[usize]) -> Result<bool> {
        Ok(self.accepting[self.final_state(w)?])
    }

    /// States from which no accepting state can be reached.
    pub fn trap_states(&self) -> Vec<usize> {
        let co = self.coreachable();
        (0..self.num_states).filter(|&q| !co[q]).collect()
    }

    fn coreachable(&self) -> Vec<bool> {
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); self.num_states];
        for q in 0..self.num_states {
            for s in 0..self.alphabet {
                rev[self.next(q, s)].push(q);
            }
        }
        let mut seen = self.accepting.clone();
        let mut stack: Vec<usize> = self.accepting_states();
        while let Some(q) = stack.pop() {
            for &p in &rev[q] {
                if !seen[p] {
                    seen[p] = true;
                    stack.push(p);
                }
            }
        }
        seen
    }

    fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states];
        seen[self.init] = true;
        let mut stack = vec![self.init];
        while let Some(q) = stack.pop() {
            for s in 0..self.alphabet {
                let r = self.next(q, s);
                if !seen[r] {
                    seen[r] = true;
                    stack.push(r);
                }
            }
        }
        seen
    }

    /// Language-equivalent DFA with the fewest states (Moore refinement over
    /// the reachable part). State 0 is the initial state.
    pub fn minimize(&self) -> Dfa {
        let reach = self.reachable();
        let live: Vec<usize> = (0..self.num_states).filter(|&q| reach[q]).collect();
        let mut class = vec![usize::MAX; self.num_states];
        for &q in &live {
            class[q] = usize::from(self.accepting[q]);
        }
        let mut count = 0;
        loop {
            let mut sig_ids: HashMap<Vec<usize>, usize> = HashMap::new();
            let mut next_class = vec![usize::MAX; self.num_states];
            for &q in &live {
                let mut sig = Vec::with_capacity(self.alphabet + 1);
                sig.push(class[q]);
                sig.extend((0..self.alphabet).map(|s| class[self.next(q, s)]));
                let n = sig_ids.len();
                next_class[q] = *sig_ids.entry(sig).or_insert(n);
            }
            let n = sig_ids.len();
            class = next_class;
            if n == count {
                break;
            }
            count = n;
        }
        // Renumber so the initial state's class is 0, in BFS order.
        let mut renum = vec![usize::MAX; count];
        let mut order = Vec::with_capacity(count);
        let mut queue = VecDeque::from([self.init]);
        renum[class[self.init]] = 0;
        order.push(self.init);
        while let Some(q) = queue.pop_front() {
            for s in 0..self.alphabet {
                let r = self.next(q, s);
                if renum[class[r]] == usize::MAX {
                    renum[class[r]] = order.len();
                    order.push(r);
                    queue.push_back(r);
                }
            }
        }
        let mut delta = vec![0; count * self.alphabet];
        let mut accepting = Vec::new();
        for (i, &q) in order.iter().enumerate() {
            for s in 0..self.alphabet {
                delta[i * self.alphabet + s] = renum[class[self.next(q, s)]];
            }
            if self.accepting[q] {
                accepting.push(i);
            }
        }
        Dfa::new(count, self.alphabet, delta, 0, &accepting).expect("minimized DFA is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Dfa::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    /// Parses the line-oriented DFA format (`states`, `alphabet`, `init`,
    /// `accept`, then one `trans q s q'` per transition). `#` starts a comment.
    /// Every `(q, s)` pair must be given exactly once.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut states = None;
        let mut alphabet = None;
        let mut init = None;
        let mut accept: Option<Vec<usize>> = None;
        let mut trans: Vec<(usize, usize, usize, usize)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let nums: Vec<usize> = parts
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| AtigError::parse(source, line_no, format!("bad number {t:?}")))
                })
                .collect::<Result<_>>()?;
            let one = |nums: &[usize]| -> Result<usize> {
                match nums {
                    [n] => Ok(*n),
                    _ => Err(AtigError::parse(source, line_no, format!("`{key}` takes one value"))),
                }
            };
            match key {
                "states" => states = Some(one(&nums)?),
                "alphabet" => alphabet = Some(one(&nums)?),
                "init" => init = Some(one(&nums)?),
                "accept" => accept = Some(nums),
                "trans" => match nums.as_slice() {
                    [q, s, r] => trans.push((line_no, *q, *s, *r)),
                    _ => return Err(AtigError::parse(source, line_no, "`trans` takes `q symbol q'`")),
                },
                other => return Err(AtigError::parse(source, line_no, format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| AtigError::parse(source, 0, format!("missing `{k}` line"));
        let n = states.ok_or_else(|| missing("states"))?;
        let k = alphabet.ok_or_else(|| missing("alphabet"))?;
        let q0 = init.ok_or_else(|| missing("init"))?;
        let acc = accept.unwrap_or_default();
        let mut delta = vec![usize::MAX; n * k];
        for (line_no, q, s, r) in trans {
            if q >= n || s >= k || r >= n {
                return Err(AtigError::parse(source, line_no, "transition out of range"));
            }
            if delta[q * k + s] != usize::MAX {
                return Err(AtigError::parse(
                    source,
                    line_no,
                    format!("duplicate transition for ({q}, {s})"),
                ));
            }
            delta[q * k + s] = r;
        }
        if let Some(i) = delta.iter().position(|&r| r == usize::MAX) {
            return Err(AtigError::parse(
                source,
                0,
                format!("partial transition table: no transition for ({}, {})", i / k, i % k),
            ));
        }
        Dfa::new(n, k, delta, q0, &acc).map_err(|e| AtigError::parse(source, 0, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {}", self.num_states);
        let _ = writeln!(out, "alphabet {}", self.alphabet);
        let _ = writeln!(out, "init {}", self.init);
        out.push_str("accept");
        for q in self.accepting_states() {
            let _ = write!(out, " {q}");
        }
        out.push('\n');
        for q in 0..self.num_states {
            for s in 0..self.alphabet {
                let _ = writeln!(out, "trans {q} {s} {}", self.next(q, s));
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// A shortest word on which `a` and `b` disagree, or `None` if they accept
/// the same language. Symbols are tried in ascending order, so among shortest
/// witnesses the lexicographically least is returned.
pub fn exact_equivalence(a: &Dfa, b: &Dfa) -> Result<Option<Word>> {
    if a.alphabet != b.alphabet {
        return Err(AtigError::input(format!(
            "alphabet mismatch: {} vs {}",
            a.alphabet, b.alphabet
        )));
    }
    let k = a.alphabet;
    let key = |p: usize, q: usize| p * b.num_states + q;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; a.num_states * b.num_states];
    let mut seen = vec![false; a.num_states * b.num_states];
    let start = key(a.init, b.init);
    seen[start] = true;
    let mut queue = VecDeque::from([(a.init, b.init)]);
    while let Some((p, q)) = queue.pop_front() {
        if a.accepting[p] != b.accepting[q] {
            let mut word = Vec::new();
            let mut cur = key(p, q);
            while let Some((prev, sym)) = parent[cur] {
                word.push(sym);
                cur = prev;
            }
            word.reverse();
            return Ok(Some(word));
        }
        for s in 0..k {
            let (p2, q2) = (a.next(p, s), b.next(q, s));
            let id = key(p2, q2);
            if !seen[id] {
                seen[id] = true;
                parent[id] = Some((key(p, q), s));
                queue.push_back((p2, q2));
            }
        }
    }
    Ok(None)
}

/// Memory automaton with one visited-bit per region type. It carries no
/// acceptance condition.
pub fn info_bits_automaton(num_types: usize) -> Dfa {
    let n = 1usize << num_types;
    let mut delta = Vec::with_capacity(n * num_types);
    for q in 0..n {
        for s in 0..num_types {
            delta.push(q | (1 << s));
        }
    }
    Dfa::new(n, num_types, delta, 0, &[]).expect("info-bits automaton is valid")
}

/// One state, every symbol a self-loop, no acceptance: a product with this
/// automaton is the plain MDP.
pub fn trivial_automaton(alphabet: usize) -> Dfa {
    Dfa::new(1, alphabet, vec![0; alphabet], 0, &[]).expect("trivial automaton is valid")
}

/// Ground-truth task automata and the intermediate task-3 hypothesis, parsed
/// from the shipped data files.
pub mod fixtures {
    use super::Dfa;

    const TASK1: &str = include_str!("../data/task1.dfa");
    const TASK2: &str = include_str!("../data/task2.dfa");
    const TASK3: &str = include_str!("../data/task3.dfa");
    const TASK3_INTERMEDIATE: &str = include_str!("../data/task3_intermediate.dfa");

    pub fn task(id: usize) -> Option<Dfa> {
        let text = match id {
            1 => TASK1,
            2 => TASK2,
            3 => TASK3,
            _ => return None,
        };
        Some(Dfa::parse(text, &format!("task{id}.dfa")).expect("fixture parses"))
    }

    pub fn task1() -> Dfa {
        task(1).unwrap()
    }

    pub fn task2() -> Dfa {
        task(2).unwrap()
    }

    pub fn task3() -> Dfa {
        task(3).unwrap()
    }

    pub fn task3_intermediate() -> Dfa {
        Dfa::parse(TASK3_INTERMEDIATE, "task3_intermediate.dfa").expect("fixture parses")
    }

    /// Index of the failure state in every task fixture (the last state).
    pub fn failure_state(dfa: &Dfa) -> usize {
        dfa.num_states() - 1
    }
}

/// Explicit reachable product of a grid MDP with a DFA.
///
/// Product states are `(cell, q)` pairs, numbered in breadth-first discovery
/// order from the initial states. Accepting product states, and (when the DFA
/// has any accepting state) states whose DFA component cannot reach
/// acceptance, are absorbing: every action self-loops with probability one.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    states: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
    initial: Vec<(usize, f64)>,
    transitions: Vec<Vec<(usize, f64)>>,
    accepting: Vec<bool>,
    trap: Vec<bool>,
    dfa_states: usize,
    grid_cells: usize,
}

impl ProductMdp {
    pub const NUM_ACTIONS: usize = Action::COUNT;

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        Self::NUM_ACTIONS
    }

    pub fn num_pairs(&self) -> usize {
        self.states.len() * Self::NUM_ACTIONS
    }

    pub fn dfa_states(&self) -> usize {
        self.dfa_states
    }

    pub fn grid_cells(&self) -> usize {
        self.grid_cells
    }

    /// `(grid state, DFA state)` of product state `z`.
    pub fn state(&self, z: usize) -> (usize, usize) {
        self.states[z]
    }

    pub fn states(&self) -> &[(usize, usize)] {
        &self.states
    }

    pub fn index_of(&self, s: usize, q: usize) -> Option<usize> {
        self.index.get(&(s, q)).copied()
    }

    pub fn initial(&self) -> &[(usize, f64)] {
        &self.initial
    }

    pub fn successors(&self, z: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[z * Self::NUM_ACTIONS + a]
    }

    pub fn is_accepting(&self, z: usize) -> bool {
        self.accepting[z]
    }

    pub fn is_trap(&self, z: usize) -> bool {
        self.trap[z]
    }

    pub fn is_absorbing(&self, z: usize) -> bool {
        self.accepting[z] || self.trap[z]
    }

    /// Labeling of the product: the DFA component.
    pub fn label(&self, z: usize) -> usize {
        self.states[z].1
    }
}

/// Builds the reachable product `grid ⊗ dfa`.
pub fn build_product(grid: &GridMap, dfa: &Dfa) -> Result<ProductMdp> {
    if let Some(&t) = grid.present_types().iter().find(|&&t| t >= dfa.alphabet()) {
        return Err(AtigError::input(format!(
            "grid contains region type {t} but the automaton alphabet has size {}",
            dfa.alphabet()
        )));
    }
    let dfa_trap: Vec<bool> = if dfa.has_accepting() {
        let co = dfa.coreachable();
        co.iter().map(|c| !c).collect()
    } else {
        vec![false; dfa.num_states()]
    };

    let mut p = ProductMdp {
        states: Vec::new(),
        index: HashMap::new(),
        initial: Vec::new(),
        transitions: Vec::new(),
        accepting: Vec::new(),
        trap: Vec::new(),
        dfa_states: dfa.num_states(),
        grid_cells: grid.num_cells(),
    };
    let mut queue = VecDeque::new();
    let intern = |p: &mut ProductMdp, queue: &mut VecDeque<usize>, s: usize, q: usize| -> usize {
        if let Some(&z) = p.index.get(&(s, q)) {
            return z;
        }
        let z = p.states.len();
        p.states.push((s, q));
        p.index.insert((s, q), z);
        p.accepting.push(dfa.is_accepting(q));
        p.trap.push(dfa_trap[q]);
        queue.push_back(z);
        z
    };

    for (s, prob) in grid.initial_distribution() {
        let q = dfa.advance(dfa.init(), grid.label(s));
        let z = intern(&mut p, &mut queue, s, q);
        match p.initial.iter_mut().find(|(y, _)| *y == z) {
            Some(e) => e.1 += prob,
            None => p.initial.push((z, prob)),
        }
    }

    // successor lists per action, filled in discovery order
    let mut rows: Vec<Option<Vec<Successors>>> = Vec::new();
    while let Some(z) = queue.pop_front() {
        let (s, q) = p.states[z];
        let mut per_action = Vec::with_capacity(Action::COUNT);
        if p.accepting[z] || p.trap[z] {
            for _ in 0..Action::COUNT {
                per_action.push(vec![(z, 1.0)]);
            }
        } else {
            for a in Action::ALL {
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
                for (s2, prob) in grid.step_distribution(s, a) {
                    let q2 = dfa.advance(q, grid.label(s2));
                    let z2 = intern(&mut p, &mut queue, s2, q2);
                    match row.iter_mut().find(|(y, _)| *y == z2) {
                        Some(e) => e.1 += prob,
                        None => row.push((z2, prob)),
                    }
                }
                per_action.push(row);
            }
        }
        if rows.len() <= z {
            rows.resize(z + 1, None);
        }
        rows[z] = Some(per_action);
    }
    p.transitions = rows
        .into_iter()
        .flat_map(|r| r.expect("every discovered state is expanded"))
        .collect();
    Ok(p)
}
