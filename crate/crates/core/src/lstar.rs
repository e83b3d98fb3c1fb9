//! Angluin-style active DFA inference.
//!
//! The learner only issues membership queries. Equivalence (conjecture)
//! queries are left to the caller, which hands back counterexamples through
//! [`ObservationTable::process_counterexample`].

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::io::Write;

use crate::automata::{word_to_string, Dfa, Word};
use crate::error::{AtigError, Result};

/// Answers "is this word in the target language?".
pub trait MembershipOracle {
    fn query(&mut self, word: &[usize]) -> Result<bool>;
}

impl<F> MembershipOracle for F
where
    F: FnMut(&[usize]) -> Result<bool>,
{
    fn query(&mut self, word: &[usize]) -> Result<bool> {
        self(word)
    }
}

/// Oracle backed by a known automaton.
pub struct DfaOracle(pub Dfa);

impl MembershipOracle for DfaOracle {
    fn query(&mut self, word: &[usize]) -> Result<bool> {
        self.0.accepts(word)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub index: usize,
    pub word: Word,
    pub answer: bool,
}

/// Caches answers and records every distinct query in issue order.
pub struct LoggingOracle<O> {
    inner: O,
    cache: HashMap<Word, bool>,
    log: Vec<QueryRecord>,
}

impl<O: MembershipOracle> LoggingOracle<O> {
    pub fn new(inner: O) -> Self {
        LoggingOracle {
            inner,
            cache: HashMap::new(),
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[QueryRecord] {
        &self.log
    }

    pub fn query_count(&self) -> usize {
        self.log.len()
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut O {
        &mut self.inner
    }

    pub fn into_inner(self) -> O {
        self.inner
    }

    /// Writes the log as CSV: `index,word,answer`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_query_log(&self.log, out)
    }
}

impl<O: MembershipOracle> MembershipOracle for LoggingOracle<O> {
    fn query(&mut self, word: &[usize]) -> Result<bool> {
        if let Some(&b) = self.cache.get(word) {
            return Ok(b);
        }
        let answer = self.inner.query(word)?;
        self.cache.insert(word.to_vec(), answer);
        self.log.push(QueryRecord {
            index: self.log.len(),
            word: word.to_vec(),
            answer,
        });
        Ok(answer)
    }
}

pub fn write_query_log<W: Write>(log: &[QueryRecord], mut out: W) -> Result<()> {
    writeln!(out, "index,word,answer")?;
    for r in log {
        writeln!(out, "{},{},{}", r.index, word_to_string(&r.word), u8::from(r.answer))?;
    }
    Ok(())
}

/// L* observation table.
///
/// `prefixes` (the upper part) is prefix-closed and starts with ε, `suffixes`
/// starts with ε. `membership` holds an answer for every concatenation of a
/// prefix or one-symbol extension with a suffix.
#[derive(Debug, Clone)]
pub struct ObservationTable {
    alphabet: usize,
    prefixes: Vec<Word>,
    prefix_set: HashSet<Word>,
    suffixes: Vec<Word>,
    membership: HashMap<Word, bool>,
}

impl ObservationTable {
    /// A table with `P = X = {ε}`, filled through `oracle`.
    pub fn new<O: MembershipOracle + ?Sized>(alphabet: usize, oracle: &mut O) -> Result<Self> {
        let mut t = ObservationTable {
            alphabet,
            prefixes: vec![Vec::new()],
            prefix_set: HashSet::from([Vec::new()]),
            suffixes: vec![Vec::new()],
            membership: HashMap::new(),
        };
        t.fill(oracle)?;
        Ok(t)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn prefixes(&self) -> &[Word] {
        &self.prefixes
    }

    pub fn suffixes(&self) -> &[Word] {
        &self.suffixes
    }

    /// Every membership answer recorded in the table.
    pub fn answers(&self) -> impl Iterator<Item = (&Word, bool)> {
        self.membership.iter().map(|(w, &b)| (w, b))
    }

    fn extensions(&self) -> impl Iterator<Item = Word> + '_ {
        self.prefixes.iter().flat_map(move |p| {
            (0..self.alphabet).map(move |s| {
                let mut w = p.clone();
                w.push(s);
                w
            })
        })
    }

    fn fill<O: MembershipOracle + ?Sized>(&mut self, oracle: &mut O) -> Result<()> {
        let rows: Vec<Word> = self.prefixes.iter().cloned().chain(self.extensions()).collect();
        for p in rows {
            for x in &self.suffixes {
                let mut w = p.clone();
                w.extend_from_slice(x);
                if let Entry::Vacant(e) = self.membership.entry(w) {
                    let b = oracle.query(e.key())?;
                    e.insert(b);
                }
            }
        }
        Ok(())
    }

    fn is_row_word(&self, p: &[usize]) -> bool {
        if self.prefix_set.contains(p) {
            return true;
        }
        match p.split_last() {
            Some((&s, head)) => s < self.alphabet && self.prefix_set.contains(head),
            None => false,
        }
    }

    /// Membership bits of `p` against every suffix, in suffix order.
    pub fn row(&self, p: &[usize]) -> Result<Vec<bool>> {
        if !self.is_row_word(p) {
            return Err(AtigError::input(format!(
                "{:?} is neither a prefix nor a one-symbol extension of one",
                word_to_string(p)
            )));
        }
        Ok(self.row_unchecked(p))
    }

    fn row_unchecked(&self, p: &[usize]) -> Vec<bool> {
        self.suffixes
            .iter()
            .map(|x| {
                let mut w = p.to_vec();
                w.extend_from_slice(x);
                self.membership[&w]
            })
            .collect()
    }

    fn add_prefix(&mut self, p: Word) -> bool {
        if self.prefix_set.insert(p.clone()) {
            self.prefixes.push(p);
            true
        } else {
            false
        }
    }

    /// First extension `p·σ` whose row matches no prefix row.
    fn unclosed_witness(&self) -> Option<Word> {
        let upper: HashSet<Vec<bool>> = self.prefixes.iter().map(|p| self.row_unchecked(p)).collect();
        self.extensions().find(|e| !upper.contains(&self.row_unchecked(e)))
    }

    /// First suffix `σ·x` separating two prefixes with equal rows.
    fn inconsistency_witness(&self) -> Option<Word> {
        let rows: Vec<Vec<bool>> = self.prefixes.iter().map(|p| self.row_unchecked(p)).collect();
        for i in 0..self.prefixes.len() {
            for j in i + 1..self.prefixes.len() {
                if rows[i] != rows[j] {
                    continue;
                }
                for s in 0..self.alphabet {
                    let mut a = self.prefixes[i].clone();
                    a.push(s);
                    let mut b = self.prefixes[j].clone();
                    b.push(s);
                    for x in &self.suffixes {
                        let mut wa = a.clone();
                        wa.extend_from_slice(x);
                        let mut wb = b.clone();
                        wb.extend_from_slice(x);
                        if self.membership[&wa] != self.membership[&wb] {
                            let mut sx = vec![s];
                            sx.extend_from_slice(x);
                            return Some(sx);
                        }
                    }
                }
            }
        }
        None
    }

    pub fn is_closed(&self) -> bool {
        self.unclosed_witness().is_none()
    }

    pub fn is_consistent(&self) -> bool {
        self.inconsistency_witness().is_none()
    }

    /// Repairs the table until it is closed and consistent.
    pub fn close_and_make_consistent<O: MembershipOracle + ?Sized>(&mut self, oracle: &mut O) -> Result<()> {
        loop {
            if let Some(x) = self.inconsistency_witness() {
                self.suffixes.push(x);
                self.fill(oracle)?;
                continue;
            }
            if let Some(p) = self.unclosed_witness() {
                self.add_prefix(p);
                self.fill(oracle)?;
                continue;
            }
            return Ok(());
        }
    }

    /// Hypothesis automaton read off a closed, consistent table. States are
    /// numbered by first appearance of their row among the prefixes.
    pub fn build_hypothesis(&self) -> Result<Dfa> {
        if !self.is_closed() || !self.is_consistent() {
            return Err(AtigError::state("observation table is not closed and consistent"));
        }
        let mut ids: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut reps: Vec<&Word> = Vec::new();
        for p in &self.prefixes {
            let r = self.row_unchecked(p);
            if let Entry::Vacant(e) = ids.entry(r) {
                e.insert(reps.len());
                reps.push(p);
            }
        }
        let n = reps.len();
        let mut delta = vec![0; n * self.alphabet];
        let mut accepting = Vec::new();
        for (q, p) in reps.iter().enumerate() {
            for s in 0..self.alphabet {
                let mut e = (*p).clone();
                e.push(s);
                delta[q * self.alphabet + s] = ids[&self.row_unchecked(&e)];
            }
            if self.membership[*p] {
                accepting.push(q);
            }
        }
        let init = ids[&self.row_unchecked(&[])];
        Dfa::new(n, self.alphabet, delta, init, &accepting)
    }

    /// Number of distinct rows among the prefixes.
    pub fn distinct_rows(&self) -> usize {
        self.prefixes
            .iter()
            .map(|p| self.row_unchecked(p))
            .collect::<HashSet<_>>()
            .len()
    }

    /// Adds every prefix of `ce` to the upper part and fills the new cells.
    /// A word on which the current hypothesis is already right is processed
    /// anyway, with a warning.
    pub fn process_counterexample<O: MembershipOracle + ?Sized>(&mut self, ce: &[usize], oracle: &mut O) -> Result<()> {
        if let Some(&s) = ce.iter().find(|&&s| s >= self.alphabet) {
            return Err(AtigError::input(format!("counterexample symbol {s} outside alphabet")));
        }
        if let Ok(h) = self.build_hypothesis() {
            let truth = oracle.query(ce)?;
            if h.accepts(ce)? == truth {
                log::warn!(
                    "counterexample {:?} does not distinguish the hypothesis from the target",
                    word_to_string(ce)
                );
            }
        }
        for k in 1..=ce.len() {
            self.add_prefix(ce[..k].to_vec());
        }
        self.fill(oracle)
    }
}

/// Convenience driver: start a table, make it closed and consistent, and
/// return it with its hypothesis.
pub fn initial_hypothesis<O: MembershipOracle + ?Sized>(
    alphabet: usize,
    oracle: &mut O,
) -> Result<(ObservationTable, Dfa)> {
    let mut table = ObservationTable::new(alphabet, oracle)?;
    table.close_and_make_consistent(oracle)?;
    let h = table.build_hypothesis()?;
    Ok((table, h))
}

/// Runs L* to completion against an equivalence routine that returns a
/// counterexample or `None`. Returns the final hypothesis and every
/// intermediate hypothesis in order.
pub fn learn<O, E>(alphabet: usize, oracle: &mut O, mut equivalence: E, max_rounds: usize) -> Result<Vec<Dfa>>
where
    O: MembershipOracle + ?Sized,
    E: FnMut(&Dfa) -> Result<Option<Word>>,
{
    let (mut table, mut h) = initial_hypothesis(alphabet, oracle)?;
    let mut history = vec![h.clone()];
    for _ in 0..max_rounds {
        match equivalence(&h)? {
            None => return Ok(history),
            Some(ce) => {
                table.process_counterexample(&ce, oracle)?;
                table.close_and_make_consistent(oracle)?;
                h = table.build_hypothesis()?;
                history.push(h.clone());
            }
        }
    }
    Err(AtigError::state(format!(
        "L* did not converge within {max_rounds} rounds"
    )))
}
