//! Property tests for learning, demonstrations, the soft solver and the
//! outer loop.

use proptest::prelude::*;

use atig::automata::{build_product, exact_equivalence, fixtures, trivial_automaton, Dfa, Word};
use atig::grid_env::{generate_random_env, Action, GridMap};
use atig::irl::{
    grad_value_iteration, policy_grad, soft_policy, soft_value_iteration, ExplicitMdp, Policy, QTable, RewardInputs,
    RewardModel, SolverConfig,
};
use atig::lstar::{DfaOracle, LoggingOracle, ObservationTable};
use atig::oracle::{answer_membership, demonstrate, query_start, Demonstration, TaskSpec};
use atig::orchestrator::{find_counterexample, success_ratio, CexBudget};

fn arb_dfa() -> impl Strategy<Value = Dfa> {
    (1usize..=6, 2usize..=3).prop_flat_map(|(n, k)| {
        (
            proptest::collection::vec(0..n, n * k),
            0..n,
            proptest::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(delta, init, acc)| {
                let accepting: Vec<usize> = (0..n).filter(|&q| acc[q]).collect();
                Dfa::new(n, k, delta, init, &accepting).unwrap()
            })
    })
}

type Learned = (Vec<Dfa>, Vec<(Word, bool)>);

/// Runs L* against `target` with exact equivalence queries, checking the
/// table invariants after every hypothesis.
fn learn_checked(target: &Dfa) -> Result<Learned, TestCaseError> {
    let mut oracle = LoggingOracle::new(DfaOracle(target.clone()));
    let mut table = ObservationTable::new(target.alphabet(), &mut oracle).unwrap();
    table.close_and_make_consistent(&mut oracle).unwrap();
    let mut hyps = Vec::new();
    loop {
        let h = table.build_hypothesis().unwrap();
        prop_assert_eq!(h.num_states(), table.distinct_rows());
        for r in oracle.log() {
            prop_assert_eq!(h.accepts(&r.word).unwrap(), r.answer, "query {:?}", r.word);
        }
        hyps.push(h.clone());
        prop_assert!(hyps.len() <= 20);
        match exact_equivalence(&h, target).unwrap() {
            None => break,
            Some(ce) => {
                table.process_counterexample(&ce, &mut oracle).unwrap();
                table.close_and_make_consistent(&mut oracle).unwrap();
            }
        }
    }
    let log = oracle.log().iter().map(|r| (r.word.clone(), r.answer)).collect();
    Ok((hyps, log))
}

fn solver(gamma: f64) -> SolverConfig {
    SolverConfig {
        gamma,
        tol: 1e-10,
        max_sweeps: 1_000_000,
    }
}

fn arb_mdp() -> impl Strategy<Value = (ExplicitMdp, Vec<f64>)> {
    (2usize..=12, 1usize..=4).prop_flat_map(|(ns, na)| {
        (
            proptest::collection::vec((0..ns, 0..ns, 0.05f64..0.95), ns * na),
            proptest::collection::vec(-3.0f64..3.0, ns * na),
        )
            .prop_map(move |(rows, rewards)| {
                let rows = rows.into_iter().map(|(a, b, p)| vec![(a, p), (b, 1.0 - p)]).collect();
                (ExplicitMdp::new(ns, na, rows).unwrap(), rewards)
            })
    })
}

fn grid(seed: u64) -> GridMap {
    generate_random_env(12, 12, 1, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lstar_learns_random_targets(target in arb_dfa()) {
        let (hyps, _) = learn_checked(&target)?;
        let last = hyps.last().unwrap();
        prop_assert!(exact_equivalence(last, &target).unwrap().is_none());
        prop_assert!(last.num_states() <= target.minimize().num_states());
        for w in hyps.windows(2) {
            prop_assert!(w[1].num_states() > w[0].num_states());
        }
    }

    #[test]
    fn lstar_queries_are_deterministic(target in arb_dfa()) {
        let (_, a) = learn_checked(&target)?;
        let (_, b) = learn_checked(&target)?;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn soft_solution_properties((mdp, rewards) in arb_mdp(), gamma in 0.1f64..0.95) {
        let cfg = solver(gamma);
        let q = soft_value_iteration(&mdp, &rewards, &cfg, None).unwrap();
        prop_assert!(q.residual <= cfg.step_tolerance());
        let p = soft_policy(&q);
        for z in 0..p.num_states() {
            prop_assert!((p.row(z).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let pairs = rewards.len();
        let model = RewardModel::tabular(pairs);
        let g = grad_value_iteration(&mdp, &p, &model, &RewardInputs::Tabular { pairs }, &cfg).unwrap();
        prop_assert!(g.residual <= cfg.step_tolerance());
        let dpi = policy_grad(&p, &g);
        let na = p.num_actions;
        for z in 0..p.num_states() {
            for k in 0..dpi.ncols() {
                let s: f64 = (0..na).map(|a| dpi[[z * na + a, k]]).sum();
                prop_assert!(s.abs() <= 1e-12, "state {} param {}: {}", z, k, s);
            }
        }
    }

    #[test]
    fn softmax_shift_invariance(values in proptest::collection::vec(-20.0f64..20.0, 12), shift in -50.0f64..50.0, z in 0usize..3) {
        let q = QTable { values: values.clone(), num_actions: 4, gamma: 0.9, residual: 0.0, sweeps: 0 };
        let mut shifted = values;
        for a in 0..4 {
            shifted[z * 4 + a] += shift;
        }
        let q2 = QTable { values: shifted, ..q.clone() };
        let (p, p2) = (soft_policy(&q), soft_policy(&q2));
        for a in 0..4 {
            prop_assert!((p.get(z, a) - p2.get(z, a)).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn demonstrations_replay(seed in 0u64..1000, word in proptest::collection::vec(0usize..4, 0..=4), task_id in 1usize..=3) {
        let g = grid(seed);
        let task = TaskSpec::for_grid(fixtures::task(task_id).unwrap(), "t", &g);
        let first = answer_membership(&task, &g, &word).unwrap();
        prop_assert_eq!(first, answer_membership(&task, &g, &word).unwrap());
        if first {
            for d in demonstrate(&task, &g, &word, 3, seed).unwrap() {
                d.validate(&g).unwrap();
                prop_assert_eq!(&d.labels, &word);
                // replay through the transition distribution, which is a point mass without slip
                let mut s = g.index_of(d.start());
                for (i, &a) in d.actions.iter().enumerate() {
                    let dist = g.step_distribution(s, a);
                    prop_assert_eq!(dist.len(), 1);
                    s = dist[0].0;
                    prop_assert_eq!(g.cell_of(s), d.states[i + 1]);
                }
                let again = Demonstration::replay(&g, d.start(), &d.actions, word.clone()).unwrap();
                prop_assert_eq!(again, d);
            }
        } else {
            prop_assert!(demonstrate(&task, &g, &word, 1, seed).is_err());
        }
    }

    #[test]
    fn success_ratio_is_exact_and_reproducible(seed in 0u64..1000, rollouts in 1usize..300, task_id in 1usize..=3) {
        let g = grid(seed % 50);
        let task = TaskSpec::for_grid(fixtures::task(task_id).unwrap(), "t", &g);
        let dfa = task.dfa.clone();
        let product = build_product(&g, &dfa).unwrap();
        let policy = Policy::uniform(product.num_states(), Action::ALL.len());
        let a = success_ratio(&g, &task, &dfa, &product, &policy, rollouts, 60, seed).unwrap();
        let b = success_ratio(&g, &task, &dfa, &product, &policy, rollouts, 60, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.beta, a.successes as f64 / rollouts as f64);
        prop_assert_eq!(a.beta.to_bits(), b.beta.to_bits());
    }

    #[test]
    fn counterexamples_distinguish(seed in 0u64..1000, task_id in 1usize..=3, which in 0usize..3, exact in any::<bool>()) {
        let g = grid(seed % 50);
        let task = TaskSpec::for_grid(fixtures::task(task_id).unwrap(), "t", &g);
        let hyp = match which {
            0 => trivial_automaton(4),
            1 => fixtures::task3_intermediate(),
            _ => fixtures::task((task_id % 3) + 1).unwrap(),
        };
        let product = build_product(&g, &hyp).unwrap();
        let policy = Policy::uniform(product.num_states(), 4);
        let budget = CexBudget { rollouts: 20, random_words: 200, max_len: 6, horizon: 96, exact };
        if let Some(w) = find_counterexample(&g, &task, &hyp, &product, &policy, &budget, seed).unwrap() {
            prop_assert_ne!(answer_membership(&task, &g, &w).unwrap(), hyp.accepts(&w).unwrap());
        }
        let truth = build_product(&g, &task.dfa).unwrap();
        let p = Policy::uniform(truth.num_states(), 4);
        prop_assert_eq!(find_counterexample(&g, &task, &task.dfa, &truth, &p, &budget, seed).unwrap(), None);
        let _ = query_start(&g);
    }
}
