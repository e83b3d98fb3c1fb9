//! Gradient ascent on the demonstration log-likelihood with a success-ratio
//! stopping rule.

use std::fmt::Write as _;

use crate::error::{AtigError, Result};

use super::grad::{loglik_and_grad_adjoint, ProjectedDemo};
use super::reward::{RewardInputs, RewardModel, RewardVariant};
use super::soft::{soft_policy, soft_value_iteration, Policy, QTable, SolverConfig};
use super::FiniteMdp;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub solver: SolverConfig,
    /// Base step size `α`.
    pub lr: f64,
    /// Use `α / √(t + 1)` instead of a constant step.
    pub decay: bool,
    /// Divide the gradient by the number of demonstrated pairs.
    pub normalize: bool,
    /// Evaluation period `N`.
    pub eval_every: usize,
    /// Stop once `β_t − β_{t−N} ≤ epsilon`.
    pub epsilon: f64,
    /// The stopping rule is not applied before this iteration.
    pub min_iterations: usize,
    pub max_iterations: usize,
    /// Lower clamp for `log π` of a demonstrated action.
    pub log_floor: f64,
    /// Monte Carlo budget handed to the success-ratio evaluator.
    pub rollouts: usize,
    /// Rollout horizon; 0 lets the evaluator pick a grid-based default.
    pub horizon: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            solver: SolverConfig::default(),
            lr: 1e-3,
            decay: true,
            normalize: false,
            eval_every: 10,
            epsilon: 0.0,
            min_iterations: 100,
            max_iterations: 500,
            log_floor: -700.0,
            rollouts: 1000,
            horizon: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for a reward variant: a decaying step on the summed gradient
    /// for tabular and linear rewards, a constant step on the per-pair mean
    /// gradient for networks.
    pub fn for_variant(variant: RewardVariant) -> Self {
        match variant {
            RewardVariant::Mlp => TrainConfig {
                lr: 1e-2,
                decay: false,
                normalize: true,
                ..TrainConfig::default()
            },
            _ => TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.eval_every == 0 {
            return Err(AtigError::input("evaluation period must be at least 1"));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(AtigError::input("stopping threshold must be non-negative"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(AtigError::input("learning rate must be positive"));
        }
        Ok(())
    }

    fn step_size(&self, t: usize) -> f64 {
        if self.decay {
            self.lr / ((t + 1) as f64).sqrt()
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub grad_norm: f64,
    pub theta_norm: f64,
    pub beta: Option<f64>,
    pub zero_prob: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    pub final_beta: f64,
    /// Iteration whose parameters were returned.
    pub final_iteration: usize,
    /// Whether the `ε` rule fired, as opposed to the iteration cap.
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn betas(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.beta.map(|b| (r.iteration, b)))
            .collect()
    }

    /// Columns `iteration,log_likelihood,grad_norm,beta`; `beta` is empty on
    /// iterations without an evaluation.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("iteration,log_likelihood,grad_norm,beta\n");
        for r in &self.records {
            let beta = r.beta.map(|b| format!("{b:e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:e},{:e},{}", r.iteration, r.log_likelihood, r.grad_norm, beta);
        }
        out
    }
}

pub struct TrainOutput {
    pub model: RewardModel,
    pub policy: Policy,
    pub q: QTable,
    pub report: TrainReport,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn at(iteration: usize) -> impl Fn(AtigError) -> AtigError {
    move |e| AtigError::Training {
        iteration,
        source: Box::new(e),
    }
}

/// Runs `θ ← θ + α_t ∂L_D/∂θ`. Every `eval_every` iterations (starting at
/// 0) the evaluator scores the current soft policy; training stops when the
/// gain over the previous evaluation is at most `epsilon`, and the evaluated
/// parameters are returned.
pub fn train<M: FiniteMdp + ?Sized>(
    mdp: &M,
    demos: &[ProjectedDemo],
    mut model: RewardModel,
    inputs: &RewardInputs,
    cfg: &TrainConfig,
    evaluator: &mut dyn FnMut(&Policy) -> Result<f64>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if demos.iter().all(|d| d.pairs.is_empty()) {
        return Err(AtigError::input(
            "training needs at least one demonstrated state-action pair",
        ));
    }
    let mut records = Vec::new();
    let mut prev_beta = f64::NEG_INFINITY;
    let mut warm: Option<QTable> = None;
    let mut t = 0;
    loop {
        let rewards = model.rewards(inputs).map_err(at(t))?;
        let q = soft_value_iteration(mdp, &rewards, &cfg.solver, warm.as_ref()).map_err(at(t))?;
        let policy = soft_policy(&q);
        let beta = if t % cfg.eval_every == 0 || t >= cfg.max_iterations {
            Some(evaluator(&policy).map_err(at(t))?)
        } else {
            None
        };
        let ll =
            loglik_and_grad_adjoint(mdp, demos, &policy, &model, inputs, &cfg.solver, cfg.log_floor).map_err(at(t))?;
        let theta = model.params();
        records.push(IterationRecord {
            iteration: t,
            log_likelihood: ll.clamped,
            grad_norm: ll.grad_norm(),
            theta_norm: norm(&theta),
            beta,
            zero_prob: ll.zero_prob,
        });
        if ll.zero_prob {
            log::warn!("iteration {t}: a demonstrated action has vanishing probability");
        }
        if let Some(b) = beta {
            log::debug!("iteration {t}: L_D = {:.6}, beta = {b:.4}", ll.clamped);
            let stop = t >= cfg.min_iterations && b - prev_beta <= cfg.epsilon;
            if stop || t >= cfg.max_iterations {
                return Ok(TrainOutput {
                    model,
                    policy,
                    q,
                    report: TrainReport {
                        records,
                        final_beta: b,
                        final_iteration: t,
                        stopped_early: stop,
                    },
                });
            }
            prev_beta = b;
        }
        let mut step = cfg.step_size(t);
        if cfg.normalize {
            step /= ll.num_pairs.max(1) as f64;
        }
        model.ascend(&ll.grad, step).map_err(at(t))?;
        warm = Some(q);
        t += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::super::ExplicitMdp;
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Four states on a line, 0 - 1 - 2 - 3, with state 3 absorbing; actions
    /// move left or right.
    fn line() -> ExplicitMdp {
        let mut rows = Vec::new();
        for z in 0..4usize {
            if z == 3 {
                rows.push(vec![(3, 1.0)]);
                rows.push(vec![(3, 1.0)]);
            } else {
                rows.push(vec![(z.saturating_sub(1), 1.0)]);
                rows.push(vec![(z + 1, 1.0)]);
            }
        }
        ExplicitMdp::new(4, 2, rows).unwrap()
    }

    fn demos() -> Vec<ProjectedDemo> {
        (0..3)
            .map(|s| ProjectedDemo {
                pairs: (s..3).map(|z| (z, 1)).collect(),
                terminal: 3,
            })
            .collect()
    }

    /// Fraction of rollouts from state 0 that reach state 3 within 3 steps.
    fn reach_rate(policy: &Policy, seed: u64) -> f64 {
        let mdp = line();
        let mut r = rng::seeded(seed);
        let n = 2000;
        let mut ok = 0;
        for _ in 0..n {
            let mut z = 0;
            for _ in 0..3 {
                let a = policy.sample_with(z, r.gen());
                z = mdp.successors(z, a)[0].0;
            }
            ok += (z == 3) as usize;
        }
        ok as f64 / n as f64
    }

    #[test]
    fn infinite_epsilon_stops_at_first_evaluation() {
        let cfg = TrainConfig {
            epsilon: f64::INFINITY,
            min_iterations: 0,
            ..TrainConfig::default()
        };
        let mut calls = 0;
        let out = train(
            &line(),
            &demos(),
            RewardModel::tabular(8),
            &RewardInputs::Tabular { pairs: 8 },
            &cfg,
            &mut |_| {
                calls += 1;
                Ok(0.5)
            },
        )
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(out.report.final_iteration, 0);
        assert!(out.report.stopped_early);
        assert_eq!(out.model.params(), vec![0.0; 8]);
    }

    #[test]
    fn likelihood_non_decreasing_for_small_steps() {
        let cfg = TrainConfig {
            lr: 1e-3,
            decay: false,
            max_iterations: 200,
            eval_every: 1000,
            ..TrainConfig::default()
        };
        let out = train(
            &line(),
            &demos(),
            RewardModel::tabular(8),
            &RewardInputs::Tabular { pairs: 8 },
            &cfg,
            &mut |_| Ok(0.0),
        )
        .unwrap();
        let ll: Vec<f64> = out.report.records.iter().map(|r| r.log_likelihood).collect();
        assert_eq!(ll.len(), 201);
        for w in ll.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} then {}", w[0], w[1]);
        }
        assert!(ll[200] > ll[0]);
    }

    #[test]
    fn smoke_run_reaches_goal() {
        let cfg = TrainConfig {
            lr: 0.1,
            decay: false,
            eval_every: 10,
            epsilon: 0.0,
            min_iterations: 20,
            max_iterations: 500,
            ..TrainConfig::default()
        };
        let mut k = 0;
        let out = train(
            &line(),
            &demos(),
            RewardModel::tabular(8),
            &RewardInputs::Tabular { pairs: 8 },
            &cfg,
            &mut |p| {
                k += 1;
                Ok(reach_rate(p, k))
            },
        )
        .unwrap();
        assert!(out.report.final_iteration <= 500);
        assert!(reach_rate(&out.policy, 99) >= 0.95, "beta {}", out.report.final_beta);
        let csv = out.report.metrics_csv();
        assert!(csv.starts_with("iteration,log_likelihood,grad_norm,beta\n0,"));
    }

    #[test]
    fn rejects_empty_demonstrations() {
        let r = train(
            &line(),
            &[],
            RewardModel::tabular(8),
            &RewardInputs::Tabular { pairs: 8 },
            &TrainConfig::default(),
            &mut |_| Ok(0.0),
        );
        assert!(matches!(r, Err(AtigError::Input(_))));
    }
}
