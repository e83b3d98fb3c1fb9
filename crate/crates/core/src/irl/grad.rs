//! Exact gradients of the demonstration log-likelihood.

use ndarray::{Array1, Array2, Axis};

use crate::automata::{Dfa, ProductMdp};
use crate::error::{AtigError, Result};
use crate::grid_env::GridMap;
use crate::oracle::Demonstration;

use super::reward::{RewardInputs, RewardModel};
use super::soft::{Policy, SolverConfig};
use super::FiniteMdp;

/// `∂Q(z, a)/∂θ` for every pair (one row each), together with
/// `w(z, a) = π(a | z) ∂Q(z, a)/∂θ`.
#[derive(Debug, Clone)]
pub struct GradTable {
    pub dq: Array2<f64>,
    pub w: Array2<f64>,
    pub num_actions: usize,
    pub residual: f64,
    pub sweeps: usize,
}

impl GradTable {
    pub fn dim(&self) -> usize {
        self.dq.ncols()
    }

    /// `Σ_a w(z, a)`.
    pub fn w_sum(&self, z: usize) -> Array1<f64> {
        let na = self.num_actions;
        self.w.slice(ndarray::s![z * na..(z + 1) * na, ..]).sum_axis(Axis(0))
    }
}

/// Fixed point of `∂Q = ∂R + γ P Σ_a' π ∂Q` by successive approximation.
pub fn grad_value_iteration<M: FiniteMdp + ?Sized>(
    mdp: &M,
    policy: &Policy,
    model: &RewardModel,
    inputs: &RewardInputs,
    cfg: &SolverConfig,
) -> Result<GradTable> {
    cfg.validate()?;
    let na = mdp.num_actions();
    let ns = mdp.num_states();
    if policy.probs.len() != ns * na || policy.num_actions != na {
        return Err(AtigError::input("policy does not match the MDP"));
    }
    let jac = model.jacobian(inputs)?;
    if jac.nrows() != ns * na {
        return Err(AtigError::input("reward inputs do not match the MDP"));
    }
    let d = jac.ncols();
    let mut dq = jac.clone();
    let mut h = Array2::<f64>::zeros((ns, d));
    let mut residual = f64::INFINITY;
    for sweep in 1..=cfg.max_sweeps {
        h.fill(0.0);
        for z in 0..ns {
            let mut hz = h.row_mut(z);
            for a in 0..na {
                hz.scaled_add(policy.get(z, a), &dq.row(z * na + a));
            }
        }
        residual = 0.0;
        for z in 0..ns {
            for a in 0..na {
                let i = z * na + a;
                let mut next = jac.row(i).to_owned();
                for &(y, p) in mdp.successors(z, a) {
                    next.scaled_add(cfg.gamma * p, &h.row(y));
                }
                let mut row = dq.row_mut(i);
                for (old, new) in row.iter_mut().zip(next.iter()) {
                    residual = f64::max(residual, (new - *old).abs());
                    *old = *new;
                }
            }
        }
        if residual <= cfg.step_tolerance() {
            let mut w = dq.clone();
            for (i, mut row) in w.rows_mut().into_iter().enumerate() {
                row *= policy.probs[i];
            }
            return Ok(GradTable {
                dq,
                w,
                num_actions: na,
                residual,
                sweeps: sweep,
            });
        }
    }
    Err(AtigError::Convergence {
        what: "gradient value iteration",
        iterations: cfg.max_sweeps,
        residual,
    })
}

/// `∂π(a | z)/∂θ = w(z, a) − π(a | z) Σ_a' w(z, a')`, one row per pair.
pub fn policy_grad(policy: &Policy, grad: &GradTable) -> Array2<f64> {
    let na = grad.num_actions;
    let mut out = grad.w.clone();
    for z in 0..policy.num_states() {
        let ws = grad.w_sum(z);
        for a in 0..na {
            out.row_mut(z * na + a).scaled_add(-policy.get(z, a), &ws);
        }
    }
    out
}

/// A demonstration as product state-action pairs. Pairs stop at the first
/// absorbing product state, which is kept as `terminal`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectedDemo {
    pub pairs: Vec<(usize, usize)>,
    pub terminal: usize,
}

impl ProjectedDemo {
    /// DFA component of every visited product state, terminal included.
    pub fn dfa_states(&self, product: &ProductMdp) -> Vec<usize> {
        self.pairs
            .iter()
            .map(|&(z, _)| product.label(z))
            .chain(std::iter::once(product.label(self.terminal)))
            .collect()
    }
}

pub fn project_demo(grid: &GridMap, dfa: &Dfa, product: &ProductMdp, demo: &Demonstration) -> Result<ProjectedDemo> {
    if demo.states.len() != demo.actions.len() + 1 {
        return Err(AtigError::input("demonstration must have one more state than actions"));
    }
    let lookup = |s: usize, q: usize| {
        product.index_of(s, q).ok_or_else(|| {
            AtigError::state(format!(
                "demonstration visits ({}, q{q}) outside the product state space",
                grid.cell_of(s)
            ))
        })
    };
    for c in &demo.states {
        grid.check_cell(*c)?;
    }
    let s0 = grid.index_of(demo.states[0]);
    let mut q = dfa.advance(dfa.init(), grid.label(s0));
    let mut z = lookup(s0, q)?;
    let mut pairs = Vec::with_capacity(demo.actions.len());
    for (j, a) in demo.actions.iter().enumerate() {
        if product.is_absorbing(z) {
            break;
        }
        let s2 = grid.index_of(demo.states[j + 1]);
        q = dfa.advance(q, grid.label(s2));
        let z2 = lookup(s2, q)?;
        if !product
            .successors(z, a.index())
            .iter()
            .any(|&(y, p)| y == z2 && p > 0.0)
        {
            return Err(AtigError::state(format!(
                "step {j} of the demonstration is impossible in the product"
            )));
        }
        pairs.push((z, a.index()));
        z = z2;
    }
    Ok(ProjectedDemo { pairs, terminal: z })
}

#[derive(Debug, Clone)]
pub struct LogLik {
    /// `Σ log π(a | z)` over demonstrated pairs; `-∞` if some demonstrated
    /// action has probability below `exp(log_floor)`.
    pub value: f64,
    /// The same sum with each term clamped at `log_floor`.
    pub clamped: f64,
    pub grad: Vec<f64>,
    pub zero_prob: bool,
    pub num_pairs: usize,
}

impl LogLik {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn loglik_value(demos: &[ProjectedDemo], policy: &Policy, log_floor: f64) -> (f64, f64, bool, usize) {
    let mut clamped = 0.0;
    let mut zero = false;
    let mut n = 0;
    for d in demos {
        for &(z, a) in &d.pairs {
            let lp = policy.get(z, a).ln();
            if lp < log_floor || lp.is_nan() {
                zero = true;
                clamped += log_floor;
            } else {
                clamped += lp;
            }
            n += 1;
        }
    }
    let value = if zero { f64::NEG_INFINITY } else { clamped };
    (value, clamped, zero, n)
}

fn check_demos(demos: &[ProjectedDemo], ns: usize, na: usize) -> Result<()> {
    for d in demos {
        if d.terminal >= ns || d.pairs.iter().any(|&(z, a)| z >= ns || a >= na) {
            return Err(AtigError::input("projected demonstration leaves the MDP"));
        }
    }
    Ok(())
}

/// Log-likelihood and gradient from a dense [`GradTable`]:
/// `Σ (∂Q(z, a) − Σ_a' w(z, a'))` over demonstrated pairs.
pub fn loglik_and_grad(demos: &[ProjectedDemo], policy: &Policy, grad: &GradTable, log_floor: f64) -> Result<LogLik> {
    let na = grad.num_actions;
    check_demos(demos, policy.num_states(), na)?;
    let (value, clamped, zero_prob, num_pairs) = loglik_value(demos, policy, log_floor);
    let mut g = Array1::<f64>::zeros(grad.dim());
    for d in demos {
        for &(z, a) in &d.pairs {
            g += &grad.dq.row(z * na + a);
            g -= &grad.w_sum(z);
        }
    }
    Ok(LogLik {
        value,
        clamped,
        grad: g.to_vec(),
        zero_prob,
        num_pairs,
    })
}

/// Same quantity as [`loglik_and_grad`] without materializing `∂Q/∂θ`.
///
/// With residual counts `c(z, a) = n(z, a) − π(a | z) n(z)` the gradient is
/// `cᵀ ∂Q/∂θ = μᵀ ∂R/∂θ`, where `μ = c + γ (PΠ)ᵀ μ` is solved by iteration
/// and the contraction with `∂R/∂θ` is a single backward pass of the model.
#[allow(clippy::too_many_arguments)]
pub fn loglik_and_grad_adjoint<M: FiniteMdp + ?Sized>(
    mdp: &M,
    demos: &[ProjectedDemo],
    policy: &Policy,
    model: &RewardModel,
    inputs: &RewardInputs,
    cfg: &SolverConfig,
    log_floor: f64,
) -> Result<LogLik> {
    cfg.validate()?;
    let na = mdp.num_actions();
    let ns = mdp.num_states();
    if policy.probs.len() != ns * na {
        return Err(AtigError::input("policy does not match the MDP"));
    }
    check_demos(demos, ns, na)?;
    let (value, clamped, zero_prob, num_pairs) = loglik_value(demos, policy, log_floor);

    let mut c = vec![0.0; ns * na];
    for d in demos {
        for &(z, a) in &d.pairs {
            c[z * na + a] += 1.0;
            for b in 0..na {
                c[z * na + b] -= policy.get(z, b);
            }
        }
    }
    let mut mu = c.clone();
    let mut inflow = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    let mut converged = num_pairs == 0;
    for _ in 0..cfg.max_sweeps {
        if converged {
            break;
        }
        inflow.fill(0.0);
        for z in 0..ns {
            for a in 0..na {
                let m = mu[z * na + a];
                if m != 0.0 {
                    for &(y, p) in mdp.successors(z, a) {
                        inflow[y] += p * m;
                    }
                }
            }
        }
        residual = 0.0;
        for (z, &flow) in inflow.iter().enumerate() {
            for a in 0..na {
                let i = z * na + a;
                let nm = c[i] + cfg.gamma * policy.probs[i] * flow;
                residual = f64::max(residual, (nm - mu[i]).abs());
                mu[i] = nm;
            }
        }
        converged = residual <= cfg.step_tolerance();
    }
    if !converged {
        return Err(AtigError::Convergence {
            what: "adjoint occupancy iteration",
            iterations: cfg.max_sweeps,
            residual,
        });
    }
    let grad = model.weighted_gradient(inputs, &mu)?;
    Ok(LogLik {
        value,
        clamped,
        grad,
        zero_prob,
        num_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::super::soft::{soft_policy, soft_value_iteration};
    use super::super::ExplicitMdp;
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn tight() -> SolverConfig {
        SolverConfig {
            gamma: 0.9,
            tol: 1e-13,
            max_sweeps: 100_000,
        }
    }

    fn random_mdp(ns: usize, na: usize, seed: u64) -> ExplicitMdp {
        let mut r = rng::seeded(seed);
        let mut rows = Vec::new();
        for _ in 0..ns * na {
            let k = r.gen_range(1..=3);
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for _ in 0..k {
                let w: f64 = r.gen_range(0.1..1.0);
                row.push((r.gen_range(0..ns), w));
                total += w;
            }
            row.iter_mut().for_each(|e| e.1 /= total);
            rows.push(row);
        }
        ExplicitMdp::new(ns, na, rows).unwrap()
    }

    fn random_demos(ns: usize, na: usize, seed: u64) -> Vec<ProjectedDemo> {
        let mut r = rng::seeded(seed);
        (0..3)
            .map(|_| ProjectedDemo {
                pairs: (0..5).map(|_| (r.gen_range(0..ns), r.gen_range(0..na))).collect(),
                terminal: 0,
            })
            .collect()
    }

    fn likelihood(mdp: &ExplicitMdp, demos: &[ProjectedDemo], model: &RewardModel, inputs: &RewardInputs) -> f64 {
        let q = soft_value_iteration(mdp, &model.rewards(inputs).unwrap(), &tight(), None).unwrap();
        let p = soft_policy(&q);
        loglik_value(demos, &p, -1e9).0
    }

    fn check_instance(model: RewardModel, inputs: RewardInputs, mdp: &ExplicitMdp, demos: &[ProjectedDemo]) {
        let q = soft_value_iteration(mdp, &model.rewards(&inputs).unwrap(), &tight(), None).unwrap();
        let pi = soft_policy(&q);
        let gt = grad_value_iteration(mdp, &pi, &model, &inputs, &tight()).unwrap();
        let dense = loglik_and_grad(demos, &pi, &gt, -1e9).unwrap();
        let adj = loglik_and_grad_adjoint(mdp, demos, &pi, &model, &inputs, &tight(), -1e9).unwrap();
        let theta = model.params();
        let h = 1e-5;
        let mut fd = vec![0.0; theta.len()];
        for k in 0..theta.len() {
            let mut m = model.clone();
            let mut t = theta.clone();
            t[k] += h;
            m.set_params(&t).unwrap();
            let up = likelihood(mdp, demos, &m, &inputs);
            t[k] -= 2.0 * h;
            m.set_params(&t).unwrap();
            let down = likelihood(mdp, demos, &m, &inputs);
            fd[k] = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = |a: &[f64], b: &[f64]| norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
        let scale = norm(&fd).max(1e-8);
        assert!(
            diff(&dense.grad, &fd) / scale < 1e-4,
            "dense vs fd {}",
            diff(&dense.grad, &fd) / scale
        );
        assert!(diff(&adj.grad, &dense.grad) / scale < 1e-8);
        assert_eq!(dense.value, adj.value);
    }

    fn features(n: usize, d: usize, seed: u64) -> RewardInputs {
        let mut r = rng::seeded(seed);
        RewardInputs::Features(Array2::from_shape_fn((n, d), |_| r.gen_range(-1.0..1.0)))
    }

    #[test]
    fn tabular_gradient_matches_finite_differences() {
        let mdp = random_mdp(6, 3, 1);
        let mut model = RewardModel::tabular(18);
        let mut r = rng::seeded(2);
        let t: Vec<f64> = (0..18).map(|_| r.gen_range(-1.0..1.0)).collect();
        model.set_params(&t).unwrap();
        check_instance(model, RewardInputs::Tabular { pairs: 18 }, &mdp, &random_demos(6, 3, 3));
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mdp = random_mdp(8, 4, 4);
        let mut model = RewardModel::linear(5);
        model.set_params(&[0.3, -0.2, 0.1, 0.5, -0.4]).unwrap();
        check_instance(model, features(32, 5, 5), &mdp, &random_demos(8, 4, 6));
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mdp = random_mdp(7, 4, 7);
        let model = RewardModel::mlp(6, &[8, 5], 8).unwrap();
        check_instance(model, features(28, 6, 9), &mdp, &random_demos(7, 4, 10));
    }

    #[test]
    fn single_action_closed_form_and_zero_gradient() {
        let mdp = ExplicitMdp::new(1, 1, vec![vec![(0, 1.0)]]).unwrap();
        let model = RewardModel::tabular(1);
        let inputs = RewardInputs::Tabular { pairs: 1 };
        let pi = Policy::uniform(1, 1);
        let gt = grad_value_iteration(&mdp, &pi, &model, &inputs, &tight()).unwrap();
        assert!((gt.dq[[0, 0]] - 10.0).abs() < 1e-8);
        let demos = vec![ProjectedDemo {
            pairs: vec![(0, 0); 4],
            terminal: 0,
        }];
        let ll = loglik_and_grad(&demos, &pi, &gt, -50.0).unwrap();
        assert_eq!(ll.grad, vec![0.0]);
        assert_eq!(ll.value, 0.0);
        assert!(policy_grad(&pi, &gt).iter().all(|&v| v == 0.0));
        let empty = loglik_and_grad(&[], &pi, &gt, -50.0).unwrap();
        assert_eq!((empty.value, empty.grad), (0.0, vec![0.0]));
    }

    #[test]
    fn small_gamma_gradient_is_reward_gradient() {
        let mdp = random_mdp(4, 2, 11);
        let model = RewardModel::tabular(8);
        let inputs = RewardInputs::Tabular { pairs: 8 };
        let pi = Policy::uniform(4, 2);
        let cfg = SolverConfig {
            gamma: 1e-9,
            tol: 1e-6,
            max_sweeps: 10,
        };
        let gt = grad_value_iteration(&mdp, &pi, &model, &inputs, &cfg).unwrap();
        assert!((&gt.dq - &Array2::<f64>::eye(8)).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn policy_gradient_rows_sum_to_zero_and_match_fd() {
        let mdp = random_mdp(5, 3, 12);
        let mut model = RewardModel::tabular(15);
        let mut r = rng::seeded(13);
        let t: Vec<f64> = (0..15).map(|_| r.gen_range(-2.0..2.0)).collect();
        model.set_params(&t).unwrap();
        let inputs = RewardInputs::Tabular { pairs: 15 };
        let pol = |m: &RewardModel| {
            soft_policy(&soft_value_iteration(&mdp, &m.rewards(&inputs).unwrap(), &tight(), None).unwrap())
        };
        let pi = pol(&model);
        let gt = grad_value_iteration(&mdp, &pi, &model, &inputs, &tight()).unwrap();
        let pg = policy_grad(&pi, &gt);
        for z in 0..5 {
            let s = pg.slice(ndarray::s![z * 3..z * 3 + 3, ..]).sum_axis(Axis(0));
            assert!(s.iter().all(|v| v.abs() < 1e-12));
        }
        let h = 1e-6;
        for k in 0..15 {
            let mut m = model.clone();
            let mut tt = t.clone();
            tt[k] += h;
            m.set_params(&tt).unwrap();
            let up = pol(&m);
            tt[k] -= 2.0 * h;
            m.set_params(&tt).unwrap();
            let down = pol(&m);
            for i in 0..15 {
                let fd = (up.probs[i] - down.probs[i]) / (2.0 * h);
                assert!((fd - pg[[i, k]]).abs() < 1e-4 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn zero_probability_action_flagged() {
        let pi = Policy {
            probs: vec![1.0, 0.0],
            num_actions: 2,
        };
        let demos = vec![ProjectedDemo {
            pairs: vec![(0, 1)],
            terminal: 0,
        }];
        let mdp = ExplicitMdp::new(1, 2, vec![vec![(0, 1.0)]; 2]).unwrap();
        let model = RewardModel::tabular(2);
        let inputs = RewardInputs::Tabular { pairs: 2 };
        let ll = loglik_and_grad_adjoint(&mdp, &demos, &pi, &model, &inputs, &tight(), -30.0).unwrap();
        assert!(ll.zero_prob);
        assert_eq!(ll.value, f64::NEG_INFINITY);
        assert_eq!(ll.clamped, -30.0);
        assert!(ll.grad.iter().all(|g| g.is_finite()));
    }
}
