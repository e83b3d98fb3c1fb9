//! Soft Bellman fixed point and the induced stochastic policy.

use crate::error::{AtigError, Result};

use super::FiniteMdp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub gamma: f64,
    /// Bound on the sup-norm distance to the fixed point at return.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gamma: 0.95,
            tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

impl SolverConfig {
    /// A sweep changing iterates by at most this is within `tol` of the
    /// fixed point of a `γ`-contraction.
    pub fn step_tolerance(&self) -> f64 {
        self.tol * (1.0 - self.gamma) / self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AtigError::input(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 || self.max_sweeps == 0 {
            return Err(AtigError::input("tolerance and sweep cap must be positive"));
        }
        Ok(())
    }
}

/// `Q(z, a)` for every pair, stored at `z * num_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<f64>,
    pub num_actions: usize,
    pub gamma: f64,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
    pub sweeps: usize,
}

impl QTable {
    pub fn num_states(&self) -> usize {
        self.values.len() / self.num_actions
    }

    pub fn get(&self, z: usize, a: usize) -> f64 {
        self.values[z * self.num_actions + a]
    }

    pub fn row(&self, z: usize) -> &[f64] {
        &self.values[z * self.num_actions..(z + 1) * self.num_actions]
    }

    /// Soft state value `log Σ_a exp Q(z, a)`.
    pub fn soft_value(&self, z: usize) -> f64 {
        log_sum_exp(self.row(z))
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Iterates `Q ← R + γ P V(Q)` with `V = log Σ exp Q` until the sup-norm
/// change guarantees an error below `cfg.tol`. `warm` seeds the iteration.
pub fn soft_value_iteration<M: FiniteMdp + ?Sized>(
    mdp: &M,
    rewards: &[f64],
    cfg: &SolverConfig,
    warm: Option<&QTable>,
) -> Result<QTable> {
    cfg.validate()?;
    let na = mdp.num_actions();
    let ns = mdp.num_states();
    if rewards.len() != ns * na {
        return Err(AtigError::input(format!(
            "expected {} rewards, got {}",
            ns * na,
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(AtigError::input("rewards must be finite"));
    }
    let mut q = match warm {
        Some(w) if w.values.len() == rewards.len() && w.num_actions == na => w.values.clone(),
        _ => rewards.to_vec(),
    };
    let mut v = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for sweep in 1..=cfg.max_sweeps {
        for (z, vz) in v.iter_mut().enumerate() {
            *vz = log_sum_exp(&q[z * na..(z + 1) * na]);
        }
        residual = 0.0;
        for z in 0..ns {
            for a in 0..na {
                let i = z * na + a;
                let next: f64 = mdp.successors(z, a).iter().map(|&(y, p)| p * v[y]).sum();
                let nq = rewards[i] + cfg.gamma * next;
                residual = f64::max(residual, (nq - q[i]).abs());
                q[i] = nq;
            }
        }
        if residual <= cfg.step_tolerance() {
            return Ok(QTable {
                values: q,
                num_actions: na,
                gamma: cfg.gamma,
                residual,
                sweeps: sweep,
            });
        }
    }
    Err(AtigError::Convergence {
        what: "soft value iteration",
        iterations: cfg.max_sweeps,
        residual,
    })
}

/// Stochastic policy `π(a | z)`, stored like [`QTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub probs: Vec<f64>,
    pub num_actions: usize,
}

impl Policy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy {
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
            num_actions,
        }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn get(&self, z: usize, a: usize) -> f64 {
        self.probs[z * self.num_actions + a]
    }

    pub fn row(&self, z: usize) -> &[f64] {
        &self.probs[z * self.num_actions..(z + 1) * self.num_actions]
    }

    /// Inverse-CDF draw of an action at `z` from a uniform `u ∈ [0, 1)`.
    pub fn sample_with(&self, z: usize, u: f64) -> usize {
        let mut acc = 0.0;
        let row = self.row(z);
        for (a, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        row.len() - 1
    }
}

/// Row-wise softmax of `q`.
pub fn soft_policy(q: &QTable) -> Policy {
    let na = q.num_actions;
    let mut probs = vec![0.0; q.values.len()];
    for (row, out) in q.values.chunks(na).zip(probs.chunks_mut(na)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, x) in out.iter_mut().zip(row) {
            *o = (x - m).exp();
            total += *o;
        }
        out.iter_mut().for_each(|o| *o /= total);
    }
    Policy { probs, num_actions: na }
}

/// Deterministic episodic MDP on a directed acyclic graph. Each state lists
/// its actions as `(successor, reward)`; states without actions are
/// terminal. Soft values use no discount and are computed leaf to root.
#[derive(Debug, Clone)]
pub struct AcyclicMdp {
    edges: Vec<Vec<(usize, f64)>>,
    root: usize,
    order: Vec<usize>,
}

impl AcyclicMdp {
    pub fn new(edges: Vec<Vec<(usize, f64)>>, root: usize) -> Result<Self> {
        let n = edges.len();
        if root >= n {
            return Err(AtigError::input("root out of range"));
        }
        if edges.iter().flatten().any(|&(y, r)| y >= n || !r.is_finite()) {
            return Err(AtigError::input("edge target out of range or reward not finite"));
        }
        // post-order DFS; a grey node on the stack means a cycle
        let mut mark = vec![0u8; n];
        let mut order = Vec::with_capacity(n);
        for start in 0..n {
            if mark[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            mark[start] = 1;
            while let Some(&mut (z, ref mut next)) = stack.last_mut() {
                if *next < edges[z].len() {
                    let y = edges[z][*next].0;
                    *next += 1;
                    match mark[y] {
                        0 => {
                            mark[y] = 1;
                            stack.push((y, 0));
                        }
                        1 => return Err(AtigError::input("transition graph has a cycle")),
                        _ => {}
                    }
                } else {
                    mark[z] = 2;
                    order.push(z);
                    stack.pop();
                }
            }
        }
        Ok(AcyclicMdp { edges, root, order })
    }

    /// Complete tree of the given depth and branching; `reward(k)` is the
    /// reward of the `k`-th edge created.
    pub fn tree(depth: usize, branching: usize, mut reward: impl FnMut(usize) -> f64) -> Result<Self> {
        let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
        let mut frontier = vec![0];
        let mut k = 0;
        for _ in 0..depth {
            let mut next = Vec::new();
            for &z in &frontier {
                for _ in 0..branching {
                    let child = edges.len();
                    edges.push(Vec::new());
                    edges[z].push((child, reward(k)));
                    k += 1;
                    next.push(child);
                }
            }
            frontier = next;
        }
        AcyclicMdp::new(edges, 0)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn num_states(&self) -> usize {
        self.edges.len()
    }

    /// Soft values `V(z)`; terminal states have value 0.
    pub fn soft_values(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.edges.len()];
        for &z in &self.order {
            if !self.edges[z].is_empty() {
                let q: Vec<f64> = self.edges[z].iter().map(|&(y, r)| r + v[y]).collect();
                v[z] = log_sum_exp(&q);
            }
        }
        v
    }

    /// `π(k | z)` for the `k`-th action of each state.
    pub fn policy(&self) -> Vec<Vec<f64>> {
        let v = self.soft_values();
        self.edges
            .iter()
            .enumerate()
            .map(|(z, es)| es.iter().map(|&(y, r)| (r + v[y] - v[z]).exp()).collect())
            .collect()
    }

    /// Every action sequence from the root to a terminal state, with its
    /// total reward.
    pub fn trajectories(&self) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(self.root, Vec::new(), 0.0)];
        while let Some((z, path, total)) = stack.pop() {
            if self.edges[z].is_empty() {
                out.push((path, total));
                continue;
            }
            for (k, &(y, r)) in self.edges[z].iter().enumerate() {
                let mut p = path.clone();
                p.push(k);
                stack.push((y, p, total + r));
            }
        }
        out
    }

    /// Probability of an action sequence from the root under `policy`.
    pub fn trajectory_probability(&self, policy: &[Vec<f64>], actions: &[usize]) -> Result<f64> {
        let mut z = self.root;
        let mut p = 1.0;
        for &k in actions {
            let &(y, _) = self.edges[z]
                .get(k)
                .ok_or_else(|| AtigError::input(format!("state {z} has no action {k}")))?;
            p *= policy[z][k];
            z = y;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::super::ExplicitMdp;
    use super::*;

    fn cfg(gamma: f64) -> SolverConfig {
        SolverConfig {
            gamma,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn single_action_geometric_series() {
        let m = ExplicitMdp::new(1, 1, vec![vec![(0, 1.0)]]).unwrap();
        let q = soft_value_iteration(&m, &[1.0], &cfg(0.9), None).unwrap();
        assert!((q.get(0, 0) - 10.0).abs() < 1e-8);
    }

    #[test]
    fn zero_reward_two_actions() {
        let m = ExplicitMdp::new(1, 2, vec![vec![(0, 1.0)]; 2]).unwrap();
        let q = soft_value_iteration(&m, &[0.0, 0.0], &cfg(0.9), None).unwrap();
        let e = 0.9 * 2f64.ln() / 0.1;
        assert!((q.get(0, 0) - e).abs() < 1e-8 && (q.get(0, 1) - e).abs() < 1e-8);
        assert!((e - 6.23832).abs() < 1e-5);
    }

    #[test]
    fn cap_reports_convergence_error() {
        let m = ExplicitMdp::new(1, 1, vec![vec![(0, 1.0)]]).unwrap();
        let c = SolverConfig {
            gamma: 0.99,
            tol: 1e-12,
            max_sweeps: 5,
        };
        match soft_value_iteration(&m, &[1.0], &c, None) {
            Err(AtigError::Convergence {
                iterations: 5,
                residual,
                ..
            }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let q = QTable {
            values: vec![1.0, 0.0, 3.0, 3.0],
            num_actions: 2,
            gamma: 0.9,
            residual: 0.0,
            sweeps: 0,
        };
        let p = soft_policy(&q);
        assert!((p.get(0, 0) - 0.73106).abs() < 1e-5 && (p.get(0, 1) - 0.26894).abs() < 1e-5);
        assert_eq!(p.row(1), &[0.5, 0.5]);
        let mut shifted = q.clone();
        shifted.values[0] += 100.0;
        shifted.values[1] += 100.0;
        let p2 = soft_policy(&shifted);
        assert!((p2.get(0, 0) - p.get(0, 0)).abs() < 1e-15);
    }

    #[test]
    fn cyclic_graph_rejected() {
        assert!(AcyclicMdp::new(vec![vec![(1, 0.0)], vec![(0, 0.0)]], 0).is_err());
    }

    #[test]
    fn tree_trajectory_law() {
        let t = AcyclicMdp::tree(3, 2, |k| (k as f64 * 0.37).sin()).unwrap();
        let pi = t.policy();
        let trajs = t.trajectories();
        assert_eq!(trajs.len(), 8);
        let z: f64 = trajs.iter().map(|(_, r)| r.exp()).sum();
        let mut total = 0.0;
        for (a, r) in &trajs {
            let p = t.trajectory_probability(&pi, a).unwrap();
            assert!((p - r.exp() / z).abs() < 1e-12);
            total += p;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}
