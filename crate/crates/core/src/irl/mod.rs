//! Maximum-entropy IRL over a product MDP.
//!
//! The policy is the soft Bellman policy of a learned reward. Gradients of
//! the demonstration log-likelihood are available through two independent
//! routes: the dense fixed point for `∂Q/∂θ` ([`grad::grad_value_iteration`],
//! storing one `d`-vector per state-action pair), and an adjoint occupancy
//! fixed point ([`grad::loglik_and_grad_adjoint`]) that yields the same
//! gradient in `O(|Z||A|)` memory. Training uses the adjoint route.

pub mod features;
pub mod grad;
pub mod reward;
pub mod soft;
pub mod train;

pub use features::FeatureEncoding;
pub use grad::{
    grad_value_iteration, loglik_and_grad, loglik_and_grad_adjoint, policy_grad, project_demo, GradTable, LogLik,
    ProjectedDemo,
};
pub use reward::{RewardInputs, RewardModel, RewardVariant};
pub use soft::{soft_policy, soft_value_iteration, AcyclicMdp, Policy, QTable, SolverConfig};
pub use train::{train, IterationRecord, TrainConfig, TrainOutput, TrainReport};

use crate::automata::ProductMdp;
use crate::error::{AtigError, Result};

/// Finite MDP with sparse successor lists, addressed by state and action
/// index. Pair `(z, a)` is stored at `z * num_actions + a`.
pub trait FiniteMdp {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn successors(&self, z: usize, a: usize) -> &[(usize, f64)];

    fn num_pairs(&self) -> usize {
        self.num_states() * self.num_actions()
    }
}

impl FiniteMdp for ProductMdp {
    fn num_states(&self) -> usize {
        ProductMdp::num_states(self)
    }

    fn num_actions(&self) -> usize {
        ProductMdp::num_actions(self)
    }

    fn successors(&self, z: usize, a: usize) -> &[(usize, f64)] {
        ProductMdp::successors(self, z, a)
    }
}

/// An MDP given directly by its transition lists.
#[derive(Debug, Clone)]
pub struct ExplicitMdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Vec<(usize, f64)>>,
}

impl ExplicitMdp {
    /// `transitions[z * num_actions + a]` lists `(successor, probability)`.
    pub fn new(num_states: usize, num_actions: usize, transitions: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(AtigError::input("an MDP needs at least one state and one action"));
        }
        if transitions.len() != num_states * num_actions {
            return Err(AtigError::input(format!(
                "expected {} transition rows, got {}",
                num_states * num_actions,
                transitions.len()
            )));
        }
        for (i, row) in transitions.iter().enumerate() {
            let total: f64 = row.iter().map(|e| e.1).sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|&(z, p)| z >= num_states || p < 0.0) {
                return Err(AtigError::input(format!("transition row {i} is not a distribution")));
            }
        }
        Ok(ExplicitMdp {
            num_states,
            num_actions,
            transitions,
        })
    }
}

impl FiniteMdp for ExplicitMdp {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn successors(&self, z: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[z * self.num_actions + a]
    }
}
