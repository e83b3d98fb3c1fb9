//! Active task-inference-guided inverse reinforcement learning.
//!
//! The crate couples three pieces:
//!
//! * a grid navigation simulator whose typed regions emit subgoal symbols
//!   ([`grid_env`]),
//! * active inference of the task automaton from membership queries answered
//!   by a simulated demonstrator ([`lstar`], [`oracle`]),
//! * maximum-entropy IRL on the product of the grid MDP with the inferred
//!   automaton ([`automata`], [`irl`]).
//!
//! [`orchestrator`] runs the outer loop that alternates between the two
//! learners, and [`cli`] wires everything to files and the `atig` binary.

pub mod automata;
pub mod cli;
pub mod error;
pub mod grid_env;
pub mod irl;
pub mod lstar;
pub mod oracle;
pub mod orchestrator;
pub mod rng;

pub use automata::{Dfa, ProductMdp, Word};
pub use error::{AtigError, Result};
pub use grid_env::{Action, GridMap, ObjectKind};
