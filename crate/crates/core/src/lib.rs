//! CDCL-driven branch-and-bound verification of feed-forward ReLU networks.
//!
//! The verifier decides whether any input of a box reaches an unsafe output
//! region. Search runs over ReLU phase literals; refuted branches are
//! recorded as clauses, shrunk asynchronously to small infeasible cores by
//! elastic filtering, and shared between solver workers through a pool.

pub mod bounds;
pub mod cdcl;
pub mod fixtures;
pub mod lp;
pub mod network;
pub mod nnet;
pub mod pool;
pub mod property;
pub mod solver;

pub use cdcl::{Clause, ClauseOrigin, Literal, Var};
pub use network::{ActivationPattern, Network, NeuronId, ReluPhase};
pub use property::{Counterexample, InputBox, LinearConstraint, Relation, VerificationProblem};
