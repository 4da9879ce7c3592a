//! Reference implementations used only as test oracles.
//!
//! Everything here works on plain arrays so it shares no code with the
//! verifier it checks.

pub mod exact_lp;
pub mod naive_propagation;
pub mod polygon;
