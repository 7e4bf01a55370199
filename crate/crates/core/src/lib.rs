//! Self-evolving training of a computer-use agent against simulated software.

pub mod action;
pub mod backend;
pub mod curriculum;
pub mod env;
pub mod evolution;
pub mod grpo;
pub mod judgment;
pub mod metrics;
pub mod policy;
pub mod reward;
