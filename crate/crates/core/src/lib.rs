//! Runtime assurance for agentic systems: learn an MDP of an agent's
//! behaviour from its execution trace and continuously check quantitative
//! temporal-logic properties against it.

pub mod checker;
pub mod config;
pub mod engine;
pub mod mdp;
pub mod pctl;
pub mod prism;
pub mod sim;
pub mod trace;
