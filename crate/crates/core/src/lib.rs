//! Multi-objective random assignment and planning.
//!
//! Agents are labelled MDPs with cost rewards, tasks are co-safe LTL formulas
//! (or their automata). Given per-agent cost thresholds and per-task success
//! thresholds, the solver decides whether some random assignment of tasks to
//! agents together with per-pair schedulers meets all of them, and otherwise
//! finds the closest Pareto-optimal threshold vector.

pub mod assignment;
pub mod centralised;
pub mod engine;
pub mod geometry;
pub mod logic;
pub mod model;
pub mod morap;
pub mod numerics;
pub mod oracle;
pub mod warehouse;

#[cfg(test)]
mod testutil;
