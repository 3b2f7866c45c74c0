//! Co-safe LTL tasks and their automata.

mod dfa;
mod formula;
mod parse;

pub use dfa::{
    classify_locations, formula_to_dfa, formula_to_dfa_with_cap, insert_pre_sinks, Dfa, DfaEdge, DfaJson,
    LocationClasses, DEFAULT_CLOSURE_CAP,
};
pub use formula::Formula;
pub use parse::parse_co_safe;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LogicError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("formula is not co-safe: {0}")]
    NotCoSafe(String),
    #[error("progression closure exceeded {cap} locations")]
    ClosureBlowup { cap: usize },
    #[error("invalid automaton: {0}")]
    InvalidDfa(String),
}

/// Parse a task, build its automaton and insert pre-sinks.
pub fn task_automaton(text: &str) -> Result<Dfa, LogicError> {
    Ok(insert_pre_sinks(formula_to_dfa(&parse_co_safe(text)?)?))
}
