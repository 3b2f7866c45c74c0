//! Sparse labelled MDPs, reward structures and agent-task products.

mod mdp;
mod product;

use std::ops::{Deref, DerefMut};

pub use mdp::{ActionJson, Mdp, MdpBuilder, MdpJson, TransitionJson, ROW_SUM_TOLERANCE};
pub use product::{check_reward_finite, trapped_states, ProductMdp, DONE_LABEL, IDLE_ACTION, PRE_SINK_ACTION};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("state {state} has action '{action}' whose probabilities sum to {sum}")]
    Stochasticity { state: usize, action: String, sum: f64 },
    #[error("state {0} has no enabled action")]
    Deadlock(usize),
    #[error("state id {state} out of range (model has {states} states)")]
    StateOutOfRange { state: usize, states: usize },
    #[error("reward structure has {found} entries, model has {expected} actions")]
    RewardLength { expected: usize, found: usize },
    #[error("invalid automaton: {0}")]
    InvalidDfa(String),
    #[error("model is not reward-finite: {0}")]
    NotRewardFinite(String),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// A model whose runs stop accumulating reward once they hit `done`.
pub trait Absorbing {
    fn model(&self) -> &Mdp;
    fn done(&self) -> &[bool];
}

/// One real value per choice of an [`Mdp`], in choice order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RewardStructure(pub Vec<f64>);

impl RewardStructure {
    pub fn constant(m: &Mdp, value: f64) -> RewardStructure {
        RewardStructure(vec![value; m.num_choices()])
    }
}

impl Deref for RewardStructure {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RewardStructure {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::task_automaton;
    use crate::testutil::toy_agent;

    #[test]
    fn toy_product_shape() {
        let (m, cost) = toy_agent();
        let dfa = task_automaton("!x U y").unwrap();
        let p = ProductMdp::build(&m, &cost, &dfa, 0, 0).unwrap();
        assert_eq!(p.num_states(), 5);
        assert!(p.num_states() <= m.num_states() * dfa.num_locations());
        let done: Vec<(usize, String)> = (0..p.num_states())
            .filter(|&id| p.done_states()[id])
            .map(|id| (p.pair(id).0, dfa.name(p.pair(id).1).to_string()))
            .collect();
        assert!(done.contains(&(1, "false".to_string())));
        assert!(done.contains(&(3, "true".to_string())));
        assert_eq!(done.len(), 2);
        let pre: Vec<usize> = (0..p.num_states())
            .filter(|&id| dfa.is_pre_sink(p.pair(id).1))
            .collect();
        assert_eq!(pre.len(), 1);
        assert_eq!(p.pair(pre[0]).0, 3);
        let c = p.mdp().choices(pre[0]).start;
        assert_eq!(p.mdp().action_name(c), PRE_SINK_ACTION);
        assert_eq!((p.cost()[c], p.success()[c]), (0.0, 1.0));
        assert!(p.mdp().max_row_error() <= 1e-12);
        assert!(check_reward_finite(&p));
    }

    #[test]
    fn success_reward_only_on_pre_sinks() {
        let (m, cost) = toy_agent();
        let dfa = task_automaton("!x U y").unwrap();
        let p = ProductMdp::build(&m, &cost, &dfa, 0, 0).unwrap();
        for id in 0..p.num_states() {
            for c in p.mdp().choices(id) {
                let expected = if dfa.is_pre_sink(p.pair(id).1) { 1.0 } else { 0.0 };
                assert_eq!(p.success()[c], expected);
            }
        }
    }

    #[test]
    fn trivial_task_fires_on_first_step() {
        let (m, cost) = toy_agent();
        let dfa = task_automaton("true").unwrap();
        let p = ProductMdp::build(&m, &cost, &dfa, 0, 0).unwrap();
        assert_eq!(p.num_states(), 2);
        let c = p.mdp().choices(p.mdp().initial()).start;
        assert_eq!(p.success()[c], 1.0);
    }

    #[test]
    fn self_loop_eventually() {
        let mut b = MdpBuilder::new();
        b.add_state(vec!["y".into()]);
        b.add_choice("stay", vec![(0, 1.0)]);
        let m = b.build(0).unwrap();
        let dfa = task_automaton("F y").unwrap();
        let p = ProductMdp::build(&m, &RewardStructure::constant(&m, -1.0), &dfa, 0, 0).unwrap();
        assert_eq!(p.num_states(), 2);
        assert!(check_reward_finite(&p));
    }

    #[test]
    fn cycle_avoiding_done_is_not_reward_finite() {
        let mut b = MdpBuilder::new();
        b.add_state(vec![]);
        b.add_choice("spin", vec![(0, 1.0)]);
        b.add_choice("go", vec![(1, 1.0)]);
        b.add_state(vec!["y".into()]);
        b.add_choice("stay", vec![(1, 1.0)]);
        let m = b.build(0).unwrap();
        let dfa = task_automaton("F y").unwrap();
        let p = ProductMdp::build(&m, &RewardStructure::constant(&m, -1.0), &dfa, 0, 0).unwrap();
        assert!(!check_reward_finite(&p));
    }

    #[test]
    fn single_done_state_is_reward_finite() {
        let mut b = MdpBuilder::new();
        b.add_state(vec!["x".into()]);
        b.add_choice("stay", vec![(0, 1.0)]);
        let m = b.build(0).unwrap();
        // !x U y fails at once on {x}
        let dfa = task_automaton("!x U y").unwrap();
        let p = ProductMdp::build(&m, &RewardStructure::constant(&m, -1.0), &dfa, 0, 0).unwrap();
        assert_eq!(p.num_states(), 1);
        assert!(p.done_states()[0]);
        assert!(check_reward_finite(&p));
    }

    #[test]
    fn restriction_removes_stray_state_and_is_idempotent() {
        let (m, cost) = toy_agent();
        let dfa = task_automaton("!x U y").unwrap();
        let p = ProductMdp::build(&m, &cost, &dfa, 0, 0).unwrap();
        let padded = p.with_unreachable_state();
        assert_eq!(padded.num_states(), 6);
        let back = padded.restrict_reachable();
        assert!(back.same_model(&p));
        assert!(p.restrict_reachable().same_model(&p));
    }

    #[test]
    fn product_requires_pre_sinks() {
        let (m, cost) = toy_agent();
        let raw = crate::logic::formula_to_dfa(&crate::logic::parse_co_safe("!x U y").unwrap()).unwrap();
        assert!(matches!(
            ProductMdp::build(&m, &cost, &raw, 0, 0),
            Err(ModelError::InvalidDfa(_))
        ));
    }

    #[test]
    fn json_rejects_bad_rows_and_deadlocks() {
        let text = r#"{"states":2,"initial":0,"labels":{"1":["g"]},
            "actions":[{"state":0,"name":"a","to":[{"s":1,"p":0.5},{"s":0,"p":0.6}],"reward":-1},
                       {"state":1,"name":"b","to":[{"s":1,"p":1.0}],"reward":0}]}"#;
        let json: MdpJson = serde_json::from_str(text).unwrap();
        assert!(matches!(
            Mdp::from_json(&json),
            Err(ModelError::Stochasticity { state: 0, .. })
        ));
        let text = r#"{"states":2,"initial":0,"actions":[{"state":0,"name":"a","to":[{"s":1,"p":1.0}]}]}"#;
        let json: MdpJson = serde_json::from_str(text).unwrap();
        assert!(matches!(Mdp::from_json(&json), Err(ModelError::Deadlock(1))));
    }

    #[test]
    fn json_round_trip_and_renormalisation() {
        let text = r#"{"states":2,"initial":0,"labels":{"1":["g"]},
            "actions":[{"state":1,"name":"b","to":[{"s":1,"p":1.0}],"reward":0},
                       {"state":0,"name":"a","to":[{"s":1,"p":0.3333333333},{"s":0,"p":0.6666666667}],"reward":-1}]}"#;
        let json: MdpJson = serde_json::from_str(text).unwrap();
        let (m, r) = Mdp::from_json(&json).unwrap();
        assert!(m.max_row_error() <= 1e-12);
        assert_eq!(m.action_name(m.choices(0).start), "a");
        assert_eq!(r[0], -1.0);
        let again = Mdp::from_json(&m.to_json(&r)).unwrap();
        assert_eq!(again.0, m);
    }
}
