use crate::model::{Mdp, MdpBuilder, RewardStructure};

/// Four-state agent: from s0, `a` loops/branches and `b` gambles on s3.
pub fn toy_agent() -> (Mdp, RewardStructure) {
    let mut b = MdpBuilder::new();
    b.add_state(vec![]);
    b.add_choice("a", vec![(0, 0.3), (1, 0.2), (2, 0.5)]);
    b.add_choice("b", vec![(1, 0.9), (3, 0.1)]);
    b.add_state(vec!["x".into()]);
    b.add_choice("stay", vec![(1, 1.0)]);
    b.add_state(vec![]);
    b.add_choice("go", vec![(3, 1.0)]);
    b.add_state(vec!["y".into()]);
    b.add_choice("stay", vec![(3, 1.0)]);
    let m = b.build(0).unwrap();
    let cost = RewardStructure::constant(&m, -1.0);
    (m, cost)
}
