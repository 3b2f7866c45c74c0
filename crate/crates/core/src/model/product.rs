use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};

use super::{Absorbing, Mdp, MdpBuilder, ModelError, RewardStructure};
use crate::logic::Dfa;

/// Name of the internal action taken from a pre-sink location.
pub const PRE_SINK_ACTION: &str = "presink";
/// Name of the self-loop kept at ended (done) product states.
pub const IDLE_ACTION: &str = "idle";
/// Label carried by product states whose task has ended.
pub const DONE_LABEL: &str = "done";

/// Agent-task product with its cost and task-success rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductMdp {
    mdp: Mdp,
    pairs: Vec<(usize, usize)>,
    done: Vec<bool>,
    accept: Vec<bool>,
    cost: RewardStructure,
    success: RewardStructure,
    agent: usize,
    task: usize,
    hash: u64,
}

impl ProductMdp {
    /// Compose agent `m` (with per-action `costs`) and task automaton `dfa`.
    ///
    /// The automaton must already carry pre-sinks. The product starts at
    /// `(s0, delta(q0, L(s0)))`, or at `(s0, q0)` when `q0` is itself a
    /// pre-sink. From a pre-sink the only action is an internal step to the
    /// accepting location with cost 0 and success 1. Ended states (accepting
    /// or trap location) keep a single zero-reward self-loop. Only reachable
    /// states are built.
    pub fn build(
        m: &Mdp,
        costs: &RewardStructure,
        dfa: &Dfa,
        agent: usize,
        task: usize,
    ) -> Result<ProductMdp, ModelError> {
        if costs.len() != m.num_choices() {
            return Err(ModelError::RewardLength {
                expected: m.num_choices(),
                found: costs.len(),
            });
        }
        check_pre_sinks(dfa)?;
        let letters: Vec<usize> = (0..m.num_states())
            .map(|s| dfa.letter(m.labels(s).iter().map(String::as_str)))
            .collect();
        let s0 = m.initial();
        let q_init = if dfa.is_pre_sink(dfa.initial()) {
            dfa.initial()
        } else {
            dfa.step(dfa.initial(), letters[s0])
        };

        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut queue = VecDeque::new();
        let mut intern = |key: (usize, usize), pairs: &mut Vec<(usize, usize)>, queue: &mut VecDeque<usize>| -> usize {
            *index.entry(key).or_insert_with(|| {
                pairs.push(key);
                queue.push_back(pairs.len() - 1);
                pairs.len() - 1
            })
        };
        intern((s0, q_init), &mut pairs, &mut queue);

        let mut b = MdpBuilder::new();
        let mut cost = Vec::new();
        let mut success = Vec::new();
        let mut done = Vec::new();
        let mut accept = Vec::new();
        while let Some(id) = queue.pop_front() {
            let (s, q) = pairs[id];
            let ended = dfa.is_done(q);
            b.add_state(if ended {
                vec![DONE_LABEL.to_string()]
            } else {
                Vec::new()
            });
            done.push(ended);
            accept.push(dfa.is_accepting(q));
            if ended {
                b.add_choice(IDLE_ACTION, vec![(id, 1.0)]);
                cost.push(0.0);
                success.push(0.0);
            } else if dfa.is_pre_sink(q) {
                let t = intern((s, dfa.step(q, letters[s])), &mut pairs, &mut queue);
                b.add_choice(PRE_SINK_ACTION, vec![(t, 1.0)]);
                cost.push(0.0);
                success.push(1.0);
            } else {
                for c in m.choices(s) {
                    let (succ, prob) = m.transitions(c);
                    let row = succ
                        .iter()
                        .zip(prob)
                        .map(|(&t, &p)| (intern((t, dfa.step(q, letters[t])), &mut pairs, &mut queue), p))
                        .collect();
                    b.add_choice(m.action_name(c), row);
                    cost.push(costs[c]);
                    success.push(0.0);
                }
            }
        }
        let mdp = b.build(0)?;
        Ok(ProductMdp::assemble(
            mdp,
            pairs,
            done,
            accept,
            RewardStructure(cost),
            RewardStructure(success),
            agent,
            task,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        mdp: Mdp,
        pairs: Vec<(usize, usize)>,
        done: Vec<bool>,
        accept: Vec<bool>,
        cost: RewardStructure,
        success: RewardStructure,
        agent: usize,
        task: usize,
    ) -> ProductMdp {
        let mut p = ProductMdp {
            mdp,
            pairs,
            done,
            accept,
            cost,
            success,
            agent,
            task,
            hash: 0,
        };
        p.hash = p.structural_hash();
        p
    }

    fn structural_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let m = &self.mdp;
        m.initial().hash(&mut h);
        for s in 0..m.num_states() {
            self.done[s].hash(&mut h);
            self.accept[s].hash(&mut h);
            for c in m.choices(s) {
                let (succ, prob) = m.transitions(c);
                succ.hash(&mut h);
                for p in prob {
                    p.to_bits().hash(&mut h);
                }
                self.cost[c].to_bits().hash(&mut h);
                self.success[c].to_bits().hash(&mut h);
            }
            u64::MAX.hash(&mut h);
        }
        h.finish()
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    /// The (agent state, automaton location) pair behind product state `id`.
    pub fn pair(&self, id: usize) -> (usize, usize) {
        self.pairs[id]
    }

    pub fn done_states(&self) -> &[bool] {
        &self.done
    }

    pub fn accept_states(&self) -> &[bool] {
        &self.accept
    }

    pub fn cost(&self) -> &RewardStructure {
        &self.cost
    }

    pub fn success(&self) -> &RewardStructure {
        &self.success
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn task(&self) -> usize {
        self.task
    }

    /// Hash over transitions, rewards and done/accept marks; identical
    /// models hash equal regardless of agent/task ids.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// Same dynamics and rewards (agent/task ids ignored).
    pub fn same_model(&self, other: &ProductMdp) -> bool {
        self.hash == other.hash
            && self.mdp == other.mdp
            && self.done == other.done
            && self.accept == other.accept
            && self.cost == other.cost
            && self.success == other.success
    }

    /// Drop states unreachable from the initial product state.
    pub fn restrict_reachable(&self) -> ProductMdp {
        let keep = self.mdp.reachable();
        let (mdp, _, choices) = self.mdp.retain_states(&keep);
        let pick = |v: &[bool]| -> Vec<bool> { v.iter().zip(&keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect() };
        ProductMdp::assemble(
            mdp,
            self.pairs
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&p, _)| p)
                .collect(),
            pick(&self.done),
            pick(&self.accept),
            RewardStructure(choices.iter().map(|&c| self.cost[c]).collect()),
            RewardStructure(choices.iter().map(|&c| self.success[c]).collect()),
            self.agent,
            self.task,
        )
    }

    /// Test-only hook: append an isolated state so restriction has
    /// something to remove.
    #[doc(hidden)]
    pub fn with_unreachable_state(&self) -> ProductMdp {
        let m = &self.mdp;
        let mut b = MdpBuilder::new();
        for s in 0..m.num_states() {
            b.add_state(m.labels(s).to_vec());
            for c in m.choices(s) {
                let (succ, prob) = m.transitions(c);
                b.add_choice(
                    m.action_name(c),
                    succ.iter().copied().zip(prob.iter().copied()).collect(),
                );
            }
        }
        let extra = b.add_state(Vec::new());
        b.add_choice("stray", vec![(0, 1.0)]);
        let mdp = b.build(m.initial()).expect("valid");
        let mut pairs = self.pairs.clone();
        pairs.push((usize::MAX, usize::MAX));
        let mut done = self.done.clone();
        done.push(false);
        let mut accept = self.accept.clone();
        accept.push(false);
        let mut cost = self.cost.0.clone();
        cost.push(-1.0);
        let mut success = self.success.0.clone();
        success.push(0.0);
        debug_assert_eq!(extra, self.num_states());
        ProductMdp::assemble(
            mdp,
            pairs,
            done,
            accept,
            RewardStructure(cost),
            RewardStructure(success),
            self.agent,
            self.task,
        )
    }
}

impl Absorbing for ProductMdp {
    fn model(&self) -> &Mdp {
        &self.mdp
    }

    fn done(&self) -> &[bool] {
        &self.done
    }
}

fn check_pre_sinks(dfa: &Dfa) -> Result<(), ModelError> {
    if !dfa.has_pre_sinks() {
        return Err(ModelError::InvalidDfa("automaton has no pre-sink location".into()));
    }
    for q in 0..dfa.num_locations() {
        if dfa.is_accepting(q) || dfa.is_pre_sink(q) {
            continue;
        }
        if dfa.successors(q).iter().any(|&t| dfa.is_accepting(t)) {
            return Err(ModelError::InvalidDfa(format!(
                "location {} enters acceptance without a pre-sink",
                dfa.name(q)
            )));
        }
    }
    Ok(())
}

/// Strong reward-finiteness: from every reachable state, `done` is reached
/// with probability 1 under every scheduler.
///
/// Computes the largest set of non-done states in which some action keeps
/// the run inside the set; the model passes when that set has no reachable
/// state.
pub fn check_reward_finite<M: Absorbing + ?Sized>(model: &M) -> bool {
    trapped_states(model).iter().all(|&t| !t)
}

/// Reachable non-done states from which some scheduler avoids `done`
/// forever.
pub fn trapped_states<M: Absorbing + ?Sized>(model: &M) -> Vec<bool> {
    let m = model.model();
    let done = model.done();
    let n = m.num_states();
    let owner = m.choice_states();
    // choices entering each state
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..m.num_choices() {
        for &t in m.transitions(c).0 {
            incoming[t].push(c);
        }
    }
    let mut inside: Vec<bool> = (0..n).map(|s| !done[s]).collect();
    let mut leaves = vec![false; m.num_choices()];
    let mut staying: Vec<usize> = (0..n).map(|s| m.choices(s).len()).collect();
    let mut removed: Vec<usize> = (0..n).filter(|&s| !inside[s]).collect();
    while let Some(t) = removed.pop() {
        for &c in &incoming[t] {
            if leaves[c] {
                continue;
            }
            leaves[c] = true;
            let s = owner[c];
            staying[s] -= 1;
            if inside[s] && staying[s] == 0 {
                inside[s] = false;
                removed.push(s);
            }
        }
    }
    let reach = m.reachable();
    inside.iter().zip(reach).map(|(&i, r)| i && r).collect()
}
