use std::collections::{BTreeMap, VecDeque};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ModelError, RewardStructure};

/// Rows whose probabilities deviate from 1 by more than this are rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Sparse labelled MDP in compressed row form.
///
/// Choices (enabled actions) of state `s` are the contiguous range
/// `choices(s)`; the successors of choice `c` are `transitions(c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    initial: usize,
    state_start: Vec<usize>,
    choice_start: Vec<usize>,
    succ: Vec<usize>,
    prob: Vec<f64>,
    action_names: Vec<String>,
    labels: Vec<Vec<String>>,
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.state_start.len() - 1
    }

    pub fn num_choices(&self) -> usize {
        self.choice_start.len() - 1
    }

    pub fn num_transitions(&self) -> usize {
        self.succ.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn choices(&self, s: usize) -> Range<usize> {
        self.state_start[s]..self.state_start[s + 1]
    }

    /// Successor ids and probabilities of choice `c`.
    pub fn transitions(&self, c: usize) -> (&[usize], &[f64]) {
        let r = self.choice_start[c]..self.choice_start[c + 1];
        (&self.succ[r.clone()], &self.prob[r])
    }

    pub fn action_name(&self, c: usize) -> &str {
        &self.action_names[c]
    }

    pub fn labels(&self, s: usize) -> &[String] {
        &self.labels[s]
    }

    /// State owning each choice.
    pub fn choice_states(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_choices());
        for s in 0..self.num_states() {
            out.extend(self.choices(s).map(|_| s));
        }
        out
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        (0..self.num_choices())
            .map(|c| (self.transitions(c).1.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// States reachable from the initial state, in BFS order.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states()];
        let mut queue = VecDeque::from([self.initial]);
        seen[self.initial] = true;
        while let Some(s) = queue.pop_front() {
            for c in self.choices(s) {
                for &t in self.transitions(c).0 {
                    if !seen[t] {
                        seen[t] = true;
                        queue.push_back(t);
                    }
                }
            }
        }
        seen
    }

    /// Keep only the states in `keep`. Returns the new model, the old-to-new
    /// state map and the kept choice ids (old numbering, in new order).
    ///
    /// Every successor of a kept state must itself be kept.
    pub(crate) fn retain_states(&self, keep: &[bool]) -> (Mdp, Vec<Option<usize>>, Vec<usize>) {
        let mut map = vec![None; self.num_states()];
        let mut next = 0;
        for (s, &k) in keep.iter().enumerate() {
            if k {
                map[s] = Some(next);
                next += 1;
            }
        }
        let mut b = MdpBuilder::new();
        let mut kept_choices = Vec::new();
        for s in (0..self.num_states()).filter(|&s| keep[s]) {
            b.add_state(self.labels[s].clone());
            for c in self.choices(s) {
                let (succ, prob) = self.transitions(c);
                let row = succ
                    .iter()
                    .zip(prob)
                    .map(|(&t, &p)| (map[t].expect("successor of a kept state was dropped"), p))
                    .collect();
                b.add_choice(self.action_names[c].clone(), row);
                kept_choices.push(c);
            }
        }
        let initial = map[self.initial].expect("initial state dropped");
        let mdp = b.build(initial).expect("restriction of a valid model is valid");
        (mdp, map, kept_choices)
    }

    /// Drop the states unreachable from the initial state.
    pub fn restrict_reachable(&self) -> (Mdp, Vec<Option<usize>>) {
        let (mdp, map, _) = self.retain_states(&self.reachable());
        (mdp, map)
    }

    pub fn to_json(&self, rewards: &RewardStructure) -> MdpJson {
        let states = self.choice_states();
        MdpJson {
            states: self.num_states(),
            initial: self.initial,
            labels: (0..self.num_states())
                .filter(|&s| !self.labels[s].is_empty())
                .map(|s| (s, self.labels[s].clone()))
                .collect(),
            actions: (0..self.num_choices())
                .map(|c| {
                    let (succ, prob) = self.transitions(c);
                    ActionJson {
                        state: states[c],
                        name: self.action_names[c].clone(),
                        to: succ.iter().zip(prob).map(|(&s, &p)| TransitionJson { s, p }).collect(),
                        reward: rewards[c],
                    }
                })
                .collect(),
        }
    }

    /// Load from the JSON exchange format, returning the model and its
    /// per-action reward.
    pub fn from_json(json: &MdpJson) -> Result<(Mdp, RewardStructure), ModelError> {
        let n = json.states;
        if n == 0 {
            return Err(ModelError::Invalid("model has no states".into()));
        }
        let mut by_state: Vec<Vec<&ActionJson>> = vec![Vec::new(); n];
        for a in &json.actions {
            if a.state >= n {
                return Err(ModelError::StateOutOfRange {
                    state: a.state,
                    states: n,
                });
            }
            by_state[a.state].push(a);
        }
        let mut b = MdpBuilder::new();
        let mut rewards = Vec::with_capacity(json.actions.len());
        for (s, actions) in by_state.iter().enumerate() {
            let mut labels = json.labels.get(&s).cloned().unwrap_or_default();
            labels.sort();
            labels.dedup();
            b.add_state(labels);
            for a in actions {
                if !a.reward.is_finite() {
                    return Err(ModelError::Invalid(format!(
                        "non-finite reward on action '{}' of state {s}",
                        a.name
                    )));
                }
                b.add_choice(a.name.clone(), a.to.iter().map(|t| (t.s, t.p)).collect());
                rewards.push(a.reward);
            }
        }
        if let Some(&bad) = json.labels.keys().find(|&&s| s >= n) {
            return Err(ModelError::StateOutOfRange { state: bad, states: n });
        }
        Ok((b.build(json.initial)?, RewardStructure(rewards)))
    }
}

/// Incremental construction: states are appended in id order and each
/// choice belongs to the most recently added state.
#[derive(Default)]
pub struct MdpBuilder {
    state_start: Vec<usize>,
    choice_start: Vec<usize>,
    succ: Vec<usize>,
    prob: Vec<f64>,
    action_names: Vec<String>,
    labels: Vec<Vec<String>>,
}

impl MdpBuilder {
    pub fn new() -> MdpBuilder {
        MdpBuilder {
            choice_start: vec![0],
            ..Default::default()
        }
    }

    pub fn add_state(&mut self, labels: Vec<String>) -> usize {
        self.state_start.push(self.action_names.len());
        self.labels.push(labels);
        self.labels.len() - 1
    }

    pub fn add_choice(&mut self, name: impl Into<String>, row: Vec<(usize, f64)>) {
        assert!(!self.labels.is_empty(), "add_state must precede add_choice");
        // merge duplicate successors so rows stay canonical
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (t, p) in row {
            *merged.entry(t).or_insert(0.0) += p;
        }
        for (t, p) in merged {
            self.succ.push(t);
            self.prob.push(p);
        }
        self.choice_start.push(self.succ.len());
        self.action_names.push(name.into());
    }

    pub fn num_states(&self) -> usize {
        self.labels.len()
    }

    /// Validate and finish. Rows within [`ROW_SUM_TOLERANCE`] of 1 are
    /// renormalized.
    pub fn build(mut self, initial: usize) -> Result<Mdp, ModelError> {
        let n = self.labels.len();
        if initial >= n {
            return Err(ModelError::StateOutOfRange {
                state: initial,
                states: n,
            });
        }
        self.state_start.push(self.action_names.len());
        for s in 0..n {
            if self.state_start[s] == self.state_start[s + 1] {
                return Err(ModelError::Deadlock(s));
            }
        }
        for s in 0..n {
            for c in self.state_start[s]..self.state_start[s + 1] {
                let r = self.choice_start[c]..self.choice_start[c + 1];
                if r.is_empty() {
                    return Err(ModelError::Stochasticity {
                        state: s,
                        action: self.action_names[c].clone(),
                        sum: 0.0,
                    });
                }
                let mut sum = 0.0;
                for k in r.clone() {
                    if self.succ[k] >= n {
                        return Err(ModelError::StateOutOfRange {
                            state: self.succ[k],
                            states: n,
                        });
                    }
                    let p = self.prob[k];
                    if !(p.is_finite() && p >= 0.0) {
                        return Err(ModelError::Invalid(format!(
                            "bad probability {p} on action '{}' of state {s}",
                            self.action_names[c]
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(ModelError::Stochasticity {
                        state: s,
                        action: self.action_names[c].clone(),
                        sum,
                    });
                }
                for k in r {
                    self.prob[k] /= sum;
                }
            }
        }
        Ok(Mdp {
            initial,
            state_start: self.state_start,
            choice_start: self.choice_start,
            succ: self.succ,
            prob: self.prob,
            action_names: self.action_names,
            labels: self.labels,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpJson {
    pub states: usize,
    pub initial: usize,
    #[serde(default)]
    pub labels: BTreeMap<usize, Vec<String>>,
    pub actions: Vec<ActionJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionJson {
    pub state: usize,
    pub name: String,
    pub to: Vec<TransitionJson>,
    #[serde(default)]
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionJson {
    pub s: usize,
    pub p: f64,
}
