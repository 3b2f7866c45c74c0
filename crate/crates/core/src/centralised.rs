//! The joint model in which one controller assigns tasks one by one and
//! then drives the assigned agent through its product.
//!
//! Control states `(i, j, ♯)` offer `assign` (agent `i` takes task `j`) and,
//! when some unassigned agent above `i` exists, `forward` to the next one.
//! Working states `(i, j, s, ♯)` follow the product of agent `i` and task
//! `j`; once that product is done, `next` moves on to task `j + 1` with the
//! lowest unassigned agent. Runs end when the last task is done.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use crate::assignment::Assignment;
use crate::geometry::NormMatrix;
use crate::model::{
    check_reward_finite, Absorbing, Mdp, MdpBuilder, ModelError, ProductMdp, RewardStructure, DONE_LABEL,
};
use crate::morap::{pareto_point, MorapError, MorapInstance, ParetoOptions, ParetoResult, SupportOracle, SupportPoint};
use crate::numerics::{evaluate_scheduler, optimal_scheduler, IterOptions, NumericsError, Scheduler};

/// Refuse to build beyond this many estimated states.
pub const SIZE_GUARD: f64 = 1e7;

pub const ASSIGN_ACTION: &str = "assign";
pub const FORWARD_ACTION: &str = "forward";
pub const NEXT_ACTION: &str = "next";

/// `assigned` is a bit set over agents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CentralState {
    Control {
        agent: usize,
        task: usize,
        assigned: u64,
    },
    Working {
        agent: usize,
        task: usize,
        state: usize,
        assigned: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Owner {
    Control,
    /// Product choice `choice` of pair `(agent, task)`.
    Work {
        agent: usize,
        task: usize,
        choice: usize,
    },
}

pub struct CentralisedMdp {
    n: usize,
    mdp: Mdp,
    states: Vec<CentralState>,
    index: HashMap<CentralState, usize>,
    done: Vec<bool>,
    owners: Vec<Owner>,
    products: Vec<Arc<ProductMdp>>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Rough upper bound on the reachable state count.
pub fn estimate_states(inst: &MorapInstance) -> f64 {
    let n = inst.n();
    let mut total = 0.0;
    for j in 0..n {
        let combos = binomial(n - 1, j);
        for i in 0..n {
            total += (inst.product(i, j).num_states() + 1) as f64 * combos;
        }
    }
    total
}

fn lowest_unassigned(assigned: u64, from: usize, n: usize) -> Option<usize> {
    (from..n).find(|&i| assigned & (1 << i) == 0)
}

pub fn build_centralised(inst: &MorapInstance) -> Result<CentralisedMdp, MorapError> {
    let n = inst.n();
    let estimate = estimate_states(inst);
    if n > 63 || estimate > SIZE_GUARD {
        return Err(MorapError::SizeGuard { estimate });
    }
    let products: Vec<Arc<ProductMdp>> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| inst.product(i, j).clone())
        .collect();
    let product = |i: usize, j: usize| &products[i * n + j];

    let start = CentralState::Control {
        agent: 0,
        task: 0,
        assigned: 0,
    };
    let mut index: HashMap<CentralState, usize> = HashMap::new();
    let mut states = vec![start];
    index.insert(start, 0);
    let mut queue = VecDeque::from([start]);
    let mut builder = MdpBuilder::new();
    let mut done = Vec::new();
    let mut owners = Vec::new();

    let mut intern = |s: CentralState, states: &mut Vec<CentralState>, queue: &mut VecDeque<CentralState>| -> usize {
        *index.entry(s).or_insert_with(|| {
            states.push(s);
            queue.push_back(s);
            states.len() - 1
        })
    };

    // states are popped in id order
    let mut current = 0usize;
    while let Some(cs) = queue.pop_front() {
        let me = current;
        current += 1;
        match cs {
            CentralState::Control { agent, task, assigned } => {
                builder.add_state(Vec::new());
                done.push(false);
                let work = CentralState::Working {
                    agent,
                    task,
                    state: product(agent, task).mdp().initial(),
                    assigned: assigned | (1 << agent),
                };
                let id = intern(work, &mut states, &mut queue);
                builder.add_choice(ASSIGN_ACTION, vec![(id, 1.0)]);
                owners.push(Owner::Control);
                if let Some(next) = lowest_unassigned(assigned, agent + 1, n) {
                    let fwd = CentralState::Control {
                        agent: next,
                        task,
                        assigned,
                    };
                    let id = intern(fwd, &mut states, &mut queue);
                    builder.add_choice(FORWARD_ACTION, vec![(id, 1.0)]);
                    owners.push(Owner::Control);
                }
            }
            CentralState::Working {
                agent,
                task,
                state,
                assigned,
            } => {
                let p = product(agent, task);
                let m = p.mdp();
                let product_done = p.done_states()[state];
                let mut labels: Vec<String> = m.labels(state).to_vec();
                if product_done && !labels.iter().any(|l| l == DONE_LABEL) {
                    labels.push(DONE_LABEL.to_string());
                }
                builder.add_state(labels);
                if product_done {
                    if task + 1 < n {
                        let next = lowest_unassigned(assigned, 0, n).expect("an agent is free while tasks remain");
                        let cs2 = CentralState::Control {
                            agent: next,
                            task: task + 1,
                            assigned,
                        };
                        let id = intern(cs2, &mut states, &mut queue);
                        builder.add_choice(NEXT_ACTION, vec![(id, 1.0)]);
                        owners.push(Owner::Control);
                        done.push(false);
                    } else {
                        builder.add_choice(crate::model::IDLE_ACTION, vec![(me, 1.0)]);
                        owners.push(Owner::Control);
                        done.push(true);
                    }
                } else {
                    done.push(false);
                    for c in m.choices(state) {
                        let (succ, prob) = m.transitions(c);
                        let row = succ
                            .iter()
                            .zip(prob)
                            .map(|(&s2, &pr)| {
                                let w = CentralState::Working {
                                    agent,
                                    task,
                                    state: s2,
                                    assigned,
                                };
                                (intern(w, &mut states, &mut queue), pr)
                            })
                            .collect();
                        builder.add_choice(m.action_name(c), row);
                        owners.push(Owner::Work { agent, task, choice: c });
                    }
                }
            }
        }
    }
    let mdp = builder.build(0)?;
    let c = CentralisedMdp {
        n,
        mdp,
        states,
        index,
        done,
        owners,
        products,
    };
    if !check_reward_finite(&c) {
        return Err(ModelError::NotRewardFinite("centralised model".into()).into());
    }
    Ok(c)
}

impl Absorbing for CentralisedMdp {
    fn model(&self) -> &Mdp {
        &self.mdp
    }

    fn done(&self) -> &[bool] {
        &self.done
    }
}

impl CentralisedMdp {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    pub fn state(&self, id: usize) -> CentralState {
        self.states[id]
    }

    pub fn id_of(&self, s: &CentralState) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Objective `k`: cost of agent `k` for `k < n`, success of task `k − n`
    /// otherwise. Control actions earn nothing.
    pub fn reward(&self, k: usize) -> RewardStructure {
        let n = self.n;
        RewardStructure(
            self.owners
                .iter()
                .map(|o| match *o {
                    Owner::Work { agent, task, choice } => {
                        let p = &self.products[agent * n + task];
                        if k < n && agent == k {
                            p.cost()[choice]
                        } else if k >= n && task == k - n {
                            p.success()[choice]
                        } else {
                            0.0
                        }
                    }
                    Owner::Control => 0.0,
                })
                .collect(),
        )
    }

    /// `Σ_k w_k ρ_k`.
    pub fn weighted_reward(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        self.owners
            .iter()
            .map(|o| match *o {
                Owner::Work { agent, task, choice } => {
                    let p = &self.products[agent * n + task];
                    w[agent] * p.cost()[choice] + w[n + task] * p.success()[choice]
                }
                Owner::Control => 0.0,
            })
            .collect()
    }

    /// Assignment fixed by a simple scheduler's control decisions.
    pub fn assignment(&self, sched: &Scheduler) -> Result<Assignment, NumericsError> {
        let n = self.n;
        let mut f = vec![0; n];
        let mut assigned = 0u64;
        let mut agent = 0;
        for (task, slot) in f.iter_mut().enumerate() {
            loop {
                let s = CentralState::Control { agent, task, assigned };
                let id = self
                    .id_of(&s)
                    .ok_or_else(|| NumericsError::InvalidScheduler(format!("unreachable control state {s:?}")))?;
                let a = sched
                    .action(id)
                    .ok_or_else(|| NumericsError::InvalidScheduler("control decisions must be deterministic".into()))?;
                let c = self.mdp.choices(id).start + a;
                if self.mdp.action_name(c) == ASSIGN_ACTION {
                    break;
                }
                agent = lowest_unassigned(assigned, agent + 1, n).expect("forward needs a free agent");
            }
            *slot = agent;
            assigned |= 1 << agent;
            agent = lowest_unassigned(assigned, 0, n).unwrap_or(0);
        }
        Ok(Assignment(f))
    }
}

/// Supporting points from one optimization over the joint model.
pub struct CentralisedOracle<'a> {
    c: &'a CentralisedMdp,
    pub opts: IterOptions,
}

impl<'a> CentralisedOracle<'a> {
    pub fn new(c: &'a CentralisedMdp) -> CentralisedOracle<'a> {
        CentralisedOracle {
            c,
            opts: IterOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: IterOptions) -> Self {
        self.opts = opts;
        self
    }
}

impl SupportOracle for CentralisedOracle<'_> {
    fn dimension(&self) -> usize {
        2 * self.c.n
    }

    fn support(&mut self, w: &[f64]) -> Result<SupportPoint, MorapError> {
        let dim = 2 * self.c.n;
        if w.len() != dim {
            return Err(
                NumericsError::DimensionMismatch(format!("weight vector has {} entries, need {dim}", w.len())).into(),
            );
        }
        let opt = optimal_scheduler(self.c, &self.c.weighted_reward(w), self.opts)?;
        let mut r = Vec::with_capacity(dim);
        for k in 0..dim {
            r.push(evaluate_scheduler(self.c, &opt.scheduler, &self.c.reward(k), self.opts)?.value);
        }
        Ok(SupportPoint {
            r,
            assignment: self.c.assignment(&opt.scheduler)?,
            schedulers: vec![Arc::new(opt.scheduler)],
            value: opt.solution.value,
        })
    }
}

/// The point-oriented computation with the joint model as oracle.
pub fn centralised_pareto_point(
    c: &CentralisedMdp,
    t: &[f64],
    m: &NormMatrix,
    opts: &ParetoOptions,
) -> Result<ParetoResult, MorapError> {
    pareto_point(&mut CentralisedOracle::new(c), t, m, opts)
}
