//! Random assignment and planning over a team of agents.
//!
//! A [`MorapInstance`] holds one product model per (agent, task) pair.
//! [`pareto_point`] decides whether a threshold vector is achievable and,
//! if not, approaches the nearest achievable point; [`synthesize`] turns a
//! converged result into a distribution over assignments with one scheduler
//! per assigned pair.
//!
//! Objective vectors have length `2n`: the expected (negative) cost of each
//! agent first, then the success probability of each task.

mod io;
mod solver;
mod synth;

use std::collections::HashMap;
use std::sync::Arc;

use crate::assignment::AssignmentError;
use crate::engine::JobError;
use crate::geometry::GeometryError;
use crate::logic::{task_automaton, Dfa, LogicError};
use crate::model::{check_reward_finite, Mdp, ModelError, ProductMdp, RewardStructure};
use crate::numerics::NumericsError;

pub use io::{
    build_instance, load_instance, parse_instance, AgentSpec, InstanceJson, IterationJson, LoadedInstance, ResultJson,
    SynthesisJson, TaskSpec,
};
pub use solver::{
    pareto_point, verify_only, Decentralised, IterationRecord, ParetoOptions, ParetoResult, SupportOracle,
    SupportPoint, DEFAULT_EPS, DEFAULT_ITERATION_CAP,
};
pub use synth::{simulate, synthesize, MixtureComponent, SimulationReport, SynthesisResult};

/// Task used to pad the task list up to the number of agents.
pub const DUMMY_TASK: &str = "true";

#[derive(Debug, thiserror::Error)]
pub enum MorapError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Job(JobError),
    #[error("{tasks} tasks but only {agents} agents")]
    TooManyTasks { agents: usize, tasks: usize },
    #[error("instance has no agents")]
    Empty,
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("no convex combination of the iteration points reaches tUp")]
    NoCertificate,
    #[error("centralised model estimated at {estimate:.3e} states, refusing")]
    SizeGuard { estimate: f64 },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("malformed instance: {0}")]
    Format(String),
    #[error("simulation did not finish within {0} steps")]
    Runaway(usize),
}

impl From<JobError> for MorapError {
    fn from(e: JobError) -> Self {
        match e {
            JobError::Numerics(n) => MorapError::Numerics(n),
            other => MorapError::Job(other),
        }
    }
}

impl MorapError {
    /// Whether the error comes from an invalid model or task rather than
    /// from IO or usage.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            MorapError::Model(_)
                | MorapError::Logic(_)
                | MorapError::Numerics(NumericsError::NotRewardFinite)
                | MorapError::TooManyTasks { .. }
                | MorapError::Empty
        )
    }
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub mdp: Mdp,
    pub cost: RewardStructure,
}

impl Agent {
    pub fn new(mdp: Mdp, cost: RewardStructure) -> Agent {
        Agent { mdp, cost }
    }
}

/// Agents, padded tasks and their products.
#[derive(Clone, Debug)]
pub struct MorapInstance {
    agents: Vec<Agent>,
    tasks: Vec<Dfa>,
    real_tasks: usize,
    products: Vec<Arc<ProductMdp>>,
    model_of: Vec<usize>,
    /// Pair index of the first product of each distinct model.
    representatives: Vec<usize>,
}

impl MorapInstance {
    /// Pads `tasks` with always-true tasks up to `agents.len()` and builds
    /// every product. Fails if any product is not reward-finite.
    pub fn new(agents: Vec<Agent>, mut tasks: Vec<Dfa>) -> Result<MorapInstance, MorapError> {
        if agents.is_empty() {
            return Err(MorapError::Empty);
        }
        let n = agents.len();
        let real_tasks = tasks.len();
        if real_tasks > n {
            return Err(MorapError::TooManyTasks {
                agents: n,
                tasks: real_tasks,
            });
        }
        if real_tasks < n {
            let dummy = task_automaton(DUMMY_TASK)?;
            tasks.resize(n, dummy);
        }
        let mut products = Vec::with_capacity(n * n);
        let mut model_of = Vec::with_capacity(n * n);
        let mut representatives: Vec<usize> = Vec::new();
        let mut by_hash: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, agent) in agents.iter().enumerate() {
            for (j, dfa) in tasks.iter().enumerate() {
                let p = ProductMdp::build(&agent.mdp, &agent.cost, dfa, i, j)?;
                let bucket = by_hash.entry(p.hash()).or_default();
                let known = bucket
                    .iter()
                    .copied()
                    .find(|&id| products_of(&products, &representatives, id).same_model(&p));
                let id = match known {
                    Some(id) => id,
                    None => {
                        if !check_reward_finite(&p) {
                            return Err(ModelError::NotRewardFinite(format!(
                                "agent {i} cannot be forced to finish task {j}"
                            ))
                            .into());
                        }
                        representatives.push(products.len());
                        bucket.push(representatives.len() - 1);
                        representatives.len() - 1
                    }
                };
                model_of.push(id);
                products.push(Arc::new(p));
            }
        }
        Ok(MorapInstance {
            agents,
            tasks,
            real_tasks,
            products,
            model_of,
            representatives,
        })
    }

    /// Tasks given as co-safe formulas.
    pub fn from_formulas(agents: Vec<Agent>, tasks: &[&str]) -> Result<MorapInstance, MorapError> {
        let dfas = tasks.iter().map(|t| task_automaton(t)).collect::<Result<Vec<_>, _>>()?;
        MorapInstance::new(agents, dfas)
    }

    /// Number of agents, equal to the number of tasks after padding.
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn dimension(&self) -> usize {
        2 * self.n()
    }

    /// Tasks before padding.
    pub fn real_tasks(&self) -> usize {
        self.real_tasks
    }

    pub fn agent(&self, i: usize) -> &Agent {
        &self.agents[i]
    }

    pub fn task(&self, j: usize) -> &Dfa {
        &self.tasks[j]
    }

    pub fn product(&self, i: usize, j: usize) -> &Arc<ProductMdp> {
        &self.products[i * self.n() + j]
    }

    /// Id of the distinct model behind pair `(i, j)`.
    pub fn model_id(&self, i: usize, j: usize) -> usize {
        self.model_of[i * self.n() + j]
    }

    pub fn num_models(&self) -> usize {
        self.representatives.len()
    }

    /// The product that stands for every pair with model `id`.
    pub fn model(&self, id: usize) -> &Arc<ProductMdp> {
        &self.products[self.representatives[id]]
    }

    /// Sum of product sizes over all `n²` pairs.
    pub fn total_product_states(&self) -> usize {
        self.products.iter().map(|p| p.num_states()).sum()
    }

    /// Full threshold vector from `|I| + |J|` values (costs, then success
    /// probabilities of the real tasks); padded tasks get threshold 0.
    pub fn thresholds(&self, values: &[f64]) -> Result<Vec<f64>, MorapError> {
        let n = self.n();
        let dim = n + self.real_tasks;
        if values.len() != dim && values.len() != 2 * n {
            return Err(MorapError::Thresholds(format!(
                "expected {dim} values ({n} costs, {} probabilities), got {}",
                self.real_tasks,
                values.len()
            )));
        }
        let mut t = values.to_vec();
        t.resize(2 * n, 0.0);
        if let Some(k) = t.iter().position(|v| !v.is_finite()) {
            return Err(MorapError::Thresholds(format!("entry {k} is not finite")));
        }
        if let Some(j) = t[n..].iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(MorapError::Thresholds(format!(
                "probability threshold of task {j} is {} (outside [0, 1])",
                t[n + j]
            )));
        }
        Ok(t)
    }
}

fn products_of<'a>(products: &'a [Arc<ProductMdp>], representatives: &[usize], id: usize) -> &'a ProductMdp {
    &products[representatives[id]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::toy_agent;

    fn toy() -> MorapInstance {
        let (m, c) = toy_agent();
        MorapInstance::from_formulas(vec![Agent::new(m, c)], &["!x U y"]).unwrap()
    }

    #[test]
    fn pads_missing_tasks() {
        let (m, c) = toy_agent();
        let agents = vec![Agent::new(m.clone(), c.clone()), Agent::new(m, c)];
        let inst = MorapInstance::from_formulas(agents, &["!x U y"]).unwrap();
        assert_eq!((inst.n(), inst.real_tasks()), (2, 1));
        assert_eq!(inst.thresholds(&[-3.0, -3.0, 0.5]).unwrap(), vec![-3.0, -3.0, 0.5, 0.0]);
        // identical agents share models
        assert_eq!(inst.num_models(), 2);
        assert_eq!(inst.model_id(0, 0), inst.model_id(1, 0));
    }

    #[test]
    fn rejects_extra_tasks() {
        let (m, c) = toy_agent();
        let err = MorapInstance::from_formulas(vec![Agent::new(m, c)], &["F x", "F y"]).unwrap_err();
        assert!(matches!(err, MorapError::TooManyTasks { agents: 1, tasks: 2 }));
    }

    #[test]
    fn threshold_validation() {
        let inst = toy();
        assert!(inst.thresholds(&[-1.0]).is_err());
        assert!(inst.thresholds(&[-1.0, 1.5]).is_err());
        assert!(inst.thresholds(&[f64::NAN, 0.5]).is_err());
        assert_eq!(inst.thresholds(&[-2.5, 0.7]).unwrap(), vec![-2.5, 0.7]);
    }

    #[test]
    fn not_reward_finite_is_rejected() {
        let (m, c) = toy_agent();
        // x is absorbing, so `F y` can be dodged forever
        let err = MorapInstance::from_formulas(vec![Agent::new(m, c)], &["F y"]).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }
}
