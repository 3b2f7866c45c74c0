use std::collections::HashMap;
use std::sync::Arc;

use crate::assignment::{max_assignment, Assignment};
use crate::engine::{Engine, Job, JobKind, JobOutput, RewardSpec};
use crate::geometry::{project_to_lower_approx, project_to_upper_approx, weight_vector, GeometryError, NormMatrix};
use crate::numerics::{IterOptions, NumericsError, Scheduler};

use super::{MorapError, MorapInstance};

pub const DEFAULT_EPS: f64 = 0.01;
pub const DEFAULT_ITERATION_CAP: usize = 500;

/// Two iteration points closer than this (max-norm) count as the same.
const DUPLICATE_TOL: f64 = 1e-10;

/// A point of the achievable set maximizing `w · x`, with its witness.
#[derive(Clone, Debug)]
pub struct SupportPoint {
    pub r: Vec<f64>,
    pub assignment: Assignment,
    /// Scheduler of the pair serving task `j`, at index `j`. A centralised
    /// solve stores its single joint scheduler here instead.
    pub schedulers: Vec<Arc<Scheduler>>,
    /// Optimal weighted value `w · r` as seen by the solver.
    pub value: f64,
}

/// Anything that can produce supporting points of the achievable set.
pub trait SupportOracle {
    fn dimension(&self) -> usize;
    fn support(&mut self, w: &[f64]) -> Result<SupportPoint, MorapError>;
}

/// Supporting points from the per-pair products: one optimization per
/// distinct (model, weights) job, a maximum assignment, then two
/// evaluations per task.
pub struct Decentralised<'a> {
    inst: &'a MorapInstance,
    engine: &'a Engine,
    pub opts: IterOptions,
}

impl<'a> Decentralised<'a> {
    pub fn new(inst: &'a MorapInstance, engine: &'a Engine) -> Decentralised<'a> {
        Decentralised {
            inst,
            engine,
            opts: IterOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: IterOptions) -> Self {
        self.opts = opts;
        self
    }
}

impl SupportOracle for Decentralised<'_> {
    fn dimension(&self) -> usize {
        self.inst.dimension()
    }

    fn support(&mut self, w: &[f64]) -> Result<SupportPoint, MorapError> {
        let inst = self.inst;
        let n = inst.n();
        if w.len() != 2 * n {
            return Err(NumericsError::DimensionMismatch(format!(
                "weight vector has {} entries, need {}",
                w.len(),
                2 * n
            ))
            .into());
        }
        let mut key_to_job: HashMap<(usize, u64, u64), usize> = HashMap::new();
        let mut slot = vec![0usize; n * n];
        let mut jobs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let model = inst.model_id(i, j);
                let key = (model, w[i].to_bits(), w[n + j].to_bits());
                slot[i * n + j] = *key_to_job.entry(key).or_insert_with(|| {
                    jobs.push(Job {
                        id: jobs.len(),
                        model: inst.model(model).clone(),
                        kind: JobKind::Optimize,
                        reward: RewardSpec::Weighted {
                            cost: w[i],
                            success: w[n + j],
                        },
                        opts: self.opts,
                    });
                    jobs.len() - 1
                });
            }
        }
        log::debug!("supporting point: {} optimization jobs for {} pairs", jobs.len(), n * n);
        let mut optimized = Vec::with_capacity(jobs.len());
        for (_, r) in self.engine.run_batch(jobs) {
            match r? {
                JobOutput::Optimized(o) => optimized.push((o.solution.value, Arc::new(o.scheduler))),
                JobOutput::Evaluated(_) => unreachable!("optimization job returned an evaluation"),
            }
        }
        let c: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| optimized[slot[i * n + j]].0).collect())
            .collect();
        let (f, value) = max_assignment(&c)?;

        let schedulers: Vec<Arc<Scheduler>> = (0..n).map(|j| optimized[slot[f.agent(j) * n + j]].1.clone()).collect();
        let mut evals = Vec::with_capacity(2 * n);
        for (j, sched) in schedulers.iter().enumerate() {
            let model = inst.model(inst.model_id(f.agent(j), j));
            for (k, reward) in [RewardSpec::Cost, RewardSpec::Success].into_iter().enumerate() {
                evals.push(Job {
                    id: 2 * j + k,
                    model: model.clone(),
                    kind: JobKind::Evaluate(sched.clone()),
                    reward,
                    opts: self.opts,
                });
            }
        }
        let out = self.engine.run_batch(evals);
        let mut r = vec![0.0; 2 * n];
        for (id, res) in out {
            let v = res?.value();
            let j = id / 2;
            if id % 2 == 0 {
                r[f.agent(j)] = v;
            } else {
                r[n + j] = v;
            }
        }
        Ok(SupportPoint {
            r,
            assignment: f,
            schedulers,
            value,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ParetoOptions {
    pub eps: f64,
    pub max_iterations: usize,
    /// Stop with "infeasible" at the first point that cuts `t` off.
    pub verify_only: bool,
}

impl Default for ParetoOptions {
    fn default() -> Self {
        ParetoOptions {
            eps: DEFAULT_EPS,
            max_iterations: DEFAULT_ITERATION_CAP,
            verify_only: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub w: Vec<f64>,
    pub r: Vec<f64>,
    pub assignment: Assignment,
    pub schedulers: Vec<Arc<Scheduler>>,
    /// Bounds after this iteration.
    pub t_up: Vec<f64>,
    pub t_down: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ParetoResult {
    pub feasible: bool,
    /// Left the loop through the ε test (or a verify-only cut).
    pub converged: bool,
    pub t: Vec<f64>,
    /// Closest point of `down(conv(Φ))`; achievable.
    pub t_up: Vec<f64>,
    /// Closest point of the outer halfspace approximation.
    pub t_down: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    /// Convex weights over the iteration points certifying `t_up`.
    pub certificate: Vec<f64>,
    pub eps: f64,
    pub norm: NormMatrix,
}

impl ParetoResult {
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.iterations.iter().map(|it| it.r.clone()).collect()
    }

    pub fn halfspaces(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.iterations.iter().map(|it| (it.w.clone(), it.r.clone())).collect()
    }

    /// `‖t↓ − t↑‖_M`.
    pub fn gap(&self) -> f64 {
        self.norm.distance(&self.t_down, &self.t_up).unwrap_or(f64::INFINITY)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Point-oriented Pareto computation.
///
/// Alternates supporting-point queries with projections of `t` onto the
/// inner approximation `down(conv(Φ))` (giving `t↑`) and onto the outer
/// halfspace approximation (giving `t↓`) until the two are `eps` apart.
/// `t` is feasible iff `t↓` stays at `t`.
pub fn pareto_point<O: SupportOracle + ?Sized>(
    oracle: &mut O,
    t: &[f64],
    m: &NormMatrix,
    opts: &ParetoOptions,
) -> Result<ParetoResult, MorapError> {
    let dim = oracle.dimension();
    if t.len() != dim {
        return Err(GeometryError::DimensionMismatch {
            expected: dim,
            found: t.len(),
        }
        .into());
    }
    if m.dim() != dim {
        return Err(GeometryError::DimensionMismatch {
            expected: dim,
            found: m.dim(),
        }
        .into());
    }
    if !(opts.eps >= 0.0) {
        return Err(MorapError::Thresholds(format!(
            "eps must be nonnegative, got {}",
            opts.eps
        )));
    }
    let mut w = vec![0.0; dim];
    w[0] = 1.0;
    let mut t_down = t.to_vec();
    let mut t_up: Vec<f64> = Vec::new();
    let mut certificate = Vec::new();
    let mut phi: Vec<Vec<f64>> = Vec::new();
    let mut lambda: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut cut = false;

    while iterations.len() < opts.max_iterations {
        let sp = oracle.support(&w)?;
        let repeat = phi
            .iter()
            .any(|p| p.iter().zip(&sp.r).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL));
        phi.push(sp.r.clone());
        lambda.push((w.clone(), sp.r.clone()));

        let level = dot(&w, &t_down);
        let slack = 1e-9 * (1.0 + level.abs());
        if dot(&w, &sp.r) < level - slack {
            t_down = project_to_upper_approx(t, &lambda, m)?;
            cut = opts.verify_only;
        }
        let lower = project_to_lower_approx(t, &phi, m)?;
        t_up = lower.x;
        certificate = lower.lambda;
        iterations.push(IterationRecord {
            w: w.clone(),
            r: sp.r,
            assignment: sp.assignment,
            schedulers: sp.schedulers,
            t_up: t_up.clone(),
            t_down: t_down.clone(),
        });
        if cut {
            converged = true;
            break;
        }
        if m.distance(&t_down, &t_up)? <= opts.eps {
            converged = true;
            break;
        }
        if repeat {
            // the oracle has nothing new to offer in this direction
            log::debug!("supporting point repeated at iteration {}", iterations.len());
            break;
        }
        w = match weight_vector(t, &t_up, m) {
            Ok(w) => w,
            Err(GeometryError::DegenerateDirection) => break,
            Err(e) => return Err(e.into()),
        };
    }
    if !converged {
        log::warn!(
            "stopped after {} iterations with gap {:.3e}",
            iterations.len(),
            m.distance(&t_down, &t_up).unwrap_or(f64::NAN)
        );
    }
    let feasible = !cut && m.distance(&t_down, t)? <= opts.eps;
    Ok(ParetoResult {
        feasible,
        converged,
        t: t.to_vec(),
        t_up,
        t_down,
        iterations,
        certificate,
        eps: opts.eps,
        norm: m.clone(),
    })
}

/// Feasibility only: gives up as soon as a supporting point separates `t`.
pub fn verify_only<O: SupportOracle + ?Sized>(
    oracle: &mut O,
    t: &[f64],
    m: &NormMatrix,
    eps: f64,
) -> Result<bool, MorapError> {
    let opts = ParetoOptions {
        eps,
        verify_only: true,
        ..ParetoOptions::default()
    };
    Ok(pareto_point(oracle, t, m, &opts)?.feasible)
}
