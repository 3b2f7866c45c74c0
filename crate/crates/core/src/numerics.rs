//! Expected reward until `done`: optimal and fixed-scheduler iteration.
//!
//! All sweeps are synchronous (Jacobi): every state reads the previous
//! vector, so results do not depend on state order or thread count.

use nalgebra::{DMatrix, DVector};

use crate::model::{check_reward_finite, Absorbing, Mdp, RewardStructure};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weights must be nonnegative and sum to 1, got {0:?}")]
    InvalidWeights(Vec<f64>),
    #[error("model is not reward-finite")]
    NotRewardFinite,
    #[error("no convergence after {sweeps} sweeps (last change {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },
    #[error("induced linear system is singular")]
    SingularSystem,
    #[error("invalid scheduler: {0}")]
    InvalidScheduler(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterOptions {
    pub eps: f64,
    pub max_sweeps: usize,
}

impl Default for IterOptions {
    fn default() -> Self {
        IterOptions {
            eps: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

/// Memoryless scheduler. Choices are local offsets into `Mdp::choices(s)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Scheduler {
    Simple(Vec<usize>),
    Randomized(Vec<Vec<(usize, f64)>>),
}

impl Scheduler {
    pub fn simple(choices: Vec<usize>) -> Scheduler {
        Scheduler::Simple(choices)
    }

    /// Always the first enabled action.
    pub fn first_choice(m: &Mdp) -> Scheduler {
        Scheduler::Simple(vec![0; m.num_states()])
    }

    pub fn num_states(&self) -> usize {
        match self {
            Scheduler::Simple(v) => v.len(),
            Scheduler::Randomized(v) => v.len(),
        }
    }

    pub fn is_simple(&self) -> bool {
        matches!(self, Scheduler::Simple(_))
    }

    /// The deterministic choice at `s`, if the scheduler is simple.
    pub fn action(&self, s: usize) -> Option<usize> {
        match self {
            Scheduler::Simple(v) => Some(v[s]),
            Scheduler::Randomized(_) => None,
        }
    }

    /// Distribution over local choices at `s`.
    pub fn distribution(&self, s: usize) -> Vec<(usize, f64)> {
        match self {
            Scheduler::Simple(v) => vec![(v[s], 1.0)],
            Scheduler::Randomized(v) => v[s].clone(),
        }
    }

    pub fn validate(&self, m: &Mdp) -> Result<(), NumericsError> {
        if self.num_states() != m.num_states() {
            return Err(NumericsError::InvalidScheduler(format!(
                "scheduler covers {} states, model has {}",
                self.num_states(),
                m.num_states()
            )));
        }
        for s in 0..m.num_states() {
            let k = m.choices(s).len();
            let dist = self.distribution(s);
            if dist.iter().any(|&(a, p)| a >= k || !(p >= 0.0)) {
                return Err(NumericsError::InvalidScheduler(format!(
                    "bad distribution at state {s}"
                )));
            }
            let sum: f64 = dist.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(NumericsError::InvalidScheduler(format!(
                    "distribution at state {s} sums to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// Result of an iterative solve.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub value: f64,
    pub values: Vec<f64>,
    pub sweeps: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub scheduler: Scheduler,
    pub solution: Solution,
}

/// Pointwise `sum_k w[k] * rewards[k]`.
pub fn weighted_reward(rewards: &[&[f64]], w: &[f64]) -> Result<RewardStructure, NumericsError> {
    if rewards.len() != w.len() {
        return Err(NumericsError::DimensionMismatch(format!(
            "{} reward structures, {} weights",
            rewards.len(),
            w.len()
        )));
    }
    if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(NumericsError::InvalidWeights(w.to_vec()));
    }
    let len = rewards.first().map_or(0, |r| r.len());
    if rewards.iter().any(|r| r.len() != len) {
        return Err(NumericsError::DimensionMismatch(
            "reward structures differ in length".into(),
        ));
    }
    let mut out = vec![0.0; len];
    for (r, &wk) in rewards.iter().zip(w) {
        if wk == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(r.iter()) {
            *o += wk * x;
        }
    }
    Ok(RewardStructure(out))
}

fn check_reward<M: Absorbing + ?Sized>(model: &M, reward: &[f64]) -> Result<(), NumericsError> {
    let n = model.model().num_choices();
    if reward.len() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "reward has {} entries, model has {n} actions",
            reward.len()
        )));
    }
    Ok(())
}

#[inline]
fn choice_value(m: &Mdp, c: usize, reward: &[f64], x: &[f64]) -> f64 {
    let (succ, prob) = m.transitions(c);
    let mut acc = reward[c];
    for (&t, &p) in succ.iter().zip(prob) {
        acc += p * x[t];
    }
    acc
}

/// One Bellman-optimality sweep from `x` into `y`, recording the arg-max
/// (lowest local choice on ties). Returns the max-norm change.
pub fn sweep_optimal<M: Absorbing + ?Sized>(
    model: &M,
    reward: &[f64],
    x: &[f64],
    y: &mut [f64],
    policy: &mut [usize],
) -> f64 {
    let m = model.model();
    let done = model.done();
    let mut change = 0.0f64;
    for s in 0..m.num_states() {
        if done[s] {
            y[s] = 0.0;
            policy[s] = 0;
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, c) in m.choices(s).enumerate() {
            let v = choice_value(m, c, reward, x);
            if v > best {
                best = v;
                arg = k;
            }
        }
        y[s] = best;
        policy[s] = arg;
        change = change.max((best - x[s]).abs());
    }
    change
}

/// One fixed-scheduler sweep from `x` into `y`. Returns the max-norm change.
pub fn sweep_scheduler<M: Absorbing + ?Sized>(
    model: &M,
    scheduler: &Scheduler,
    reward: &[f64],
    x: &[f64],
    y: &mut [f64],
) -> f64 {
    let m = model.model();
    let done = model.done();
    let mut change = 0.0f64;
    for s in 0..m.num_states() {
        if done[s] {
            y[s] = 0.0;
            continue;
        }
        let base = m.choices(s).start;
        let v = match scheduler {
            Scheduler::Simple(a) => choice_value(m, base + a[s], reward, x),
            Scheduler::Randomized(d) => d[s]
                .iter()
                .map(|&(a, p)| p * choice_value(m, base + a, reward, x))
                .sum(),
        };
        y[s] = v;
        change = change.max((v - x[s]).abs());
    }
    change
}

/// Optimal simple scheduler for the expected `reward` until `done`.
///
/// Sweeps at least once and stops when no state moves by more than
/// `opts.eps`; the policy is the arg-max of the last sweep.
pub fn optimal_scheduler<M: Absorbing + ?Sized>(
    model: &M,
    reward: &[f64],
    opts: IterOptions,
) -> Result<Optimum, NumericsError> {
    check_reward(model, reward)?;
    if !check_reward_finite(model) {
        return Err(NumericsError::NotRewardFinite);
    }
    let m = model.model();
    let n = m.num_states();
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut policy = vec![0usize; n];
    let mut residual = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        residual = sweep_optimal(model, reward, &x, &mut y, &mut policy);
        std::mem::swap(&mut x, &mut y);
        if residual <= opts.eps {
            return Ok(Optimum {
                scheduler: Scheduler::Simple(policy),
                solution: Solution {
                    value: x[m.initial()],
                    values: x,
                    sweeps: sweep,
                    residual,
                },
            });
        }
    }
    Err(NumericsError::NonConvergence {
        sweeps: opts.max_sweeps,
        residual,
    })
}

/// Expected `reward` until `done` under a fixed scheduler, by value
/// iteration.
pub fn evaluate_scheduler<M: Absorbing + ?Sized>(
    model: &M,
    scheduler: &Scheduler,
    reward: &[f64],
    opts: IterOptions,
) -> Result<Solution, NumericsError> {
    check_reward(model, reward)?;
    scheduler.validate(model.model())?;
    let m = model.model();
    let n = m.num_states();
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        residual = sweep_scheduler(model, scheduler, reward, &x, &mut y);
        std::mem::swap(&mut x, &mut y);
        if residual <= opts.eps {
            return Ok(Solution {
                value: x[m.initial()],
                values: x,
                sweeps: sweep,
                residual,
            });
        }
    }
    Err(NumericsError::NonConvergence {
        sweeps: opts.max_sweeps,
        residual,
    })
}

/// Solve `(I - P_mu) x = rho_mu` over the non-done states by LU.
/// Dense; meant for small models.
pub fn exact_evaluate_all<M: Absorbing + ?Sized>(
    model: &M,
    scheduler: &Scheduler,
    reward: &[f64],
) -> Result<Vec<f64>, NumericsError> {
    check_reward(model, reward)?;
    scheduler.validate(model.model())?;
    let m = model.model();
    let done = model.done();
    let live: Vec<usize> = (0..m.num_states()).filter(|&s| !done[s]).collect();
    let mut index = vec![usize::MAX; m.num_states()];
    for (k, &s) in live.iter().enumerate() {
        index[s] = k;
    }
    let k = live.len();
    let mut a = DMatrix::<f64>::identity(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (row, &s) in live.iter().enumerate() {
        let base = m.choices(s).start;
        for (act, p) in scheduler.distribution(s) {
            let c = base + act;
            b[row] += p * reward[c];
            let (succ, prob) = m.transitions(c);
            for (&t, &q) in succ.iter().zip(prob) {
                if index[t] != usize::MAX {
                    a[(row, index[t])] -= p * q;
                }
            }
        }
    }
    let mut out = vec![0.0; m.num_states()];
    if k == 0 {
        return Ok(out);
    }
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(NumericsError::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::SingularSystem);
    }
    for (row, &s) in live.iter().enumerate() {
        out[s] = x[row];
    }
    Ok(out)
}

/// Exact value at the initial state; see [`exact_evaluate_all`].
pub fn exact_evaluate<M: Absorbing + ?Sized>(
    model: &M,
    scheduler: &Scheduler,
    reward: &[f64],
) -> Result<f64, NumericsError> {
    Ok(exact_evaluate_all(model, scheduler, reward)?[model.model().initial()])
}
