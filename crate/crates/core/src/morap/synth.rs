use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{marginals, Assignment};
use crate::numerics::Scheduler;
use crate::oracle::{simplex, LinearProgram, LpOutcome, Relation};

use super::{MorapError, MorapInstance, ParetoResult};

/// Weights below this are dropped from the mixture.
const WEIGHT_FLOOR: f64 = 1e-12;
/// Slack allowed when the projection certificate is re-solved as an LP.
const RELAXED_SLACK: f64 = 1e-6;
const MAX_EPISODE_STEPS: usize = 10_000_000;

#[derive(Clone, Debug)]
pub struct MixtureComponent {
    pub probability: f64,
    /// Iteration that produced this component.
    pub iteration: usize,
    pub assignment: Assignment,
    /// Scheduler for the pair serving task `j`, at index `j`.
    pub schedulers: Vec<Arc<Scheduler>>,
    pub point: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub components: Vec<MixtureComponent>,
}

impl SynthesisResult {
    /// `x[i][j]`: probability that agent `i` serves task `j`.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let n = self.components.first().map_or(0, |c| c.assignment.len());
        let parts: Vec<(f64, Assignment)> = self
            .components
            .iter()
            .map(|c| (c.probability, c.assignment.clone()))
            .collect();
        marginals(n, &parts)
    }

    /// `Σ v_ι r_ι`.
    pub fn expected_point(&self) -> Vec<f64> {
        let dim = self.components.first().map_or(0, |c| c.point.len());
        let mut out = vec![0.0; dim];
        for c in &self.components {
            for (o, r) in out.iter_mut().zip(&c.point) {
                *o += c.probability * r;
            }
        }
        out
    }
}

fn reaches(v: &[f64], points: &[Vec<f64>], target: &[f64], slack: f64) -> bool {
    (0..target.len()).all(|k| {
        let mixed: f64 = v.iter().zip(points).map(|(w, r)| w * r[k]).sum();
        mixed >= target[k] - slack * (1.0 + target[k].abs())
    })
}

/// Convex weights `v` over `points` with `Σ v r ≥ target − slack`.
fn certificate_lp(points: &[Vec<f64>], target: &[f64], slack: f64) -> Result<Option<Vec<f64>>, MorapError> {
    let mut lp = LinearProgram::default();
    let vars: Vec<usize> = (0..points.len()).map(|k| lp.add_var(format!("v{k}"))).collect();
    lp.add_constraint("simplex", vars.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
    for (k, &tk) in target.iter().enumerate() {
        let coeffs = vars.iter().zip(points).map(|(&v, r)| (v, r[k])).collect();
        lp.add_constraint(
            format!("objective{k}"),
            coeffs,
            Relation::Ge,
            tk - slack * (1.0 + tk.abs()),
        );
    }
    match simplex(&lp, None).map_err(|e| MorapError::Format(e.to_string()))? {
        LpOutcome::Optimal { x, .. } => Ok(Some(x)),
        _ => Ok(None),
    }
}

/// Mixture over the iteration assignments and schedulers whose expected
/// value vector dominates `t↑`.
pub fn synthesize(result: &ParetoResult) -> Result<SynthesisResult, MorapError> {
    let points = result.points();
    if points.is_empty() {
        return Err(MorapError::NoCertificate);
    }
    let mut v = result.certificate.clone();
    if v.len() != points.len() || !reaches(&v, &points, &result.t_up, 1e-9) {
        log::debug!("projection weights miss tUp, solving for a certificate");
        v = certificate_lp(&points, &result.t_up, 1e-9)?
            .or(certificate_lp(&points, &result.t_up, RELAXED_SLACK)?)
            .ok_or(MorapError::NoCertificate)?;
    }
    let mut components: Vec<MixtureComponent> = v
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > WEIGHT_FLOOR)
        .map(|(k, &p)| {
            let it = &result.iterations[k];
            MixtureComponent {
                probability: p,
                iteration: k,
                assignment: it.assignment.clone(),
                schedulers: it.schedulers.clone(),
                point: it.r.clone(),
            }
        })
        .collect();
    let total: f64 = components.iter().map(|c| c.probability).sum();
    if !(total > 0.0) {
        return Err(MorapError::NoCertificate);
    }
    for c in &mut components {
        c.probability /= total;
    }
    Ok(SynthesisResult { components })
}

/// Sample means and standard errors of the objective vector.
#[derive(Clone, Debug)]
pub struct SimulationReport {
    pub episodes: usize,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// Monte-Carlo execution of a synthesized mixture: each episode draws an
/// assignment, then runs every assigned pair's product to `done`.
pub fn simulate(
    inst: &MorapInstance,
    synth: &SynthesisResult,
    episodes: usize,
    seed: u64,
) -> Result<SimulationReport, MorapError> {
    let n = inst.n();
    let dim = 2 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let cumulative: Vec<f64> = synth
        .components
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.probability;
            Some(*acc)
        })
        .collect();
    let total = cumulative.last().copied().unwrap_or(0.0);
    let mut sample = vec![0.0; dim];
    for _ in 0..episodes {
        let u: f64 = rng.gen::<f64>() * total;
        let k = cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1);
        let comp = &synth.components[k];
        sample.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..n {
            let i = comp.assignment.agent(j);
            let p = inst.model(inst.model_id(i, j));
            let (cost, success) = run_episode(p, &comp.schedulers[j], &mut rng)?;
            sample[i] += cost;
            sample[n + j] += success;
        }
        for k in 0..dim {
            sum[k] += sample[k];
            sum_sq[k] += sample[k] * sample[k];
        }
    }
    let e = episodes.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / e).collect();
    let std_err = (0..dim)
        .map(|k| {
            let var = if episodes > 1 {
                ((sum_sq[k] - e * mean[k] * mean[k]) / (e - 1.0)).max(0.0)
            } else {
                0.0
            };
            (var / e).sqrt()
        })
        .collect();
    Ok(SimulationReport {
        episodes,
        mean,
        std_err,
    })
}

fn run_episode(
    p: &crate::model::ProductMdp,
    sched: &Scheduler,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), MorapError> {
    let m = p.mdp();
    let done = p.done_states();
    let mut s = m.initial();
    let (mut cost, mut success) = (0.0, 0.0);
    for _ in 0..MAX_EPISODE_STEPS {
        if done[s] {
            return Ok((cost, success));
        }
        let choices = m.choices(s);
        let dist = sched.distribution(s);
        let local = pick(rng, dist.iter().copied());
        let c = choices.start + local;
        cost += p.cost()[c];
        success += p.success()[c];
        let (succ, prob) = m.transitions(c);
        s = succ[pick(rng, prob.iter().copied().enumerate())];
    }
    Err(MorapError::Runaway(MAX_EPISODE_STEPS))
}

fn pick(rng: &mut ChaCha8Rng, items: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (x, p) in items {
        acc += p;
        last = x;
        if u < acc {
            return x;
        }
    }
    last
}
