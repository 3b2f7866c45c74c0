//! Random tiny instances and threshold sampling shared by the integration
//! tests.
#![allow(dead_code)]

use morap::geometry::NormMatrix;
use morap::model::{MdpBuilder, RewardStructure};
use morap::morap::{Agent, MorapInstance};
use morap::oracle::{brute_force_hull, AchievableHull};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TASKS: &[&str] = &[
    "F a",
    "F b",
    "!a U b",
    "!b U a",
    "a U b",
    "F (a & F b)",
    "F a | F b",
    "F a & F b",
];

/// Agent over atoms `a`, `b` with at most `max_states` states.
pub fn random_agent(rng: &mut ChaCha8Rng, max_states: usize) -> Agent {
    let k = rng.gen_range(2..=max_states);
    let mut b = MdpBuilder::new();
    let mut costs = Vec::new();
    for _ in 0..k {
        let mut labels = Vec::new();
        if rng.gen_bool(0.4) {
            labels.push("a".to_string());
        }
        if rng.gen_bool(0.4) {
            labels.push("b".to_string());
        }
        b.add_state(labels);
        for act in 0..rng.gen_range(1..=2) {
            let fanout = rng.gen_range(1..=2);
            let mut row = Vec::new();
            let mut weights: Vec<f64> = (0..fanout).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            for w in weights {
                row.push((rng.gen_range(0..k), w));
            }
            b.add_choice(format!("a{act}"), row);
            costs.push(-(rng.gen_range(1..=6) as f64) / 2.0);
        }
    }
    let m = b.build(0).expect("generated rows are stochastic");
    Agent::new(m, RewardStructure(costs))
}

pub struct Tiny {
    pub inst: MorapInstance,
    pub hull: AchievableHull,
}

/// A reward-finite instance with `n ≤ max_agents` agents whose hull can be
/// enumerated.
pub fn tiny_instance(rng: &mut ChaCha8Rng, max_agents: usize, max_states: usize) -> Tiny {
    for _ in 0..100_000 {
        let n = rng.gen_range(1..=max_agents);
        let agents: Vec<Agent> = (0..n).map(|_| random_agent(rng, max_states)).collect();
        let tasks = if n > 1 && rng.gen_bool(0.2) { n - 1 } else { n };
        let formulas: Vec<&str> = (0..tasks).map(|_| TASKS[rng.gen_range(0..TASKS.len())]).collect();
        let Ok(inst) = MorapInstance::from_formulas(agents, &formulas) else {
            continue;
        };
        let Ok(hull) = brute_force_hull(&inst) else { continue };
        return Tiny { inst, hull };
    }
    panic!("no reward-finite instance found");
}

/// Where a sampled threshold vector sits relative to the hull.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Inside,
    Outside,
    /// Within the exclusion band of the boundary.
    Boundary,
}

pub fn classify(t: &[f64], hull: &AchievableHull, band: f64) -> Side {
    let id = NormMatrix::identity(t.len());
    let d = hull.distance(t, &id).unwrap();
    if d > band {
        return Side::Outside;
    }
    // inside with margin iff pushing every coordinate up by `band` stays in
    let lifted: Vec<f64> = t.iter().map(|x| x + band).collect();
    if hull.distance(&lifted, &id).unwrap() <= 1e-9 {
        Side::Inside
    } else {
        Side::Boundary
    }
}

/// How far from the hull a sampled threshold vector was placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Offset {
    Below,
    Above,
    /// Within about `2e-3` of a boundary point.
    Near,
}

/// Threshold vectors around the hull: a random point of the hull's upper
/// boundary pushed down, up, or by a small amount either way.
pub fn sample_thresholds_with(rng: &mut ChaCha8Rng, hull: &AchievableHull, n: usize, offset: Offset) -> Vec<f64> {
    let k = hull.vertices.len();
    let mut lam: Vec<f64> = (0..k).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
    let s: f64 = lam.iter().sum();
    lam.iter_mut().for_each(|l| *l /= s);
    let mut t = vec![0.0; 2 * n];
    for (l, v) in lam.iter().zip(&hull.vertices) {
        for (tk, vk) in t.iter_mut().zip(v) {
            *tk += l * vk;
        }
    }
    let up = rng.gen_bool(0.5);
    for (k, tk) in t.iter_mut().enumerate() {
        let scale = if k < n { 1.0 } else { 0.2 };
        match offset {
            Offset::Below => *tk -= scale * rng.gen_range(0.0..0.5),
            Offset::Above => *tk += scale * rng.gen_range(0.0..0.5),
            Offset::Near => {
                let d = rng.gen_range(2e-4..2e-3);
                *tk += if up { d } else { -d };
            }
        }
        if k >= n {
            *tk = tk.clamp(0.0, 1.0);
        }
    }
    t
}

pub fn sample_thresholds(rng: &mut ChaCha8Rng, hull: &AchievableHull, n: usize) -> Vec<f64> {
    let offset = [Offset::Below, Offset::Above, Offset::Near][rng.gen_range(0..3)];
    sample_thresholds_with(rng, hull, n, offset)
}

/// Checks that hold on every iteration of a run against the enumerated hull:
/// `t↑` is achievable and `‖t − t↓‖ ≤ min_u ‖t − u‖ ≤ ‖t − t↑‖`.
pub fn check_run(result: &morap::morap::ParetoResult, hull: &AchievableHull, slack: f64) -> Result<(), String> {
    let m = &result.norm;
    let t = &result.t;
    let best = hull.distance(t, m).map_err(|e| e.to_string())?;
    let id = NormMatrix::identity(t.len());
    for (k, it) in result.iterations.iter().enumerate() {
        let d_up_hull = hull.distance(&it.t_up, &id).map_err(|e| e.to_string())?;
        if d_up_hull > slack {
            return Err(format!(
                "iteration {k}: tUp {:?} is {d_up_hull:.2e} outside the hull",
                it.t_up
            ));
        }
        let down = m.distance(t, &it.t_down).unwrap();
        let up = m.distance(t, &it.t_up).unwrap();
        if down > best + slack || best > up + slack {
            return Err(format!(
                "iteration {k}: sandwich {down:.6} <= {best:.6} <= {up:.6} violated"
            ));
        }
    }
    if result.iterations.len() >= morap::morap::DEFAULT_ITERATION_CAP {
        return Err("hit the iteration cap".into());
    }
    Ok(())
}

/// Explicit model with a done set.
pub struct Plain {
    pub mdp: morap::model::Mdp,
    pub done: Vec<bool>,
}

impl morap::model::Absorbing for Plain {
    fn model(&self) -> &morap::model::Mdp {
        &self.mdp
    }
    fn done(&self) -> &[bool] {
        &self.done
    }
}

/// Every action self-loops with probability below one half and otherwise
/// moves to a higher id; the top states are done, so every scheduler
/// finishes with probability 1. Returns the model and a reward per choice.
pub fn random_absorbing(rng: &mut ChaCha8Rng, max_states: usize, max_actions: usize) -> (Plain, Vec<f64>) {
    let n = rng.gen_range(2..=max_states);
    let done_from = n - rng.gen_range(1..=(n / 3).max(1));
    let mut b = MdpBuilder::new();
    let mut reward = Vec::new();
    for s in 0..n {
        b.add_state(Vec::new());
        if s >= done_from {
            b.add_choice("idle", vec![(s, 1.0)]);
            reward.push(0.0);
            continue;
        }
        for k in 0..rng.gen_range(1..=max_actions) {
            let stay: f64 = rng.gen_range(0.0..0.5);
            let jumps: Vec<(usize, f64)> = (0..rng.gen_range(1..=2))
                .map(|_| ((s + rng.gen_range(1..4)).min(n - 1), rng.gen_range(0.1..1.0)))
                .collect();
            let total: f64 = jumps.iter().map(|j| j.1).sum();
            let mut row = vec![(s, stay)];
            row.extend(jumps.into_iter().map(|(t, w)| (t, (1.0 - stay) * w / total)));
            b.add_choice(format!("a{k}"), row);
            reward.push(rng.gen_range(-3.0..0.0));
        }
    }
    let done = (0..n).map(|s| s >= done_from).collect();
    (
        Plain {
            mdp: b.build(0).unwrap(),
            done,
        },
        reward,
    )
}

/// All permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == p.len() {
            out.push(p.clone());
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, out);
            p.swap(k, i);
        }
    }
    let mut out = Vec::new();
    rec(0, &mut (0..n).collect(), &mut out);
    out
}
