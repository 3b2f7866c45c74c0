//! Independent ground truth for small instances: the occupation-measure
//! linear program and exhaustive enumeration of the achievable hull.

mod simplex;

use std::fmt::Write as _;

pub use simplex::{simplex, Constraint, LinearProgram, LpOutcome, Relation, PIVOT_CAP};

use crate::geometry::{project_to_lower_approx, GeometryError, NormMatrix};
use crate::model::ProductMdp;
use crate::morap::MorapInstance;
use crate::numerics::{exact_evaluate, NumericsError, Scheduler};

/// Pure schedulers enumerated per product at most.
pub const SCHEDULER_GUARD: usize = 10_000;
/// Combined hull vertices enumerated at most.
pub const VERTEX_GUARD: usize = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("simplex exceeded {0} pivots")]
    CycleGuard(usize),
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("enumeration too large: {0}")]
    SizeGuard(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Occupation variables of one pair: `(state, choice, variable)` for every
/// choice of a non-done product state.
#[derive(Clone, Debug)]
pub struct PairBlock {
    pub agent: usize,
    pub task: usize,
    pub assign_var: usize,
    pub choices: Vec<(usize, usize, usize)>,
}

/// Expected action frequencies `x[s,a]` for every pair and assignment
/// probabilities `x[i,j]`, tied by flow balance; each objective is bounded
/// below by its threshold.
#[derive(Clone, Debug)]
pub struct FeasibilityLp {
    pub lp: LinearProgram,
    pub n: usize,
    pub blocks: Vec<PairBlock>,
}

pub fn build_feasibility_lp(inst: &MorapInstance, t: &[f64]) -> FeasibilityLp {
    let n = inst.n();
    let mut lp = LinearProgram::default();
    let assign: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).map(|j| lp.add_var(format!("x[{i},{j}]"))).collect())
        .collect();
    let mut cost_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut succ_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut blocks = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let p = inst.product(i, j);
            let m = p.mdp();
            let done = p.done_states();
            let mut var_of = vec![usize::MAX; m.num_choices()];
            let mut choices = Vec::new();
            for s in 0..m.num_states() {
                if done[s] {
                    continue;
                }
                for c in m.choices(s) {
                    let v = lp.add_var(format!("x[{i},{j}][{s},{}]", m.action_name(c)));
                    var_of[c] = v;
                    choices.push((s, c, v));
                    if p.cost()[c] != 0.0 {
                        cost_rows[i].push((v, p.cost()[c]));
                    }
                    if p.success()[c] != 0.0 {
                        succ_rows[j].push((v, p.success()[c]));
                    }
                }
            }
            // flow balance: out(s) - in(s) = [s = s0] x[i,j]
            let mut balance: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m.num_states()];
            for &(s, c, v) in &choices {
                balance[s].push((v, 1.0));
                let (succ, prob) = m.transitions(c);
                for (&s2, &pr) in succ.iter().zip(prob) {
                    if !done[s2] {
                        balance[s2].push((v, -pr));
                    }
                }
            }
            for (s, mut row) in balance.into_iter().enumerate() {
                if done[s] {
                    continue;
                }
                if s == m.initial() {
                    row.push((assign[i][j], -1.0));
                }
                lp.add_constraint(format!("flow[{i},{j}][{s}]"), row, Relation::Eq, 0.0);
            }
            blocks.push(PairBlock {
                agent: i,
                task: j,
                assign_var: assign[i][j],
                choices,
            });
        }
    }
    for (i, row) in cost_rows.into_iter().enumerate() {
        lp.add_constraint(format!("cost[{i}]"), row, Relation::Ge, t[i]);
    }
    for (j, row) in succ_rows.into_iter().enumerate() {
        lp.add_constraint(format!("success[{j}]"), row, Relation::Ge, t[n + j]);
    }
    for i in 0..n {
        lp.add_constraint(
            format!("row[{i}]"),
            (0..n).map(|j| (assign[i][j], 1.0)).collect(),
            Relation::Eq,
            1.0,
        );
    }
    for j in 0..n {
        lp.add_constraint(
            format!("col[{j}]"),
            (0..n).map(|i| (assign[i][j], 1.0)).collect(),
            Relation::Eq,
            1.0,
        );
    }
    FeasibilityLp { lp, n, blocks }
}

impl FeasibilityLp {
    /// The assignment-probability block of a primal point.
    pub fn assignment_matrix(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for b in &self.blocks {
            out[b.agent][b.task] = x[b.assign_var];
        }
        out
    }

    /// Memoryless scheduler of pair `(i, j)`: `x[s,a] / x[s]`, or the first
    /// action where `s` is never visited.
    pub fn recover_scheduler(&self, product: &ProductMdp, i: usize, j: usize, x: &[f64]) -> Scheduler {
        let block = &self.blocks[i * self.n + j];
        let m = product.mdp();
        let mut dist: Vec<Vec<(usize, f64)>> = (0..m.num_states()).map(|_| vec![(0, 1.0)]).collect();
        let mut total = vec![0.0; m.num_states()];
        for &(s, _, v) in &block.choices {
            total[s] += x[v];
        }
        for s in 0..m.num_states() {
            if total[s] > 1e-12 {
                dist[s].clear();
            }
        }
        for &(s, c, v) in &block.choices {
            if total[s] > 1e-12 && x[v] > 0.0 {
                dist[s].push((c - m.choices(s).start, x[v] / total[s]));
            }
        }
        Scheduler::Randomized(dist)
    }

    pub fn dump(&self) -> String {
        self.lp.dump()
    }
}

/// Feasibility of the occupation-measure program.
pub fn solve_lp(lp: &FeasibilityLp) -> Result<bool, OracleError> {
    Ok(simplex(&lp.lp, None)?.is_feasible())
}

/// Vertices spanning the achievable set (its downward closure).
#[derive(Clone, Debug, PartialEq)]
pub struct AchievableHull {
    pub vertices: Vec<Vec<f64>>,
}

impl AchievableHull {
    /// Minimum `‖t − u‖_M` over the downward-closed hull.
    pub fn distance(&self, t: &[f64], m: &NormMatrix) -> Result<f64, OracleError> {
        Ok(project_to_lower_approx(t, &self.vertices, m)?.distance)
    }

    pub fn projection(&self, t: &[f64], m: &NormMatrix) -> Result<Vec<f64>, OracleError> {
        Ok(project_to_lower_approx(t, &self.vertices, m)?.x)
    }
}

fn dominated(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a != b
}

/// Keep points not dominated by another, dropping near-duplicates.
fn pareto_filter(points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if kept
            .iter()
            .any(|q| dominated(&p, q) || p.iter().zip(q).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            continue;
        }
        kept.retain(|q| !dominated(q, &p));
        kept.push(p);
    }
    kept
}

/// (cost, success) of every pure scheduler of `p`, Pareto-filtered.
pub fn product_points(p: &ProductMdp) -> Result<Vec<Vec<f64>>, OracleError> {
    let m = p.mdp();
    let done = p.done_states();
    let branching: Vec<usize> = (0..m.num_states())
        .filter(|&s| !done[s] && m.choices(s).len() > 1)
        .collect();
    let mut count: usize = 1;
    for &s in &branching {
        count = count.saturating_mul(m.choices(s).len());
        if count > SCHEDULER_GUARD {
            return Err(OracleError::SizeGuard(format!(
                "more than {SCHEDULER_GUARD} pure schedulers"
            )));
        }
    }
    let mut choice = vec![0usize; m.num_states()];
    let mut points = Vec::with_capacity(count);
    loop {
        let s = Scheduler::simple(choice.clone());
        points.push(vec![
            exact_evaluate(p, &s, p.cost())?,
            exact_evaluate(p, &s, p.success())?,
        ]);
        // odometer over the branching states
        let mut k = 0;
        loop {
            if k == branching.len() {
                return Ok(pareto_filter(points));
            }
            let st = branching[k];
            choice[st] += 1;
            if choice[st] < m.choices(st).len() {
                break;
            }
            choice[st] = 0;
            k += 1;
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    fn rec(k: usize, perm: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == perm.len() {
            out.push(perm.clone());
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            rec(k + 1, perm, out);
            perm.swap(k, i);
        }
    }
    rec(0, &mut perm, &mut out);
    out.sort();
    out
}

/// Value vectors of every (pure scheduler tuple, assignment) combination,
/// Pareto-filtered.
pub fn brute_force_hull(inst: &MorapInstance) -> Result<AchievableHull, OracleError> {
    let n = inst.n();
    if n > 3 {
        return Err(OracleError::SizeGuard(format!("{n} agents (at most 3)")));
    }
    let per_model: Vec<Vec<Vec<f64>>> = (0..inst.num_models())
        .map(|id| product_points(inst.model(id)))
        .collect::<Result<_, _>>()?;
    let mut vertices = Vec::new();
    for f in permutations(n) {
        let options: Vec<&Vec<Vec<f64>>> = (0..n).map(|j| &per_model[inst.model_id(f[j], j)]).collect();
        let combos: usize = options.iter().fold(1usize, |acc, o| acc.saturating_mul(o.len()));
        if vertices.len().saturating_add(combos) > VERTEX_GUARD {
            return Err(OracleError::SizeGuard(format!("more than {VERTEX_GUARD} vertices")));
        }
        let mut idx = vec![0usize; n];
        loop {
            let mut r = vec![0.0; 2 * n];
            for j in 0..n {
                let pt = &options[j][idx[j]];
                r[f[j]] = pt[0];
                r[n + j] = pt[1];
            }
            vertices.push(r);
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < options[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
    }
    Ok(AchievableHull {
        vertices: pareto_filter(vertices),
    })
}

/// Whether `point` lies within `tol` (Euclidean) of the downward-closed hull.
pub fn hull_membership(point: &[f64], hull: &AchievableHull, tol: f64) -> Result<bool, OracleError> {
    Ok(hull.distance(point, &NormMatrix::identity(point.len()))? <= tol)
}

/// Human-readable vertex list.
pub fn describe_hull(hull: &AchievableHull) -> String {
    let mut out = String::new();
    for v in &hull.vertices {
        let _ = writeln!(out, "{v:?}");
    }
    out
}
