//! Maximum-reward assignment and Birkhoff-von Neumann decomposition.
//!
//! Matrices are indexed `[agent][task]`.

use serde::{Deserialize, Serialize};

/// Entries below this are treated as zero when peeling permutations.
pub const BVN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AssignmentError {
    #[error("matrix is not square ({rows} rows, row {row} has {cols} entries)")]
    NonSquare { rows: usize, row: usize, cols: usize },
    #[error("matrix entry ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
    #[error("matrix is not bistochastic")]
    NotBistochastic,
    #[error("no perfect matching on the positive entries (residual mass {0:e})")]
    NoPerfectMatching(f64),
}

/// Task-to-agent bijection: `self.0[j]` is the agent serving task `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn identity(n: usize) -> Assignment {
        Assignment((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn agent(&self, task: usize) -> usize {
        self.0[task]
    }

    /// Task of each agent.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.0.len()];
        for (j, &i) in self.0.iter().enumerate() {
            inv[i] = j;
        }
        inv
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.0.len()];
        self.0
            .iter()
            .all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
    }

    /// Total `sum_j c[f(j)][j]`.
    pub fn value(&self, c: &[Vec<f64>]) -> f64 {
        self.0.iter().enumerate().map(|(j, &i)| c[i][j]).sum()
    }

    /// Permutation matrix `[agent][task]`.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let n = self.0.len();
        let mut m = vec![vec![0.0; n]; n];
        for (j, &i) in self.0.iter().enumerate() {
            m[i][j] = 1.0;
        }
        m
    }
}

fn check_square(c: &[Vec<f64>]) -> Result<usize, AssignmentError> {
    let n = c.len();
    for (row, r) in c.iter().enumerate() {
        if r.len() != n {
            return Err(AssignmentError::NonSquare {
                rows: n,
                row,
                cols: r.len(),
            });
        }
        if let Some(col) = r.iter().position(|x| !x.is_finite()) {
            return Err(AssignmentError::NonFinite(row, col));
        }
    }
    Ok(n)
}

/// Min-cost Hungarian method with potentials. Returns the row of each
/// column and the dual potentials `(u, v)` with `u[i] + v[j] <= a[i][j]`.
fn hungarian_min(a: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.len();
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let rows = (1..=n).map(|j| p[j] - 1).collect();
    (rows, u[1..].to_vec(), v[1..].to_vec())
}

/// Maximum-value assignment `f` maximizing `sum_j c[f(j)][j]`.
///
/// Among optimal assignments (equal within a relative `1e-9`) the
/// lexicographically smallest vector `(f(0), f(1), ...)` is returned.
pub fn max_assignment(c: &[Vec<f64>]) -> Result<(Assignment, f64), AssignmentError> {
    let n = check_square(c)?;
    if n == 0 {
        return Ok((Assignment(Vec::new()), 0.0));
    }
    let neg: Vec<Vec<f64>> = c.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
    let (rows, u, v) = hungarian_min(&neg);
    let scale = c.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * scale * n as f64;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| neg[i][j] - u[i] - v[j] <= tol).collect())
        .collect();
    let f = lexicographic_matching(&tight, rows);
    let value = f.value(c);
    Ok((f, value))
}

/// Lexicographically smallest perfect matching on `allowed[agent][task]`,
/// starting from the perfect matching `start` (agent of each task).
fn lexicographic_matching(allowed: &[Vec<bool>], start: Vec<usize>) -> Assignment {
    let n = allowed.len();
    let mut f = start;
    let mut g = vec![0usize; n];
    for (j, &i) in f.iter().enumerate() {
        g[i] = j;
    }
    let mut fixed_task = vec![false; n];
    let mut fixed_agent = vec![false; n];
    for j in 0..n {
        for i in 0..n {
            if fixed_agent[i] || !allowed[i][j] {
                continue;
            }
            if f[j] == i {
                break;
            }
            // Move j to i; i's old task must reach the agent j frees.
            let j2 = g[i];
            let freed = f[j];
            let mut visited = vec![false; n];
            let mut path = Vec::new();
            let ok = reroute(
                allowed,
                &f,
                &g,
                &fixed_agent,
                &fixed_task,
                (i, j),
                j2,
                freed,
                &mut visited,
                &mut path,
            );
            if ok {
                // path: (task, agent) reassignments
                for &(task, agent) in &path {
                    f[task] = agent;
                    g[agent] = task;
                }
                f[j] = i;
                g[i] = j;
                break;
            }
        }
        fixed_task[j] = true;
        fixed_agent[f[j]] = true;
    }
    Assignment(f)
}

#[allow(clippy::too_many_arguments)]
fn reroute(
    allowed: &[Vec<bool>],
    f: &[usize],
    g: &[usize],
    fixed_agent: &[bool],
    fixed_task: &[bool],
    excluded: (usize, usize),
    task: usize,
    target: usize,
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    let n = allowed.len();
    for k in 0..n {
        if k == excluded.0 || fixed_agent[k] || visited[k] || !allowed[k][task] {
            continue;
        }
        visited[k] = true;
        if k == target {
            path.push((task, k));
            return true;
        }
        let next = g[k];
        if next == excluded.1 || fixed_task[next] || f[next] != k {
            continue;
        }
        if reroute(
            allowed,
            f,
            g,
            fixed_agent,
            fixed_task,
            excluded,
            next,
            target,
            visited,
            path,
        ) {
            path.push((task, k));
            return true;
        }
    }
    false
}

/// Checks entries `>= -1e-9` and unit row/column sums within `1e-6`.
pub fn validate_bistochastic(x: &[Vec<f64>]) -> bool {
    let n = x.len();
    if x.iter().any(|r| r.len() != n) {
        return false;
    }
    if x.iter().flatten().any(|&v| !(v >= -1e-9)) {
        return false;
    }
    let rows_ok = x.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    let cols_ok = (0..n).all(|j| (x.iter().map(|r| r[j]).sum::<f64>() - 1.0).abs() <= 1e-6);
    rows_ok && cols_ok
}

/// Any perfect matching on `allowed[agent][task]` (Kuhn's algorithm).
fn perfect_matching(allowed: &[Vec<bool>]) -> Option<Vec<usize>> {
    let n = allowed.len();
    let mut agent_of = vec![usize::MAX; n];
    fn augment(
        allowed: &[Vec<bool>],
        task: usize,
        seen: &mut [bool],
        agent_of: &mut [usize],
        task_of: &mut [usize],
    ) -> bool {
        for i in 0..allowed.len() {
            if allowed[i][task] && !seen[i] {
                seen[i] = true;
                if task_of[i] == usize::MAX || augment(allowed, task_of[i], seen, agent_of, task_of) {
                    task_of[i] = task;
                    agent_of[task] = i;
                    return true;
                }
            }
        }
        false
    }
    let mut task_of = vec![usize::MAX; n];
    for j in 0..n {
        let mut seen = vec![false; n];
        if !augment(allowed, j, &mut seen, &mut agent_of, &mut task_of) {
            return None;
        }
    }
    Some(agent_of)
}

/// Greedy Birkhoff-von Neumann peeling.
///
/// Each round subtracts a permutation supported on the entries above `tol`,
/// weighted by its smallest covered entry. Every round shrinks the support,
/// so the residual moves to a proper face and at most `(n-1)^2 + 1`
/// permutations are produced.
pub fn bvn_decompose(x: &[Vec<f64>], tol: f64) -> Result<Vec<(f64, Assignment)>, AssignmentError> {
    let n = check_square(x)?;
    if !validate_bistochastic(x) {
        return Err(AssignmentError::NotBistochastic);
    }
    let mut residual: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|&v| v.max(0.0)).collect()).collect();
    let mut out = Vec::new();
    loop {
        let mass: f64 = residual.iter().flatten().filter(|&&v| v > tol).sum();
        if mass <= tol || n == 0 {
            break;
        }
        let allowed: Vec<Vec<bool>> = residual.iter().map(|r| r.iter().map(|&v| v > tol).collect()).collect();
        let f = perfect_matching(&allowed).ok_or(AssignmentError::NoPerfectMatching(mass))?;
        let weight = f
            .iter()
            .enumerate()
            .map(|(j, &i)| residual[i][j])
            .fold(f64::INFINITY, f64::min);
        for (j, &i) in f.iter().enumerate() {
            residual[i][j] -= weight;
            if residual[i][j] <= tol {
                residual[i][j] = 0.0;
            }
        }
        out.push((weight, Assignment(f)));
    }
    Ok(out)
}

/// Marginal matrix `sum_k w_k P_k` of a distribution over assignments.
pub fn marginals(n: usize, parts: &[(f64, Assignment)]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (w, f) in parts {
        for (j, &i) in f.0.iter().enumerate() {
            m[i][j] += w;
        }
    }
    m
}
