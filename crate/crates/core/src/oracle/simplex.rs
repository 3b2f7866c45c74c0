//! Dense two-phase simplex with Bland's rule.

use std::fmt::Write as _;

use super::OracleError;

/// Pivot cap guarding against cycling through numerical noise.
pub const PIVOT_CAP: usize = 1_000_000;
const PIVOT_TOL: f64 = 1e-11;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Linear constraints over nonnegative variables.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub var_names: Vec<String>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.var_names.push(name.into());
        self.var_names.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    /// Plain-text listing, one constraint per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "variables {} constraints {}",
            self.num_vars(),
            self.constraints.len()
        );
        for c in &self.constraints {
            let _ = write!(out, "{}:", c.name);
            for &(v, a) in &c.coeffs {
                if a != 0.0 {
                    let _ = write!(out, " {a:+} {}", self.var_names[v]);
                }
            }
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {rel} {}", c.rhs);
        }
        out
    }

    /// Largest violation of any constraint (or sign bound) at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|&(v, a)| a * x[v]).sum();
            let d = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(d);
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Infeasible,
    Unbounded,
    Optimal { x: Vec<f64>, objective: f64 },
}

impl LpOutcome {
    pub fn is_feasible(&self) -> bool {
        !matches!(self, LpOutcome::Infeasible)
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][col];
            if f != 0.0 {
                for (a, b) in self.rows[i].iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
                self.rows[i][col] = 0.0;
                self.rhs[i] -= f * pivot_rhs;
            }
        }
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Minimize `cost · x` over columns `allowed`; `Ok(false)` if unbounded.
    fn minimize(&mut self, cost: &[f64], allowed: usize) -> Result<bool, OracleError> {
        loop {
            if self.pivots >= PIVOT_CAP {
                return Err(OracleError::CycleGuard(PIVOT_CAP));
            }
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let reduced = cost[j]
                    - (0..self.rows.len())
                        .map(|i| cost[self.basis[i]] * self.rows[i][j])
                        .sum::<f64>();
                if reduced < -1e-10 {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i].max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((k, best)) => {
                            ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[k])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, col),
                None => return Ok(false),
            }
        }
    }
}

/// Phase 1 finds a feasible basis; phase 2 maximizes `objective · x` if
/// given. Without an objective the phase-1 point is returned.
pub fn simplex(lp: &LinearProgram, objective: Option<&[f64]>) -> Result<LpOutcome, OracleError> {
    let nv = lp.num_vars();
    let m = lp.constraints.len();
    for c in &lp.constraints {
        if !c.rhs.is_finite() || c.coeffs.iter().any(|&(v, a)| v >= nv || !a.is_finite()) {
            return Err(OracleError::Malformed(format!("constraint {}", c.name)));
        }
    }
    // normalize to nonnegative right-hand sides
    let mut dense: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(m);
    for c in &lp.constraints {
        let mut row = vec![0.0; nv];
        for &(v, a) in &c.coeffs {
            row[v] += a;
        }
        let (row, rel, rhs) = if c.rhs < 0.0 {
            let flipped = match c.relation {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            (row.into_iter().map(|a| -a).collect(), flipped, -c.rhs)
        } else {
            (row, c.relation, c.rhs)
        };
        dense.push((row, rel, rhs));
    }
    let slacks = dense.iter().filter(|(_, r, _)| *r != Relation::Eq).count();
    let artificials = dense.iter().filter(|(_, r, _)| *r != Relation::Le).count();
    let width = nv + slacks + artificials;
    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        rhs: Vec::with_capacity(m),
        basis: Vec::with_capacity(m),
        pivots: 0,
    };
    let (mut s, mut a) = (nv, nv + slacks);
    for (row, rel, rhs) in dense {
        let mut full = row;
        full.resize(width, 0.0);
        match rel {
            Relation::Le => {
                full[s] = 1.0;
                tab.basis.push(s);
                s += 1;
            }
            Relation::Ge => {
                full[s] = -1.0;
                s += 1;
                full[a] = 1.0;
                tab.basis.push(a);
                a += 1;
            }
            Relation::Eq => {
                full[a] = 1.0;
                tab.basis.push(a);
                a += 1;
            }
        }
        tab.rows.push(full);
        tab.rhs.push(rhs);
    }

    let first_art = nv + slacks;
    let mut phase1 = vec![0.0; width];
    phase1[first_art..].iter_mut().for_each(|c| *c = 1.0);
    tab.minimize(&phase1, width)?;
    let infeasibility: f64 = (0..m).filter(|&i| tab.basis[i] >= first_art).map(|i| tab.rhs[i]).sum();
    let scale = 1.0 + lp.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
    if infeasibility > FEASIBILITY_TOL * scale {
        return Ok(LpOutcome::Infeasible);
    }
    // drive zero-valued artificials out of the basis where possible
    for i in 0..m {
        if tab.basis[i] >= first_art {
            if let Some(col) = (0..first_art).find(|&j| tab.rows[i][j].abs() > 1e-9 && !tab.basis.contains(&j)) {
                tab.pivot(i, col);
            }
        }
    }
    let mut objective_value = 0.0;
    if let Some(obj) = objective {
        if obj.len() != nv {
            return Err(OracleError::Malformed(format!(
                "objective has {} entries for {nv} variables",
                obj.len()
            )));
        }
        let mut cost = vec![0.0; width];
        for (c, o) in cost.iter_mut().zip(obj) {
            *c = -o;
        }
        if !tab.minimize(&cost, first_art)? {
            return Ok(LpOutcome::Unbounded);
        }
    }
    let mut x = vec![0.0; nv];
    for i in 0..m {
        if tab.basis[i] < nv {
            x[tab.basis[i]] = tab.rhs[i].max(0.0);
        }
    }
    if let Some(obj) = objective {
        objective_value = obj.iter().zip(&x).map(|(c, v)| c * v).sum();
    }
    Ok(LpOutcome::Optimal {
        x,
        objective: objective_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contradictory_bound_is_infeasible() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x");
        lp.add_constraint("neg", vec![(x, 1.0)], Relation::Le, -1.0);
        assert_eq!(simplex(&lp, None).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn small_maximization() {
        // max 3x + 2y, x + y <= 4, x + 3y <= 6, x <= 3
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x");
        let y = lp.add_var("y");
        lp.add_constraint("a", vec![(x, 1.0), (y, 1.0)], Relation::Le, 4.0);
        lp.add_constraint("b", vec![(x, 1.0), (y, 3.0)], Relation::Le, 6.0);
        lp.add_constraint("c", vec![(x, 1.0)], Relation::Le, 3.0);
        match simplex(&lp, Some(&[3.0, 2.0])).unwrap() {
            LpOutcome::Optimal { x, objective } => {
                assert!((objective - 11.0).abs() < 1e-9);
                assert!((x[0] - 3.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equalities_and_lower_bounds() {
        // x + y = 1, x >= 0.3, y >= 0.6
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x");
        let y = lp.add_var("y");
        lp.add_constraint("sum", vec![(x, 1.0), (y, 1.0)], Relation::Eq, 1.0);
        lp.add_constraint("lx", vec![(x, 1.0)], Relation::Ge, 0.3);
        lp.add_constraint("ly", vec![(y, 1.0)], Relation::Ge, 0.6);
        let out = simplex(&lp, None).unwrap();
        let LpOutcome::Optimal { x: sol, .. } = out else {
            panic!()
        };
        assert!(lp.violation(&sol) < 1e-9);
        lp.add_constraint("ly2", vec![(y, 1.0)], Relation::Ge, 0.8);
        assert_eq!(simplex(&lp, None).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn unbounded_objective() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x");
        lp.add_constraint("lb", vec![(x, 1.0)], Relation::Ge, 1.0);
        assert_eq!(simplex(&lp, Some(&[1.0])).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn dump_lists_rows() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x");
        lp.add_constraint("row", vec![(x, 2.0)], Relation::Ge, 1.0);
        assert!(lp.dump().contains("row: +2 x >= 1"));
    }
}
