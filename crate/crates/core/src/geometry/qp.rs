//! Primal active-set method for small dense convex QPs.
//!
//! minimize ½ xᵀHx + gᵀx  subject to  A_eq x = b_eq,  A_in x ≤ b_in
//!
//! `H` must be positive semidefinite. Starts from a feasible point supplied
//! by the caller. Equality-constrained subproblems are solved in an
//! orthonormal null-space basis; when the reduced Hessian is singular and
//! the reduced gradient has a component in its kernel, the step follows that
//! zero-curvature descent ray up to the first blocking constraint.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::GeometryError;

pub struct Qp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: Vec<DVector<f64>>,
    pub b_eq: Vec<f64>,
    pub a_in: Vec<DVector<f64>>,
    pub b_in: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the inequality constraints (zero when inactive).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the stationarity residual at the returned point.
    pub kkt_residual: f64,
}

const STEP_TOL: f64 = 1e-11;

/// Orthonormal basis of the complement of span(rows).
fn null_space(rows: &[&DVector<f64>], n: usize) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for r in rows {
        let mut v = (*r).clone();
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-10 * r.norm().max(1e-300) {
            basis.push(v / norm);
        }
    }
    let mut null: Vec<DVector<f64>> = Vec::new();
    for k in 0..n {
        if basis.len() + null.len() == n {
            break;
        }
        let mut v = DVector::<f64>::zeros(n);
        v[k] = 1.0;
        for _ in 0..2 {
            for b in basis.iter().chain(null.iter()) {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            null.push(v / norm);
        }
    }
    null
}

/// Least-squares solve of `Aᵀ mu = rhs` for the rows of `A`.
fn multipliers(rows: &[&DVector<f64>], rhs: &DVector<f64>) -> DVector<f64> {
    let k = rows.len();
    if k == 0 {
        return DVector::zeros(0);
    }
    let n = rhs.len();
    let a = DMatrix::from_fn(k, n, |i, j| rows[i][j]);
    let gram = &a * a.transpose();
    let b = &a * rhs;
    match gram.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => gram
            .pseudo_inverse(1e-12)
            .map(|p| p * b)
            .unwrap_or_else(|_| DVector::zeros(k)),
    }
}

pub fn solve(qp: &Qp, x0: DVector<f64>, max_iter: usize) -> Result<QpSolution, GeometryError> {
    let n = x0.len();
    let m_in = qp.a_in.len();
    let mut x = x0;
    let mut working: Vec<usize> = Vec::new();
    let mut dropped: Option<usize> = None;
    let scale = 1.0 + qp.h.amax() + qp.g.amax();

    for iter in 0..max_iter {
        let grad = &qp.h * &x + &qp.g;
        let rows: Vec<&DVector<f64>> = qp.a_eq.iter().chain(working.iter().map(|&i| &qp.a_in[i])).collect();
        let z = null_space(&rows, n);

        let mut p = DVector::<f64>::zeros(n);
        let mut ray = false;
        let mut cap = 1.0;
        if !z.is_empty() {
            let zm = DMatrix::from_columns(&z);
            let hr = zm.transpose() * &qp.h * &zm;
            let gr = zm.transpose() * &grad;
            let eig = SymmetricEigen::new(hr);
            let lam_max = eig.eigenvalues.amax().max(1.0);
            let qg = eig.eigenvectors.transpose() * &gr;
            let flat_tol = 1e-10 * lam_max;
            let mut u_ray = DVector::<f64>::zeros(z.len());
            let mut u_newton = DVector::<f64>::zeros(z.len());
            for k in 0..z.len() {
                if eig.eigenvalues[k] > flat_tol {
                    u_newton[k] = -qg[k] / eig.eigenvalues[k];
                } else if qg[k].abs() > 1e-12 * scale {
                    u_ray[k] = -qg[k];
                    ray = true;
                }
            }
            let u = if ray { u_ray } else { u_newton };
            p = &zm * (&eig.eigenvectors * u);

            // With a singular reduced Hessian the step can point straight back
            // through the row just released, and the working set cycles. The
            // projected gradient moves off that row instead.
            if let Some(i) = dropped {
                if qp.a_in[i].dot(&p) > 0.0 {
                    p = -(&zm * (zm.transpose() * &grad));
                    let curv = p.dot(&(&qp.h * &p));
                    let slope = grad.dot(&p);
                    ray = false;
                    cap = if curv > 1e-14 * scale * p.norm_squared() {
                        -slope / curv
                    } else {
                        f64::INFINITY
                    };
                }
            }
        }
        dropped = None;

        if p.amax() <= STEP_TOL * (1.0 + x.amax()) {
            let mu = multipliers(&rows, &(-&grad));
            let n_eq = qp.a_eq.len();
            let mut worst: Option<(usize, f64)> = None;
            for k in 0..working.len() {
                let v = mu[n_eq + k];
                if v < -1e-10 * scale && worst.map_or(true, |(_, w)| v < w) {
                    worst = Some((k, v));
                }
            }
            match worst {
                Some((k, _)) => {
                    dropped = Some(working.remove(k));
                    continue;
                }
                None => {
                    let mut stat = grad.clone();
                    for (k, r) in rows.iter().enumerate() {
                        stat.axpy(mu[k], r, 1.0);
                    }
                    let mut full = vec![0.0; m_in];
                    for (k, &i) in working.iter().enumerate() {
                        full[i] = mu[n_eq + k].max(0.0);
                    }
                    return Ok(QpSolution {
                        x,
                        multipliers: full,
                        iterations: iter,
                        kkt_residual: stat.amax(),
                    });
                }
            }
        }

        let mut alpha = if ray { f64::INFINITY } else { cap };
        let mut blocking = None;
        for i in 0..m_in {
            if working.contains(&i) {
                continue;
            }
            let ap = qp.a_in[i].dot(&p);
            if ap > 1e-14 * (1.0 + qp.a_in[i].amax()) * p.amax() {
                let slack = (qp.b_in[i] - qp.a_in[i].dot(&x)).max(0.0);
                let step = slack / ap;
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
        }
        if !alpha.is_finite() {
            return Err(GeometryError::SolverFailure("objective unbounded below".into()));
        }
        x.axpy(alpha, &p, 1.0);
        // a blocking row has a·p > 0 while the working rows annihilate p,
        // so it is independent of them
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    Err(GeometryError::SolverFailure(format!(
        "active set did not settle in {max_iter} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_duplicate_points_do_not_cycle() {
        let h: Vec<Vec<f64>> = vec![
            vec![
                2.302814112394969,
                0.7187245637633315,
                0.6030323584492948,
                -0.18853125185501526,
                0.48129985672496317,
                -0.7993809263434497,
                0.0,
                0.0,
                0.0,
            ],
            vec![
                0.7187245637633315,
                4.460805227401091,
                1.1488977461918901,
                -0.5429401593361907,
                4.722014521829124,
                0.5368177910661156,
                0.0,
                0.0,
                0.0,
            ],
            vec![
                0.6030323584492948,
                1.1488977461918901,
                4.100403689728886,
                0.5794157943607833,
                1.893801467396774,
                0.30602150662062416,
                0.0,
                0.0,
                0.0,
            ],
            vec![
                -0.18853125185501526,
                -0.5429401593361907,
                0.5794157943607833,
                1.951399712330629,
                -0.9288545803331507,
                -1.0631581952848947,
                0.0,
                0.0,
                0.0,
            ],
            vec![
                0.48129985672496317,
                4.722014521829124,
                1.893801467396774,
                -0.9288545803331507,
                6.475922542271382,
                0.8704034674537326,
                0.0,
                0.0,
                0.0,
            ],
            vec![
                -0.7993809263434497,
                0.5368177910661156,
                0.30602150662062416,
                -1.0631581952848947,
                0.8704034674537326,
                2.685212666704992,
                0.0,
                0.0,
                0.0,
            ],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let n = h.len();
        let rows = |r: Vec<Vec<f64>>| r.into_iter().map(DVector::from_vec).collect::<Vec<_>>();
        let qp = Qp {
            h: DMatrix::from_fn(n, n, |i, j| h[i][j]),
            g: DVector::from_vec(vec![
                3.20698735466245,
                2.1452669378494758,
                -2.0698672458321052,
                -1.2531397005133316,
                0.6652434951210568,
                -2.4085815200050793,
                0.0,
                0.0,
                0.0,
            ]),
            a_eq: rows(vec![vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]]),
            b_eq: vec![1.0],
            a_in: rows(vec![
                vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.0, 3.7539919745573442, 0.5],
                vec![
                    0.0,
                    1.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    2.5,
                    0.8378074988064681,
                    0.8378074988064681,
                ],
                vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -0.0, -0.0, -0.0],
                vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, -0.9999999998926863, -1.0],
                vec![
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    1.0,
                    0.0,
                    -0.0,
                    -0.9999999999445819,
                    -0.9999999999445819,
                ],
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, -1.0, -1.0],
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0],
            ]),
            b_in: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        let sol = solve(
            &qp,
            DVector::from_vec(vec![-0.8362281902396613, -2.5, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
            560,
        )
        .unwrap();
        assert!(sol.kkt_residual < 1e-8, "{}", sol.kkt_residual);
    }
}
