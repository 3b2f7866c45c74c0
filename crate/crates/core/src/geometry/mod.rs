//! Norms, projections onto the lower and upper approximations, and weight
//! vectors.

mod qp;

use nalgebra::{DMatrix, DVector};

pub use qp::{solve as solve_qp, Qp, QpSolution};

/// Entries of a weight vector below this magnitude are treated as zero.
pub const WEIGHT_DUST: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("norm matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("threshold coincides with its projection; no direction")]
    DegenerateDirection,
    #[error("projection needs at least one point")]
    Empty,
    #[error("QP solver failure: {0}")]
    SolverFailure(String),
}

/// Symmetric positive-definite matrix inducing `‖v‖ = sqrt(vᵀMv)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormMatrix {
    m: DMatrix<f64>,
}

impl NormMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<NormMatrix, GeometryError> {
        if !m.is_square() {
            return Err(GeometryError::NotPositiveDefinite("matrix is not square".into()));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                    return Err(GeometryError::NotPositiveDefinite(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        if m.iter().any(|x| !x.is_finite()) || m.clone().cholesky().is_none() {
            return Err(GeometryError::NotPositiveDefinite(
                "Cholesky factorization failed".into(),
            ));
        }
        Ok(NormMatrix { m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<NormMatrix, GeometryError> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(GeometryError::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        NormMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(dim: usize) -> NormMatrix {
        NormMatrix {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn diagonal(d: &[f64]) -> Result<NormMatrix, GeometryError> {
        NormMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    fn check(&self, len: usize) -> Result<(), GeometryError> {
        if len != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    /// `M v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, GeometryError> {
        self.check(v.len())?;
        Ok((&self.m * DVector::from_column_slice(v)).iter().copied().collect())
    }

    /// `sqrt(vᵀMv)`.
    pub fn norm(&self, v: &[f64]) -> Result<f64, GeometryError> {
        let mv = self.apply(v)?;
        Ok(v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64, GeometryError> {
        self.check(b.len())?;
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.norm(&d)
    }
}

/// `sqrt(vᵀMv)`.
pub fn norm_distance(m: &NormMatrix, v: &[f64]) -> Result<f64, GeometryError> {
    m.norm(v)
}

/// Nearest point of `down(conv(phi))` and its convex weights over `phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerProjection {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub distance: f64,
    pub kkt_residual: f64,
}

fn qp_iteration_cap(vars: usize, cons: usize) -> usize {
    20 * (vars + cons) + 200
}

/// Minimize `‖t − x‖_M` over `x ≤ Rλ`, `λ ≥ 0`, `Σλ = 1`, where the
/// columns of `R` are the points of `phi`.
pub fn project_to_lower_approx(t: &[f64], phi: &[Vec<f64>], m: &NormMatrix) -> Result<LowerProjection, GeometryError> {
    let d = t.len();
    m.check(d)?;
    if phi.is_empty() {
        return Err(GeometryError::Empty);
    }
    if let Some(r) = phi.iter().find(|r| r.len() != d) {
        return Err(GeometryError::DimensionMismatch {
            expected: d,
            found: r.len(),
        });
    }
    let k = phi.len();
    if let Some(idx) = phi.iter().position(|r| t.iter().zip(r).all(|(a, b)| a <= b)) {
        let mut lambda = vec![0.0; k];
        lambda[idx] = 1.0;
        return Ok(LowerProjection {
            x: t.to_vec(),
            lambda,
            distance: 0.0,
            kkt_residual: 0.0,
        });
    }
    let nv = d + k;
    let mut h = DMatrix::<f64>::zeros(nv, nv);
    h.view_mut((0, 0), (d, d)).copy_from(&(m.matrix() * 2.0));
    let tv = DVector::from_column_slice(t);
    let mut g = DVector::<f64>::zeros(nv);
    g.rows_mut(0, d).copy_from(&(m.matrix() * &tv * -2.0));

    let mut a_in = Vec::with_capacity(d + k);
    let mut b_in = Vec::with_capacity(d + k);
    for i in 0..d {
        let mut row = DVector::<f64>::zeros(nv);
        row[i] = 1.0;
        for (c, r) in phi.iter().enumerate() {
            row[d + c] = -r[i];
        }
        a_in.push(row);
        b_in.push(0.0);
    }
    for c in 0..k {
        let mut row = DVector::<f64>::zeros(nv);
        row[d + c] = -1.0;
        a_in.push(row);
        b_in.push(0.0);
    }
    let mut sum = DVector::<f64>::zeros(nv);
    sum.rows_mut(d, k).fill(1.0);

    // start at the first point: λ = e₁, x = min(t, r₁)
    let mut x0 = DVector::<f64>::zeros(nv);
    for i in 0..d {
        x0[i] = t[i].min(phi[0][i]);
    }
    x0[d] = 1.0;
    let qp = Qp {
        h,
        g,
        a_eq: vec![sum],
        b_eq: vec![1.0],
        a_in,
        b_in,
    };
    let sol = solve_qp(&qp, x0, qp_iteration_cap(nv, d + k))?;
    let x: Vec<f64> = sol.x.rows(0, d).iter().copied().collect();
    let mut lambda: Vec<f64> = sol.x.rows(d, k).iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = lambda.iter().sum();
    for v in &mut lambda {
        *v /= total;
    }
    let distance = m.distance(t, &x)?;
    Ok(LowerProjection {
        x,
        lambda,
        distance,
        kkt_residual: sol.kkt_residual,
    })
}

/// Minimize `‖t − z‖_M` subject to `w·z ≤ w·r` for every `(w, r)` in
/// `lambda`. Returns `t` itself when it satisfies every halfspace.
pub fn project_to_upper_approx(
    t: &[f64],
    lambda: &[(Vec<f64>, Vec<f64>)],
    m: &NormMatrix,
) -> Result<Vec<f64>, GeometryError> {
    let d = t.len();
    m.check(d)?;
    if lambda.is_empty() {
        return Err(GeometryError::Empty);
    }
    for (w, r) in lambda {
        if w.len() != d || r.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                found: w.len().max(r.len()),
            });
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    if lambda.iter().all(|(w, r)| dot(w, t) <= dot(w, r)) {
        return Ok(t.to_vec());
    }
    let tv = DVector::from_column_slice(t);
    let h = m.matrix() * 2.0;
    let g = m.matrix() * &tv * -2.0;
    let a_in: Vec<DVector<f64>> = lambda.iter().map(|(w, _)| DVector::from_column_slice(w)).collect();
    let b_in: Vec<f64> = lambda.iter().map(|(w, r)| dot(w, r)).collect();
    // the componentwise minimum of the r's lies in every halfspace (w ≥ 0)
    let x0 = DVector::from_fn(d, |i, _| {
        lambda.iter().map(|(_, r)| r[i]).fold(f64::INFINITY, f64::min).min(t[i])
    });
    let qp = Qp {
        h,
        g,
        a_eq: Vec::new(),
        b_eq: Vec::new(),
        a_in,
        b_in,
    };
    let sol = solve_qp(&qp, x0, qp_iteration_cap(d, lambda.len()))?;
    Ok(sol.x.iter().copied().collect())
}

/// `M(t − t↑) / ‖M(t − t↑)‖₁`, with dust below [`WEIGHT_DUST`] zeroed and any
/// remaining negative entry clamped to 0.
pub fn weight_vector(t: &[f64], t_up: &[f64], m: &NormMatrix) -> Result<Vec<f64>, GeometryError> {
    m.check(t.len())?;
    m.check(t_up.len())?;
    let diff: Vec<f64> = t.iter().zip(t_up).map(|(a, b)| a - b).collect();
    if diff.iter().all(|x| x.abs() <= WEIGHT_DUST) {
        return Err(GeometryError::DegenerateDirection);
    }
    let mut w = m.apply(&diff)?;
    for v in &mut w {
        if v.abs() < WEIGHT_DUST {
            *v = 0.0;
        }
        if *v < 0.0 {
            log::debug!("clamping negative weight component {v:e}");
            *v = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(GeometryError::DegenerateDirection);
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}
