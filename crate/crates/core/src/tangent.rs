//! Tangent-space bases of the constraint manifold.
//!
//! For a Jacobian `J` of shape `k x (u + k)` the projected basis is
//! `N = (I - J^T (J J^T + lambda I)^-1 J) Z` with `Z = [I_u; 0]`: the unit action
//! directions projected onto `ker J`. The columns are not re-orthonormalized;
//! their scaling encodes how much of each action direction survives near a
//! constraint boundary.
//!
//! [`qr_null_space`] is the Householder baseline. Its columns are orthonormal
//! but can change sign discontinuously along smooth paths of `J`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Above this `cond(J J^T)` an undamped solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative pivot threshold below which the QR factorization is declared rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Factorization of the damped Gram matrix `J J^T + lambda I`, shared by the
/// null-space projection and the pseudoinverse solve.
#[derive(Debug, Clone)]
pub struct GramSolver {
    jacobian: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
}

impl GramSolver {
    pub fn new(jacobian: &DMatrix<f64>, damping: f64) -> Result<Self> {
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::InvalidParameter(format!("damping must be >= 0, got {damping}")));
        }
        if jacobian.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("jacobian has non-finite entries".into()));
        }
        let k = jacobian.nrows();
        let gram = jacobian * jacobian.transpose();
        let condition = condition_number(&gram);
        if damping == 0.0 && !(condition <= MAX_CONDITION) {
            return Err(Error::Singular { condition });
        }
        let damped = gram + DMatrix::identity(k, k) * damping;
        let chol = damped.cholesky().ok_or(Error::Singular { condition })?;
        Ok(Self {
            jacobian: jacobian.clone(),
            chol,
            condition,
        })
    }

    /// Condition number of the undamped `J J^T`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `J^T (J J^T + lambda I)^-1 v`.
    pub fn pinv_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("rhs", self.jacobian.nrows(), v.len())?;
        Ok(self.jacobian.transpose() * self.chol.solve(v))
    }

    /// `(I - J^T (J J^T + lambda I)^-1 J) Z`, first `action_dim` columns of the projector.
    pub fn projected_basis(&self, action_dim: usize) -> DMatrix<f64> {
        let d = self.jacobian.ncols();
        // J Z is just the first `action_dim` columns of J.
        let jz = self.jacobian.columns(0, action_dim).into_owned();
        let correction = self.jacobian.transpose() * self.chol.solve(&jz);
        let mut z = DMatrix::zeros(d, action_dim);
        z.view_mut((0, 0), (action_dim, action_dim)).fill_with_identity();
        z - correction
    }

    /// Full projector `I - J^T (J J^T + lambda I)^-1 J`.
    pub fn projector(&self) -> DMatrix<f64> {
        let d = self.jacobian.ncols();
        DMatrix::identity(d, d) - self.jacobian.transpose() * self.chol.solve(&self.jacobian)
    }
}

/// Ratio of extreme eigenvalues of a symmetric positive semidefinite matrix.
pub fn condition_number(gram: &DMatrix<f64>) -> f64 {
    if gram.is_empty() {
        return 1.0;
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn action_dim_of(j: &DMatrix<f64>) -> Result<usize> {
    let (k, d) = j.shape();
    if k == 0 || d <= k {
        return Err(Error::Dimension {
            what: "jacobian columns (u + k with u >= 1)",
            expected: k + 1,
            got: d,
        });
    }
    Ok(d - k)
}

/// Projected tangent basis for a `k x (u + k)` Jacobian; shape `(u + k) x u`.
pub fn projected_null_space(j: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>> {
    let u = action_dim_of(j)?;
    Ok(GramSolver::new(j, damping)?.projected_basis(u))
}

/// `J^T (J J^T + damping I)^-1 v`; the minimum-norm solution of `J w = v` when undamped.
pub fn damped_pinv_apply(j: &DMatrix<f64>, v: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
    check_dim("rhs", j.nrows(), v.len())?;
    GramSolver::new(j, damping)?.pinv_apply(v)
}

/// Orthonormal basis of `ker J` from a Householder QR of `J^T`, shape `(u + k) x u`.
///
/// Each column is flipped so that its first nonzero entry is positive.
pub fn qr_null_space(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let u = action_dim_of(j)?;
    let k = j.nrows();
    let d = k + u;
    let mut a = j.transpose();
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut pivots = Vec::with_capacity(k);
    for i in 0..k {
        let x = a.view((i, i), (d - i, 1)).into_owned();
        let norm = x.norm();
        let sign = if x[0] < 0.0 { -1.0 } else { 1.0 };
        let alpha = -sign * norm;
        pivots.push(alpha.abs());
        let mut v = x;
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- H A on rows i.., Q <- Q H on columns i..
        let mut sub = a.view_mut((i, i), (d - i, k - i));
        let proj = v.transpose() * &sub;
        sub -= &v * proj * (2.0 / vnorm2);
        let mut qs = q.view_mut((0, i), (d, d - i));
        let proj = &qs * &v;
        qs -= proj * v.transpose() * (2.0 / vnorm2);
    }
    let scale = pivots.iter().cloned().fold(0.0, f64::max);
    let rank = pivots.iter().filter(|&&p| p > RANK_TOL * scale.max(f64::MIN_POSITIVE)).count();
    if scale == 0.0 || rank < k {
        return Err(Error::Rank { rank, expected: k });
    }
    let mut basis = q.columns(k, u).into_owned();
    for mut col in basis.column_iter_mut() {
        if let Some(&first) = col.iter().find(|x| x.abs() > RANK_TOL) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    Ok(basis)
}

/// A smooth Jacobian path on which sign-fixed QR kernels flip: `J(t) = [cos t, sin t, 1/2]`
/// for `t` in `[-1/2, 1/2]`, sampled at `samples` points.
///
/// Read as one constraint on a two-dimensional action with a slack column of `1/2`.
pub fn flip_demo_path(samples: usize) -> Vec<DMatrix<f64>> {
    let n = samples.max(2);
    (0..n)
        .map(|i| {
            let t = -0.5 + i as f64 / (n - 1) as f64;
            DMatrix::from_row_slice(1, 3, &[t.cos(), t.sin(), 0.5])
        })
        .collect()
}

/// For consecutive bases, the smallest inner product between matching columns.
pub fn successive_inner_products(bases: &[DMatrix<f64>]) -> Vec<f64> {
    bases
        .windows(2)
        .map(|w| {
            (0..w[0].ncols())
                .map(|j| w[0].column(j).dot(&w[1].column(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
