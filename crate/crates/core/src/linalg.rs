//! Dense-matrix primitives for the incidental-parameter regression.
//!
//! [`DenseMatrix`] is a thin validated wrapper around a column-major
//! `nalgebra::DMatrix<f64>`. Constructors reject non-finite entries so that
//! downstream solvers never see NaN or Inf.

use nalgebra::DMatrix;

use crate::error::{IciError, Result};

/// Singular values below `SINGULAR_CUTOFF * sigma_max` are treated as zero.
pub const SINGULAR_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    /// Builds a matrix from row-major values.
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(IciError::DimensionMismatch {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(rows, cols, values))
    }

    /// Builds a matrix from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(IciError::DimensionMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(rows.len(), cols, &flat)
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % m.nrows(), pos / m.nrows());
            return Err(IciError::invalid(format!(
                "non-finite entry at ({r}, {c})"
            )));
        }
        Ok(DenseMatrix(m))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[(r, c)]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.0.row(r).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.transpose().iter().copied().collect()
    }

    pub fn transpose(&self) -> Self {
        DenseMatrix(self.0.transpose())
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.cols() != rhs.rows() {
            return Err(IciError::DimensionMismatch {
                expected: self.cols(),
                actual: rhs.rows(),
            });
        }
        Ok(DenseMatrix(&self.0 * &rhs.0))
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        DenseMatrix(self.0.select_rows(rows))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

fn require_nonempty(a: &DenseMatrix) -> Result<()> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(IciError::invalid(format!(
            "matrix must be non-empty, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

/// Moore-Penrose pseudo-inverse via SVD.
pub fn pseudo_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    require_nonempty(a)?;
    let svd = a.0.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = SINGULAR_CUTOFF * sigma_max;

    let mut pinv = DMatrix::zeros(a.cols(), a.rows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        // pinv += v_k u_k^T / s
        pinv += (v_t.row(k).transpose() * u.column(k).transpose()) / s;
    }
    Ok(DenseMatrix(pinv))
}

/// Orthonormal basis (as columns) of the column space of `x`.
pub fn column_space_basis(x: &DenseMatrix) -> Result<DMatrix<f64>> {
    require_nonempty(x)?;
    let svd = x.0.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = SINGULAR_CUTOFF * sigma_max;
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cutoff && s > 0.0)
        .map(|(k, _)| k)
        .collect();
    Ok(u.select_columns(&keep))
}

/// Numerical rank under the relative singular-value cutoff.
pub fn rank(x: &DenseMatrix) -> usize {
    if x.rows() == 0 || x.cols() == 0 {
        return 0;
    }
    column_space_basis(x).map_or(0, |b| b.ncols())
}

/// Hat matrix `H = X (XᵀX)† Xᵀ`, the orthogonal projector onto col(X).
///
/// Evaluated as `U_r U_rᵀ` from the thin SVD of `X`, which is the same
/// projector and keeps symmetry and idempotence at machine precision.
pub fn hat_matrix(x: &DenseMatrix) -> Result<DenseMatrix> {
    let basis = column_space_basis(x)?;
    let h = &basis * basis.transpose();
    // exact symmetry
    let h = (&h + h.transpose()) * 0.5;
    Ok(DenseMatrix(h))
}

/// Annihilator `I - H`; maps every column of `X` to zero.
pub fn annihilator(x: &DenseMatrix) -> Result<DenseMatrix> {
    let h = hat_matrix(x)?;
    let n = h.rows();
    Ok(DenseMatrix(DMatrix::identity(n, n) - h.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_row_major(rows, cols, &vals).unwrap()
    }

    fn penrose_residuals(a: &DenseMatrix, p: &DenseMatrix) -> [f64; 4] {
        let a = a.as_matrix();
        let p = p.as_matrix();
        let ap = a * p;
        let pa = p * a;
        [
            (&ap * a - a).amax(),
            (&pa * p - p).amax(),
            (&ap - ap.transpose()).amax(),
            (&pa - pa.transpose()).amax(),
        ]
    }

    #[test]
    fn pinv_of_identity_is_identity() {
        let i = DenseMatrix::identity(2);
        assert!(pseudo_inverse(&i).unwrap().max_abs_diff(&i) < 1e-15);
    }

    #[test]
    fn pinv_of_singular_diagonal() {
        let a = DenseMatrix::from_row_major(2, 2, &[2.0, 0.0, 0.0, 0.0]).unwrap();
        let p = pseudo_inverse(&a).unwrap();
        let want = DenseMatrix::from_row_major(2, 2, &[0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(p.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn pinv_penrose_on_random_tall() {
        let a = random(4, 2, 7);
        let p = pseudo_inverse(&a).unwrap();
        let r = penrose_residuals(&a, &p);
        assert!(r[0] < 1e-10, "{r:?}");
        assert!(r.iter().all(|&v| v < 1e-10), "{r:?}");
    }

    #[test]
    fn pinv_penrose_rank_deficient() {
        // rank-2 6x5 matrix
        let b = random(6, 2, 1);
        let c = random(2, 5, 2);
        let a = b.matmul(&c).unwrap();
        let p = pseudo_inverse(&a).unwrap();
        assert!(penrose_residuals(&a, &p).iter().all(|&v| v < 1e-8));
    }

    #[test]
    fn empty_input_rejected() {
        let a = DenseMatrix::zeros(0, 3);
        assert!(matches!(pseudo_inverse(&a), Err(IciError::InvalidArgument(_))));
        assert!(hat_matrix(&a).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(DenseMatrix::from_row_major(1, 2, &[1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_row_major(1, 2, &[1.0]).is_err());
    }

    #[test]
    fn hat_of_ones_column_is_mean_projector() {
        let x = DenseMatrix::from_row_major(3, 1, &[1.0; 3]).unwrap();
        let h = hat_matrix(&x).unwrap();
        let want = DenseMatrix::from_row_major(3, 3, &[1.0 / 3.0; 9]).unwrap();
        assert!(h.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn hat_of_square_identity() {
        let x = DenseMatrix::identity(4);
        assert!(hat_matrix(&x).unwrap().max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn hat_idempotent_and_trace_is_rank() {
        let x = random(8, 3, 11);
        let h = hat_matrix(&x).unwrap();
        let hh = h.matmul(&h).unwrap();
        assert!(hh.max_abs_diff(&h) < 1e-10);
        assert!(h.max_abs_diff(&h.transpose()) < 1e-10);
        assert!((h.as_matrix().trace() - rank(&x) as f64).abs() < 1e-6);
        assert_eq!(rank(&x), 3);
    }

    #[test]
    fn hat_matches_normal_equation_form() {
        // X (XᵀX)† Xᵀ through the pseudo-inverse route
        let x = random(9, 4, 5);
        let xtx = x.transpose().matmul(&x).unwrap();
        let via_pinv = x
            .matmul(&pseudo_inverse(&xtx).unwrap())
            .unwrap()
            .matmul(&x.transpose())
            .unwrap();
        assert!(hat_matrix(&x).unwrap().max_abs_diff(&via_pinv) < 1e-10);
    }

    #[test]
    fn annihilator_of_identity_is_zero() {
        let a = annihilator(&DenseMatrix::identity(3)).unwrap();
        assert!(a.as_matrix().amax() < 1e-14);
    }

    #[test]
    fn annihilator_of_ones_is_centering() {
        let x = DenseMatrix::from_row_major(3, 1, &[1.0; 3]).unwrap();
        let a = annihilator(&x).unwrap();
        for r in 0..3 {
            let sum: f64 = a.row(r).iter().sum();
            assert!(sum.abs() < 1e-14);
            assert!((a.get(r, r) - 2.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn annihilator_kills_columns() {
        let x = random(10, 5, 3);
        let a = annihilator(&x).unwrap();
        assert!(a.matmul(&x).unwrap().frobenius_norm() < 1e-9);
    }
}
