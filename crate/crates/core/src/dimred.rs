//! L2 normalization and PCA reduction of episode features.

use nalgebra::{DMatrix, DVector};

use crate::error::{IciError, Result};
use crate::linalg::DenseMatrix;

/// Scales `v` to unit Euclidean norm. The zero vector is returned unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

/// Row-wise [`l2_normalize`].
pub fn l2_normalize_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.as_matrix().clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    DenseMatrix::from_matrix(out).expect("normalized rows stay finite")
}

/// A fitted PCA projection.
#[derive(Debug, Clone)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// d_in x d_out, orthonormal columns.
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    /// Per-component variance of the training data (n - 1 denominator).
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }
}

/// Fits PCA on the rows of `data`, keeping the top `d_out` components.
///
/// Components are right singular vectors of the mean-centered data. Each
/// component's sign is fixed so that its largest-magnitude entry is positive.
pub fn pca_fit(data: &DenseMatrix, d_out: usize) -> Result<PcaModel> {
    let (n, d_in) = (data.rows(), data.cols());
    if n < 2 {
        return Err(IciError::invalid(format!("PCA needs at least 2 rows, got {n}")));
    }
    if d_out == 0 || d_out > (n - 1).min(d_in) {
        return Err(IciError::invalid(format!(
            "d_out = {d_out} must be in 1..={} for {n}x{d_in} data",
            (n - 1).min(d_in)
        )));
    }
    let x = data.as_matrix();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    // nalgebra does not promise sorted singular values
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
    });

    let mut components = DMatrix::zeros(d_in, d_out);
    let mut explained_variance = Vec::with_capacity(d_out);
    for (k, &src) in order.iter().take(d_out).enumerate() {
        let mut col: DVector<f64> = v_t.row(src).transpose();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        components.set_column(k, &col);
        let s = svd.singular_values[src];
        explained_variance.push(s * s / (n - 1) as f64);
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Projects rows of `data` onto the model's components: `(data - mean) · components`.
pub fn pca_transform(model: &PcaModel, data: &DenseMatrix) -> Result<DenseMatrix> {
    if data.cols() != model.input_dim() {
        return Err(IciError::DimensionMismatch {
            expected: model.input_dim(),
            actual: data.cols(),
        });
    }
    let mut centered = data.as_matrix().clone();
    for mut row in centered.row_iter_mut() {
        row -= model.mean.transpose();
    }
    DenseMatrix::from_matrix(centered * &model.components)
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

    #[test]
    fn normalize_basic() {
        assert_eq!(l2_normalize(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let u = [0.6, 0.8];
        assert_eq!(l2_normalize(&u), u.to_vec());
    }

    #[test]
    fn normalize_rows_unit_norm() {
        let m = random(5, 4, 1);
        let n = l2_normalize_rows(&m);
        for r in 0..5 {
            let norm: f64 = n.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_one_direction_sign_fixed() {
        let pts: Vec<f64> = [-2.0, -1.0, 0.5, 1.0, 3.0]
            .iter()
            .flat_map(|&t| [t, t])
            .collect();
        let data = DenseMatrix::from_row_major(5, 2, &pts).unwrap();
        let model = pca_fit(&data, 1).unwrap();
        let c = model.components();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[(0, 0)] - h).abs() < 1e-12);
        assert!((c[(1, 0)] - h).abs() < 1e-12);
    }

    #[test]
    fn full_rank_transform_preserves_distances() {
        let data = random(10, 4, 2);
        let model = pca_fit(&data, 4).unwrap();
        let t = pca_transform(&model, &data).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let d0 = (data.as_matrix().row(i) - data.as_matrix().row(j)).norm();
                let d1 = (t.as_matrix().row(i) - t.as_matrix().row(j)).norm();
                assert!((d0 - d1).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reconstruction_error_matches_trailing_eigenvalues() {
        let data = random(20, 8, 5);
        let model = pca_fit(&data, 3).unwrap();
        let t = pca_transform(&model, &data).unwrap();

        // covariance eigendecomposition oracle
        let x = data.as_matrix();
        let mean = x.row_mean();
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let cov = centered.transpose() * &centered / 19.0;
        let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let trailing: f64 = eig[3..].iter().sum();

        let recon = t.as_matrix() * model.components().transpose();
        let err = (&centered - recon).norm_squared();
        assert!((err - trailing * 19.0).abs() < 1e-9, "{err} vs {}", trailing * 19.0);
        for k in 0..3 {
            assert!((model.explained_variance()[k] - eig[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn components_orthonormal_and_variance_sorted() {
        let data = random(15, 6, 9);
        let model = pca_fit(&data, 4).unwrap();
        let c = model.components();
        let gram = c.transpose() * c;
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-8);
        let ev = model.explained_variance();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        assert!(ev.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mean_row_maps_to_origin() {
        let data = random(12, 5, 4);
        let model = pca_fit(&data, 2).unwrap();
        let mean = DenseMatrix::from_row_major(1, 5, model.mean()).unwrap();
        let t = pca_transform(&model, &mean).unwrap();
        assert!(t.as_matrix().amax() < 1e-14);
    }

    #[test]
    fn embedded_low_dim_data_round_trips() {
        // 2-D data embedded into R^4 through an orthonormal map
        let low = random(10, 2, 6);
        let q = random(4, 2, 8).into_matrix().qr().q();
        let high = DenseMatrix::from_matrix(low.as_matrix() * q.transpose()).unwrap();
        let model = pca_fit(&high, 2).unwrap();
        let t = pca_transform(&model, &high).unwrap();
        let mut recon = t.as_matrix() * model.components().transpose();
        for mut row in recon.row_iter_mut() {
            row += DVector::from_column_slice(model.mean()).transpose();
        }
        assert!((recon - high.as_matrix()).amax() < 1e-8);
    }

    #[test]
    fn transform_matches_direct_product() {
        let data = random(14, 6, 10);
        let model = pca_fit(&data, 3).unwrap();
        let other = random(5, 6, 12);
        let t = pca_transform(&model, &other).unwrap();
        for i in 0..5 {
            for k in 0..3 {
                let mut acc = 0.0;
                for j in 0..6 {
                    acc += (other.get(i, j) - model.mean()[j]) * model.components()[(j, k)];
                }
                assert!((t.get(i, k) - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn training_projection_variance_equals_explained() {
        let data = random(25, 7, 13);
        let model = pca_fit(&data, 3).unwrap();
        let t = pca_transform(&model, &data).unwrap();
        for k in 0..3 {
            let col = t.as_matrix().column(k);
            let m = col.mean();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 24.0;
            assert!((var - model.explained_variance()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_dimensions() {
        let data = random(4, 6, 1);
        assert!(pca_fit(&data, 4).is_err());
        assert!(pca_fit(&random(1, 3, 1), 1).is_err());
        let model = pca_fit(&data, 2).unwrap();
        assert!(matches!(
            pca_transform(&model, &random(2, 5, 1)),
            Err(IciError::DimensionMismatch { .. })
        ));
    }
}
