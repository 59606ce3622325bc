//! Multi-response group lasso over incidental parameters.
//!
//! Solves, for each `lambda` on a grid,
//!
//! ```text
//!     min_gamma  1/(2n) ||Y~ - X~ gamma||_F^2 + lambda * sum_i ||gamma_i||_2
//! ```
//!
//! where `X~ = I - H` is the annihilator of the (reduced) feature matrix and
//! `Y~ = X~ Y`. Each row `gamma_i` is one group, with predictor column
//! `X~[:, i]`. The `1/(2n)` scaling makes `lambda_max = max_i ||X~_iᵀ Y~|| / n`
//! exact, so every lambda reported by this module is on that scale.
//!
//! Solutions are found by cyclic blockwise coordinate descent, solving the
//! path from `lambda_max` downwards with warm starts.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{IciError, Result};
use crate::linalg::{self, DenseMatrix};

/// Columns with squared norm at or below this are treated as annihilated.
const DEAD_COLUMN: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Stop when the largest row change in a sweep falls below this.
    pub tol: f64,
    /// Sweep cap per lambda.
    pub max_iters: usize,
    pub kkt_tol: f64,
    /// Row norms at or below this count as zero when reading vanish points.
    pub zero_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-7,
            max_iters: 10_000,
            kkt_tol: 1e-5,
            zero_tol: 1e-10,
        }
    }
}

/// `X~` and `Y~` for one regression.
///
/// Alongside the dense `X~` the problem keeps an orthonormal basis `B` of the
/// projected-out space, `X~ = I - B Bᵀ`, and the correlations `X~ᵀ Y~`.
#[derive(Debug, Clone)]
pub struct PathProblem {
    x_tilde: DMatrix<f64>,
    y_tilde: DMatrix<f64>,
    basis: DMatrix<f64>,
    corr: DMatrix<f64>,
}

impl PathProblem {
    /// Wraps a precomputed annihilator and response, checking the projector invariants.
    pub fn new(x_tilde: DenseMatrix, y_tilde: DenseMatrix) -> Result<Self> {
        let (xt, yt) = (x_tilde.into_matrix(), y_tilde.into_matrix());
        let n = xt.nrows();
        if n == 0 || xt.ncols() != n {
            return Err(IciError::invalid(format!(
                "X~ must be square and non-empty, got {}x{}",
                xt.nrows(),
                xt.ncols()
            )));
        }
        if yt.nrows() != n {
            return Err(IciError::DimensionMismatch {
                expected: n,
                actual: yt.nrows(),
            });
        }
        if (&xt - xt.transpose()).amax() > 1e-8 {
            return Err(IciError::invalid("X~ is not symmetric"));
        }
        if (&xt * &xt - &xt).amax() > 1e-8 {
            return Err(IciError::invalid("X~ is not idempotent"));
        }
        // eigenvectors of H = I - X~ with eigenvalue 1
        let h = DMatrix::identity(n, n) - &xt;
        let eig = h.symmetric_eigen();
        let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
        let basis = eig.eigenvectors.select_columns(&keep);
        Ok(Self::assemble(xt, yt, basis))
    }

    /// Builds the problem from features `x` (n x d) and responses `y` (n x N).
    pub fn from_design(x: &DenseMatrix, y: &DenseMatrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(IciError::DimensionMismatch {
                expected: x.rows(),
                actual: y.rows(),
            });
        }
        let basis = linalg::column_space_basis(x)?;
        let n = x.rows();
        let x_tilde = DMatrix::identity(n, n) - &basis * basis.transpose();
        let x_tilde = (&x_tilde + x_tilde.transpose()) * 0.5;
        let y_tilde = &x_tilde * y.as_matrix();
        Ok(Self::assemble(x_tilde, y_tilde, basis))
    }

    fn assemble(x_tilde: DMatrix<f64>, y_tilde: DMatrix<f64>, basis: DMatrix<f64>) -> Self {
        let corr = x_tilde.transpose() * &y_tilde;
        PathProblem {
            x_tilde,
            y_tilde,
            basis,
            corr,
        }
    }

    pub fn n(&self) -> usize {
        self.x_tilde.nrows()
    }

    pub fn classes(&self) -> usize {
        self.y_tilde.ncols()
    }

    pub fn x_tilde(&self) -> &DMatrix<f64> {
        &self.x_tilde
    }

    pub fn y_tilde(&self) -> &DMatrix<f64> {
        &self.y_tilde
    }

    /// `Y~ - X~ gamma`.
    pub fn residual(&self, gamma: &DMatrix<f64>) -> DMatrix<f64> {
        &self.y_tilde - &self.x_tilde * gamma
    }

    /// Scaled objective `1/(2n)||Y~ - X~γ||² + λ Σ||γ_i||`.
    pub fn objective(&self, gamma: &DMatrix<f64>, lambda: f64) -> f64 {
        let n = self.n() as f64;
        let fit = self.residual(gamma).norm_squared() / (2.0 * n);
        let penalty: f64 = gamma.row_iter().map(|r| r.norm()).sum();
        fit + lambda * penalty
    }

    /// Largest KKT violation over all groups at `gamma`.
    ///
    /// Active groups: `||g_i - λ γ_i/||γ_i||||`. Inactive groups:
    /// `max(0, ||g_i|| - λ)`. Here `g_i = X~_iᵀ(Y~ - X~γ)/n`.
    pub fn kkt_violation(&self, gamma: &DMatrix<f64>, lambda: f64) -> f64 {
        let n = self.n() as f64;
        let grad = self.x_tilde.transpose() * self.residual(gamma) / n;
        let mut worst = 0.0_f64;
        for i in 0..self.n() {
            let g = grad.row(i);
            let gi = gamma.row(i);
            let norm = gi.norm();
            let v = if norm > 0.0 {
                (g - gi * (lambda / norm)).norm()
            } else {
                (g.norm() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// `max_i ||X~_iᵀ Y~||₂ / n` and the column attaining it.
pub fn lambda_max_with_argmax(p: &PathProblem) -> (f64, usize) {
    let n = p.n() as f64;
    let mut best = (0.0, 0);
    for (i, row) in p.corr.row_iter().enumerate() {
        let v = row.norm() / n;
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// Smallest penalty at which the all-zero `gamma` is optimal.
pub fn lambda_max(p: &PathProblem) -> f64 {
    lambda_max_with_argmax(p).0
}

/// Ascending penalty grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
    /// Set when `lambda_max = 0` and the grid collapses to `{0}`.
    trivial: bool,
}

impl LambdaGrid {
    /// Wraps an arbitrary strictly increasing, non-negative sequence.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(IciError::invalid("lambda grid is empty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(IciError::invalid("lambda grid entries must be finite and >= 0"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IciError::invalid("lambda grid must be strictly increasing"));
        }
        Ok(LambdaGrid {
            trivial: values == [0.0],
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.trivial
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("non-empty grid")
    }
}

/// `k` log-spaced values from `eps * lmax` to `lmax`, ascending.
pub fn lambda_grid(lmax: f64, k: usize, eps: f64) -> Result<LambdaGrid> {
    if k < 2 {
        return Err(IciError::invalid(format!("grid needs k >= 2, got {k}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(IciError::invalid(format!("eps must be in (0, 1), got {eps}")));
    }
    if !lmax.is_finite() || lmax < 0.0 {
        return Err(IciError::invalid(format!("lambda_max must be finite and >= 0, got {lmax}")));
    }
    if lmax == 0.0 {
        return Ok(LambdaGrid {
            values: vec![0.0],
            trivial: true,
        });
    }
    let (lo, hi) = ((eps * lmax).ln(), lmax.ln());
    let step = (hi - lo) / (k - 1) as f64;
    let mut values: Vec<f64> = (0..k).map(|j| (lo + step * j as f64).exp()).collect();
    values[0] = eps * lmax;
    values[k - 1] = lmax;
    Ok(LambdaGrid {
        values,
        trivial: false,
    })
}

/// Proximal map of `t ||.||₂`: zero if `||z|| <= t`, else `(1 - t/||z||) z`.
pub fn group_soft_threshold(z: &[f64], t: f64) -> Vec<f64> {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= t {
        return vec![0.0; z.len()];
    }
    let scale = 1.0 - t / norm;
    z.iter().map(|v| v * scale).collect()
}

/// Cyclic blockwise coordinate descent at a fixed `lambda`.
///
/// With `X~ = I - B Bᵀ` the partial-residual correlation of group `i` is
///
/// ```text
///     z_i = (X~ᵀY~)_i - (X~γ)_i + X~_ii γ_i,    (X~γ)_i = γ_i - b_i (Bᵀγ)
/// ```
///
/// so the solver tracks `M = Bᵀγ` (rank x N) and each group update costs
/// `O(rank · N)` rather than `O(n · N)`.
pub struct BlockDescent<'a> {
    problem: &'a PathProblem,
    lambda: f64,
    classes: usize,
    rank: usize,
    // row-major copies: gamma n x N, basis n x rank, corr n x N, projected rank x N
    gamma: Vec<f64>,
    basis: Vec<f64>,
    corr: Vec<f64>,
    projected: Vec<f64>,
    diag: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl<'a> BlockDescent<'a> {
    pub fn new(problem: &'a PathProblem, lambda: f64, warm_start: DMatrix<f64>) -> Result<Self> {
        let (n, classes) = (problem.n(), problem.classes());
        if warm_start.shape() != (n, classes) {
            return Err(IciError::invalid(format!(
                "warm start is {:?}, expected ({n}, {classes})",
                warm_start.shape()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(IciError::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        // ||X~_i||^2 = X~_ii for a projector
        let diag = (0..n).map(|i| problem.x_tilde[(i, i)]).collect();
        let projected = problem.basis.transpose() * &warm_start;
        Ok(BlockDescent {
            problem,
            lambda,
            classes,
            rank: problem.basis.ncols(),
            gamma: row_major(&warm_start),
            basis: row_major(&problem.basis),
            corr: row_major(&problem.corr),
            projected: row_major(&projected),
            diag,
        })
    }

    /// One pass over all groups; returns the largest row change.
    pub fn sweep(&mut self) -> f64 {
        let (classes, rank) = (self.classes, self.rank);
        let threshold = self.problem.n() as f64 * self.lambda;
        let mut z = vec![0.0; classes];
        let mut max_change = 0.0_f64;

        for (i, &csq) in self.diag.iter().enumerate() {
            let gamma = &mut self.gamma[i * classes..(i + 1) * classes];
            let b = &self.basis[i * rank..(i + 1) * rank];
            if csq <= DEAD_COLUMN {
                // annihilated predictor: the group cannot affect the fit
                z.iter_mut().for_each(|v| *v = 0.0);
            } else {
                let corr = &self.corr[i * classes..(i + 1) * classes];
                z.copy_from_slice(corr);
                for (k, &bk) in b.iter().enumerate() {
                    let m = &self.projected[k * classes..(k + 1) * classes];
                    for (zc, &mc) in z.iter_mut().zip(m) {
                        *zc += bk * mc;
                    }
                }
                for (zc, &g) in z.iter_mut().zip(gamma.iter()) {
                    *zc += (csq - 1.0) * g;
                }
                let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = if norm <= threshold { 0.0 } else { (1.0 - threshold / norm) / csq };
                z.iter_mut().for_each(|v| *v *= scale);
            }
            // z now holds the new row; turn it into the change
            let mut change = 0.0;
            for (zc, g) in z.iter_mut().zip(gamma.iter_mut()) {
                let d = *zc - *g;
                *g = *zc;
                *zc = d;
                change += d * d;
            }
            if change > 0.0 {
                for (k, &bk) in b.iter().enumerate() {
                    let m = &mut self.projected[k * classes..(k + 1) * classes];
                    for (mc, &d) in m.iter_mut().zip(&z) {
                        *mc += bk * d;
                    }
                }
            }
            max_change = max_change.max(change.sqrt());
        }
        max_change
    }

    pub fn gamma(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.problem.n(), self.classes, &self.gamma)
    }

    pub fn objective(&self) -> f64 {
        self.problem.objective(&self.gamma(), self.lambda)
    }

    pub fn into_gamma(self) -> DMatrix<f64> {
        self.gamma()
    }
}

/// Result of a single-lambda solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub gamma: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Solves the group-lasso problem at one `lambda` from `warm_start`.
///
/// At or above `lambda_max` the zero matrix is returned directly. A run
/// that hits `max_iters` returns its last iterate with `converged = false`.
pub fn solve_at_lambda(
    p: &PathProblem,
    lambda: f64,
    warm_start: DMatrix<f64>,
    settings: &SolverSettings,
) -> Result<Solution> {
    solve_with_lmax(p, lambda, warm_start, settings, lambda_max(p))
}

fn solve_with_lmax(
    p: &PathProblem,
    lambda: f64,
    warm_start: DMatrix<f64>,
    settings: &SolverSettings,
    lmax: f64,
) -> Result<Solution> {
    let mut bcd = BlockDescent::new(p, lambda, warm_start)?;
    if lambda >= lmax {
        return Ok(Solution {
            gamma: DMatrix::zeros(p.n(), p.classes()),
            sweeps: 0,
            converged: true,
        });
    }
    for sweep in 1..=settings.max_iters {
        if bcd.sweep() < settings.tol {
            return Ok(Solution {
                gamma: bcd.into_gamma(),
                sweeps: sweep,
                converged: true,
            });
        }
    }
    Ok(Solution {
        gamma: bcd.into_gamma(),
        sweeps: settings.max_iters,
        converged: false,
    })
}

/// Row norms of `gamma` along an ascending lambda grid.
#[derive(Debug, Clone)]
pub struct IncidentalPath {
    lambda_grid: LambdaGrid,
    /// `gamma_norms[k][i] = ||gamma_i(lambda_k)||`.
    gamma_norms: Vec<Vec<f64>>,
    gamma_full: Option<Vec<DMatrix<f64>>>,
    converged: Vec<bool>,
    /// Row norms of `Y~ - X~ gamma` at the smallest grid lambda.
    residual_norms: Vec<f64>,
}

impl IncidentalPath {
    pub fn lambda_grid(&self) -> &LambdaGrid {
        &self.lambda_grid
    }

    pub fn gamma_norms(&self) -> &[Vec<f64>] {
        &self.gamma_norms
    }

    pub fn gamma_full(&self) -> Option<&[DMatrix<f64>]> {
        self.gamma_full.as_deref()
    }

    pub fn converged(&self) -> &[bool] {
        &self.converged
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn residual_norms(&self) -> &[f64] {
        &self.residual_norms
    }

    pub fn instances(&self) -> usize {
        self.residual_norms.len()
    }

    /// Writes `lambda,instance_index,gamma_norm` rows, ascending in lambda.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "lambda,instance_index,gamma_norm")?;
        for (k, &lambda) in self.lambda_grid.values().iter().enumerate() {
            for (i, norm) in self.gamma_norms[k].iter().enumerate() {
                writeln!(out, "{lambda:e},{i},{norm:e}")?;
            }
        }
        Ok(())
    }
}

/// Solves every grid point from the top down, warm-starting each solve from
/// the one above it.
pub fn solve_path(
    p: &PathProblem,
    grid: &LambdaGrid,
    settings: &SolverSettings,
    keep_full: bool,
) -> Result<IncidentalPath> {
    let (n, classes) = (p.n(), p.classes());
    let k = grid.len();
    let lmax = lambda_max(p);
    let mut gamma_norms = vec![Vec::new(); k];
    let mut full: Vec<Option<DMatrix<f64>>> = vec![None; k];
    let mut converged = vec![true; k];
    let mut warm = DMatrix::zeros(n, classes);

    for idx in (0..k).rev() {
        let sol = solve_with_lmax(p, grid.values()[idx], warm, settings, lmax)?;
        gamma_norms[idx] = sol.gamma.row_iter().map(|r| r.norm()).collect();
        converged[idx] = sol.converged;
        if keep_full {
            full[idx] = Some(sol.gamma.clone());
        }
        warm = sol.gamma;
    }
    // `warm` now holds the smallest-lambda solution
    let residual_norms = p.residual(&warm).row_iter().map(|r| r.norm()).collect();

    Ok(IncidentalPath {
        lambda_grid: grid.clone(),
        gamma_norms,
        gamma_full: keep_full.then(|| full.into_iter().map(|g| g.expect("filled")).collect()),
        converged,
        residual_norms,
    })
}

/// Per-instance vanish points of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct VanishTable {
    /// Smallest grid lambda from which the row stays zero; `+inf` if it is
    /// nonzero at the grid maximum.
    pub vanish_lambda: Vec<f64>,
}

pub fn vanish_lambdas(path: &IncidentalPath, zero_tol: f64) -> VanishTable {
    let grid = path.lambda_grid.values();
    let vanish_lambda = (0..path.instances())
        .map(|i| {
            let mut vanish = f64::INFINITY;
            for k in (0..grid.len()).rev() {
                if path.gamma_norms[k][i] > zero_tol {
                    break;
                }
                vanish = grid[k];
            }
            vanish
        })
        .collect();
    VanishTable { vanish_lambda }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, d: usize, classes: usize, seed: u64) -> PathProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; n * classes];
        for i in 0..n {
            y[i * classes + rng.random_range(0..classes)] = 1.0;
        }
        PathProblem::from_design(
            &DenseMatrix::from_row_major(n, d, &x).unwrap(),
            &DenseMatrix::from_row_major(n, classes, &y).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(group_soft_threshold(&[3.0, 4.0], 5.0), vec![0.0, 0.0]);
        let v = group_soft_threshold(&[3.0, 4.0], 2.5);
        assert!((v[0] - 1.5).abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
        assert_eq!(group_soft_threshold(&[3.0, 4.0], 0.0), vec![3.0, 4.0]);
    }

    #[test]
    fn grid_spacing() {
        let g = lambda_grid(1.0, 3, 0.01).unwrap();
        let want = [0.01, 0.1, 1.0];
        for (a, b) in g.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        let g = lambda_grid(2.0, 2, 0.25).unwrap();
        assert_eq!(g.values(), &[0.5, 2.0]);
        let g = lambda_grid(0.0, 10, 0.01).unwrap();
        assert_eq!(g.values(), &[0.0]);
        assert!(g.is_trivial());
        assert!(lambda_grid(1.0, 1, 0.1).is_err());
        assert!(lambda_grid(1.0, 5, 1.0).is_err());
    }

    #[test]
    fn lambda_max_of_zero_response() {
        let x = DenseMatrix::from_row_major(3, 1, &[1.0, 2.0, 3.0]).unwrap();
        let p = PathProblem::from_design(&x, &DenseMatrix::zeros(3, 2)).unwrap();
        assert_eq!(lambda_max(&p), 0.0);
    }

    #[test]
    fn lambda_max_is_homogeneous() {
        let p = random_problem(8, 2, 3, 4);
        let doubled = PathProblem::assemble(p.x_tilde.clone(), &p.y_tilde * 2.0, p.basis.clone());
        assert!((lambda_max(&doubled) - 2.0 * lambda_max(&p)).abs() < 1e-14);
    }

    #[test]
    fn zero_above_lambda_max() {
        let p = random_problem(10, 3, 3, 1);
        let lmax = lambda_max(&p);
        let warm = DMatrix::from_element(10, 3, 0.3);
        let sol = solve_at_lambda(&p, lmax, warm, &SolverSettings::default()).unwrap();
        assert!(sol.gamma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_instance_fully_annihilated() {
        let x = DenseMatrix::from_row_major(1, 1, &[2.0]).unwrap();
        let y = DenseMatrix::from_row_major(1, 2, &[1.0, 0.0]).unwrap();
        let p = PathProblem::from_design(&x, &y).unwrap();
        assert!(p.y_tilde().amax() < 1e-15);
        let sol = solve_at_lambda(&p, 0.1, DMatrix::zeros(1, 2), &SolverSettings::default())
            .unwrap();
        assert!(sol.gamma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sweeps_never_increase_objective() {
        let p = random_problem(12, 3, 4, 17);
        let lambda = 0.2 * lambda_max(&p);
        let mut bcd = BlockDescent::new(&p, lambda, DMatrix::zeros(12, 4)).unwrap();
        let mut prev = bcd.objective();
        for _ in 0..50 {
            bcd.sweep();
            let cur = bcd.objective();
            assert!(cur <= prev + 1e-14, "{cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn solution_satisfies_kkt_and_beats_zero() {
        let settings = SolverSettings::default();
        for seed in 0..10 {
            let p = random_problem(15, 4, 3, seed);
            let lmax = lambda_max(&p);
            for frac in [0.05, 0.3, 0.8] {
                let lambda = frac * lmax;
                let sol =
                    solve_at_lambda(&p, lambda, DMatrix::zeros(15, 3), &settings).unwrap();
                assert!(sol.converged);
                assert!(p.kkt_violation(&sol.gamma, lambda) < settings.kkt_tol);
                let zero = DMatrix::zeros(15, 3);
                assert!(p.objective(&sol.gamma, lambda) <= p.objective(&zero, lambda));
            }
        }
    }

    #[test]
    fn path_top_is_zero_and_first_activation_is_argmax() {
        let p = random_problem(12, 3, 3, 23);
        let (lmax, arg) = lambda_max_with_argmax(&p);
        let grid = LambdaGrid::from_values(vec![lmax * 0.999, lmax]).unwrap();
        let path = solve_path(&p, &grid, &SolverSettings::default(), false).unwrap();
        assert!(path.gamma_norms()[1].iter().all(|&v| v == 0.0));
        let active: Vec<usize> = path.gamma_norms()[0]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 1e-10)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(active, vec![arg]);
    }

    #[test]
    fn single_point_grid() {
        let p = random_problem(9, 2, 2, 3);
        let grid = LambdaGrid::from_values(vec![lambda_max(&p)]).unwrap();
        let path = solve_path(&p, &grid, &SolverSettings::default(), true).unwrap();
        assert!(path.gamma_norms()[0].iter().all(|&v| v == 0.0));
        assert_eq!(path.gamma_full().unwrap().len(), 1);
    }

    fn synthetic_path(norms: Vec<Vec<f64>>, grid: Vec<f64>) -> IncidentalPath {
        let n = norms[0].len();
        IncidentalPath {
            lambda_grid: LambdaGrid::from_values(grid).unwrap(),
            converged: vec![true; norms.len()],
            gamma_norms: norms,
            gamma_full: None,
            residual_norms: vec![0.0; n],
        }
    }

    #[test]
    fn vanish_rules() {
        let path = synthetic_path(
            vec![
                vec![0.0, 0.5, 0.3, 1.0],
                vec![0.0, 0.0, 0.1, 1.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
            vec![0.1, 0.2, 0.4],
        );
        let v = vanish_lambdas(&path, 1e-10);
        assert_eq!(v.vanish_lambda[0], 0.1);
        assert_eq!(v.vanish_lambda[1], 0.2);
        assert_eq!(v.vanish_lambda[2], 0.4);
        assert!(v.vanish_lambda[3].is_infinite());
    }

    #[test]
    fn vanish_requires_staying_zero() {
        // zero at the smallest point, re-enters, then zero again
        let path = synthetic_path(vec![vec![0.0], vec![0.2], vec![0.0]], vec![1.0, 2.0, 3.0]);
        assert_eq!(vanish_lambdas(&path, 1e-10).vanish_lambda[0], 3.0);
    }

    #[test]
    fn path_table_shape() {
        let p = random_problem(7, 2, 2, 5);
        let grid = lambda_grid(lambda_max(&p), 4, 0.1).unwrap();
        let path = solve_path(&p, &grid, &SolverSettings::default(), false).unwrap();
        let mut buf = Vec::new();
        path.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 7);
    }

    #[test]
    fn new_rejects_non_projector() {
        let x = DenseMatrix::from_row_major(2, 2, &[1.0, 0.5, 0.5, 1.0]).unwrap();
        let y = DenseMatrix::zeros(2, 2);
        assert!(PathProblem::new(x, y).is_err());
        let xt = linalg::annihilator(&DenseMatrix::from_row_major(3, 1, &[1.0; 3]).unwrap()).unwrap();
        assert!(PathProblem::new(xt, DenseMatrix::zeros(3, 2)).is_ok());
    }

    #[test]
    fn dense_and_factored_construction_agree() {
        let built = random_problem(10, 3, 3, 31);
        let wrapped = PathProblem::new(
            DenseMatrix::from_matrix(built.x_tilde.clone()).unwrap(),
            DenseMatrix::from_matrix(built.y_tilde.clone()).unwrap(),
        )
        .unwrap();
        assert_eq!(wrapped.basis.ncols(), 3);
        let lambda = 0.2 * lambda_max(&built);
        let s = SolverSettings::default();
        let a = solve_at_lambda(&built, lambda, DMatrix::zeros(10, 3), &s).unwrap();
        let b = solve_at_lambda(&wrapped, lambda, DMatrix::zeros(10, 3), &s).unwrap();
        assert!((built.objective(&a.gamma, lambda) - wrapped.objective(&b.gamma, lambda)).abs() < 1e-9);
    }
}
