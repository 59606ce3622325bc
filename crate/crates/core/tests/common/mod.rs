//! Reference implementations shared by the integration tests. Nothing here
//! calls into the solver under test.

#![allow(dead_code)]

use ici::dataset::{FeatureStore, SynthSpec};
use ici::linalg::DenseMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `I - X X⁺` with the pseudo-inverse taken from a plain SVD.
pub fn annihilator_oracle(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let pinv = x.clone().pseudo_inverse(1e-12).expect("svd");
    DMatrix::identity(n, n) - x * pinv
}

pub fn objective(xt: &DMatrix<f64>, yt: &DMatrix<f64>, gamma: &DMatrix<f64>, lambda: f64) -> f64 {
    let n = xt.nrows() as f64;
    let r = yt - xt * gamma;
    let penalty: f64 = (0..gamma.nrows()).map(|i| gamma.row(i).norm()).sum();
    r.norm_squared() / (2.0 * n) + lambda * penalty
}

/// Largest KKT violation of `gamma` for the scaled group lasso.
pub fn kkt(xt: &DMatrix<f64>, yt: &DMatrix<f64>, gamma: &DMatrix<f64>, lambda: f64) -> f64 {
    let n = xt.nrows() as f64;
    let g = xt.transpose() * (yt - xt * gamma) / n;
    let mut worst: f64 = 0.0;
    for i in 0..gamma.nrows() {
        let norm = gamma.row(i).norm();
        let v = if norm > 0.0 {
            (g.row(i) - gamma.row(i) * (lambda / norm)).norm()
        } else {
            (g.row(i).norm() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// `max_i ||X~_iᵀ Y~|| / n` by explicit loops.
pub fn lambda_max_oracle(xt: &DMatrix<f64>, yt: &DMatrix<f64>) -> f64 {
    let n = xt.nrows();
    let mut best: f64 = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for c in 0..yt.ncols() {
            let dot: f64 = (0..n).map(|k| xt[(k, i)] * yt[(k, c)]).sum();
            sq += dot * dot;
        }
        best = best.max(sq.sqrt() / n as f64);
    }
    best
}

/// Accelerated proximal gradient with adaptive restart.
pub fn fista(xt: &DMatrix<f64>, yt: &DMatrix<f64>, lambda: f64, max_iters: usize) -> DMatrix<f64> {
    let n = xt.nrows();
    let gram = xt.transpose() * xt;
    let lip = gram.clone().symmetric_eigen().eigenvalues.max().max(1e-12) / n as f64;
    let step = 1.0 / lip;
    let xty = xt.transpose() * yt;
    let prox = |v: &DMatrix<f64>| {
        let mut out = v.clone();
        for i in 0..v.nrows() {
            let norm = v.row(i).norm();
            let scale = if norm <= step * lambda { 0.0 } else { 1.0 - step * lambda / norm };
            out.row_mut(i).scale_mut(scale);
        }
        out
    };
    let mut x = DMatrix::zeros(n, yt.ncols());
    let mut z = x.clone();
    let mut t: f64 = 1.0;
    let mut prev = objective(xt, yt, &x, lambda);
    for _ in 0..max_iters {
        let grad = (&gram * &z - &xty) / n as f64;
        let next = prox(&(&z - grad * step));
        let obj = objective(xt, yt, &next, lambda);
        if obj > prev {
            // restart momentum
            t = 1.0;
            z = x.clone();
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + (&next - &x) * ((t - 1.0) / t_next);
        let moved = (&next - &x).amax();
        x = next;
        t = t_next;
        if (prev - obj).abs() < 1e-16 && moved < 1e-13 {
            break;
        }
        prev = obj;
    }
    x
}

/// Random design (n x d, uniform entries) and one-hot responses.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let mut y = DMatrix::zeros(n, classes);
    for i in 0..n {
        y[(i, rng.random_range(0..classes))] = 1.0;
    }
    (x, y)
}

pub fn dense(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_matrix(m.clone()).unwrap()
}

/// One trial of the flipped-label fixture: two Gaussian clusters around
/// `s·e1` and `s·e2` in the plane, `per_class` points each. The first
/// point of cluster 0 is reported as class 1. Returns features and
/// reported labels; the flipped point is row 0.
pub fn flipped_clusters(rng: &mut ChaCha8Rng, per_class: usize, s: f64, noise: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        for _ in 0..per_class {
            let mut p = vec![0.0, 0.0];
            p[class] = s;
            for v in &mut p {
                let z: f64 = StandardNormal.sample(rng);
                *v += noise * z;
            }
            rows.push(p);
            labels.push(class);
        }
    }
    labels[0] = 1;
    (rows, labels)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn synth(classes: usize, dim: usize, per_class: usize, sep: f64, seed: u64) -> FeatureStore {
    ici::dataset::generate_synthetic(&SynthSpec {
        num_classes: classes,
        dim,
        per_class,
        cluster_separation: sep,
        noise_scale: 1.0,
        seed,
    })
    .unwrap()
}
