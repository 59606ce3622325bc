//! Linear base classifiers: multinomial logistic regression and one-vs-rest
//! squared-hinge SVM. Both train deterministically from zero initialization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IciError, Result};
use crate::linalg::DenseMatrix;
use crate::optim::{self, LbfgsSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Logistic,
    Svm,
}

/// Classifier choice plus its regularization knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierConfig {
    /// Mean cross-entropy plus `(l2/2)||W||²`.
    Logistic { l2: f64 },
    /// Per class `½||w||² + c Σ max(0, 1 - y f(x))²`.
    Svm { c: f64 },
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Logistic { l2: 1.0 }
    }
}

impl ClassifierConfig {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierConfig::Logistic { .. } => ClassifierKind::Logistic,
            ClassifierConfig::Svm { .. } => ClassifierKind::Svm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// D x N.
    weights: DMatrix<f64>,
    bias: DVector<f64>,
    classes: Vec<usize>,
    kind: ClassifierKind,
}

/// Output of [`predict`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// m x N: softmax probabilities (logistic) or decision values (svm).
    pub scores: DMatrix<f64>,
}

impl Prediction {
    /// Score of the predicted class for each row.
    pub fn confidence(&self) -> Vec<f64> {
        self.scores
            .row_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

impl LinearModel {
    pub fn new(
        weights: DMatrix<f64>,
        bias: DVector<f64>,
        classes: Vec<usize>,
        kind: ClassifierKind,
    ) -> Result<Self> {
        validate_classes(&classes)?;
        if weights.ncols() != classes.len() || bias.len() != classes.len() {
            return Err(IciError::DimensionMismatch {
                expected: classes.len(),
                actual: weights.ncols(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(IciError::invalid("model parameters must be finite"));
        }
        Ok(LinearModel {
            weights,
            bias,
            classes,
            kind,
        })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Raw `X W + b`.
    pub fn decision_values(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weights;
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }
}

fn validate_classes(classes: &[usize]) -> Result<()> {
    if classes.len() < 2 {
        return Err(IciError::invalid(format!(
            "need at least 2 classes, got {}",
            classes.len()
        )));
    }
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(IciError::invalid("class ids must be distinct"));
    }
    Ok(())
}

/// Maps labels to positions in `classes`, checking that every class occurs.
fn encode_labels(features: &DenseMatrix, labels: &[usize], classes: &[usize]) -> Result<Vec<usize>> {
    validate_classes(classes)?;
    if features.rows() != labels.len() {
        return Err(IciError::DimensionMismatch {
            expected: features.rows(),
            actual: labels.len(),
        });
    }
    let mut seen = vec![false; classes.len()];
    let encoded = labels
        .iter()
        .map(|l| {
            let pos = classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| IciError::invalid(format!("label {l} is not a known class")))?;
            seen[pos] = true;
            Ok(pos)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(IciError::invalid(format!(
            "class {} has no training examples",
            classes[missing]
        )));
    }
    Ok(encoded)
}

fn softmax_rows(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Multinomial cross-entropy objective over a fixed training set.
///
/// Parameters are packed as `W` (D x N, column-major) followed by `b`.
pub struct LogisticObjective<'a> {
    x: &'a DMatrix<f64>,
    targets: Vec<usize>,
    classes: usize,
    l2: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(x: &'a DMatrix<f64>, targets: Vec<usize>, classes: usize, l2: f64) -> Self {
        LogisticObjective {
            x,
            targets,
            classes,
            l2,
        }
    }

    pub fn num_params(&self) -> usize {
        (self.x.ncols() + 1) * self.classes
    }

    fn unpack(&self, params: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.x.ncols();
        let w = DMatrix::from_column_slice(d, self.classes, &params[..d * self.classes]);
        let b = DVector::from_column_slice(&params[d * self.classes..]);
        (w, b)
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let n = self.x.nrows() as f64;
        let (w, b) = self.unpack(params);
        let mut z = self.x * &w;
        for mut row in z.row_iter_mut() {
            row += b.transpose();
        }
        let mut loss = 0.0;
        for (i, &t) in self.targets.iter().enumerate() {
            let row = z.row(i);
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= n;
        loss += 0.5 * self.l2 * w.norm_squared();

        let mut p = z;
        softmax_rows(&mut p);
        for (i, &t) in self.targets.iter().enumerate() {
            p[(i, t)] -= 1.0;
        }
        let gw = self.x.transpose() * &p / n + &w * self.l2;
        let gb = p.row_sum().transpose() / n;
        let mut grad = Vec::with_capacity(self.num_params());
        grad.extend_from_slice(gw.as_slice());
        grad.extend_from_slice(gb.as_slice());
        (loss, grad)
    }
}

/// Binary squared-hinge objective with unregularized bias.
///
/// Parameters are `w` (D) followed by `b`; `signs` are ±1.
pub struct SquaredHingeObjective<'a> {
    x: &'a DMatrix<f64>,
    signs: Vec<f64>,
    c: f64,
}

impl<'a> SquaredHingeObjective<'a> {
    pub fn new(x: &'a DMatrix<f64>, signs: Vec<f64>, c: f64) -> Self {
        SquaredHingeObjective { x, signs, c }
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let d = self.x.ncols();
        let w = DVector::from_column_slice(&params[..d]);
        let b = params[d];
        let f = self.x * &w;
        let mut value = 0.5 * w.norm_squared();
        let mut coef = DVector::zeros(self.x.nrows());
        let mut gb = 0.0;
        for (i, &y) in self.signs.iter().enumerate() {
            let margin = 1.0 - y * (f[i] + b);
            if margin > 0.0 {
                value += self.c * margin * margin;
                coef[i] = -2.0 * self.c * y * margin;
                gb += coef[i];
            }
        }
        let gw = &w + self.x.transpose() * coef;
        let mut grad = Vec::with_capacity(d + 1);
        grad.extend_from_slice(gw.as_slice());
        grad.push(gb);
        (value, grad)
    }
}

const LOGISTIC_GRAD_TOL: f64 = 1e-6;

pub fn train_logistic(
    features: &DenseMatrix,
    labels: &[usize],
    classes: &[usize],
    l2: f64,
) -> Result<LinearModel> {
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(IciError::invalid(format!("l2 must be finite and >= 0, got {l2}")));
    }
    let targets = encode_labels(features, labels, classes)?;
    let x = features.as_matrix();
    let objective = LogisticObjective::new(x, targets, classes.len(), l2);
    let settings = LbfgsSettings {
        grad_tol: LOGISTIC_GRAD_TOL,
        ..LbfgsSettings::default()
    };
    let out = optim::minimize(
        |p| objective.value_and_gradient(p),
        vec![0.0; objective.num_params()],
        &settings,
    );
    let (w, b) = objective.unpack(&out);
    LinearModel::new(w, b, classes.to_vec(), ClassifierKind::Logistic)
}

pub fn train_svm(
    features: &DenseMatrix,
    labels: &[usize],
    classes: &[usize],
    c: f64,
) -> Result<LinearModel> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(IciError::invalid(format!("svm c must be positive, got {c}")));
    }
    let targets = encode_labels(features, labels, classes)?;
    let x = features.as_matrix();
    let d = x.ncols();
    let settings = LbfgsSettings {
        grad_tol: 1e-8,
        ..LbfgsSettings::default()
    };
    let mut weights = DMatrix::zeros(d, classes.len());
    let mut bias = DVector::zeros(classes.len());
    for k in 0..classes.len() {
        let signs = targets.iter().map(|&t| if t == k { 1.0 } else { -1.0 }).collect();
        let objective = SquaredHingeObjective::new(x, signs, c);
        let out = optim::minimize(|p| objective.value_and_gradient(p), vec![0.0; d + 1], &settings);
        weights.set_column(k, &DVector::from_column_slice(&out[..d]));
        bias[k] = out[d];
    }
    LinearModel::new(weights, bias, classes.to_vec(), ClassifierKind::Svm)
}

pub fn train(
    config: &ClassifierConfig,
    features: &DenseMatrix,
    labels: &[usize],
    classes: &[usize],
) -> Result<LinearModel> {
    match *config {
        ClassifierConfig::Logistic { l2 } => train_logistic(features, labels, classes, l2),
        ClassifierConfig::Svm { c } => train_svm(features, labels, classes, c),
    }
}

/// Predicts class ids by argmax of the scores; ties go to the smaller class position.
pub fn predict(model: &LinearModel, features: &DenseMatrix) -> Result<Prediction> {
    if features.cols() != model.input_dim() {
        return Err(IciError::DimensionMismatch {
            expected: model.input_dim(),
            actual: features.cols(),
        });
    }
    let mut scores = model.decision_values(features.as_matrix());
    if model.kind == ClassifierKind::Logistic {
        softmax_rows(&mut scores);
    }
    let labels = scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            model.classes[best]
        })
        .collect();
    Ok(Prediction { labels, scores })
}
