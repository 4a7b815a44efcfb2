//! Loss functions and elementwise helpers used around the MLPs.

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Result, ScarfError};

const DISTRIBUTION_TOL: f64 = 1e-9;

/// Row-wise softmax, stabilised by subtracting each row's max.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over rows of `-Σ target · log softmax(logits)`, with its gradient
/// `(softmax - target) / rows`.
pub fn softmax_cross_entropy(logits: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != target.shape() {
        return Err(ScarfError::shape(
            "softmax_cross_entropy",
            format!("{:?}", logits.shape()),
            format!("{:?}", target.shape()),
        ));
    }
    for (i, row) in target.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(ScarfError::Validation(format!(
                "target row {i} is not a probability distribution (sum {sum})"
            )));
        }
    }
    let n = logits.rows();
    if n == 0 {
        return Ok((0.0, Matrix::zeros(0, logits.cols())));
    }
    let mut loss = 0.0;
    let mut grad = softmax_rows(logits);
    for i in 0..n {
        let lse = log_sum_exp(logits.row(i));
        let t = target.row(i);
        for (j, &tj) in t.iter().enumerate() {
            if tj != 0.0 {
                loss -= tj * (logits.get(i, j) - lse);
            }
        }
        for (g, &tj) in grad.row_mut(i).iter_mut().zip(t) {
            *g = (*g - tj) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// One-hot encoding of class indices.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(ScarfError::Validation(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        m.set(i, y, 1.0);
    }
    Ok(m)
}

/// `(1 - weight) · onehot + weight / num_classes`
pub fn smooth_labels(onehot: &Matrix, weight: f64, num_classes: usize) -> Result<Matrix> {
    if !(0.0..1.0).contains(&weight) {
        return Err(ScarfError::Validation(format!(
            "label smoothing weight must lie in [0, 1), got {weight}"
        )));
    }
    if onehot.cols() != num_classes {
        return Err(ScarfError::shape("smooth_labels", num_classes, onehot.cols()));
    }
    if weight == 0.0 {
        return Ok(onehot.clone());
    }
    let uniform = weight / num_classes as f64;
    Ok(onehot.map(|v| (1.0 - weight) * v + uniform))
}

/// Inverted dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(ScarfError::Validation(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(Matrix::filled(rows, cols, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Result of [`l2_normalize_rows`]; `zero_rows` counts rows left as zero.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub matrix: Matrix,
    pub norms: Vec<f64>,
    pub zero_rows: usize,
}

/// Divides each row by its Euclidean norm. All-zero rows are returned unchanged.
pub fn l2_normalize_rows(m: &Matrix) -> Normalized {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    let mut zero_rows = 0;
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(norm);
        if norm == 0.0 {
            zero_rows += 1;
            continue;
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Normalized {
        matrix: out,
        norms,
        zero_rows,
    }
}

/// Gradient through [`l2_normalize_rows`]: `(g - y (y·g)) / ‖x‖` per row.
/// Zero rows receive zero gradient.
pub fn l2_normalize_rows_backward(normalized: &Normalized, output_grad: &Matrix) -> Result<Matrix> {
    let y = &normalized.matrix;
    if y.shape() != output_grad.shape() {
        return Err(ScarfError::shape(
            "l2_normalize_rows_backward",
            format!("{:?}", y.shape()),
            format!("{:?}", output_grad.shape()),
        ));
    }
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let norm = normalized.norms[i];
        if norm == 0.0 {
            continue;
        }
        let yi = y.row(i);
        let gi = output_grad.row(i);
        let dot: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
        for (o, (a, g)) in out.row_mut(i).iter_mut().zip(yi.iter().zip(gi)) {
            *o = (g - a * dot) / norm;
        }
    }
    Ok(out)
}

/// Mean squared error over all entries and its gradient `2 (pred - target) / count`.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(ScarfError::shape(
            "mse",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let count = pred.data().len();
    if count == 0 {
        return Ok((0.0, pred.clone()));
    }
    let diff = pred.sub(target)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / count as f64;
    Ok((loss, diff.scaled(2.0 / count as f64)))
}
