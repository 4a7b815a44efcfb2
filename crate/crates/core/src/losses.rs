//! Pre-training objectives. Every function returns the loss together with
//! its gradient with respect to the inputs.

use crate::error::{Result, ScarfError};
use crate::nn::Matrix;

/// Exponent scale in the uniformity kernel `exp(-t‖zi - zj‖²)`.
pub const UNIFORMITY_T: f64 = 2.0;
/// Added to each per-dimension standard deviation in Barlow Twins.
pub const BARLOW_EPS: f64 = 1e-12;

/// Embeddings of both views and their similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub z: Matrix,
    pub z_tilde: Matrix,
    pub s: Matrix,
}

impl ContrastiveBatch {
    pub fn new(z: Matrix, z_tilde: Matrix) -> Result<Self> {
        let s = cosine_similarity_matrix(&z, &z_tilde)?;
        Ok(Self { z, z_tilde, s })
    }
}

/// `s[i][j] = <z_i, z̃_j> / (‖z_i‖ ‖z̃_j‖)`.
pub fn cosine_similarity_matrix(z: &Matrix, z_tilde: &Matrix) -> Result<Matrix> {
    if z.cols() != z_tilde.cols() {
        return Err(ScarfError::shape("cosine_similarity_matrix", z.cols(), z_tilde.cols()));
    }
    let norms = |m: &Matrix, which: &str| -> Result<Vec<f64>> {
        m.iter_rows()
            .enumerate()
            .map(|(i, r)| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 && n.is_finite() {
                    Ok(n)
                } else {
                    Err(ScarfError::Degenerate(format!("{which} row {i} has norm {n}")))
                }
            })
            .collect()
    };
    let na = norms(z, "z")?;
    let nb = norms(z_tilde, "z_tilde")?;
    let mut s = z.matmul_nt(z_tilde)?;
    for i in 0..s.rows() {
        for (j, v) in s.row_mut(i).iter_mut().enumerate() {
            *v = (*v / (na[i] * nb[j])).clamp(-1.0, 1.0);
        }
    }
    Ok(s)
}

/// Gradients of a loss through `s = z · z̃ᵀ` (rows already normalized).
pub fn similarity_backward(grad_s: &Matrix, z: &Matrix, z_tilde: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((grad_s.matmul(z_tilde)?, grad_s.matmul_tn(z)?))
}

fn check_square(s: &Matrix, op: &'static str) -> Result<()> {
    if s.rows() != s.cols() {
        return Err(ScarfError::shape(op, s.rows(), s.cols()));
    }
    if s.rows() == 0 {
        return Err(ScarfError::Validation(format!("{op}: empty similarity matrix")));
    }
    Ok(())
}

/// InfoNCE without the `1/N` inside the denominator:
/// `(1/N) Σ_i [ -s_ii/τ + log Σ_k exp(s_ik/τ) ]`.
pub fn infonce_standard(s: &Matrix, temperature: f64) -> Result<(f64, Matrix)> {
    check_square(s, "infonce")?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(ScarfError::Validation(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = s.rows();
    let nf = n as f64;
    let mut grad = Matrix::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        let row = s.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
        let exps: Vec<f64> = row.iter().map(|&v| (v / temperature - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += -row[i] / temperature + max + sum.ln();
        let g = grad.row_mut(i);
        for k in 0..n {
            let delta = if k == i { 1.0 } else { 0.0 };
            g[k] = (exps[k] / sum - delta) / (nf * temperature);
        }
    }
    Ok((total / nf, grad))
}

/// `L = (1/N) Σ_i -log( exp(s_ii/τ) / ((1/N) Σ_k exp(s_ik/τ)) )`.
///
/// Equals [`infonce_standard`] minus `ln N`; the gradient is the same.
pub fn infonce(s: &Matrix, temperature: f64) -> Result<(f64, Matrix)> {
    let (loss, grad) = infonce_standard(s, temperature)?;
    Ok((loss - (s.rows() as f64).ln(), grad))
}

/// Fraction of rows whose largest entry is off the diagonal. Ties go to the
/// smallest column index.
pub fn infonce_error(s: &Matrix) -> Result<f64> {
    check_square(s, "infonce_error")?;
    let wrong = s
        .argmax_rows()
        .into_iter()
        .enumerate()
        .filter(|&(i, k)| i != k)
        .count();
    Ok(wrong as f64 / s.rows() as f64)
}

/// Mean binary cross-entropy on raw logits. `labels` must be 0 or 1.
pub fn binary_logistic(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(ScarfError::shape("binary_logistic", logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return Err(ScarfError::Validation("binary_logistic: no logits".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(ScarfError::Validation(format!("binary label must be 0 or 1, got {y}")));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| {
            loss += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
            (sigmoid(l) - y) / n
        })
        .collect();
    Ok((loss / n, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarlowOutput {
    pub loss: f64,
    pub cross_correlation: Matrix,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
}

struct Standardized {
    values: Matrix,
    means: Vec<f64>,
    stds: Vec<f64>,
}

fn standardize(z: &Matrix) -> Standardized {
    let n = z.rows() as f64;
    let means = z.column_means();
    let mut vars = vec![0.0; z.cols()];
    for r in z.iter_rows() {
        for (d, &v) in r.iter().enumerate() {
            vars[d] += (v - means[d]).powi(2);
        }
    }
    let stds: Vec<f64> = vars.iter().map(|v| (v / n).sqrt()).collect();
    let mut values = z.clone();
    for i in 0..z.rows() {
        for (d, v) in values.row_mut(i).iter_mut().enumerate() {
            *v = (*v - means[d]) / (stds[d] + BARLOW_EPS);
        }
    }
    Standardized { values, means, stds }
}

fn standardize_backward(z: &Matrix, st: &Standardized, grad: &Matrix) -> Matrix {
    let n = z.rows();
    let nf = n as f64;
    let mut out = Matrix::zeros(n, z.cols());
    for d in 0..z.cols() {
        let sigma = st.stds[d];
        let denom = sigma + BARLOW_EPS;
        let g_mean = (0..n).map(|i| grad.get(i, d)).sum::<f64>() / nf;
        let g_dot: f64 = (0..n).map(|i| grad.get(i, d) * (z.get(i, d) - st.means[d])).sum();
        for k in 0..n {
            let centered = z.get(k, d) - st.means[d];
            let mut g = (grad.get(k, d) - g_mean) / denom;
            if sigma > 0.0 {
                g -= centered * g_dot / (nf * sigma * denom * denom);
            }
            out.set(k, d, g);
        }
    }
    out
}

/// `Σ_d (1 - C_dd)² + λ Σ_{d≠e} C_de²` where `C` is the cross-correlation of
/// the per-dimension standardized views.
pub fn barlow_twins(z_a: &Matrix, z_b: &Matrix, lambda_offdiag: f64) -> Result<BarlowOutput> {
    if z_a.shape() != z_b.shape() {
        return Err(ScarfError::shape("barlow_twins", z_a.rows() * z_a.cols(), z_b.rows() * z_b.cols()));
    }
    if z_a.rows() < 2 {
        return Err(ScarfError::Validation("barlow_twins needs at least 2 rows".into()));
    }
    let n = z_a.rows() as f64;
    let sa = standardize(z_a);
    let sb = standardize(z_b);
    let mut c = sa.values.matmul_tn(&sb.values)?;
    c.scale(1.0 / n);
    let dim = c.rows();
    let mut loss = 0.0;
    let mut g = Matrix::zeros(dim, dim);
    for d in 0..dim {
        for e in 0..dim {
            let v = c.get(d, e);
            if d == e {
                loss += (1.0 - v).powi(2);
                g.set(d, e, -2.0 * (1.0 - v));
            } else {
                loss += lambda_offdiag * v * v;
                g.set(d, e, 2.0 * lambda_offdiag * v);
            }
        }
    }
    let mut ga_hat = sb.values.matmul_nt(&g)?;
    ga_hat.scale(1.0 / n);
    let mut gb_hat = sa.values.matmul(&g)?;
    gb_hat.scale(1.0 / n);
    Ok(BarlowOutput {
        loss,
        cross_correlation: c,
        grad_a: standardize_backward(z_a, &sa, &ga_hat),
        grad_b: standardize_backward(z_b, &sb, &gb_hat),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignUniformOutput {
    pub loss: f64,
    pub align: f64,
    pub uniform: f64,
    pub grad_z: Matrix,
    pub grad_z_tilde: Matrix,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `log mean_{i≠j} exp(-t‖z_i - z_j‖²)` and its gradient.
fn uniformity(z: &Matrix) -> (f64, Matrix) {
    let n = z.rows();
    let mut logits = Matrix::filled(n, n, f64::NEG_INFINITY);
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = -UNIFORMITY_T * sq_dist(z.row(i), z.row(j));
                logits.set(i, j, v);
                max = max.max(v);
            }
        }
    }
    let w = logits.map(|v| (v - max).exp());
    let total = w.sum();
    let pairs = (n * (n - 1)) as f64;
    let value = max + total.ln() - pairs.ln();
    let mut grad = Matrix::zeros(n, z.cols());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // pair (i, j) and (j, i) both contribute
            let coef = -4.0 * UNIFORMITY_T * w.get(i, j) / total;
            let (zi, zj) = (z.row(i), z.row(j));
            let diff: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| a - b).collect();
            for (g, d) in grad.row_mut(i).iter_mut().zip(&diff) {
                *g += coef * d;
            }
        }
    }
    (value, grad)
}

/// `a · mean_i ‖z_i - z̃_i‖² + u · log mean_{i≠j} exp(-2‖z_i - z_j‖²)`.
///
/// With `cross_pairs` the uniformity term runs over all points of both views
/// instead of the originals only.
pub fn align_uniform(
    z: &Matrix,
    z_tilde: &Matrix,
    weight_align: f64,
    weight_uniform: f64,
    cross_pairs: bool,
) -> Result<AlignUniformOutput> {
    if z.shape() != z_tilde.shape() {
        return Err(ScarfError::shape("align_uniform", z.rows(), z_tilde.rows()));
    }
    let n = z.rows();
    if n < 2 {
        return Err(ScarfError::Validation("align_uniform needs at least 2 rows".into()));
    }
    let nf = n as f64;
    let align = (0..n).map(|i| sq_dist(z.row(i), z_tilde.row(i))).sum::<f64>() / nf;
    let mut grad_z = z.sub(z_tilde)?;
    grad_z.scale(2.0 * weight_align / nf);
    let mut grad_z_tilde = grad_z.scaled(-1.0);
    let uniform = if cross_pairs {
        let both = Matrix::vstack(&[z, z_tilde])?;
        let (u, g) = uniformity(&both);
        grad_z.add_assign(&g.slice_rows(0, n).scaled(weight_uniform))?;
        grad_z_tilde.add_assign(&g.slice_rows(n, 2 * n).scaled(weight_uniform))?;
        u
    } else {
        let (u, g) = uniformity(z);
        grad_z.add_assign(&g.scaled(weight_uniform))?;
        u
    };
    Ok(AlignUniformOutput {
        loss: weight_align * align + weight_uniform * uniform,
        align,
        uniform,
        grad_z,
        grad_z_tilde,
    })
}
