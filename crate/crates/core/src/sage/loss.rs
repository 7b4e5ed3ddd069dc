use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits.
pub fn supervised_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: c,
        });
    }
    let mut grad = Array2::zeros((n, c));
    let mut total = 0.0;
    for (i, (row, &label)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label];
        for j in 0..c {
            grad[[i, j]] = (row[j] - lse).exp();
        }
        grad[[i, label]] -= 1.0;
    }
    grad /= n as f64;
    Ok((total / n as f64, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub loss: f64,
    pub d_u: Vec<f64>,
    pub d_pos: Vec<f64>,
    pub d_negs: Vec<Vec<f64>>,
}

/// Negative-sampling loss of one positive pair:
/// `-ln s(z_u . z_pos) - sum_q ln s(-z_u . z_neg_q)`.
pub fn unsupervised_loss(z_u: &[f64], z_pos: &[f64], z_negs: &[&[f64]]) -> Result<PairGradients> {
    let d = z_u.len();
    if z_negs.is_empty() {
        return Err(Error::Config(
            "at least one negative sample is required".into(),
        ));
    }
    for v in std::iter::once(z_pos).chain(z_negs.iter().copied()) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    let s_pos = dot(z_u, z_pos);
    let mut loss = -log_sigmoid(s_pos);
    // d/ds of -ln s(s) is -s(-s).
    let g_pos = -sigmoid(-s_pos);
    let mut d_u: Vec<f64> = z_pos.iter().map(|&p| g_pos * p).collect();
    let d_pos = z_u.iter().map(|&u| g_pos * u).collect();
    let mut d_negs = Vec::with_capacity(z_negs.len());
    for neg in z_negs {
        let s = dot(z_u, neg);
        loss -= log_sigmoid(-s);
        let g = sigmoid(s);
        for (du, &n) in d_u.iter_mut().zip(neg.iter()) {
            *du += g * n;
        }
        d_negs.push(z_u.iter().map(|&u| g * u).collect());
    }
    Ok(PairGradients {
        loss,
        d_u,
        d_pos,
        d_negs,
    })
}

/// Mean of [`unsupervised_loss`] over `pairs`, where every index refers to a
/// row of `z`; returns the gradient with respect to `z`.
pub fn unsupervised_batch_loss(
    z: &Array2<f64>,
    pairs: &[(usize, usize)],
    negatives: &[Vec<usize>],
) -> Result<(f64, Array2<f64>)> {
    if pairs.len() != negatives.len() {
        return Err(Error::DimensionMismatch {
            expected: pairs.len(),
            found: negatives.len(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = z.nrows();
    let mut grad = Array2::zeros(z.dim());
    let mut total = 0.0;
    let scale = 1.0 / pairs.len() as f64;
    for (&(u, v), negs) in pairs.iter().zip(negatives) {
        if let Some(&bad) = [u, v].iter().chain(negs).find(|&&i| i >= n) {
            return Err(Error::Validation(format!("embedding row {bad} out of {n}")));
        }
        let row = |i: usize| z.row(i).to_vec();
        let neg_rows: Vec<Vec<f64>> = negs.iter().map(|&q| row(q)).collect();
        let neg_refs: Vec<&[f64]> = neg_rows.iter().map(Vec::as_slice).collect();
        let g = unsupervised_loss(&row(u), &row(v), &neg_refs)?;
        total += g.loss;
        for (j, x) in g.d_u.iter().enumerate() {
            grad[[u, j]] += scale * x;
        }
        for (j, x) in g.d_pos.iter().enumerate() {
            grad[[v, j]] += scale * x;
        }
        for (&q, dq) in negs.iter().zip(&g.d_negs) {
            for (j, x) in dq.iter().enumerate() {
                grad[[q, j]] += scale * x;
            }
        }
    }
    Ok((total * scale, grad))
}

/// Rows scaled to unit L2 norm, and the norms used (floored at 1e-12).
pub fn l2_normalize_rows(z: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.nrows());
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt().max(1e-12);
        row /= n;
        norms.push(n);
    }
    (out, norms)
}

/// Pulls a gradient with respect to the normalised rows back to the raw
/// rows: `(g - u (u . g)) / |z|` per row.
pub fn l2_normalize_backward(
    normalized: &Array2<f64>,
    norms: &[f64],
    grad: &Array2<f64>,
) -> Array2<f64> {
    let mut out = grad.clone();
    for ((mut g, u), &n) in out
        .axis_iter_mut(Axis(0))
        .zip(normalized.axis_iter(Axis(0)))
        .zip(norms)
    {
        let along = u.dot(&g);
        g.scaled_add(-along, &u);
        g /= n;
    }
    out
}
