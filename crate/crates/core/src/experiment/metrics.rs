use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Micro-averaged F1: true positives, false positives and false negatives
/// pooled over every class before taking the harmonic mean.
pub fn micro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let classes = predictions.iter().chain(labels).max().map_or(0, |m| m + 1);
    let (mut tp, mut fp, mut fns) = (0usize, 0usize, 0usize);
    for c in 0..classes {
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p == c, l == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fns += 1,
                (false, false) => {}
            }
        }
    }
    let denom = 2 * tp + fp + fns;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs.axis_iter(Axis(0)).map(argmax).collect()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// One prediction per group: the modal class among the members. Ties go to
/// the class with the larger summed probability over the group, then to the
/// lower class index.
pub fn majority_vote(
    groups: &[Vec<usize>],
    predictions: &[usize],
    probabilities: &Array2<f64>,
) -> Result<Vec<usize>> {
    if probabilities.nrows() != predictions.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            found: probabilities.nrows(),
        });
    }
    let classes = probabilities.ncols();
    groups
        .iter()
        .enumerate()
        .map(|(g, members)| {
            if members.is_empty() {
                return Err(Error::EmptyGroup(format!("group {g}")));
            }
            let mut votes = vec![0usize; classes];
            let mut mass = vec![0.0f64; classes];
            for &m in members {
                let p = *predictions
                    .get(m)
                    .ok_or_else(|| Error::Validation(format!("member {m} out of range")))?;
                if p >= classes {
                    return Err(Error::LabelOutOfRange { label: p, classes });
                }
                votes[p] += 1;
                for (c, acc) in mass.iter_mut().enumerate() {
                    *acc += probabilities[[m, c]];
                }
            }
            let mut best = 0;
            for c in 1..classes {
                if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
                    best = c;
                }
            }
            Ok(best)
        })
        .collect()
}
