//! Multinomial logistic regression on frozen node embeddings.

use log::warn;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::argmax_rows;
use super::split::Split;
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::sage::checkpoint::hex_vec;
use crate::sage::{adam_step, supervised_loss, AdamConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            epochs: 300,
            learning_rate: 0.05,
            weight_decay: 1e-4,
        }
    }
}

/// Standardises inputs with training statistics, then applies a softmax
/// over the classes seen in training; unseen classes get probability 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    #[serde(with = "hex_vec")]
    pub mean: Vec<f64>,
    #[serde(with = "hex_vec")]
    pub std: Vec<f64>,
    pub classes: usize,
    /// Classes present in the training labels.
    pub present: Vec<usize>,
    /// Row-major `dim x present.len()`.
    #[serde(with = "hex_vec")]
    pub weight: Vec<f64>,
    #[serde(with = "hex_vec")]
    pub bias: Vec<f64>,
}

impl LogisticRegression {
    /// Full-batch Adam on the mean cross-entropy of `rows`.
    pub fn fit(
        x: &Array2<f64>,
        labels: &[usize],
        rows: &[usize],
        classes: usize,
        cfg: &DownstreamConfig,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if labels.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let dim = x.ncols();
        let scaler = Normalizer::fit(
            rows.iter()
                .map(|&r| x.row(r).to_slice().expect("standard layout")),
            &vec![true; dim],
        )?;
        let mut present: Vec<usize> = labels.to_vec();
        present.sort_unstable();
        present.dedup();
        if present.len() < classes {
            let missing: Vec<usize> = (0..classes).filter(|c| !present.contains(c)).collect();
            warn!("classes {missing:?} absent from training labels; they will never be predicted");
        }
        let local: Vec<usize> = labels
            .iter()
            .map(|l| present.binary_search(l).expect("present"))
            .collect();
        let xs = Self::standardize(&scaler.mean, &scaler.std, &x.select(Axis(0), rows));
        let k = present.len();
        let mut w = Array2::<f64>::zeros((dim, k));
        let mut b = Array1::<f64>::zeros(k);
        let mut opt = OptimizerState::new(AdamConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        })?;
        for _ in 0..cfg.epochs {
            let logits = xs.dot(&w) + &b;
            let (loss, grad) = supervised_loss(&logits, &local)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("downstream classifier loss".into()));
            }
            let gw = xs.t().dot(&grad);
            let gb = grad.sum_axis(Axis(0));
            let gw = gw.as_standard_layout();
            adam_step(
                &mut [
                    w.as_slice_mut().expect("standard"),
                    b.as_slice_mut().expect("contiguous"),
                ],
                &[
                    gw.as_slice().expect("standard"),
                    gb.as_slice().expect("contiguous"),
                ],
                &mut opt,
            )?;
        }
        Ok(LogisticRegression {
            mean: scaler.mean,
            std: scaler.std,
            classes,
            present,
            weight: w.iter().copied().collect(),
            bias: b.to_vec(),
        })
    }

    fn standardize(mean: &[f64], std: &[f64], x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                if std[j] > 0.0 {
                    *v = (*v - mean[j]) / std[j];
                }
            }
        }
        out
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let dim = self.mean.len();
        if x.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x.ncols(),
            });
        }
        let k = self.present.len();
        let w = Array2::from_shape_vec((dim, k), self.weight.clone()).map_err(|_| {
            Error::DimensionMismatch {
                expected: dim * k,
                found: self.weight.len(),
            }
        })?;
        let logits =
            Self::standardize(&self.mean, &self.std, x).dot(&w) + &Array1::from(self.bias.clone());
        let local = super::metrics::softmax_rows(&logits);
        let mut probs = Array2::zeros((x.nrows(), self.classes));
        for (j, &c) in self.present.iter().enumerate() {
            probs.column_mut(c).assign(&local.column(j));
        }
        Ok(probs)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

/// Fits on the labelled training rows and returns class probabilities for
/// every row.
pub fn fit_downstream_classifier(
    embeddings: &Array2<f64>,
    labels: &[Option<usize>],
    split: &[Split],
    classes: usize,
    cfg: &DownstreamConfig,
) -> Result<(LogisticRegression, Array2<f64>)> {
    if labels.len() != embeddings.nrows() || split.len() != embeddings.nrows() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.nrows(),
            found: labels.len().min(split.len()),
        });
    }
    let rows: Vec<usize> = (0..labels.len())
        .filter(|&i| split[i] == Split::Train && labels[i].is_some())
        .collect();
    if rows.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let y: Vec<usize> = rows.iter().map(|&i| labels[i].expect("filtered")).collect();
    let embeddings = embeddings.as_standard_layout().into_owned();
    let clf = LogisticRegression::fit(&embeddings, &y, &rows, classes, cfg)?;
    let probs = clf.predict_proba(&embeddings)?;
    Ok((clf, probs))
}
