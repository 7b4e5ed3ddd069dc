use std::collections::HashMap;

use log::debug;
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::metrics::{argmax_rows, micro_f1, softmax_rows};
use super::split::Split;
use crate::error::{Error, Result};
use crate::sage::{
    full_neighborhood, l2_normalize_backward, l2_normalize_rows, sample_neighborhood,
    supervised_loss, unsupervised_batch_loss, AdamConfig, Mode, OptimizerState, SageConfig,
    SageModel,
};
use crate::taxonomy::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            epochs: 100,
            batch_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnsupervisedConfig {
    pub epochs: usize,
    /// Positive pairs per minibatch.
    pub batch_size: usize,
    /// Nodes per random walk, start included.
    pub walk_length: usize,
    pub walks_per_node: usize,
    /// Uniform negative samples per positive pair.
    pub negatives: usize,
    /// Scale embeddings to unit length before the loss, and in the
    /// returned embeddings.
    pub normalize_embeddings: bool,
    /// Overrides the optimizer learning rate for this mode.
    pub learning_rate: Option<f64>,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        UnsupervisedConfig {
            epochs: 20,
            batch_size: 1024,
            walk_length: 3,
            walks_per_node: 1,
            negatives: 5,
            normalize_embeddings: true,
            learning_rate: None,
        }
    }
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Config(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("epochs", self.epochs)?;
        check_positive("batch_size", self.batch_size)
    }
}

impl UnsupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("epochs", self.epochs)?;
        check_positive("batch_size", self.batch_size)?;
        check_positive("walks_per_node", self.walks_per_node)?;
        check_positive("negatives", self.negatives)?;
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SupervisedRun {
    /// Parameters from the epoch with the best validation score.
    pub model: SageModel,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the snapshot.
    pub best_epoch: usize,
    pub best_val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct UnsupervisedRun {
    pub model: SageModel,
    pub epoch_losses: Vec<f64>,
    /// One row per dual node.
    pub embeddings: Array2<f64>,
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Class probabilities for `nodes` with full neighbourhoods.
pub fn predict_proba(model: &SageModel, data: &Dataset, nodes: &[usize]) -> Result<Array2<f64>> {
    let blocks = full_neighborhood(&data.dual, nodes, model.config().layers);
    let (out, _) = model.forward(data.features.view(), &blocks, Mode::Eval)?;
    let logits = out
        .logits
        .ok_or_else(|| Error::Config("model has no classification head".into()))?;
    Ok(softmax_rows(&logits))
}

/// Eval-mode embeddings of every node.
pub fn embed_all(model: &SageModel, data: &Dataset) -> Result<Array2<f64>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let blocks = full_neighborhood(&data.dual, &all, model.config().layers);
    model.embed(data.features.view(), &blocks)
}

fn node_f1(model: &SageModel, data: &Dataset, nodes: &[usize]) -> Result<f64> {
    let preds = argmax_rows(&predict_proba(model, data, nodes)?);
    let labels: Vec<usize> = nodes
        .iter()
        .map(|&v| data.labels[v].expect("labeled node"))
        .collect();
    micro_f1(&preds, &labels)
}

/// Callback that sees the node indices of every training batch.
pub type BatchObserver<'a> = &'a mut dyn FnMut(&[usize]);

/// Minibatch cross-entropy training on labelled train nodes. After every
/// epoch the node-level validation micro-F1 is measured and the best
/// snapshot kept. `on_batch` sees the node indices of every batch.
pub fn train_supervised(
    data: &Dataset,
    sage: &SageConfig,
    adam: &AdamConfig,
    cfg: &SupervisedConfig,
    seed: u64,
    mut on_batch: Option<BatchObserver<'_>>,
) -> Result<SupervisedRun> {
    cfg.validate()?;
    let mut train = data.labeled_in(Split::Train);
    if train.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let val = data.labeled_in(Split::Val);
    let mut model = SageModel::new(sage.clone(), data.features.ncols(), Some(NUM_CLASSES), seed)?;
    let mut opt = OptimizerState::new(adam.clone())?;
    let mut rng = training_rng(seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, SageModel)> = None;
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train.chunks(cfg.batch_size) {
            if let Some(&leak) = batch.iter().find(|&&v| data.split[v] != Split::Train) {
                return Err(Error::Validation(format!(
                    "{} node {} entered a training batch",
                    data.split[leak],
                    data.dual.ids()[leak]
                )));
            }
            if let Some(f) = on_batch.as_mut() {
                f(batch);
            }
            let blocks = sample_neighborhood(&data.dual, batch, &sage.fanouts, &mut rng);
            let (out, cache) =
                model.forward(data.features.view(), &blocks, Mode::Train(&mut rng))?;
            let labels: Vec<usize> = blocks
                .batch()
                .iter()
                .map(|&v| data.labels[v].expect("labeled"))
                .collect();
            let (loss, grad) = supervised_loss(out.logits.as_ref().expect("head"), &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "supervised loss at epoch {epoch}"
                )));
            }
            let grads = model.backward(&cache, None, Some(&grad))?;
            model.apply_adam(&grads, &mut opt)?;
            total += loss * batch.len() as f64;
        }
        let loss = total / train.len() as f64;
        let val_f1 = if val.is_empty() {
            None
        } else {
            Some(node_f1(&model, data, &val)?)
        };
        debug!(
            "{} epoch {epoch}: loss {loss:.4} val {:?}",
            data.variant, val_f1
        );
        let score = val_f1.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => score > *b || (val_f1.is_none() && epoch == cfg.epochs),
        };
        if improved {
            best = Some((score, epoch, model.clone()));
        }
        history.push(EpochRecord {
            epoch,
            loss,
            val_f1,
        });
    }
    let (score, best_epoch, model) = best.expect("at least one epoch");
    Ok(SupervisedRun {
        model,
        history,
        best_epoch,
        best_val_f1: score.is_finite().then_some(score),
    })
}

/// Positive pairs `(start, visited)` from uniform random walks.
pub fn random_walk_pairs<R: Rng + ?Sized>(
    data: &Dataset,
    walk_length: usize,
    walks_per_node: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for u in 0..data.len() {
        for _ in 0..walks_per_node {
            let mut cur = u;
            for _ in 1..walk_length {
                match data.dual.neighbors(cur).choose(rng) {
                    Some(&next) => cur = next,
                    None => break,
                }
                if cur != u {
                    pairs.push((u, cur));
                }
            }
        }
    }
    pairs
}

/// Negative-sampling training over the whole dual graph. Labels are never
/// read; embeddings for every node are returned.
pub fn train_unsupervised(
    data: &Dataset,
    sage: &SageConfig,
    adam: &AdamConfig,
    cfg: &UnsupervisedConfig,
    seed: u64,
) -> Result<UnsupervisedRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut model = SageModel::new(sage.clone(), data.features.ncols(), None, seed)?;
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate.unwrap_or(adam.learning_rate),
        ..adam.clone()
    };
    let mut opt = OptimizerState::new(adam)?;
    let mut rng = training_rng(seed);
    let n = data.len();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut pairs = random_walk_pairs(data, cfg.walk_length, cfg.walks_per_node, &mut rng);
        if pairs.is_empty() {
            return Err(Error::Degenerate("dual graph has no edges to walk".into()));
        }
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let negatives: Vec<Vec<usize>> = batch
                .iter()
                .map(|_| (0..cfg.negatives).map(|_| rng.random_range(0..n)).collect())
                .collect();
            let mut row_of: HashMap<usize, usize> = HashMap::new();
            let mut nodes = Vec::new();
            let mut row = |v: usize| {
                *row_of.entry(v).or_insert_with(|| {
                    nodes.push(v);
                    nodes.len() - 1
                })
            };
            let local_pairs: Vec<(usize, usize)> =
                batch.iter().map(|&(u, v)| (row(u), row(v))).collect();
            let local_negs: Vec<Vec<usize>> = negatives
                .iter()
                .map(|q| q.iter().map(|&v| row(v)).collect())
                .collect();
            let blocks = sample_neighborhood(&data.dual, &nodes, &sage.fanouts, &mut rng);
            let (out, cache) =
                model.forward(data.features.view(), &blocks, Mode::Train(&mut rng))?;
            let (loss, grad) = if cfg.normalize_embeddings {
                let (unit, norms) = l2_normalize_rows(&out.embeddings);
                let (loss, grad) = unsupervised_batch_loss(&unit, &local_pairs, &local_negs)?;
                (loss, l2_normalize_backward(&unit, &norms, &grad))
            } else {
                unsupervised_batch_loss(&out.embeddings, &local_pairs, &local_negs)?
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "unsupervised loss at epoch {epoch}"
                )));
            }
            let grads = model.backward(&cache, Some(&grad), None)?;
            model.apply_adam(&grads, &mut opt)?;
            total += loss * batch.len() as f64;
        }
        let mean = total / pairs.len() as f64;
        debug!(
            "{} unsupervised epoch {epoch}: loss {mean:.4}",
            data.variant
        );
        epoch_losses.push(mean);
    }
    let mut embeddings = embed_all(&model, data)?;
    if cfg.normalize_embeddings {
        embeddings = l2_normalize_rows(&embeddings).0;
    }
    if !embeddings.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }
    Ok(UnsupervisedRun {
        model,
        epoch_losses,
        embeddings,
    })
}
