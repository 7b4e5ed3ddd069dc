use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Activation, Aggregator, SageConfig};
use super::sampling::SampledBlocks;
use crate::error::{Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Affine map `x W + b` applied to row vectors; `weight` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
        let weight = Array2::from_shape_simple_fn((input, output), || dist.sample(rng));
        Dense {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    fn slices(&self) -> [&[f64]; 2] {
        [
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("contiguous"),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    /// Present only for the mean-pooling aggregator.
    pub pool: Option<Dense>,
    pub linear: Dense,
}

/// Every trainable tensor of a model. Gradients share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<SageLayer>,
    /// Optional classification head on top of the embedding.
    pub head: Option<Dense>,
}

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.input_dim(), d.output_dim());
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| SageLayer {
                    pool: l.pool.as_ref().map(z),
                    linear: z(&l.linear),
                })
                .collect(),
            head: self.head.as_ref().map(z),
        }
    }

    fn denses(&self) -> Vec<&Dense> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Some(p) = &l.pool {
                out.push(p);
            }
            out.push(&l.linear);
        }
        if let Some(h) = &self.head {
            out.push(h);
        }
        out
    }

    /// Flat views in a fixed order: per layer pool weight and bias, then
    /// linear weight and bias; the head last.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.denses().into_iter().flat_map(|d| d.slices()).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Some(p) = &mut l.pool {
                out.extend(p.slices_mut());
            }
            out.extend(l.linear.slices_mut());
        }
        if let Some(h) = &mut self.head {
            out.extend(h.slices_mut());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

pub enum Mode<'a> {
    /// Dropout active, masks drawn from the given generator.
    Train(&'a mut dyn RngCore),
    Eval,
}

#[derive(Debug, Clone)]
pub struct Output {
    /// One row per batch node, in `blocks.batch()` order.
    pub embeddings: Array2<f64>,
    pub logits: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    mask: Option<Array2<f64>>,
    pool_pre: Option<Array2<f64>>,
    concat: Array2<f64>,
    pre: Array2<f64>,
}

/// Activations recorded by [`SageModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    adj: Vec<Vec<Vec<usize>>>,
    layers: Vec<LayerCache>,
    embeddings: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct SageModel {
    config: SageConfig,
    input_dim: usize,
    params: Parameters,
    generation: u64,
}

fn mean_rows(src: &Array2<f64>, adj: &[Vec<usize>]) -> Array2<f64> {
    let mut m = Array2::zeros((adj.len(), src.ncols()));
    for (i, nbrs) in adj.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let mut row = m.row_mut(i);
        for &j in nbrs {
            row += &src.row(j);
        }
        row /= nbrs.len() as f64;
    }
    m
}

/// Aggregates a set of neighbour vectors of width `dim`; `pool` is required
/// for [`Aggregator::MeanPooling`] and ignored otherwise.
pub fn aggregate(
    neighbors: &[&[f64]],
    dim: usize,
    aggregator: Aggregator,
    pool: Option<&Dense>,
) -> Result<Vec<f64>> {
    for n in neighbors {
        if n.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: n.len(),
            });
        }
    }
    let rows = Array2::from_shape_fn((neighbors.len(), dim), |(i, j)| neighbors[i][j]);
    let src = match aggregator {
        Aggregator::Mean => rows,
        Aggregator::MeanPooling => {
            let pool =
                pool.ok_or_else(|| Error::Config("mean-pooling needs pooling parameters".into()))?;
            if pool.input_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: pool.input_dim(),
                    found: dim,
                });
            }
            pool.apply(&rows.view()).mapv(|v| v.max(0.0))
        }
    };
    let adj = vec![(0..neighbors.len()).collect::<Vec<_>>()];
    Ok(mean_rows(&src, &adj).row(0).to_vec())
}

impl SageModel {
    /// Glorot-initialised model. `num_classes` adds a linear head mapping the
    /// embedding to class logits.
    pub fn new(
        config: SageConfig,
        input_dim: usize,
        num_classes: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers);
        let mut d_in = input_dim;
        for k in 1..=config.layers {
            let d_out = config.width(k);
            let pool = match config.aggregator {
                Aggregator::MeanPooling => Some(Dense::glorot(d_in, d_in, &mut rng)),
                Aggregator::Mean => None,
            };
            let concat = if config.self_concat { 2 * d_in } else { d_in };
            layers.push(SageLayer {
                pool,
                linear: Dense::glorot(concat, d_out, &mut rng),
            });
            d_in = d_out;
        }
        let head = match num_classes {
            Some(0) => {
                return Err(Error::Config(
                    "classification head needs at least one class".into(),
                ))
            }
            Some(c) => Some(Dense::glorot(config.embedding_dim, c, &mut rng)),
            None => None,
        };
        Self::from_parameters(config, input_dim, Parameters { layers, head })
    }

    /// Wraps explicit parameters after checking that shapes chain.
    pub fn from_parameters(
        config: SageConfig,
        input_dim: usize,
        params: Parameters,
    ) -> Result<Self> {
        config.validate()?;
        if params.layers.len() != config.layers {
            return Err(Error::DimensionMismatch {
                expected: config.layers,
                found: params.layers.len(),
            });
        }
        let check = |expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, found })
            }
        };
        let mut d_in = input_dim;
        let mut params = params;
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let k = i + 1;
            match (&mut layer.pool, config.aggregator) {
                (Some(p), Aggregator::MeanPooling) => {
                    check(d_in, p.input_dim())?;
                    check(d_in, p.output_dim())?;
                    check(d_in, p.bias.len())?;
                    p.weight = standard(std::mem::take(&mut p.weight));
                }
                (None, Aggregator::Mean) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "layer {k} pooling parameters do not match aggregator"
                    )))
                }
            }
            let concat = if config.self_concat { 2 * d_in } else { d_in };
            check(concat, layer.linear.input_dim())?;
            check(config.width(k), layer.linear.output_dim())?;
            check(config.width(k), layer.linear.bias.len())?;
            layer.linear.weight = standard(std::mem::take(&mut layer.linear.weight));
            d_in = config.width(k);
        }
        if let Some(h) = &mut params.head {
            check(config.embedding_dim, h.input_dim())?;
            check(h.output_dim(), h.bias.len())?;
            h.weight = standard(std::mem::take(&mut h.weight));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(SageModel {
            config,
            input_dim,
            params,
            generation: next_generation(),
        })
    }

    pub fn config(&self) -> &SageConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.params.head.as_ref().map(Dense::output_dim)
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    /// Mutable access; invalidates every outstanding [`ForwardCache`].
    pub fn params_mut(&mut self) -> &mut Parameters {
        self.generation = next_generation();
        &mut self.params
    }

    /// Runs all `K` layers over the sampled computation graph. `features`
    /// holds one row per graph node; rows are gathered via `blocks`.
    pub fn forward(
        &self,
        features: ArrayView2<f64>,
        blocks: &SampledBlocks,
        mut mode: Mode<'_>,
    ) -> Result<(Output, ForwardCache)> {
        if features.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: features.ncols(),
            });
        }
        if blocks.depth() != self.config.layers {
            return Err(Error::DimensionMismatch {
                expected: self.config.layers,
                found: blocks.depth(),
            });
        }
        if let Some(&bad) = blocks.inputs().iter().find(|&&v| v >= features.nrows()) {
            return Err(Error::Validation(format!(
                "node index {bad} beyond {} feature rows",
                features.nrows()
            )));
        }
        let p = self.config.dropout;
        let mut h = features.select(Axis(0), blocks.inputs());
        let mut caches = Vec::with_capacity(self.config.layers);
        for k in 1..=self.config.layers {
            let layer = &self.params.layers[k - 1];
            let adj = &blocks.adj[k - 1];
            let n_out = blocks.nodes[k].len();
            let (x, mask) = match &mut mode {
                Mode::Train(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let mask = Array2::from_shape_simple_fn(h.dim(), || {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            keep
                        }
                    });
                    (&h * &mask, Some(mask))
                }
                _ => (h, None),
            };
            let pool_pre = layer.pool.as_ref().map(|pool| pool.apply(&x.view()));
            let m = match &pool_pre {
                Some(pre) => mean_rows(&pre.mapv(|v| v.max(0.0)), adj),
                None => mean_rows(&x, adj),
            };
            let concat = if self.config.self_concat {
                concatenate![Axis(1), x.slice(s![..n_out, ..]), m]
            } else {
                m
            };
            let pre = layer.linear.apply(&concat.view());
            let act = self.config.activation(k);
            h = pre.mapv(|v| act.apply(v));
            caches.push(LayerCache {
                input: x,
                mask,
                pool_pre,
                concat,
                pre,
            });
        }
        let logits = self.params.head.as_ref().map(|head| head.apply(&h.view()));
        if !h.iter().all(|v| v.is_finite())
            || logits
                .as_ref()
                .is_some_and(|l| !l.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite("forward activations".into()));
        }
        let cache = ForwardCache {
            generation: self.generation,
            adj: blocks.adj.clone(),
            layers: caches,
            embeddings: h.clone(),
        };
        Ok((
            Output {
                embeddings: h,
                logits,
            },
            cache,
        ))
    }

    /// Eval-mode embeddings for the batch.
    pub fn embed(&self, features: ArrayView2<f64>, blocks: &SampledBlocks) -> Result<Array2<f64>> {
        Ok(self.forward(features, blocks, Mode::Eval)?.0.embeddings)
    }

    /// Reverse-mode gradients of a scalar loss given its gradient with respect
    /// to the embeddings, the logits, or both.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_embeddings: Option<&Array2<f64>>,
        grad_logits: Option<&Array2<f64>>,
    ) -> Result<Parameters> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let shape = cache.embeddings.dim();
        let mut grads = self.params.zeros_like();
        let mut dh = match grad_embeddings {
            Some(g) if g.dim() != shape => {
                return Err(Error::DimensionMismatch {
                    expected: shape.0 * shape.1,
                    found: g.len(),
                });
            }
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        };
        if let Some(gl) = grad_logits {
            let head = self
                .params
                .head
                .as_ref()
                .ok_or_else(|| Error::Config("model has no classification head".into()))?;
            if gl.dim() != (shape.0, head.output_dim()) {
                return Err(Error::DimensionMismatch {
                    expected: shape.0 * head.output_dim(),
                    found: gl.len(),
                });
            }
            let gh = grads.head.as_mut().expect("head gradient mirrors head");
            gh.weight = standard(cache.embeddings.t().dot(gl));
            gh.bias = gl.sum_axis(Axis(0));
            dh += &gl.dot(&head.weight.t());
        }
        for k in (1..=self.config.layers).rev() {
            let lc = &cache.layers[k - 1];
            let layer = &self.params.layers[k - 1];
            let g = &mut grads.layers[k - 1];
            let act: Activation = self.config.activation(k);
            let dz = dh * &lc.pre.mapv(|v| act.derivative(v));
            g.linear.weight = standard(lc.concat.t().dot(&dz));
            g.linear.bias = dz.sum_axis(Axis(0));
            let dc = dz.dot(&layer.linear.weight.t());
            let (n_in, d) = lc.input.dim();
            let n_out = dz.nrows();
            let mut dx = Array2::zeros((n_in, d));
            let dm = if self.config.self_concat {
                dx.slice_mut(s![..n_out, ..]).assign(&dc.slice(s![.., ..d]));
                dc.slice(s![.., d..])
            } else {
                dc.view()
            };
            let mut dsrc = Array2::<f64>::zeros((n_in, dm.ncols()));
            for (i, nbrs) in cache.adj[k - 1].iter().enumerate() {
                if nbrs.is_empty() {
                    continue;
                }
                let w = 1.0 / nbrs.len() as f64;
                for &j in nbrs {
                    dsrc.row_mut(j).scaled_add(w, &dm.row(i));
                }
            }
            match (&layer.pool, &lc.pool_pre) {
                (Some(pool), Some(pre)) => {
                    let dpre = dsrc * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let gp = g.pool.as_mut().expect("pool gradient mirrors pool");
                    gp.weight = standard(lc.input.t().dot(&dpre));
                    gp.bias = dpre.sum_axis(Axis(0));
                    dx += &dpre.dot(&pool.weight.t());
                }
                _ => dx += &dsrc,
            }
            if let Some(mask) = &lc.mask {
                dx *= mask;
            }
            dh = dx;
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sage::sampling::full_neighborhood;
    use ndarray::array;

    fn identity_model(dim: usize) -> SageModel {
        let cfg = SageConfig {
            layers: 1,
            embedding_dim: dim,
            aggregator: Aggregator::Mean,
            fanouts: vec![10],
            self_concat: false,
            output_activation: Activation::Identity,
            ..SageConfig::default()
        };
        let params = Parameters {
            layers: vec![SageLayer {
                pool: None,
                linear: Dense {
                    weight: Array2::eye(dim),
                    bias: Array1::zeros(dim),
                },
            }],
            head: None,
        };
        SageModel::from_parameters(cfg, dim, params).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let a = [1.0, 3.0];
        let b = [3.0, 5.0];
        assert_eq!(
            aggregate(&[&a, &b], 2, Aggregator::Mean, None).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            aggregate(&[&a], 2, Aggregator::Mean, None).unwrap(),
            vec![1.0, 3.0]
        );
        assert_eq!(
            aggregate(&[], 2, Aggregator::Mean, None).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(matches!(
            aggregate(&[&a, &[1.0][..]], 2, Aggregator::Mean, None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pooling_aggregate_applies_relu_before_mean() {
        let pool = Dense {
            weight: array![[1.0, 0.0], [0.0, -1.0]],
            bias: array![0.0, 0.0],
        };
        let a = [1.0, 3.0];
        let b = [3.0, -5.0];
        let out = aggregate(&[&a, &b], 2, Aggregator::MeanPooling, Some(&pool)).unwrap();
        assert_eq!(out, vec![2.0, 2.5]);
    }

    #[test]
    fn identity_layer_reduces_to_mean() {
        let model = identity_model(2);
        let adj = vec![vec![1, 2], vec![0], vec![0]];
        let x = array![[0.0, 0.0], [1.0, 3.0], [3.0, 5.0]];
        let blocks = full_neighborhood(&adj, &[0], 1);
        let z = model.embed(x.view(), &blocks).unwrap();
        assert_eq!(z, array![[2.0, 4.0]]);
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let model = SageModel::new(SageConfig::default(), 3, Some(8), 0).unwrap();
        let adj = vec![vec![1], vec![0, 2], vec![1]];
        let x = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0], [-2.0, 0.0, 1.0]];
        let blocks = full_neighborhood(&adj, &[0, 1, 2], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, _) = model
            .forward(x.view(), &blocks, Mode::Train(&mut rng))
            .unwrap();
        let (b, _) = model.forward(x.view(), &blocks, Mode::Eval).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn dropout_changes_training_output_only() {
        let cfg = SageConfig {
            dropout: 0.5,
            ..SageConfig::default()
        };
        let model = SageModel::new(cfg, 3, None, 0).unwrap();
        let adj = vec![vec![1], vec![0, 2], vec![1]];
        let x = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0], [-2.0, 0.0, 1.0]];
        let blocks = full_neighborhood(&adj, &[0, 1, 2], 2);
        let e1 = model.embed(x.view(), &blocks).unwrap();
        let e2 = model.embed(x.view(), &blocks).unwrap();
        assert_eq!(e1, e2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, _) = model
            .forward(x.view(), &blocks, Mode::Train(&mut rng))
            .unwrap();
        assert_ne!(t.embeddings, e1);
    }

    #[test]
    fn shapes_chain_and_mismatch_rejected() {
        let model = SageModel::new(SageConfig::default(), 5, None, 1).unwrap();
        assert_eq!(model.params().layers[0].linear.weight.dim(), (10, 64));
        assert_eq!(model.params().layers[1].linear.weight.dim(), (128, 32));
        assert_eq!(
            model.params().layers[1].pool.as_ref().unwrap().weight.dim(),
            (64, 64)
        );
        let adj = vec![vec![]];
        let blocks = full_neighborhood(&adj, &[0], 2);
        let x = Array2::<f64>::zeros((1, 4));
        assert!(matches!(
            model.forward(x.view(), &blocks, Mode::Eval),
            Err(Error::DimensionMismatch {
                expected: 5,
                found: 4
            })
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let model = SageModel::new(SageConfig::default(), 3, Some(4), 2).unwrap();
        let adj = vec![vec![1], vec![0, 2], vec![1]];
        let x = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0], [-2.0, 0.0, 1.0]];
        let blocks = full_neighborhood(&adj, &[0, 2], 2);
        let (out, cache) = model.forward(x.view(), &blocks, Mode::Eval).unwrap();
        let g = model
            .backward(
                &cache,
                Some(&Array2::zeros(out.embeddings.dim())),
                Some(&Array2::zeros((2, 4))),
            )
            .unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut model = SageModel::new(SageConfig::default(), 3, None, 2).unwrap();
        let adj = vec![vec![1], vec![0]];
        let x = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]];
        let blocks = full_neighborhood(&adj, &[0], 2);
        let (out, cache) = model.forward(x.view(), &blocks, Mode::Eval).unwrap();
        model.params_mut().layers[0].linear.bias[0] += 1.0;
        let grad = Array2::ones(out.embeddings.dim());
        assert!(matches!(
            model.backward(&cache, Some(&grad), None),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn isolated_node_uses_zero_aggregate() {
        let model = identity_model(2);
        let adj: Vec<Vec<usize>> = vec![vec![]];
        let x = array![[4.0, -1.0]];
        let blocks = full_neighborhood(&adj, &[0], 1);
        let z = model.embed(x.view(), &blocks).unwrap();
        assert_eq!(z, array![[0.0, 0.0]]);
    }
}
