//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadvis::sage::{
    full_neighborhood, supervised_loss, unsupervised_batch_loss, Activation, Aggregator, Dense,
    Mode, SageConfig, SageModel,
};

/// Undirected random graph as sorted adjacency lists without self-loops.
pub fn random_adjacency(n: usize, p: f64, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}

struct PlainDense {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl PlainDense {
    fn from(d: &Dense) -> Self {
        PlainDense {
            w: (0..d.weight.nrows())
                .map(|i| (0..d.weight.ncols()).map(|j| d.weight[[i, j]]).collect())
                .collect(),
            b: d.bias.iter().copied().collect(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (i, xi) in x.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += xi * self.w[i][j];
            }
        }
        out
    }
}

pub struct OracleTrace {
    /// Final-layer representation of every node.
    pub embeddings: Vec<Vec<f64>>,
    pub logits: Option<Vec<Vec<f64>>>,
    /// Every pre-activation that passes through a ReLU.
    pub relu_inputs: Vec<f64>,
}

/// Full-graph evaluation of the layer recurrence, node by node, with plain
/// loops and no shared code with the library's matrix implementation.
pub fn oracle_forward(model: &SageModel, x: &[Vec<f64>], adj: &[Vec<usize>]) -> OracleTrace {
    let cfg = model.config();
    let mut h: Vec<Vec<f64>> = x.to_vec();
    let mut relu_inputs = Vec::new();
    for k in 1..=cfg.layers {
        let layer = &model.params().layers[k - 1];
        let linear = PlainDense::from(&layer.linear);
        let pool = layer.pool.as_ref().map(PlainDense::from);
        let src: Vec<Vec<f64>> = match (&pool, cfg.aggregator) {
            (Some(p), Aggregator::MeanPooling) => h
                .iter()
                .map(|v| {
                    let pre = p.apply(v);
                    relu_inputs.extend(&pre);
                    pre.into_iter()
                        .map(|a| if a > 0.0 { a } else { 0.0 })
                        .collect()
                })
                .collect(),
            _ => h.clone(),
        };
        let act = if k == cfg.layers {
            cfg.output_activation
        } else {
            cfg.hidden_activation
        };
        let mut next = Vec::with_capacity(h.len());
        for v in 0..h.len() {
            let width = src[v].len();
            let mut agg = vec![0.0; width];
            for &u in &adj[v] {
                for j in 0..width {
                    agg[j] += src[u][j];
                }
            }
            if !adj[v].is_empty() {
                for a in &mut agg {
                    *a /= adj[v].len() as f64;
                }
            }
            let input: Vec<f64> = if cfg.self_concat {
                h[v].iter().chain(&agg).copied().collect()
            } else {
                agg
            };
            let pre = linear.apply(&input);
            let out = match act {
                Activation::Relu => {
                    relu_inputs.extend(&pre);
                    pre.into_iter()
                        .map(|a| if a > 0.0 { a } else { 0.0 })
                        .collect()
                }
                Activation::Identity => pre,
            };
            next.push(out);
        }
        h = next;
    }
    let logits = model.params().head.as_ref().map(|head| {
        let d = PlainDense::from(head);
        h.iter().map(|z| d.apply(z)).collect()
    });
    OracleTrace {
        embeddings: h,
        logits,
        relu_inputs,
    }
}

pub struct GradCase {
    pub model: SageModel,
    pub features: Vec<Vec<f64>>,
    pub adj: Vec<Vec<usize>>,
    pub batch: Vec<usize>,
    pub labels: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    pub negatives: Vec<Vec<usize>>,
}

/// Ranges for a random gradient-check model. `None` picks at random.
pub struct GradShape {
    pub layers: (usize, usize),
    pub max_hidden: usize,
    pub max_embedding: usize,
    pub max_input: usize,
    pub aggregator: Option<Aggregator>,
    pub self_concat: Option<bool>,
    pub max_params: usize,
}

impl Default for GradShape {
    fn default() -> Self {
        GradShape {
            layers: (1, 2),
            max_hidden: 4,
            max_embedding: 3,
            max_input: 3,
            aggregator: None,
            self_concat: None,
            max_params: 200,
        }
    }
}

/// A random model of at most 200 parameters on a small random graph, away
/// from ReLU kinks so central differences are meaningful.
pub fn random_grad_case(seed: u64) -> GradCase {
    random_grad_case_with(seed, &GradShape::default())
}

pub fn random_grad_case_with(seed: u64, shape: &GradShape) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(3..=7);
        let d_in = rng.random_range(1..=shape.max_input);
        let classes = rng.random_range(2..=3);
        let flip_agg = if rng.random::<bool>() {
            Aggregator::MeanPooling
        } else {
            Aggregator::Mean
        };
        let flip_concat = rng.random::<bool>();
        let cfg = SageConfig {
            layers: rng.random_range(shape.layers.0..=shape.layers.1),
            hidden_units: rng.random_range(1..=shape.max_hidden),
            embedding_dim: rng.random_range(1..=shape.max_embedding),
            aggregator: shape.aggregator.unwrap_or(flip_agg),
            self_concat: shape.self_concat.unwrap_or(flip_concat),
            fanouts: vec![],
            ..SageConfig::default()
        };
        let cfg = SageConfig {
            fanouts: vec![n; cfg.layers],
            ..cfg
        };
        let model = SageModel::new(cfg, d_in, Some(classes), rng.random()).unwrap();
        if model.params().num_parameters() > shape.max_params {
            continue;
        }
        // Perturb the zero biases so they carry nontrivial gradients too.
        let mut model = model;
        for s in model.params_mut().slices_mut() {
            for v in s.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let adj = random_adjacency(n, 0.5, &mut rng);
        let features = random_matrix(n, d_in, &mut rng);
        let trace = oracle_forward(&model, &features, &adj);
        if trace.relu_inputs.iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let batch: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.7).collect();
        if batch.len() < 2 {
            continue;
        }
        let labels = batch.iter().map(|_| rng.random_range(0..classes)).collect();
        let b = batch.len();
        let pairs = (0..b).map(|i| (i, (i + 1) % b)).collect();
        let negatives = (0..b)
            .map(|_| (0..2).map(|_| rng.random_range(0..b)).collect())
            .collect();
        return GradCase {
            model,
            features,
            adj,
            batch,
            labels,
            pairs,
            negatives,
        };
    }
}

impl GradCase {
    pub fn loss(&self, model: &SageModel) -> f64 {
        let x = to_array(&self.features);
        let blocks = full_neighborhood(&self.adj, &self.batch, model.config().layers);
        let (out, _) = model.forward(x.view(), &blocks, Mode::Eval).unwrap();
        let (ce, _) = supervised_loss(out.logits.as_ref().unwrap(), &self.labels).unwrap();
        let (un, _) =
            unsupervised_batch_loss(&out.embeddings, &self.pairs, &self.negatives).unwrap();
        ce + un
    }

    pub fn analytic(&self) -> Vec<f64> {
        let x = to_array(&self.features);
        let blocks = full_neighborhood(&self.adj, &self.batch, self.model.config().layers);
        let (out, cache) = self.model.forward(x.view(), &blocks, Mode::Eval).unwrap();
        let (_, dl) = supervised_loss(out.logits.as_ref().unwrap(), &self.labels).unwrap();
        let (_, dz) =
            unsupervised_batch_loss(&out.embeddings, &self.pairs, &self.negatives).unwrap();
        self.model
            .backward(&cache, Some(&dz), Some(&dl))
            .unwrap()
            .flatten()
    }

    /// Largest relative error between analytic and central-difference
    /// gradients over every parameter coordinate.
    pub fn max_relative_error(&self, h: f64) -> f64 {
        let analytic = self.analytic();
        let mut model = self.model.clone();
        let sizes: Vec<usize> = model.params().slices().iter().map(|s| s.len()).collect();
        let mut worst = 0.0f64;
        let mut flat = 0;
        for (t, &len) in sizes.iter().enumerate() {
            for i in 0..len {
                let orig = model.params().slices()[t][i];
                model.params_mut().slices_mut()[t][i] = orig + h;
                let up = self.loss(&model);
                model.params_mut().slices_mut()[t][i] = orig - h;
                let down = self.loss(&model);
                model.params_mut().slices_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[flat];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
                flat += 1;
            }
        }
        worst
    }
}
