//! End-to-end benchmark: inputs, segmentation, features, training and
//! test-set evaluation on the original edges. Each stage is a plain
//! function over files so the CLI subcommands reuse exactly the same code.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::dataset::{build_dataset, Dataset, TrainingMode, Variant};
use super::downstream::{fit_downstream_classifier, LogisticRegression};
use super::metrics::{argmax_rows, majority_vote, micro_f1};
use super::search::{hyperparameter_search, SearchResult, TrialParams};
use super::split::{split_and_propagate, Split, SplitAssignment};
use super::train::{
    embed_all, predict_proba, train_supervised, train_unsupervised, EpochRecord, SupervisedConfig,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{build_features, load_features, save_features, FeatureTable, Normalizer};
use crate::geometry::Point;
use crate::graph::{load_graph, save_dual, save_graph, to_dual, RoadGraph};
use crate::raster::load_manifest;
use crate::sage::l2_normalize_rows;
use crate::sage::{AdamConfig, Checkpoint, SageConfig};
use crate::segmentation::segment_pipeline;
use crate::synth::{generate_synthetic, load_labels, write_synthetic};
use crate::taxonomy::{aggregate_binary, HighwayClass, NUM_CLASSES};

pub const RESULTS_FORMAT: &str = "roadvis-results/1";
pub const BUNDLE_FORMAT: &str = "roadvis-bundle/1";

pub type Labels = BTreeMap<String, HighwayClass>;

/// Test-set scores on original edges after majority vote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub f1_8class: f64,
    pub f1_binary: f64,
    pub test_edges: usize,
}

/// Votes the node-level `probs` up to the labelled test edges of the
/// original network and scores them. Binary labels are derived after the
/// vote.
pub fn evaluate_orn(data: &Dataset, probs: &Array2<f64>) -> Result<Evaluation> {
    if probs.nrows() != data.len() || probs.ncols() != NUM_CLASSES {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: probs.nrows(),
        });
    }
    let test: Vec<usize> = (0..data.orn_ids.len())
        .filter(|&i| data.orn_split[i] == Split::Test && data.orn_labels[i].is_some())
        .collect();
    if test.is_empty() {
        return Err(Error::Validation("no labelled test edges".into()));
    }
    let groups: Vec<Vec<usize>> = test.iter().map(|&i| data.groups[i].clone()).collect();
    let voted = majority_vote(&groups, &argmax_rows(probs), probs)?;
    let truth: Vec<usize> = test
        .iter()
        .map(|&i| data.orn_labels[i].expect("filtered"))
        .collect();
    let bin = |v: &[usize]| {
        v.iter()
            .map(|&c| aggregate_binary(c))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Evaluation {
        f1_8class: micro_f1(&voted, &truth)?,
        f1_binary: micro_f1(&bin(&voted)?, &bin(&truth)?)?,
        test_edges: test.len(),
    })
}

/// Observes every supervised batch and records any node whose original
/// edge is not in the training split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub batches_checked: usize,
    pub nodes_checked: usize,
    /// Edge ids of validation or test nodes seen in a batch.
    pub leaked: Vec<String>,
}

/// A trained model with everything needed to embed or evaluate later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub variant: Variant,
    pub mode: TrainingMode,
    pub model: Checkpoint,
    pub normalizer: Normalizer,
    /// Split of the original edges used in training.
    pub split: BTreeMap<String, Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<LogisticRegression>,
    /// Embeddings are scaled to unit length.
    #[serde(default)]
    pub unit_embeddings: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_losses: Vec<f64>,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: ModelBundle = serde_json::from_str(&text)?;
        if b.format != BUNDLE_FORMAT {
            return Err(Error::Validation(format!(
                "unsupported bundle format {:?}",
                b.format
            )));
        }
        Ok(b)
    }

    /// Rebuilds the dataset with the stored split and normaliser.
    pub fn dataset(
        &self,
        graph: &RoadGraph,
        table: &FeatureTable,
        labels: &Labels,
    ) -> Result<Dataset> {
        let split = SplitAssignment {
            orn: self.split.clone(),
            srn: BTreeMap::new(),
        };
        build_dataset(
            self.variant,
            graph,
            table,
            labels,
            &split,
            Some(self.normalizer.clone()),
        )
    }

    /// Eval-mode embeddings of every node of `data`.
    pub fn embed(&self, data: &Dataset) -> Result<Array2<f64>> {
        let z = embed_all(&self.model.clone().into_model()?, data)?;
        Ok(if self.unit_embeddings {
            l2_normalize_rows(&z).0
        } else {
            z
        })
    }

    /// Class probabilities for every node of `data`.
    pub fn predict(&self, data: &Dataset) -> Result<Array2<f64>> {
        match (self.mode, &self.classifier) {
            (TrainingMode::Supervised, _) => {
                let all: Vec<usize> = (0..data.len()).collect();
                predict_proba(&self.model.clone().into_model()?, data, &all)
            }
            (TrainingMode::Unsupervised, Some(clf)) => clf.predict_proba(&self.embed(data)?),
            (TrainingMode::Unsupervised, None) => Err(Error::Config(
                "unsupervised bundle has no classifier".into(),
            )),
        }
    }

    pub fn evaluate(
        &self,
        graph: &RoadGraph,
        table: &FeatureTable,
        labels: &Labels,
    ) -> Result<Evaluation> {
        let data = self.dataset(graph, table, labels)?;
        evaluate_orn(&data, &self.predict(&data)?)
    }
}

pub struct TrainedVariant {
    pub bundle: ModelBundle,
    pub data: Dataset,
    /// Node-level class probabilities.
    pub probs: Array2<f64>,
}

/// Trains one variant for one replicate. `graph` is the ORN itself for the
/// ORN variant and its segmentation otherwise.
#[allow(clippy::too_many_arguments)]
pub fn train_variant(
    cfg: &PipelineConfig,
    config_hash: &str,
    orn: &RoadGraph,
    graph: &RoadGraph,
    table: &FeatureTable,
    labels: &Labels,
    variant: Variant,
    mode: TrainingMode,
    seed: u64,
    audit: &mut SplitAudit,
) -> Result<TrainedVariant> {
    if table.spec.include_vision != variant.vision() {
        return Err(Error::Config(format!(
            "variant {variant} {} vision features",
            if variant.vision() {
                "needs"
            } else {
                "must not have"
            }
        )));
    }
    let split = split_and_propagate(orn, graph, seed)?;
    let data = build_dataset(variant, graph, table, labels, &split, None)?;
    let mut bundle = ModelBundle {
        format: BUNDLE_FORMAT.into(),
        config_hash: config_hash.into(),
        seed,
        variant,
        mode,
        model: Checkpoint::from_model(&crate::sage::SageModel::new(
            cfg.sage.clone(),
            data.features.ncols(),
            None,
            seed,
        )?),
        normalizer: data.normalizer.clone(),
        split: split.orn.clone(),
        classifier: None,
        unit_embeddings: false,
        best_epoch: None,
        history: Vec::new(),
        epoch_losses: Vec::new(),
    };
    let probs = match mode {
        TrainingMode::Supervised => {
            let parent_split = |v: usize| {
                split
                    .orn
                    .get(&graph.edges()[data.dual.primal_index(v)].parent_id)
                    .copied()
            };
            let mut observe = |batch: &[usize]| {
                audit.batches_checked += 1;
                audit.nodes_checked += batch.len();
                for &v in batch {
                    if parent_split(v) != Some(Split::Train) {
                        audit.leaked.push(data.dual.ids()[v].clone());
                    }
                }
            };
            let run = train_supervised(
                &data,
                &cfg.sage,
                &cfg.adam,
                &cfg.supervised,
                seed,
                Some(&mut observe),
            )?;
            bundle.model = Checkpoint::from_model(&run.model);
            bundle.best_epoch = Some(run.best_epoch);
            bundle.history = run.history;
            let all: Vec<usize> = (0..data.len()).collect();
            predict_proba(&run.model, &data, &all)?
        }
        TrainingMode::Unsupervised => {
            let run = train_unsupervised(&data, &cfg.sage, &cfg.adam, &cfg.unsupervised, seed)?;
            let (clf, probs) = fit_downstream_classifier(
                &run.embeddings,
                &data.labels,
                &data.split,
                NUM_CLASSES,
                &cfg.downstream,
            )?;
            bundle.model = Checkpoint::from_model(&run.model);
            bundle.classifier = Some(clf);
            bundle.unit_embeddings = cfg.unsupervised.normalize_embeddings;
            bundle.epoch_losses = run.epoch_losses;
            probs
        }
    };
    Ok(TrainedVariant {
        bundle,
        data,
        probs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub f1_8class: f64,
    pub f1_binary: f64,
}

/// One table cell: mean over replicates plus the replicates themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub f1_8class: f64,
    pub f1_binary: f64,
    pub per_seed: Vec<SeedScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub f1_8class: f64,
    pub f1_binary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub mode: TrainingMode,
    pub variant: Variant,
    pub seed: u64,
    pub test: Evaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub orn_edges: usize,
    pub srn_edges: usize,
    pub orn_dual_edges: usize,
    pub srn_dual_edges: usize,
    /// Count of original edges per class, in class-index order.
    pub class_counts: Vec<usize>,
    pub feature_dims: BTreeMap<Variant, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub format: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Seed of the generated city, absent for loaded data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_seed: Option<u64>,
    pub dataset: DatasetSummary,
    pub cells: BTreeMap<TrainingMode, BTreeMap<Variant, Cell>>,
    /// Cell minus the ORN cell of the same mode.
    pub gains_over_orn: BTreeMap<TrainingMode, BTreeMap<Variant, Gain>>,
    pub split_audit: SplitAudit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchResult>,
    pub runs: Vec<RunLog>,
}

impl Results {
    pub fn cell(&self, mode: TrainingMode, variant: Variant) -> Option<&Cell> {
        self.cells.get(&mode)?.get(&variant)
    }
}

/// File locations of the raw inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub graph: PathBuf,
    pub labels: PathBuf,
    pub manifest: Option<PathBuf>,
}

/// Uses the configured files, or generates the synthetic city into
/// `out/synth`.
pub fn prepare_inputs(cfg: &PipelineConfig, out: &Path) -> Result<Inputs> {
    match (&cfg.graph, &cfg.labels) {
        (Some(graph), Some(labels)) => Ok(Inputs {
            graph: graph.clone(),
            labels: labels.clone(),
            manifest: cfg.raster_manifest.clone(),
        }),
        _ => {
            let city = generate_synthetic(&cfg.synth)?;
            let paths = write_synthetic(&city, &out.join("synth"))?;
            Ok(Inputs {
                graph: paths.graph,
                labels: paths.labels,
                manifest: Some(paths.manifest),
            })
        }
    }
}

/// Centre of the bounding box of the original network; shared by every
/// variant so the position features agree.
pub fn feature_origin(orn: &RoadGraph) -> Point {
    match orn.bounds() {
        Some((lo, hi)) => Point::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0),
        None => Point::new(0.0, 0.0),
    }
}

pub fn features_file(variant: Variant) -> String {
    format!("features_{}.jsonl", variant.as_str().replace('+', "_"))
}

pub fn bundle_file(mode: TrainingMode, variant: Variant, seed: u64) -> String {
    format!(
        "{}_{}_seed{seed}.json",
        mode.as_str(),
        variant.as_str().replace('+', "_")
    )
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_results(results: &Results, path: &Path) -> Result<()> {
    write_json(results, path)
}

pub fn load_results(path: &Path) -> Result<Results> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Trial objective: best node-level validation F1 of a supervised run.
pub fn search_objective(
    cfg: &PipelineConfig,
    orn: &RoadGraph,
    graph: &RoadGraph,
    table: &FeatureTable,
    labels: &Labels,
) -> impl Fn(&TrialParams, u64) -> Result<f64> + Sync {
    let split = split_and_propagate(orn, graph, cfg.search.seed);
    let data =
        split.and_then(|s| build_dataset(cfg.search.variant, graph, table, labels, &s, None));
    let sup = SupervisedConfig {
        epochs: cfg.search.epochs.unwrap_or(cfg.supervised.epochs),
        ..cfg.supervised.clone()
    };
    let (base_sage, base_adam) = (cfg.sage.clone(), cfg.adam.clone());
    move |p: &TrialParams, trial_seed: u64| {
        let data = data
            .as_ref()
            .map_err(|e| Error::Validation(e.to_string()))?;
        let sage = SageConfig {
            hidden_units: p.hidden_units,
            embedding_dim: p.embedding_dim,
            dropout: p.dropout,
            ..base_sage.clone()
        };
        let adam = AdamConfig {
            learning_rate: p.learning_rate,
            weight_decay: p.weight_decay,
            ..base_adam.clone()
        };
        let run = train_supervised(data, &sage, &adam, &sup, trial_seed, None)?;
        Ok(run.best_val_f1.unwrap_or(0.0))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Runs every stage and writes all artefacts plus `results.json` into
/// `out`. The returned results are identical to the file contents.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Results> {
    cfg.validate()?;
    let hash = cfg.hash();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let inputs = prepare_inputs(cfg, out)?;
    let orn = load_graph(&inputs.graph)?;
    let labels = load_labels(&inputs.labels)?;
    info!(
        "loaded {} edges, {} labels",
        orn.edges().len(),
        labels.len()
    );

    let srn_path = out.join("srn.jsonl");
    save_graph(&segment_pipeline(&orn, &cfg.segmentation)?, &srn_path)?;
    let srn = load_graph(&srn_path)?;
    let (orn_dual, srn_dual) = (to_dual(&orn), to_dual(&srn));
    save_dual(&orn_dual, out.join("orn_dual.json"))?;
    save_dual(&srn_dual, out.join("srn_dual.json"))?;
    info!("segmented into {} edges", srn.edges().len());

    let channels = match &inputs.manifest {
        Some(m) if cfg.variants.contains(&Variant::SrnVis) => Some(load_manifest(m)?),
        _ => None,
    };
    let origin = feature_origin(&orn);
    let mut tables = BTreeMap::new();
    for &variant in &cfg.variants {
        let g = if variant.segmented() { &srn } else { &orn };
        let spec = cfg.features.clone().with_vision(variant.vision());
        let path = out.join(features_file(variant));
        save_features(
            &build_features(g, &spec, channels.as_deref(), Some(origin))?,
            &path,
        )?;
        tables.insert(variant, load_features(&path)?);
    }

    let models_dir = out.join("models");
    fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    let mut audit = SplitAudit::default();
    let mut runs = Vec::new();
    for &mode in &cfg.modes {
        for &variant in &cfg.variants {
            let g = if variant.segmented() { &srn } else { &orn };
            for &seed in &cfg.seeds {
                let t = train_variant(
                    cfg,
                    &hash,
                    &orn,
                    g,
                    &tables[&variant],
                    &labels,
                    variant,
                    mode,
                    seed,
                    &mut audit,
                )?;
                let test = evaluate_orn(&t.data, &t.probs)?;
                info!(
                    "{mode} {variant} seed {seed}: 8-class {:.4} binary {:.4}",
                    test.f1_8class, test.f1_binary
                );
                t.bundle
                    .save(&models_dir.join(bundle_file(mode, variant, seed)))?;
                runs.push(RunLog {
                    mode,
                    variant,
                    seed,
                    test,
                    best_epoch: t.bundle.best_epoch,
                    history: t.bundle.history,
                    epoch_losses: t.bundle.epoch_losses,
                });
            }
        }
    }
    if !audit.leaked.is_empty() {
        return Err(Error::Validation(format!(
            "{} held-out nodes reached training batches",
            audit.leaked.len()
        )));
    }

    let mut cells: BTreeMap<TrainingMode, BTreeMap<Variant, Cell>> = BTreeMap::new();
    for &mode in &cfg.modes {
        for &variant in &cfg.variants {
            let per_seed: Vec<SeedScore> = runs
                .iter()
                .filter(|r| r.mode == mode && r.variant == variant)
                .map(|r| SeedScore {
                    seed: r.seed,
                    f1_8class: r.test.f1_8class,
                    f1_binary: r.test.f1_binary,
                })
                .collect();
            let cell = Cell {
                f1_8class: mean(per_seed.iter().map(|s| s.f1_8class)),
                f1_binary: mean(per_seed.iter().map(|s| s.f1_binary)),
                per_seed,
            };
            cells.entry(mode).or_default().insert(variant, cell);
        }
    }
    let mut gains_over_orn: BTreeMap<TrainingMode, BTreeMap<Variant, Gain>> = BTreeMap::new();
    for (mode, row) in &cells {
        if let Some(base) = row.get(&Variant::Orn) {
            for (variant, c) in row.iter().filter(|(v, _)| **v != Variant::Orn) {
                gains_over_orn.entry(*mode).or_default().insert(
                    *variant,
                    Gain {
                        f1_8class: c.f1_8class - base.f1_8class,
                        f1_binary: c.f1_binary - base.f1_binary,
                    },
                );
            }
        }
    }

    let search = if cfg.search.budget > 0 {
        let variant = cfg.search.variant;
        let table = match tables.get(&variant) {
            Some(t) => t.clone(),
            None => {
                let spec = cfg.features.clone().with_vision(variant.vision());
                let g = if variant.segmented() { &srn } else { &orn };
                build_features(g, &spec, channels.as_deref(), Some(origin))?
            }
        };
        let g = if variant.segmented() { &srn } else { &orn };
        let objective = search_objective(cfg, &orn, g, &table, &labels);
        Some(hyperparameter_search(
            &cfg.search.space,
            cfg.search.budget,
            cfg.search.seed,
            objective,
        )?)
    } else {
        None
    };

    let mut class_counts = vec![0; NUM_CLASSES];
    for e in orn.edges() {
        if let Some(c) = labels.get(&e.id) {
            class_counts[c.index()] += 1;
        }
    }
    let results = Results {
        format: RESULTS_FORMAT.into(),
        config_hash: hash,
        seeds: cfg.seeds.clone(),
        synth_seed: cfg.graph.is_none().then_some(cfg.synth.seed),
        dataset: DatasetSummary {
            orn_edges: orn.edges().len(),
            srn_edges: srn.edges().len(),
            orn_dual_edges: orn_dual.edges().len(),
            srn_dual_edges: srn_dual.edges().len(),
            class_counts,
            feature_dims: tables.iter().map(|(v, t)| (*v, t.dimension())).collect(),
        },
        cells,
        gains_over_orn,
        split_audit: audit,
        search,
        runs,
    };
    save_results(&results, &out.join("results.json"))?;
    Ok(results)
}
