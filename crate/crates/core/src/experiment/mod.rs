//! Splits, training loops, evaluation and the end-to-end benchmark.

pub mod dataset;
pub mod downstream;
pub mod metrics;
pub mod pipeline;
pub mod search;
pub mod split;
pub mod train;

pub use dataset::{build_dataset, Dataset, TrainingMode, Variant};
pub use downstream::{fit_downstream_classifier, DownstreamConfig, LogisticRegression};
pub use metrics::{argmax, argmax_rows, majority_vote, micro_f1, softmax_rows};
pub use pipeline::{
    evaluate_orn, run_pipeline, train_variant, Evaluation, ModelBundle, Results, SplitAudit,
    TrainedVariant,
};
pub use search::{
    hyperparameter_search, HyperparameterSpace, SearchResult, TrialParams, TrialRecord,
};
pub use split::{split_and_propagate, split_sizes, Split, SplitAssignment};
pub use train::{
    embed_all, predict_proba, random_walk_pairs, train_supervised, train_unsupervised, EpochRecord,
    SupervisedConfig, SupervisedRun, UnsupervisedConfig, UnsupervisedRun,
};
