use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::split::{Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::features::{FeatureTable, Normalizer};
use crate::graph::{to_dual, DualGraph, RoadGraph};
use crate::taxonomy::HighwayClass;

/// The three dataset variants compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "orn")]
    Orn,
    #[serde(rename = "srn")]
    Srn,
    #[serde(rename = "srn+vis")]
    SrnVis,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Orn, Variant::Srn, Variant::SrnVis];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Orn => "orn",
            Variant::Srn => "srn",
            Variant::SrnVis => "srn+vis",
        }
    }

    pub fn segmented(self) -> bool {
        self != Variant::Orn
    }

    pub fn vision(self) -> bool {
        self == Variant::SrnVis
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "orn" => Ok(Variant::Orn),
            "srn" => Ok(Variant::Srn),
            "srn+vis" | "srn_vis" | "srnvis" => Ok(Variant::SrnVis),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    Supervised,
    Unsupervised,
}

impl TrainingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::Supervised => "supervised",
            TrainingMode::Unsupervised => "unsupervised",
        }
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(TrainingMode::Supervised),
            "unsupervised" => Ok(TrainingMode::Unsupervised),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

/// Everything a training run needs, indexed by dual-graph node.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub variant: Variant,
    pub dual: DualGraph,
    /// Normalised features, one row per dual node.
    pub features: Array2<f64>,
    pub normalizer: Normalizer,
    /// 8-class label of each node, inherited from its original edge.
    pub labels: Vec<Option<usize>>,
    pub split: Vec<Split>,
    /// Original edge ids in sorted order.
    pub orn_ids: Vec<String>,
    pub orn_labels: Vec<Option<usize>>,
    pub orn_split: Vec<Split>,
    /// Dual nodes descending from each original edge.
    pub groups: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.dual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dual.is_empty()
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    pub fn labeled_in(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == split && self.labels[i].is_some())
            .collect()
    }
}

/// Joins a graph, its feature table, the ground truth and the split. The
/// normaliser is fit on training rows unless `normalizer` is supplied.
pub fn build_dataset(
    variant: Variant,
    graph: &RoadGraph,
    table: &FeatureTable,
    labels: &BTreeMap<String, HighwayClass>,
    split: &SplitAssignment,
    normalizer: Option<Normalizer>,
) -> Result<Dataset> {
    let dual = to_dual(graph);
    let by_id: HashMap<&str, &[f64]> = table
        .rows
        .iter()
        .map(|r| (r.edge_id.as_str(), r.values.as_slice()))
        .collect();
    let dim = table.dimension();
    let mut raw = Vec::with_capacity(dual.len());
    let mut node_split = Vec::with_capacity(dual.len());
    let mut node_labels = Vec::with_capacity(dual.len());
    let orn_ids: Vec<String> = split.orn.keys().cloned().collect();
    let orn_pos: HashMap<&str, usize> = orn_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut groups = vec![Vec::new(); orn_ids.len()];
    for i in 0..dual.len() {
        let e = &graph.edges()[dual.primal_index(i)];
        let row = by_id
            .get(e.id.as_str())
            .ok_or_else(|| Error::Validation(format!("no feature row for edge {}", e.id)))?;
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        raw.push(row.to_vec());
        let parent = &e.parent_id;
        let g = *orn_pos
            .get(parent.as_str())
            .ok_or_else(|| Error::OrphanParent {
                edge: e.id.clone(),
                parent: parent.clone(),
            })?;
        groups[g].push(i);
        node_split.push(split.orn[parent]);
        node_labels.push(labels.get(parent).map(|c| c.index()));
    }
    let normalizer = match normalizer {
        Some(n) => {
            if n.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: n.mean.len(),
                });
            }
            n
        }
        None => {
            let train = raw
                .iter()
                .zip(&node_split)
                .filter(|(_, s)| **s == Split::Train)
                .map(|(r, _)| r.as_slice());
            Normalizer::fit(train, &table.spec.normalized_dims())?
        }
    };
    let mut features = Array2::zeros((raw.len(), dim));
    for (i, r) in raw.iter().enumerate() {
        for (j, v) in normalizer.apply(r).into_iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let orn_labels = orn_ids
        .iter()
        .map(|id| labels.get(id).map(|c| c.index()))
        .collect();
    let orn_split = orn_ids.iter().map(|id| split.orn[id]).collect();
    Ok(Dataset {
        variant,
        dual,
        features,
        normalizer,
        labels: node_labels,
        split: node_split,
        orn_ids,
        orn_labels,
        orn_split,
        groups,
    })
}
