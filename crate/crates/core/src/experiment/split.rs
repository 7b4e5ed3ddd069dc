use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RoadGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

/// Split of the original edges and, through `parent_id`, of every segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub orn: BTreeMap<String, Split>,
    pub srn: BTreeMap<String, Split>,
}

impl SplitAssignment {
    /// Split of an edge id from either graph.
    pub fn get(&self, id: &str) -> Option<Split> {
        self.orn.get(id).or_else(|| self.srn.get(id)).copied()
    }

    pub fn orn_ids(&self, split: Split) -> impl Iterator<Item = &str> + '_ {
        self.orn
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }

    /// Extends the assignment to another segmentation of the same network.
    pub fn propagate(&mut self, srn: &RoadGraph) -> Result<()> {
        for e in srn.edges() {
            let s = *self
                .orn
                .get(&e.parent_id)
                .ok_or_else(|| Error::OrphanParent {
                    edge: e.id.clone(),
                    parent: e.parent_id.clone(),
                })?;
            self.srn.insert(e.id.clone(), s);
        }
        Ok(())
    }
}

/// Counts `(train, val, test)` for `n` items: 20% each for validation and
/// test, rounded half away from zero.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = (0.2 * n as f64).round() as usize;
    let val = held.min(n);
    let test = held.min(n - val);
    (n - val - test, val, test)
}

/// Uniform random 60/20/20 split of `orn` edges, inherited by the `srn`
/// segments through their `parent_id`.
pub fn split_and_propagate(orn: &RoadGraph, srn: &RoadGraph, seed: u64) -> Result<SplitAssignment> {
    let mut ids: Vec<&str> = orn.edges().iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let (_, n_val, n_test) = split_sizes(ids.len());
    let orn_split = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            (id.to_string(), s)
        })
        .collect();
    let mut out = SplitAssignment {
        orn: orn_split,
        srn: BTreeMap::new(),
    };
    out.propagate(srn)?;
    Ok(out)
}
