//! Layer-wise neighbourhood sampling for minibatch GraphSAGE.

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::DualGraph;

/// Anything that can list the neighbours `N(v)` of a node index.
pub trait NeighborSource {
    fn num_nodes(&self) -> usize;
    fn neighbors_of(&self, v: usize) -> &[usize];
}

impl NeighborSource for DualGraph {
    fn num_nodes(&self) -> usize {
        self.len()
    }

    fn neighbors_of(&self, v: usize) -> &[usize] {
        self.neighbors(v)
    }
}

impl NeighborSource for [Vec<usize>] {
    fn num_nodes(&self) -> usize {
        self.len()
    }

    fn neighbors_of(&self, v: usize) -> &[usize] {
        &self[v]
    }
}

impl NeighborSource for Vec<Vec<usize>> {
    fn num_nodes(&self) -> usize {
        self.len()
    }

    fn neighbors_of(&self, v: usize) -> &[usize] {
        &self[v]
    }
}

/// Computation graph of a minibatch.
///
/// `nodes[K]` is the batch and `nodes[k - 1]` extends `nodes[k]` with the
/// neighbours sampled for it, so a node keeps its row index in every deeper
/// list. `adj[k - 1][i]` holds, for the `i`-th node of `nodes[k]`, the row
/// positions of its sampled neighbours inside `nodes[k - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledBlocks {
    pub nodes: Vec<Vec<usize>>,
    pub adj: Vec<Vec<Vec<usize>>>,
}

impl SampledBlocks {
    pub fn depth(&self) -> usize {
        self.adj.len()
    }

    pub fn batch(&self) -> &[usize] {
        &self.nodes[self.nodes.len() - 1]
    }

    pub fn inputs(&self) -> &[usize] {
        &self.nodes[0]
    }
}

fn pick<R: Rng + ?Sized>(all: &[usize], fanout: usize, rng: &mut R) -> Vec<usize> {
    if all.len() <= fanout {
        return all.to_vec();
    }
    let mut idx = index::sample(rng, all.len(), fanout).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| all[i]).collect()
}

fn build<G, F>(graph: &G, batch: &[usize], depth: usize, mut choose: F) -> SampledBlocks
where
    G: NeighborSource + ?Sized,
    F: FnMut(usize, &[usize]) -> Vec<usize>,
{
    let mut current: Vec<usize> = Vec::with_capacity(batch.len());
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for &v in batch {
        if let std::collections::hash_map::Entry::Vacant(slot) = pos.entry(v) {
            slot.insert(current.len());
            current.push(v);
        }
    }
    let mut nodes = vec![current.clone()];
    let mut adj = Vec::with_capacity(depth);
    for hop in 0..depth {
        let frontier = current.clone();
        let mut layer_adj = Vec::with_capacity(frontier.len());
        for &v in &frontier {
            let chosen = choose(hop, graph.neighbors_of(v));
            let rows = chosen
                .into_iter()
                .map(|u| {
                    *pos.entry(u).or_insert_with(|| {
                        current.push(u);
                        current.len() - 1
                    })
                })
                .collect();
            layer_adj.push(rows);
        }
        adj.push(layer_adj);
        nodes.push(current.clone());
    }
    nodes.reverse();
    adj.reverse();
    SampledBlocks { nodes, adj }
}

/// Uniformly samples `min(fanout, degree)` distinct neighbours per node
/// without replacement. `fanouts` is indexed by layer like
/// [`SageConfig::fanouts`](super::SageConfig::fanouts).
pub fn sample_neighborhood<G, R>(
    graph: &G,
    batch: &[usize],
    fanouts: &[usize],
    rng: &mut R,
) -> SampledBlocks
where
    G: NeighborSource + ?Sized,
    R: Rng + ?Sized,
{
    let depth = fanouts.len();
    build(graph, batch, depth, |hop, all| {
        pick(all, fanouts[depth - 1 - hop], rng)
    })
}

pub fn sample_neighborhood_seeded<G>(
    graph: &G,
    batch: &[usize],
    fanouts: &[usize],
    seed: u64,
) -> SampledBlocks
where
    G: NeighborSource + ?Sized,
{
    sample_neighborhood(graph, batch, fanouts, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Every neighbour at every hop; used for evaluation.
pub fn full_neighborhood<G>(graph: &G, batch: &[usize], depth: usize) -> SampledBlocks
where
    G: NeighborSource + ?Sized,
{
    build(graph, batch, depth, |_, all| all.to_vec())
}
