//! Splits road edges at equally spaced interstitial nodes so that every
//! resulting edge meets a target travel time and a target length.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cumulative_lengths, sub_polyline};
use crate::graph::{derived_bearing, RoadEdge, RoadGraph, RoadNode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub target_traveltime_s: f64,
    pub target_length_m: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            target_traveltime_s: 15.0,
            target_length_m: 120.0,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("target_traveltime_s", self.target_traveltime_s),
            ("target_length_m", self.target_length_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentAttribute {
    TravelTimeS,
    LengthM,
}

impl SegmentAttribute {
    fn name(self) -> &'static str {
        match self {
            SegmentAttribute::TravelTimeS => "travel_time_s",
            SegmentAttribute::LengthM => "length_m",
        }
    }

    fn value(self, e: &RoadEdge) -> Result<f64> {
        let v = match self {
            SegmentAttribute::TravelTimeS => e.travel_time_s,
            SegmentAttribute::LengthM => Some(e.length_m),
        };
        match v {
            Some(x) if x.is_finite() && x >= 0.0 => Ok(x),
            Some(x) => Err(Error::Validation(format!(
                "edge {} has {} = {x}",
                e.id,
                self.name()
            ))),
            None => Err(Error::AttributeMissing {
                edge: e.id.clone(),
                attribute: self.name(),
            }),
        }
    }
}

/// Number of pieces for an attribute value: `ceil(value / target)`, at
/// least 1, and large enough that `value / n <= target` holds in floating
/// point.
pub fn split_count(value: f64, target: f64) -> usize {
    let mut n = ((value / target).ceil() as usize).max(1);
    while value / n as f64 > target {
        n += 1;
    }
    n
}

fn split_edge(e: &RoadEdge, n: usize) -> Result<(Vec<RoadNode>, Vec<RoadEdge>)> {
    if n <= 1 {
        return Ok((Vec::new(), vec![e.clone()]));
    }
    let cum = cumulative_lengths(&e.geometry);
    let total = cum[cum.len() - 1];
    if !(total > 0.0) {
        return Err(Error::Degenerate(format!(
            "edge {} has zero arc length",
            e.id
        )));
    }
    let cut = |i: usize| {
        if i == n {
            total
        } else {
            total * i as f64 / n as f64
        }
    };
    let mut nodes = Vec::with_capacity(n - 1);
    let mut edges = Vec::with_capacity(n);
    let nf = n as f64;
    let mut prev = e.u.clone();
    for i in 1..=n {
        let geometry = sub_polyline(&e.geometry, &cum, cut(i - 1), cut(i));
        let v = if i == n {
            e.v.clone()
        } else {
            let p = geometry[geometry.len() - 1];
            let node = RoadNode::new(format!("{}@{i}", e.id), p.x, p.y);
            let id = node.id.clone();
            nodes.push(node);
            id
        };
        let u = std::mem::replace(&mut prev, v.clone());
        edges.push(RoadEdge {
            id: format!("{}#{i}", e.id),
            u,
            v,
            bearing_deg: derived_bearing(&geometry)?,
            geometry,
            length_m: e.length_m / nf,
            travel_time_s: e.travel_time_s.map(|t| t / nf),
            throughput_vpd: e.throughput_vpd,
            oneway: e.oneway,
            bridge: e.bridge,
            tunnel: e.tunnel,
            highway: e.highway,
            parent_id: e.parent_id.clone(),
        });
    }
    Ok((nodes, edges))
}

/// One pass of the splitting procedure over every edge, using `attr`.
/// Original nodes are kept; each split edge is replaced by its chain of
/// children, in place.
pub fn segment_by_attribute(
    g: &RoadGraph,
    attr: SegmentAttribute,
    target: f64,
) -> Result<RoadGraph> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::Config(format!(
            "segmentation target must be positive, got {target}"
        )));
    }
    let pieces: Vec<(Vec<RoadNode>, Vec<RoadEdge>)> = g
        .edges()
        .par_iter()
        .map(|e| split_edge(e, split_count(attr.value(e)?, target)))
        .collect::<Result<_>>()?;

    let mut nodes = g.nodes().to_vec();
    let mut edges = Vec::with_capacity(g.edges().len());
    for (new_nodes, new_edges) in pieces {
        nodes.extend(new_nodes);
        edges.extend(new_edges);
    }
    RoadGraph::new(nodes, edges)
}

/// Travel-time pass followed by a length pass.
pub fn segment_pipeline(g: &RoadGraph, cfg: &SegmentationConfig) -> Result<RoadGraph> {
    cfg.validate()?;
    let by_time = segment_by_attribute(g, SegmentAttribute::TravelTimeS, cfg.target_traveltime_s)?;
    segment_by_attribute(&by_time, SegmentAttribute::LengthM, cfg.target_length_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{arc_length, distance_to_polyline, Point};
    use proptest::prelude::*;
    use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

    fn single_edge(length: f64, travel: f64) -> RoadGraph {
        let nodes = vec![
            RoadNode::new("a", 0.0, 0.0),
            RoadNode::new("b", length, 0.0),
        ];
        let mut e = RoadEdge::from_geometry(
            "e1",
            "a",
            "b",
            vec![Point::new(0.0, 0.0), Point::new(length, 0.0)],
        )
        .unwrap();
        e.travel_time_s = Some(travel);
        e.throughput_vpd = Some(1234.0);
        RoadGraph::new(nodes, vec![e]).unwrap()
    }

    #[test]
    fn length_split_into_three() {
        let g = segment_by_attribute(&single_edge(300.0, 10.0), SegmentAttribute::LengthM, 120.0)
            .unwrap();
        assert_eq!(g.nodes().len(), 4);
        assert_eq!(g.edges().len(), 3);
        for (i, e) in g.edges().iter().enumerate() {
            assert!((e.length_m - 100.0).abs() < 1e-9);
            assert_eq!(e.id, format!("e1#{}", i + 1));
            assert_eq!(e.parent_id, "e1");
            assert_eq!(e.throughput_vpd, Some(1234.0));
        }
        assert_eq!(g.edges()[0].u, "a");
        assert_eq!(g.edges()[0].v, g.edges()[1].u);
        assert_eq!(g.edges()[2].v, "b");
    }

    #[test]
    fn short_edge_unchanged() {
        let orig = single_edge(100.0, 10.0);
        let g = segment_by_attribute(&orig, SegmentAttribute::LengthM, 120.0).unwrap();
        assert_eq!(g, orig);
    }

    #[test]
    fn travel_time_split() {
        let g = segment_by_attribute(
            &single_edge(300.0, 45.0),
            SegmentAttribute::TravelTimeS,
            15.0,
        )
        .unwrap();
        assert_eq!(g.edges().len(), 3);
        for e in g.edges() {
            assert!((e.travel_time_s.unwrap() - 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_attribute_keeps_edge() {
        let orig = single_edge(100.0, 0.0);
        let g = segment_by_attribute(&orig, SegmentAttribute::TravelTimeS, 15.0).unwrap();
        assert_eq!(g, orig);
    }

    #[test]
    fn missing_travel_time_is_error() {
        let (nodes, mut edges) = single_edge(100.0, 1.0).into_parts();
        edges[0].travel_time_s = None;
        let g = RoadGraph::new(nodes, edges).unwrap();
        let err = segment_by_attribute(&g, SegmentAttribute::TravelTimeS, 15.0).unwrap_err();
        assert!(matches!(
            err,
            Error::AttributeMissing {
                attribute: "travel_time_s",
                ..
            }
        ));
    }

    #[test]
    fn pipeline_examples() {
        let cfg = SegmentationConfig::default();
        let g = segment_pipeline(&single_edge(240.0, 40.0), &cfg).unwrap();
        assert_eq!(g.edges().len(), 3);
        for e in g.edges() {
            assert!((e.length_m - 80.0).abs() < 1e-9);
            assert!((e.travel_time_s.unwrap() - 40.0 / 3.0).abs() < 1e-9);
        }

        let g = segment_pipeline(&single_edge(500.0, 10.0), &cfg).unwrap();
        assert_eq!(g.edges().len(), 5);
        for e in g.edges() {
            assert!((e.length_m - 100.0).abs() < 1e-9);
            assert!((e.travel_time_s.unwrap() - 2.0).abs() < 1e-12);
        }

        let empty = segment_pipeline(&RoadGraph::empty(), &cfg).unwrap();
        assert!(empty.edges().is_empty() && empty.nodes().is_empty());
    }

    #[test]
    fn rejects_nonpositive_targets() {
        let cfg = SegmentationConfig {
            target_traveltime_s: 0.0,
            target_length_m: 120.0,
        };
        assert!(matches!(
            segment_pipeline(&single_edge(1.0, 1.0), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_count_respects_bound() {
        assert_eq!(split_count(300.0, 120.0), 3);
        assert_eq!(split_count(100.0, 120.0), 1);
        assert_eq!(split_count(0.0, 15.0), 1);
        assert_eq!(split_count(360.0, 120.0), 3);
        for k in 1..200 {
            let v = 0.1 * k as f64 * 3.7;
            let n = split_count(v, 0.37);
            assert!(v / n as f64 <= 0.37);
        }
    }

    type EdgeSeed = (u8, u8, Vec<(f64, f64)>, f64);

    /// Random graph of polyline edges with traffic attributes.
    fn random_network(seeds: &[EdgeSeed]) -> RoadGraph {
        let n = 6;
        let nodes: Vec<RoadNode> = (0..n)
            .map(|i| RoadNode::new(format!("n{i}"), 400.0 * i as f64, (i % 2) as f64 * 300.0))
            .collect();
        let edges = seeds
            .iter()
            .enumerate()
            .map(|(k, (a, b, mids, speed))| {
                let (u, v) = (*a as usize % n, *b as usize % n);
                let mut geom = vec![nodes[u].position()];
                geom.extend(mids.iter().map(|&(x, y)| Point::new(x, y)));
                geom.push(nodes[v].position());
                let mut e =
                    RoadEdge::from_geometry(format!("e{k}"), &nodes[u].id, &nodes[v].id, geom)
                        .unwrap();
                e.travel_time_s = Some(e.length_m / speed);
                e
            })
            .collect();
        RoadGraph::new(nodes, edges).unwrap()
    }

    fn reachable(g: &RoadGraph, from: &str) -> HashSet<String> {
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in g.edges() {
            adj.entry(&e.u).or_default().push(&e.v);
        }
        let mut seen = HashSet::from([from.to_string()]);
        let mut queue = VecDeque::from([from]);
        while let Some(x) = queue.pop_front() {
            for &y in adj.get(x).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(y.to_string()) {
                    queue.push_back(y);
                }
            }
        }
        seen
    }

    fn network_strategy() -> impl Strategy<Value = RoadGraph> {
        prop::collection::vec(
            (
                any::<u8>(),
                any::<u8>(),
                prop::collection::vec((-500.0f64..2500.0, -500.0f64..800.0), 0..4),
                1.0f64..30.0,
            ),
            1..15,
        )
        .prop_filter("closed loops need length", |v| {
            v.iter().all(|(a, b, m, _)| a % 6 != b % 6 || !m.is_empty())
        })
        .prop_map(|v| random_network(&v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pipeline_invariants(g in network_strategy()) {
            let cfg = SegmentationConfig::default();
            let s = segment_pipeline(&g, &cfg).unwrap();

            let mut groups: BTreeMap<&str, Vec<&RoadEdge>> = BTreeMap::new();
            for e in s.edges() {
                prop_assert!(e.travel_time_s.unwrap() <= cfg.target_traveltime_s);
                prop_assert!(e.length_m <= cfg.target_length_m);
                prop_assert!((e.length_m - arc_length(&e.geometry)).abs() <= 1e-6 * e.length_m.max(1.0));
                groups.entry(&e.parent_id).or_default().push(e);
            }
            prop_assert_eq!(groups.len(), g.edges().len());
            for parent in g.edges() {
                let kids = &groups[parent.id.as_str()];
                let len: f64 = kids.iter().map(|e| e.length_m).sum();
                let tt: f64 = kids.iter().map(|e| e.travel_time_s.unwrap()).sum();
                prop_assert!((len - parent.length_m).abs() <= 1e-6 * parent.length_m);
                prop_assert!((tt - parent.travel_time_s.unwrap()).abs() <= 1e-6 * parent.travel_time_s.unwrap());
                // children chain u -> ... -> v and cover the parent polyline
                prop_assert_eq!(&kids[0].u, &parent.u);
                prop_assert_eq!(&kids[kids.len() - 1].v, &parent.v);
                for w in kids.windows(2) {
                    prop_assert_eq!(&w[0].v, &w[1].u);
                }
                for p in kids.iter().flat_map(|e| &e.geometry) {
                    prop_assert!(distance_to_polyline(p, &parent.geometry) < 1e-9);
                }
                for p in &parent.geometry {
                    let d = kids.iter().map(|e| distance_to_polyline(p, &e.geometry)).fold(f64::INFINITY, f64::min);
                    prop_assert!(d < 1e-9);
                }
            }

            let again = segment_pipeline(&s, &cfg).unwrap();
            prop_assert_eq!(again.edges().len(), s.edges().len());
            prop_assert_eq!(again.nodes().len(), s.nodes().len());

            for n in g.nodes() {
                let before = reachable(&g, &n.id);
                let after = reachable(&s, &n.id);
                for m in &before {
                    prop_assert!(after.contains(m));
                }
            }
        }
    }
}
