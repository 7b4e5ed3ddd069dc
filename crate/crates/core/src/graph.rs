//! Primal road graph, its JSON-lines file format, and the dual (line graph)
//! representation the GNN runs on.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, arc_length, edge_bearing, Point};
use crate::taxonomy::HighwayClass;

const ENDPOINT_TOL_M: f64 = 1e-6;
const LENGTH_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl RoadNode {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        RoadNode {
            id: id.into(),
            x,
            y,
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// A directed road `u -> v` with its attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub id: String,
    pub u: String,
    pub v: String,
    pub geometry: Vec<Point>,
    pub length_m: f64,
    pub bearing_deg: f64,
    /// Median travel time; `None` for roads without matched trajectories.
    pub travel_time_s: Option<f64>,
    pub throughput_vpd: Option<f64>,
    pub oneway: bool,
    pub bridge: bool,
    pub tunnel: bool,
    pub highway: Option<HighwayClass>,
    pub parent_id: String,
}

impl RoadEdge {
    /// Straight edge with length and bearing derived from the geometry.
    /// Traffic attributes start unset and flags false.
    pub fn from_geometry(
        id: impl Into<String>,
        u: impl Into<String>,
        v: impl Into<String>,
        geometry: Vec<Point>,
    ) -> Result<Self> {
        let id = id.into();
        let bearing_deg = derived_bearing(&geometry)?;
        Ok(RoadEdge {
            parent_id: id.clone(),
            id,
            u: u.into(),
            v: v.into(),
            length_m: arc_length(&geometry),
            bearing_deg,
            geometry,
            travel_time_s: None,
            throughput_vpd: None,
            oneway: false,
            bridge: false,
            tunnel: false,
            highway: None,
        })
    }
}

/// Bearing of an edge geometry. Closed loops (first point equals last) have
/// no end-to-end displacement, so they use the direction to the point at
/// half their arc length.
pub fn derived_bearing(geometry: &[Point]) -> Result<f64> {
    match edge_bearing(geometry) {
        Err(Error::Degenerate(_)) if geometry.len() >= 2 => {
            let mid = geometry::interpolate_along(geometry, 0.5)?.point;
            edge_bearing(&[geometry[0], mid])
        }
        other => other,
    }
}

/// Validated primal graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    nodes: Vec<RoadNode>,
    edges: Vec<RoadEdge>,
    node_index: HashMap<String, usize>,
}

impl RoadGraph {
    pub fn new(nodes: Vec<RoadNode>, edges: Vec<RoadEdge>) -> Result<Self> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(n.x.is_finite() && n.y.is_finite()) {
                return Err(Error::Validation(format!(
                    "node {} has non-finite coordinates",
                    n.id
                )));
            }
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "node",
                    id: n.id.clone(),
                });
            }
        }
        let mut edge_ids = HashMap::with_capacity(edges.len());
        for e in &edges {
            if edge_ids.insert(e.id.as_str(), ()).is_some() {
                return Err(Error::DuplicateId {
                    kind: "edge",
                    id: e.id.clone(),
                });
            }
            validate_edge(e, &nodes, &node_index)?;
        }
        Ok(RoadGraph {
            nodes,
            edges,
            node_index,
        })
    }

    pub fn empty() -> Self {
        RoadGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            node_index: HashMap::new(),
        }
    }

    pub fn nodes(&self) -> &[RoadNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&RoadNode> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn into_parts(self) -> (Vec<RoadNode>, Vec<RoadEdge>) {
        (self.nodes, self.edges)
    }

    /// Axis-aligned bounding box `(min, max)` over node positions and edge
    /// geometries. `None` for an empty graph.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let pts = self
            .nodes
            .iter()
            .map(RoadNode::position)
            .chain(self.edges.iter().flat_map(|e| e.geometry.iter().copied()));
        pts.fold(None, |acc, p| match acc {
            None => Some((p, p)),
            Some((lo, hi)) => Some((
                Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point::new(hi.x.max(p.x), hi.y.max(p.y)),
            )),
        })
    }
}

fn validate_edge(e: &RoadEdge, nodes: &[RoadNode], index: &HashMap<String, usize>) -> Result<()> {
    let lookup = |id: &str| {
        index
            .get(id)
            .map(|&i| &nodes[i])
            .ok_or_else(|| Error::Referential {
                edge: e.id.clone(),
                node: id.to_string(),
            })
    };
    let u = lookup(&e.u)?;
    let v = lookup(&e.v)?;
    if e.geometry.len() < 2 {
        return Err(Error::Validation(format!(
            "edge {} geometry has {} points",
            e.id,
            e.geometry.len()
        )));
    }
    if !e.geometry.iter().all(Point::is_finite) {
        return Err(Error::Validation(format!(
            "edge {} geometry not finite",
            e.id
        )));
    }
    let first = e.geometry[0];
    let last = e.geometry[e.geometry.len() - 1];
    if first.distance(&u.position()) > ENDPOINT_TOL_M
        || last.distance(&v.position()) > ENDPOINT_TOL_M
    {
        return Err(Error::Validation(format!(
            "edge {} geometry endpoints do not match nodes {} and {}",
            e.id, e.u, e.v
        )));
    }
    let arc = arc_length(&e.geometry);
    if !e.length_m.is_finite() || (e.length_m - arc).abs() > LENGTH_REL_TOL * arc.max(1.0) {
        return Err(Error::Validation(format!(
            "edge {} length_m {} differs from arc length {arc}",
            e.id, e.length_m
        )));
    }
    if !(0.0..360.0).contains(&e.bearing_deg) {
        return Err(Error::Validation(format!(
            "edge {} bearing {} outside [0, 360)",
            e.id, e.bearing_deg
        )));
    }
    for (name, value) in [
        ("travel_time_s", e.travel_time_s),
        ("throughput_vpd", e.throughput_vpd),
    ] {
        if let Some(x) = value {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Validation(format!(
                    "edge {} {name} = {x} must be finite and nonnegative",
                    e.id
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Node {
        id: String,
        x: f64,
        y: f64,
    },
    Edge {
        id: String,
        u: String,
        v: String,
        geometry: Vec<Point>,
        length_m: f64,
        #[serde(default)]
        bearing_deg: Option<f64>,
        #[serde(default)]
        travel_time_s: Option<f64>,
        #[serde(default)]
        throughput_vpd: Option<f64>,
        #[serde(default)]
        oneway: bool,
        #[serde(default)]
        bridge: bool,
        #[serde(default)]
        tunnel: bool,
        #[serde(default)]
        highway: Option<String>,
        #[serde(default)]
        parent_id: Option<String>,
    },
}

pub fn read_graph<R: BufRead>(reader: R) -> Result<RoadGraph> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        match record {
            Record::Node { id, x, y } => nodes.push(RoadNode { id, x, y }),
            Record::Edge {
                id,
                u,
                v,
                geometry,
                length_m,
                bearing_deg,
                travel_time_s,
                throughput_vpd,
                oneway,
                bridge,
                tunnel,
                highway,
                parent_id,
            } => {
                let bearing_deg = match bearing_deg {
                    Some(b) => b,
                    None => derived_bearing(&geometry)
                        .map_err(|e| Error::parse(lineno, format!("edge {id}: {e}")))?,
                };
                let highway = highway
                    .map(|h| h.parse::<HighwayClass>())
                    .transpose()
                    .map_err(|e| Error::parse(lineno, e.to_string()))?;
                edges.push(RoadEdge {
                    parent_id: parent_id.unwrap_or_else(|| id.clone()),
                    id,
                    u,
                    v,
                    geometry,
                    length_m,
                    bearing_deg,
                    travel_time_s,
                    throughput_vpd,
                    oneway,
                    bridge,
                    tunnel,
                    highway,
                });
            }
        }
    }
    RoadGraph::new(nodes, edges)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<RoadGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_graph(BufReader::new(file))
}

pub fn write_graph<W: Write>(g: &RoadGraph, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::io("<graph writer>", e);
    for n in g.nodes() {
        let rec = Record::Node {
            id: n.id.clone(),
            x: n.x,
            y: n.y,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(io)?;
    }
    for e in g.edges() {
        let rec = Record::Edge {
            id: e.id.clone(),
            u: e.u.clone(),
            v: e.v.clone(),
            geometry: e.geometry.clone(),
            length_m: e.length_m,
            bearing_deg: Some(e.bearing_deg),
            travel_time_s: e.travel_time_s,
            throughput_vpd: e.throughput_vpd,
            oneway: e.oneway,
            bridge: e.bridge,
            tunnel: e.tunnel,
            highway: e.highway.map(|h| h.as_str().to_string()),
            parent_id: Some(e.parent_id.clone()),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_graph(g: &RoadGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_graph(g, BufWriter::new(file))
}

/// Line-graph view of a [`RoadGraph`]: one node per road edge, and a
/// directed connection `(i, j)` whenever edge `i` ends where edge `j` starts.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGraph {
    ids: Vec<String>,
    primal: Vec<usize>,
    edges: Vec<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
}

impl DualGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Dual node ids (primal edge ids), sorted.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Index into `RoadGraph::edges()` for each dual node.
    pub fn primal_index(&self, node: usize) -> usize {
        self.primal[node]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.out_adj[node]
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.in_adj[node]
    }

    /// Union of successors and predecessors, sorted and deduplicated.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges
            .iter()
            .map(|&(i, j)| (self.ids[i].as_str(), self.ids[j].as_str()))
    }
}

pub fn to_dual(g: &RoadGraph) -> DualGraph {
    let mut order: Vec<usize> = (0..g.edges().len()).collect();
    order.sort_by(|&a, &b| g.edges()[a].id.cmp(&g.edges()[b].id));
    let ids: Vec<String> = order.iter().map(|&i| g.edges()[i].id.clone()).collect();

    // dual nodes grouped by the primal node they leave from
    let mut leaving: HashMap<&str, Vec<usize>> = HashMap::new();
    for (dual, &primal) in order.iter().enumerate() {
        leaving
            .entry(g.edges()[primal].u.as_str())
            .or_default()
            .push(dual);
    }

    let n = ids.len();
    let mut edges = Vec::new();
    let mut out_adj = vec![Vec::new(); n];
    let mut in_adj = vec![Vec::new(); n];
    for (i, &primal) in order.iter().enumerate() {
        if let Some(next) = leaving.get(g.edges()[primal].v.as_str()) {
            for &j in next {
                edges.push((i, j));
                out_adj[i].push(j);
                in_adj[j].push(i);
            }
        }
    }
    let neighbors = (0..n)
        .map(|i| {
            let mut nb: Vec<usize> = out_adj[i].iter().chain(&in_adj[i]).copied().collect();
            nb.sort_unstable();
            nb.dedup();
            nb
        })
        .collect();
    DualGraph {
        ids,
        primal: order,
        edges,
        out_adj,
        in_adj,
        neighbors,
    }
}

#[derive(Serialize)]
struct DualFile<'a> {
    nodes: &'a [String],
    edges: Vec<(&'a str, &'a str)>,
}

pub fn save_dual(d: &DualGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(
        &mut w,
        &DualFile {
            nodes: d.ids(),
            edges: d.edge_ids().collect(),
        },
    )?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn node_line(id: &str, x: f64, y: f64) -> String {
        format!(r#"{{"kind":"node","id":"{id}","x":{x},"y":{y}}}"#)
    }

    fn edge_line(id: &str, u: &str, v: &str, a: (f64, f64), b: (f64, f64)) -> String {
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        format!(
            r#"{{"kind":"edge","id":"{id}","u":"{u}","v":"{v}","geometry":[[{},{}],[{},{}]],"length_m":{len},"bearing_deg":null,"travel_time_s":10,"throughput_vpd":100,"oneway":false,"bridge":false,"tunnel":false,"highway":"primary","parent_id":null}}"#,
            a.0, a.1, b.0, b.1
        )
    }

    fn parse(lines: &[String]) -> Result<RoadGraph> {
        read_graph(lines.join("\n").as_bytes())
    }

    #[test]
    fn loads_small_graph() {
        let g = parse(&[
            node_line("a", 0.0, 0.0),
            node_line("b", 100.0, 0.0),
            edge_line("e1", "a", "b", (0.0, 0.0), (100.0, 0.0)),
        ])
        .unwrap();
        assert_eq!(g.nodes().len(), 2);
        assert_eq!(g.edges().len(), 1);
        let e = &g.edges()[0];
        assert_eq!(e.bearing_deg, 90.0);
        assert_eq!(e.parent_id, "e1");
        assert_eq!(e.highway, Some(HighwayClass::Primary));
    }

    #[test]
    fn missing_node_is_referential_error() {
        let err = parse(&[
            node_line("a", 0.0, 0.0),
            edge_line("e1", "a", "z", (0.0, 0.0), (100.0, 0.0)),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Referential { ref node, .. } if node == "z"));
    }

    #[test]
    fn duplicate_edge_id_rejected() {
        let err = parse(&[
            node_line("a", 0.0, 0.0),
            node_line("b", 100.0, 0.0),
            edge_line("e1", "a", "b", (0.0, 0.0), (100.0, 0.0)),
            edge_line("e1", "b", "a", (100.0, 0.0), (0.0, 0.0)),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId { kind: "edge", .. }));
    }

    #[test]
    fn malformed_record_is_parse_error() {
        let err = parse(&[node_line("a", 0.0, 0.0), "{\"kind\":\"node\",".into()]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse(&[r#"{"kind":"bogus"}"#.into()]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn mismatched_length_rejected() {
        let bad = edge_line("e1", "a", "b", (0.0, 0.0), (100.0, 0.0))
            .replace("\"length_m\":100", "\"length_m\":90");
        let err = parse(&[node_line("a", 0.0, 0.0), node_line("b", 100.0, 0.0), bad]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn write_read_round_trip() {
        let g = parse(&[
            node_line("a", 0.0, 0.0),
            node_line("b", 30.5, 40.25),
            edge_line("e1", "a", "b", (0.0, 0.0), (30.5, 40.25)),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        assert_eq!(read_graph(buf.as_slice()).unwrap(), g);
    }

    fn straight(id: &str, u: &str, v: &str, coords: &HashMap<&str, (f64, f64)>) -> RoadEdge {
        let (a, b) = (coords[u], coords[v]);
        let geom = if u == v {
            vec![
                Point::new(a.0, a.1),
                Point::new(a.0 + 10.0, a.1),
                Point::new(a.0, a.1),
            ]
        } else {
            vec![Point::new(a.0, a.1), Point::new(b.0, b.1)]
        };
        RoadEdge::from_geometry(id, u, v, geom).unwrap()
    }

    fn graph_from(pairs: &[(&str, &str, &str)]) -> RoadGraph {
        let coords: HashMap<&str, (f64, f64)> = [
            ("a", (0.0, 0.0)),
            ("b", (100.0, 0.0)),
            ("c", (200.0, 0.0)),
            ("d", (100.0, 100.0)),
        ]
        .into_iter()
        .collect();
        let nodes = coords
            .iter()
            .map(|(id, &(x, y))| RoadNode::new(*id, x, y))
            .collect();
        let edges = pairs
            .iter()
            .map(|&(id, u, v)| straight(id, u, v, &coords))
            .collect();
        RoadGraph::new(nodes, edges).unwrap()
    }

    fn dual_pairs(d: &DualGraph) -> Vec<(String, String)> {
        d.edge_ids()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn dual_of_path() {
        let d = to_dual(&graph_from(&[("e1", "a", "b"), ("e2", "b", "c")]));
        assert_eq!(d.ids(), &["e1", "e2"]);
        assert_eq!(dual_pairs(&d), vec![("e1".into(), "e2".into())]);
    }

    #[test]
    fn dual_fan_out() {
        let d = to_dual(&graph_from(&[
            ("e1", "a", "b"),
            ("e2", "b", "c"),
            ("e3", "b", "d"),
        ]));
        assert_eq!(
            dual_pairs(&d),
            vec![("e1".into(), "e2".into()), ("e1".into(), "e3".into())]
        );
        assert_eq!(d.neighbors(0), &[1, 2]);
        assert_eq!(d.neighbors(1), &[0]);
    }

    #[test]
    fn dual_isolated_edge() {
        let d = to_dual(&graph_from(&[("e1", "a", "b")]));
        assert_eq!(d.len(), 1);
        assert!(d.edges().is_empty());
    }

    #[test]
    fn self_loop_continues_into_itself() {
        let d = to_dual(&graph_from(&[("e1", "b", "b"), ("e2", "a", "b")]));
        let pairs = dual_pairs(&d);
        assert!(pairs.contains(&("e1".into(), "e1".into())));
        assert!(pairs.contains(&("e2".into(), "e1".into())));
    }

    /// Random multigraph on `n` nodes laid out on a circle.
    pub(crate) fn random_graph(n: usize, pairs: &[(usize, usize)]) -> RoadGraph {
        let nodes: Vec<RoadNode> = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                RoadNode::new(format!("n{i}"), 100.0 * a.cos(), 100.0 * a.sin())
            })
            .collect();
        let edges = pairs
            .iter()
            .enumerate()
            .map(|(k, &(u, v))| {
                let (pu, pv) = (nodes[u].position(), nodes[v].position());
                let geom = if u == v {
                    vec![pu, Point::new(pu.x + 5.0, pu.y + 5.0), pu]
                } else {
                    vec![pu, pv]
                };
                RoadEdge::from_geometry(format!("e{k}"), &nodes[u].id, &nodes[v].id, geom).unwrap()
            })
            .collect();
        RoadGraph::new(nodes, edges).unwrap()
    }

    proptest! {
        #[test]
        fn dual_matches_pair_scan(
            n in 1usize..12,
            raw in prop::collection::vec((0usize..100, 0usize..100), 0..50),
        ) {
            let pairs: Vec<(usize, usize)> = raw.iter().map(|&(a, b)| (a % n, b % n)).collect();
            let g = random_graph(n, &pairs);
            let d = to_dual(&g);
            prop_assert_eq!(d.len(), g.edges().len());

            let mut expected = BTreeSet::new();
            for a in g.edges() {
                for b in g.edges() {
                    if a.v == b.u {
                        expected.insert((a.id.clone(), b.id.clone()));
                    }
                }
            }
            let got: BTreeSet<(String, String)> = dual_pairs(&d).into_iter().collect();
            prop_assert_eq!(got.len(), d.edges().len());
            prop_assert_eq!(&got, &expected);

            let degree_sum: usize = g.nodes().iter().map(|v| {
                let indeg = g.edges().iter().filter(|e| e.v == v.id).count();
                let outdeg = g.edges().iter().filter(|e| e.u == v.id).count();
                indeg * outdeg
            }).sum();
            prop_assert_eq!(d.edges().len(), degree_sum);
        }
    }
}
