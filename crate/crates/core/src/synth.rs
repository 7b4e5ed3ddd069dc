//! Seeded synthetic grid cities with traffic attributes and co-registered
//! rasters.
//!
//! Where the class signal lives:
//!
//! * Graph attributes (speed, hence travel time and segmentation, and
//!   throughput) separate arterial from minor roads, with only weak
//!   differences between classes of the same group.
//! * Classes run along streets: at each intersection a street keeps its
//!   class unless a redraw within its group fires, so graph neighbours
//!   tend to share a class but position alone says nothing beyond the group.
//! * The rasters carry the full 8-class signal: road surface intensity in R
//!   and B, verge intensity in G and building heights in the DSM all step
//!   with the class index.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::graph::{save_graph, RoadEdge, RoadGraph, RoadNode};
use crate::raster::{save_raster, ChannelEntry, RasterGrid, RasterManifest, DEFAULT_NODATA};
use crate::taxonomy::{HighwayClass, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Blocks along y.
    pub grid_rows: usize,
    /// Blocks along x.
    pub grid_cols: usize,
    pub block_m: f64,
    /// Every n-th grid line (from 0) is an arterial.
    pub arterial_every: usize,
    /// Standard deviation of imagery noise, in intensity units.
    pub noise_sigma: f64,
    /// Intensity difference between consecutive classes.
    pub intensity_step: f64,
    /// Fraction of segments whose label is replaced by a different class.
    pub label_noise: f64,
    pub motorway_fraction: f64,
    pub living_street_fraction: f64,
    /// Chance that a street changes class at an intersection.
    pub class_switch_prob: f64,
    /// Uniform displacement of intersections, to avoid a perfectly regular
    /// grid.
    pub jitter_m: f64,
    pub cellsize_m: f64,
    pub margin_m: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_rows: 11,
            grid_cols: 11,
            block_m: 200.0,
            arterial_every: 3,
            noise_sigma: 4.0,
            intensity_step: 24.0,
            label_noise: 0.0,
            motorway_fraction: 0.03,
            living_street_fraction: 0.03,
            class_switch_prob: 0.3,
            jitter_m: 6.0,
            cellsize_m: 2.0,
            margin_m: 100.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid dimensions must be positive");
        }
        if !(self.block_m.is_finite() && self.block_m >= 100.0) {
            return bad("block_m must be at least 100");
        }
        if self.arterial_every == 0 {
            return bad("arterial_every must be positive");
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1)");
        }
        for (name, f) in [
            ("motorway_fraction", self.motorway_fraction),
            ("living_street_fraction", self.living_street_fraction),
        ] {
            if !(0.0..0.05).contains(&f) {
                return Err(Error::Config(format!(
                    "synth: {name} must lie in [0, 0.05)"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.class_switch_prob) {
            return bad("class_switch_prob must lie in [0, 1]");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.intensity_step > 0.0 && 40.0 + 7.0 * self.intensity_step < 256.0) {
            return bad("intensity_step must keep all class intensities below 256");
        }
        if !(self.jitter_m >= 0.0 && self.jitter_m < self.block_m / 10.0) {
            return bad("jitter_m must be below a tenth of the block size");
        }
        if !(self.cellsize_m > 0.0 && self.cellsize_m <= 10.0) {
            return bad("cellsize_m must lie in (0, 10]");
        }
        if !(self.margin_m >= 0.0) {
            return bad("margin_m must be non-negative");
        }
        Ok(())
    }
}

/// Per-class traffic profile: free-flow speed (km/h) and daily volume.
const SPEED_KMH: [f64; NUM_CLASSES] = [90.0, 60.0, 56.0, 52.0, 34.0, 31.0, 29.0, 14.0];
const THROUGHPUT_VPD: [f64; NUM_CLASSES] = [
    40000.0, 19000.0, 17000.0, 15000.0, 4200.0, 3600.0, 3200.0, 700.0,
];
/// Carriageway width (m).
const ROAD_WIDTH_M: [f64; NUM_CLASSES] = [22.0, 18.0, 16.0, 14.0, 10.0, 9.0, 8.0, 6.0];
const BACKGROUND: f64 = 20.0;
const JUNCTION: f64 = 128.0;
const ROOF: f64 = 60.0;
const DSM_NOISE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSignal {
    /// Mean R intensity of road pixels per class (`None` if unpainted).
    pub road_r_mean: Vec<Option<f64>>,
    /// Smallest gap between consecutive painted class means.
    pub min_gap: f64,
    pub required_gap: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub graph: RoadGraph,
    /// Ground truth per edge id, after label noise.
    pub labels: BTreeMap<String, HighwayClass>,
    /// R, G, B and DSM grids.
    pub rasters: Vec<RasterGrid>,
    pub signal: PlantedSignal,
}

struct Segment {
    a: Point,
    b: Point,
    class: usize,
}

/// A grid line: its run of consecutive segment indices and its group.
struct Line {
    segments: Range<usize>,
    arterial: bool,
}

fn assign_classes(cfg: &SynthConfig, lines: &[Line], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut classes = vec![0; n];
    for line in lines {
        let draw = |rng: &mut ChaCha8Rng| {
            if line.arterial {
                rng.random_range(1..=3)
            } else {
                rng.random_range(4..=6)
            }
        };
        let mut current = draw(rng);
        for s in line.segments.clone() {
            if s != line.segments.start && rng.random_bool(cfg.class_switch_prob) {
                current = draw(rng);
            }
            classes[s] = current;
        }
    }
    // The rare classes are contiguous stretches, as a motorway or a
    // pedestrian zone would be.
    for (fraction, arterial, class) in [
        (cfg.motorway_fraction, true, 0),
        (cfg.living_street_fraction, false, 7),
    ] {
        let mut remaining = (fraction * n as f64).round() as usize;
        let mut order: Vec<&Line> = lines.iter().filter(|l| l.arterial == arterial).collect();
        order.shuffle(rng);
        for line in order {
            if remaining == 0 {
                break;
            }
            let len = line.segments.len();
            let k = remaining.min(len);
            let start = line.segments.start + rng.random_range(0..=len - k);
            classes[start..start + k].fill(class);
            remaining -= k;
        }
    }
    classes
}

fn distance_to_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    let q = Point::new(a.x + t * dx, a.y + t * dy);
    (p.distance(&q), t * len2.sqrt())
}

/// Generates the city. Fails if the painted class intensities are not
/// separated by at least three noise standard deviations.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (rows, cols) = (cfg.grid_rows, cfg.grid_cols);
    let node_id = |r: usize, c: usize| format!("n{r}_{c}");
    let mut pos = vec![vec![Point::new(0.0, 0.0); cols + 1]; rows + 1];
    let mut nodes = Vec::with_capacity((rows + 1) * (cols + 1));
    for (r, row) in pos.iter_mut().enumerate() {
        for (c, p) in row.iter_mut().enumerate() {
            let jx = rng.random_range(-1.0..=1.0) * cfg.jitter_m;
            let jy = rng.random_range(-1.0..=1.0) * cfg.jitter_m;
            *p = Point::new(
                cfg.margin_m + c as f64 * cfg.block_m + jx,
                cfg.margin_m + r as f64 * cfg.block_m + jy,
            );
            nodes.push(RoadNode::new(node_id(r, c), p.x, p.y));
        }
    }

    // Segment endpoints as grid coordinates; horizontal ones first.
    let mut ends = Vec::new();
    let mut lines = Vec::new();
    for r in 0..=rows {
        lines.push(Line {
            segments: ends.len()..ends.len() + cols,
            arterial: r % cfg.arterial_every == 0,
        });
        for c in 0..cols {
            ends.push(((r, c), (r, c + 1)));
        }
    }
    for c in 0..=cols {
        lines.push(Line {
            segments: ends.len()..ends.len() + rows,
            arterial: c % cfg.arterial_every == 0,
        });
        for r in 0..rows {
            ends.push(((r, c), (r + 1, c)));
        }
    }
    let true_class = assign_classes(cfg, &lines, ends.len(), &mut rng);
    let segments: Vec<Segment> = ends
        .iter()
        .zip(&true_class)
        .map(|(&((r0, c0), (r1, c1)), &class)| Segment {
            a: pos[r0][c0],
            b: pos[r1][c1],
            class,
        })
        .collect();

    let mut labels_by_segment = true_class.clone();
    let flips = (cfg.label_noise * segments.len() as f64).round() as usize;
    for i in index::sample(&mut rng, segments.len(), flips).into_vec() {
        let shift = rng.random_range(1..NUM_CLASSES);
        labels_by_segment[i] = (labels_by_segment[i] + shift) % NUM_CLASSES;
    }

    let speed_noise: Normal<f64> = Normal::new(1.0, 0.12).expect("valid normal");
    let volume_noise: LogNormal<f64> = LogNormal::new(0.0, 0.3).expect("valid lognormal");
    let mut edges = Vec::with_capacity(2 * segments.len());
    let mut labels = BTreeMap::new();
    for (s, (&((r0, c0), (r1, c1)), seg)) in ends.iter().zip(&segments).enumerate() {
        let label = HighwayClass::from_index(labels_by_segment[s])?;
        for (k, (from, to, geom)) in [
            (node_id(r0, c0), node_id(r1, c1), vec![seg.a, seg.b]),
            (node_id(r1, c1), node_id(r0, c0), vec![seg.b, seg.a]),
        ]
        .into_iter()
        .enumerate()
        {
            let id = format!("e{:05}", 2 * s + k);
            let mut e = RoadEdge::from_geometry(id.clone(), from, to, geom)?;
            let kmh = SPEED_KMH[seg.class] * speed_noise.sample(&mut rng).max(0.3);
            e.travel_time_s = Some(e.length_m / (kmh / 3.6));
            e.throughput_vpd =
                Some((THROUGHPUT_VPD[seg.class] * volume_noise.sample(&mut rng)).round());
            e.highway = Some(label);
            labels.insert(id, label);
            edges.push(e);
        }
    }
    let graph = RoadGraph::new(nodes, edges)?;
    let (rasters, signal) = paint(cfg, &segments, &pos, &mut rng)?;
    Ok(SynthOutput {
        graph,
        labels,
        rasters,
        signal,
    })
}

fn paint(
    cfg: &SynthConfig,
    segments: &[Segment],
    pos: &[Vec<Point>],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<RasterGrid>, PlantedSignal)> {
    let (rows, cols) = (cfg.grid_rows, cfg.grid_cols);
    let cs = cfg.cellsize_m;
    let width = cols as f64 * cfg.block_m + 2.0 * cfg.margin_m;
    let height = rows as f64 * cfg.block_m + 2.0 * cfg.margin_m;
    let ncols = (width / cs).ceil() as usize;
    let nrows = (height / cs).ceil() as usize;
    let n_h = (rows + 1) * cols;
    let horizontal = |r: usize, c: usize| r * cols + c;
    let vertical = |r: usize, c: usize| n_h + c * rows + r;
    let step = cfg.intensity_step;
    let pixel_noise =
        Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid normal");
    let dsm_noise = Normal::new(0.0, DSM_NOISE).expect("valid normal");
    let noise = |rng: &mut ChaCha8Rng| {
        if cfg.noise_sigma > 0.0 {
            pixel_noise.sample(rng)
        } else {
            0.0
        }
    };
    let junction_r = ROAD_WIDTH_M[0] / 2.0 + 2.0;

    let mut chans = vec![vec![0.0; ncols * nrows]; 4];
    let mut road_sum = [0.0f64; NUM_CLASSES];
    let mut road_n = [0usize; NUM_CLASSES];
    for row in 0..nrows {
        for col in 0..ncols {
            let p = Point::new(
                (col as f64 + 0.5) * cs,
                (nrows as f64 - row as f64 - 0.5) * cs,
            );
            let fc = ((p.x - cfg.margin_m) / cfg.block_m).floor() as i64;
            let fr = ((p.y - cfg.margin_m) / cfg.block_m).floor() as i64;
            let mut best: Option<(f64, f64, usize)> = None;
            let mut near_node = f64::INFINITY;
            for r in (fr - 1).max(0)..=(fr + 2).min(rows as i64) {
                for c in (fc - 1).max(0)..=(fc + 2).min(cols as i64) {
                    let (r, c) = (r as usize, c as usize);
                    near_node = near_node.min(p.distance(&pos[r][c]));
                    let mut consider = |s: usize| {
                        let seg = &segments[s];
                        let (d, t) = distance_to_segment(p, seg.a, seg.b);
                        if best.is_none_or(|(bd, _, _)| d < bd) {
                            best = Some((d, t, s));
                        }
                    };
                    if c < cols {
                        consider(horizontal(r, c));
                    }
                    if r < rows {
                        consider(vertical(r, c));
                    }
                }
            }
            let idx = row * ncols + col;
            let (mut red, mut green, mut blue, mut dsm) = (BACKGROUND, BACKGROUND, JUNCTION, 0.0);
            let mut road_class = None;
            if near_node <= junction_r {
                red = JUNCTION;
                green = JUNCTION;
            } else if let Some((d, t, s)) = best {
                let k = segments[s].class;
                let kf = k as f64;
                let len = segments[s].a.distance(&segments[s].b);
                let half = ROAD_WIDTH_M[k] / 2.0;
                if d <= half {
                    red = 40.0 + step * kf;
                    blue = 220.0 - step * kf;
                    green = JUNCTION;
                    road_class = Some(k);
                } else if d <= half + 18.0 && t >= 20.0 && t <= len - 20.0 {
                    green = 40.0 + step * kf;
                } else if (28.0..=48.0).contains(&d) && t >= 30.0 && t <= len - 30.0 {
                    red = ROOF;
                    green = ROOF;
                    blue = ROOF;
                    dsm = 4.0 + 5.0 * kf;
                }
            }
            let px = |v: f64, rng: &mut ChaCha8Rng| (v + noise(rng)).round().clamp(0.0, 255.0);
            chans[0][idx] = px(red, rng);
            chans[1][idx] = px(green, rng);
            chans[2][idx] = px(blue, rng);
            chans[3][idx] = ((dsm + dsm_noise.sample(rng)) * 100.0).round() / 100.0;
            if let Some(k) = road_class {
                road_sum[k] += chans[0][idx];
                road_n[k] += 1;
            }
        }
    }
    let road_r_mean: Vec<Option<f64>> = (0..NUM_CLASSES)
        .map(|k| (road_n[k] > 0).then(|| road_sum[k] / road_n[k] as f64))
        .collect();
    let painted: Vec<f64> = road_r_mean.iter().flatten().copied().collect();
    let min_gap = painted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let signal = PlantedSignal {
        road_r_mean,
        min_gap,
        required_gap: 3.0 * cfg.noise_sigma,
    };
    if min_gap < signal.required_gap {
        return Err(Error::Validation(format!(
            "planted signal too weak: class means {min_gap:.2} apart, need {:.2}",
            signal.required_gap
        )));
    }
    let grids = ["R", "G", "B", "DSM"]
        .iter()
        .zip(chans)
        .map(|(name, values)| {
            RasterGrid::new(
                *name,
                Point::new(0.0, 0.0),
                cs,
                ncols,
                nrows,
                DEFAULT_NODATA,
                values,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grids, signal))
}

pub const GRAPH_FILE: &str = "graph.jsonl";
pub const LABELS_FILE: &str = "labels.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Paths of the files written by [`write_synthetic`].
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub graph: PathBuf,
    pub labels: PathBuf,
    pub manifest: PathBuf,
}

pub fn write_synthetic(out: &SynthOutput, dir: &Path) -> Result<SynthPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SynthPaths {
        graph: dir.join(GRAPH_FILE),
        labels: dir.join(LABELS_FILE),
        manifest: dir.join(MANIFEST_FILE),
    };
    save_graph(&out.graph, &paths.graph)?;
    save_labels(&out.labels, &paths.labels)?;
    let mut channels = Vec::new();
    for grid in &out.rasters {
        let file = format!("{}.asc", grid.channel_name);
        save_raster(grid, dir.join(&file))?;
        channels.push(ChannelEntry {
            name: grid.channel_name.clone(),
            path: file.into(),
            range_lo: None,
            range_hi: None,
        });
    }
    let manifest = serde_json::to_string_pretty(&RasterManifest { channels })? + "\n";
    fs::write(&paths.manifest, manifest).map_err(|e| Error::io(&paths.manifest, e))?;
    Ok(paths)
}

pub fn save_labels(labels: &BTreeMap<String, HighwayClass>, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(labels)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<String, HighwayClass>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, String> = serde_json::from_str(&text)?;
    raw.into_iter()
        .map(|(id, label)| Ok((id, label.parse()?)))
        .collect()
}
