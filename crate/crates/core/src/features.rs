//! Per-segment feature vectors: geometric, binary, traffic and (optionally)
//! raster histogram features, plus train-only z-score normalisation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample_geometry, Point};
use crate::graph::{RoadEdge, RoadGraph};
use crate::raster::{intensity_histogram, sample_patch, Channel, FootprintRect, Histogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Continuous,
    Binary,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSlot {
    pub name: String,
    pub width: usize,
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    /// Number of equally spaced points the geometry is resampled to.
    pub geometry_points: usize,
    pub include_vision: bool,
    /// Raster channels, in feature order.
    pub channels: Vec<String>,
    pub bins: usize,
    pub footprint_width_m: f64,
    pub footprint_height_m: f64,
    /// Append a 0/1 presence flag after each traffic attribute and accept
    /// unmatched roads (value 0).
    pub gps_presence_flags: bool,
    pub normalize_binary: bool,
    pub normalize_histograms: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            geometry_points: 5,
            include_vision: false,
            channels: vec!["R".into(), "G".into(), "B".into(), "DSM".into()],
            bins: crate::raster::DEFAULT_BINS,
            footprint_width_m: 120.0,
            footprint_height_m: 120.0,
            gps_presence_flags: false,
            normalize_binary: false,
            normalize_histograms: false,
        }
    }
}

impl FeatureSpec {
    pub fn with_vision(mut self, on: bool) -> Self {
        self.include_vision = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.geometry_points < 2 {
            return Err(Error::Config("geometry_points must be at least 2".into()));
        }
        if self.include_vision && (self.bins == 0 || self.channels.is_empty()) {
            return Err(Error::Config(
                "vision features need channels and bins".into(),
            ));
        }
        if !(self.footprint_width_m > 0.0 && self.footprint_height_m > 0.0) {
            return Err(Error::Config("footprint extents must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<FeatureSlot> {
        let slot = |name: &str, width, kind| FeatureSlot {
            name: name.to_string(),
            width,
            kind,
        };
        let mut l = vec![
            slot("length_m", 1, SlotKind::Continuous),
            slot("bearing_sin_cos", 2, SlotKind::Continuous),
            slot("centroid_km", 2, SlotKind::Continuous),
            slot(
                "geometry_offsets_m",
                2 * self.geometry_points,
                SlotKind::Continuous,
            ),
            slot("oneway", 1, SlotKind::Binary),
            slot("bridge", 1, SlotKind::Binary),
            slot("tunnel", 1, SlotKind::Binary),
            slot("travel_time_s", 1, SlotKind::Continuous),
        ];
        if self.gps_presence_flags {
            l.push(slot("travel_time_present", 1, SlotKind::Binary));
        }
        l.push(slot("throughput_vpd", 1, SlotKind::Continuous));
        if self.gps_presence_flags {
            l.push(slot("throughput_present", 1, SlotKind::Binary));
        }
        if self.include_vision {
            for c in &self.channels {
                l.push(slot(&format!("hist_{c}"), self.bins, SlotKind::Histogram));
            }
        }
        l
    }

    pub fn dimension(&self) -> usize {
        self.layout().iter().map(|s| s.width).sum()
    }

    /// Per-dimension flag: true if the dimension is z-scored.
    pub fn normalized_dims(&self) -> Vec<bool> {
        self.layout()
            .iter()
            .flat_map(|s| {
                let on = match s.kind {
                    SlotKind::Continuous => true,
                    SlotKind::Binary => self.normalize_binary,
                    SlotKind::Histogram => self.normalize_histograms,
                };
                std::iter::repeat_n(on, s.width)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub edge_id: String,
    pub values: Vec<f64>,
}

fn bool01(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Builds the feature vector of one edge. `origin` is the reference point
/// centroids are expressed against (the dataset bounding-box centre).
pub fn assemble_features(
    edge: &RoadEdge,
    spec: &FeatureSpec,
    origin: Point,
    histograms: Option<&[Histogram]>,
) -> Result<FeatureVector> {
    let resampled = resample_geometry(&edge.geometry, spec.geometry_points)?;
    let mut v = Vec::with_capacity(spec.dimension());
    v.push(edge.length_m);
    let b = edge.bearing_deg.to_radians();
    v.extend([b.sin(), b.cos()]);
    v.extend([
        (resampled.centroid.x - origin.x) / 1000.0,
        (resampled.centroid.y - origin.y) / 1000.0,
    ]);
    v.extend(&resampled.offsets);
    v.extend([
        bool01(edge.oneway),
        bool01(edge.bridge),
        bool01(edge.tunnel),
    ]);
    for (name, value) in [
        ("travel_time_s", edge.travel_time_s),
        ("throughput_vpd", edge.throughput_vpd),
    ] {
        match (value, spec.gps_presence_flags) {
            (Some(x), false) => v.push(x),
            (Some(x), true) => v.extend([x, 1.0]),
            (None, true) => v.extend([0.0, 0.0]),
            (None, false) => {
                return Err(Error::AttributeMissing {
                    edge: edge.id.clone(),
                    attribute: name,
                })
            }
        }
    }
    match (spec.include_vision, histograms) {
        (true, Some(hists)) => {
            if hists.len() != spec.channels.len() {
                return Err(Error::DimensionMismatch {
                    expected: spec.channels.len(),
                    found: hists.len(),
                });
            }
            for h in hists {
                if h.bins.len() != spec.bins {
                    return Err(Error::DimensionMismatch {
                        expected: spec.bins,
                        found: h.bins.len(),
                    });
                }
                v.extend(&h.bins);
            }
        }
        (false, None) => {}
        (true, None) => {
            return Err(Error::AttributeMissing {
                edge: edge.id.clone(),
                attribute: "histograms",
            })
        }
        (false, Some(_)) => {
            return Err(Error::Validation(
                "histograms supplied but vision features are disabled".into(),
            ))
        }
    }
    if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "feature {bad} of edge {}",
            edge.id
        )));
    }
    debug_assert_eq!(v.len(), spec.dimension());
    Ok(FeatureVector {
        edge_id: edge.id.clone(),
        values: v,
    })
}

/// Histograms of every channel over the footprint of `edge`. Off-raster
/// footprints give all-zero histograms.
pub fn edge_histograms(
    edge: &RoadEdge,
    spec: &FeatureSpec,
    channels: &[Channel],
) -> Result<Vec<Histogram>> {
    let r = resample_geometry(&edge.geometry, spec.geometry_points)?;
    let rect = FootprintRect::new(
        r.centroid,
        edge.bearing_deg,
        spec.footprint_width_m,
        spec.footprint_height_m,
    )?;
    channels
        .iter()
        .map(|ch| match sample_patch(&ch.grid, &rect) {
            Ok(px) => intensity_histogram(&px, spec.bins, ch.range_lo, ch.range_hi),
            Err(Error::EmptyPatch) => {
                warn!(
                    "edge {}: footprint has no valid {} pixels, using zero histogram",
                    edge.id, ch.grid.channel_name
                );
                Ok(Histogram::zeros(spec.bins, ch.range_lo, ch.range_hi))
            }
            Err(e) => Err(e),
        })
        .collect()
}

/// Feature rows for every edge of a graph, in edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub spec: FeatureSpec,
    pub rows: Vec<FeatureVector>,
}

impl FeatureTable {
    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }
}

fn check_channels(spec: &FeatureSpec, channels: &[Channel]) -> Result<()> {
    if channels.len() != spec.channels.len() {
        return Err(Error::Config(format!(
            "feature spec lists {} channels, raster set has {}",
            spec.channels.len(),
            channels.len()
        )));
    }
    for (want, have) in spec.channels.iter().zip(channels) {
        if !want.eq_ignore_ascii_case(&have.grid.channel_name) {
            return Err(Error::Config(format!(
                "expected channel {want}, raster set has {}",
                have.grid.channel_name
            )));
        }
    }
    Ok(())
}

/// Assembles features for all edges. `origin` defaults to the centre of the
/// graph bounding box.
pub fn build_features(
    g: &RoadGraph,
    spec: &FeatureSpec,
    channels: Option<&[Channel]>,
    origin: Option<Point>,
) -> Result<FeatureTable> {
    spec.validate()?;
    let channels = if spec.include_vision {
        let ch = channels
            .ok_or_else(|| Error::Config("vision features need a raster manifest".into()))?;
        check_channels(spec, ch)?;
        Some(ch)
    } else {
        None
    };
    let origin = origin.unwrap_or_else(|| match g.bounds() {
        Some((lo, hi)) => Point::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0),
        None => Point::new(0.0, 0.0),
    });
    let rows = g
        .edges()
        .par_iter()
        .map(|e| {
            let hists = channels
                .map(|ch| edge_histograms(e, spec, ch))
                .transpose()?;
            assemble_features(e, spec, origin, hists.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable {
        spec: spec.clone(),
        rows,
    })
}

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    feature_spec: FeatureSpec,
    layout: Vec<FeatureSlot>,
    dimension: usize,
}

pub fn write_features<W: Write>(table: &FeatureTable, mut w: W) -> Result<()> {
    let io = |e| Error::io("<feature writer>", e);
    let header = FeatureHeader {
        feature_spec: table.spec.clone(),
        layout: table.spec.layout(),
        dimension: table.dimension(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for row in &table.rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_features<R: BufRead>(r: R) -> Result<FeatureTable> {
    let mut lines = r.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::EmptyInput)?;
    let first = first.map_err(|e| Error::parse(1, e.to_string()))?;
    let header: FeatureHeader =
        serde_json::from_str(&first).map_err(|e| Error::parse(1, e.to_string()))?;
    if header.layout != header.feature_spec.layout()
        || header.dimension != header.feature_spec.dimension()
    {
        return Err(Error::parse(1, "layout does not match feature spec"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FeatureVector =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if row.values.len() != header.dimension {
            return Err(Error::DimensionMismatch {
                expected: header.dimension,
                found: row.values.len(),
            });
        }
        rows.push(row);
    }
    Ok(FeatureTable {
        spec: header.feature_spec,
        rows,
    })
}

pub fn save_features(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(table, BufWriter::new(file))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(BufReader::new(file))
}

/// Per-dimension z-score statistics fit on training rows. Dimensions with
/// `std == 0` (constant, or opted out) pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// `active[d] == false` opts dimension `d` out of scaling.
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a [f64]>, active: &[bool]) -> Result<Self> {
        let dim = active.len();
        let mut sum = vec![0.0; dim];
        let mut rows: Vec<&[f64]> = Vec::new();
        for r in train {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            for (s, x) in sum.iter_mut().zip(r) {
                *s += x;
            }
            rows.push(r);
        }
        if rows.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(*r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let (mean, std) = mean
            .into_iter()
            .zip(var)
            .zip(active)
            .map(|((m, v), &on)| if on { (m, (v / n).sqrt()) } else { (0.0, 0.0) })
            .unzip();
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| if s > 0.0 { (x - m) / s } else { x })
            .collect()
    }
}

/// Fits on `train` rows and normalises every row of `all`.
pub fn fit_apply_normalizer(
    train: &[&[f64]],
    all: &[Vec<f64>],
    active: &[bool],
) -> Result<(Normalizer, Vec<Vec<f64>>)> {
    let norm = Normalizer::fit(train.iter().copied(), active)?;
    let out = all.iter().map(|r| norm.apply(r)).collect();
    Ok((norm, out))
}
