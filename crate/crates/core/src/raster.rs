//! Georeferenced raster channels in ESRI ASCII-grid form, oriented footprint
//! patches, and per-channel intensity histograms.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample_geometry, Point};
use crate::graph::RoadEdge;

pub const DEFAULT_BINS: usize = 32;
pub const DEFAULT_NODATA: f64 = -9999.0;

/// Single-channel pixel grid. Row 0 is the northernmost row.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cellsize: f64,
    pub ncols: usize,
    pub nrows: usize,
    pub nodata: f64,
    pub values: Vec<f64>,
    pub channel_name: String,
}

impl RasterGrid {
    pub fn new(
        channel_name: impl Into<String>,
        origin: Point,
        cellsize: f64,
        ncols: usize,
        nrows: usize,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let grid = RasterGrid {
            origin_x: origin.x,
            origin_y: origin.y,
            cellsize,
            ncols,
            nrows,
            nodata,
            values,
            channel_name: channel_name.into(),
        };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        if !(self.cellsize.is_finite() && self.cellsize > 0.0) {
            return Err(Error::Validation(format!(
                "cellsize {} must be positive",
                self.cellsize
            )));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::Validation("raster origin must be finite".into()));
        }
        if self.values.len() != self.ncols * self.nrows {
            return Err(Error::DimensionMismatch {
                expected: self.ncols * self.nrows,
                found: self.values.len(),
            });
        }
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.origin_x + (col as f64 + 0.5) * self.cellsize,
            self.origin_y + (self.nrows as f64 - row as f64 - 0.5) * self.cellsize,
        )
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || !v.is_finite()
    }

    /// Minimum and maximum over valid cells.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .copied()
            .filter(|&v| !self.is_nodata(v))
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

fn header_value<T: std::str::FromStr>(key: &str, tok: Option<&str>, line: usize) -> Result<T> {
    tok.ok_or_else(|| Error::parse(line, format!("{key} has no value")))?
        .parse::<T>()
        .map_err(|_| Error::parse(line, format!("invalid value for {key}")))
}

pub fn read_raster<R: Read>(reader: R, channel_name: &str) -> Result<RasterGrid> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centered = (false, false);
    let mut cellsize = None;
    let mut nodata = DEFAULT_NODATA;
    let mut rows: Vec<Vec<f64>> = Vec::new();

    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let mut toks = line.split_whitespace();
        let Some(first) = toks.next() else { continue };
        if rows.is_empty() && first.parse::<f64>().is_err() {
            match first.to_ascii_lowercase().as_str() {
                "ncols" => ncols = Some(header_value::<usize>(first, toks.next(), lineno)?),
                "nrows" => nrows = Some(header_value::<usize>(first, toks.next(), lineno)?),
                "xllcorner" => xll = Some(header_value::<f64>(first, toks.next(), lineno)?),
                "yllcorner" => yll = Some(header_value::<f64>(first, toks.next(), lineno)?),
                "xllcenter" => {
                    xll = Some(header_value::<f64>(first, toks.next(), lineno)?);
                    centered.0 = true;
                }
                "yllcenter" => {
                    yll = Some(header_value::<f64>(first, toks.next(), lineno)?);
                    centered.1 = true;
                }
                "cellsize" => cellsize = Some(header_value::<f64>(first, toks.next(), lineno)?),
                "nodata_value" => nodata = header_value::<f64>(first, toks.next(), lineno)?,
                other => return Err(Error::parse(lineno, format!("unknown header key {other}"))),
            }
            continue;
        }
        let row = std::iter::once(first)
            .chain(toks)
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("invalid cell value {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }

    let missing = |k: &str| Error::parse(0, format!("missing header {k}"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut yll = yll.ok_or_else(|| missing("yllcorner"))?;
    if centered.0 {
        xll -= cellsize / 2.0;
    }
    if centered.1 {
        yll -= cellsize / 2.0;
    }

    // one text line per raster row is the common layout; check it strictly
    if rows.len() == nrows {
        if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
            return Err(Error::DimensionMismatch {
                expected: ncols,
                found: bad.len(),
            });
        }
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    RasterGrid::new(
        channel_name,
        Point::new(xll, yll),
        cellsize,
        ncols,
        nrows,
        nodata,
        values,
    )
}

pub fn load_raster(path: impl AsRef<Path>, channel_name: &str) -> Result<RasterGrid> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_raster(file, channel_name)
}

pub fn write_raster<W: Write>(grid: &RasterGrid, w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "ncols {}", grid.ncols)?;
    writeln!(w, "nrows {}", grid.nrows)?;
    writeln!(w, "xllcorner {}", grid.origin_x)?;
    writeln!(w, "yllcorner {}", grid.origin_y)?;
    writeln!(w, "cellsize {}", grid.cellsize)?;
    writeln!(w, "NODATA_value {}", grid.nodata)?;
    let mut line = String::new();
    for row in grid.values.chunks(grid.ncols.max(1)) {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn save_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_raster(grid, file).map_err(|e| Error::io(path, e))
}

/// One entry of a raster manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_hi: Option<f64>,
}

/// Dataset manifest listing channel files in order R, G, B, DSM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterManifest {
    pub channels: Vec<ChannelEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub grid: RasterGrid,
    pub range_lo: f64,
    pub range_hi: f64,
}

impl Channel {
    /// Histogram range defaults: `[0, 256)` for imagery channels; the valid
    /// value range for a channel named `dsm`.
    pub fn new(grid: RasterGrid, range_lo: Option<f64>, range_hi: Option<f64>) -> Result<Self> {
        let (default_lo, default_hi) = if grid.channel_name.eq_ignore_ascii_case("dsm") {
            let (lo, hi) = grid.value_range().unwrap_or((0.0, 1.0));
            (lo, if hi > lo { hi } else { lo + 1.0 })
        } else {
            (0.0, 256.0)
        };
        let lo = range_lo.unwrap_or(default_lo);
        let hi = range_hi.unwrap_or(default_hi);
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidRange { lo, hi });
        }
        Ok(Channel {
            grid,
            range_lo: lo,
            range_hi: hi,
        })
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Channel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: RasterManifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest
        .channels
        .iter()
        .map(|c| {
            let grid = load_raster(base.join(&c.path), &c.name)?;
            Channel::new(grid, c.range_lo, c.range_hi)
        })
        .collect()
}

/// Oriented rectangle: `height_m` runs along the bearing, `width_m` across.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintRect {
    pub center: Point,
    pub bearing_deg: f64,
    pub width_m: f64,
    pub height_m: f64,
}

impl FootprintRect {
    pub fn new(center: Point, bearing_deg: f64, width_m: f64, height_m: f64) -> Result<Self> {
        if !(width_m > 0.0 && height_m > 0.0 && width_m.is_finite() && height_m.is_finite()) {
            return Err(Error::Validation(format!(
                "footprint extents {width_m} x {height_m} must be positive"
            )));
        }
        if !(center.is_finite() && bearing_deg.is_finite()) {
            return Err(Error::Degenerate(
                "footprint center or bearing not finite".into(),
            ));
        }
        Ok(FootprintRect {
            center,
            bearing_deg,
            width_m,
            height_m,
        })
    }

    /// `(sin, cos)` of the bearing folded into `[0, 180)`. The rectangle is
    /// symmetric under a half turn, and folding keeps the membership test
    /// bit-identical for `b` and `b + 180`.
    fn axes(&self) -> (f64, f64) {
        let b = self.bearing_deg.rem_euclid(180.0);
        if b == 0.0 {
            (0.0, 1.0)
        } else if b == 90.0 {
            (1.0, 0.0)
        } else {
            let r = b.to_radians();
            (r.sin(), r.cos())
        }
    }

    /// Coordinates of `p` in the rectangle frame: `(across, along)`.
    fn local(&self, p: &Point) -> (f64, f64) {
        let (s, c) = self.axes();
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        (dx * c - dy * s, dx * s + dy * c)
    }

    pub fn contains(&self, p: &Point) -> bool {
        let (across, along) = self.local(p);
        across.abs() <= self.width_m / 2.0 && along.abs() <= self.height_m / 2.0
    }

    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.axes();
        let (hw, hh) = (self.width_m / 2.0, self.height_m / 2.0);
        let at = |a: f64, b: f64| {
            // across axis (c, -s), along axis (s, c)
            Point::new(self.center.x + a * c + b * s, self.center.y - a * s + b * c)
        };
        [at(-hw, -hh), at(hw, -hh), at(hw, hh), at(-hw, hh)]
    }
}

/// Rectangle centred on the centroid of the edge geometry resampled to
/// `resample_points`, oriented along the edge bearing.
pub fn footprint_rectangle(
    edge: &RoadEdge,
    width_m: f64,
    height_m: f64,
    resample_points: usize,
) -> Result<FootprintRect> {
    let r = resample_geometry(&edge.geometry, resample_points)?;
    FootprintRect::new(r.centroid, edge.bearing_deg, width_m, height_m)
}

/// Valid cells whose centres fall inside `rect`, scanned row-major over the
/// rectangle's bounding box (north row first).
pub fn sample_patch(raster: &RasterGrid, rect: &FootprintRect) -> Result<Vec<f64>> {
    let corners = rect.corners();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &corners {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let cs = raster.cellsize;
    let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
    // widened by one cell; `contains` decides membership
    let c0 = clamp(((xmin - raster.origin_x) / cs - 1.5).floor(), raster.ncols);
    let c1 = clamp(((xmax - raster.origin_x) / cs + 1.5).ceil(), raster.ncols);
    let top = raster.origin_y + raster.nrows as f64 * cs;
    let r0 = clamp(((top - ymax) / cs - 1.5).floor(), raster.nrows);
    let r1 = clamp(((top - ymin) / cs + 1.5).ceil(), raster.nrows);

    let mut out = Vec::new();
    for row in r0..r1 {
        for col in c0..c1 {
            let v = raster.get(row, col);
            if raster.is_nodata(v) {
                continue;
            }
            if rect.contains(&raster.cell_center(row, col)) {
                out.push(v);
            }
        }
    }
    if out.is_empty() {
        Err(Error::EmptyPatch)
    } else {
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Relative frequencies; all zero when `pixel_count == 0`.
    pub bins: Vec<f64>,
    pub range_lo: f64,
    pub range_hi: f64,
    pub pixel_count: usize,
}

impl Histogram {
    pub fn zeros(bins: usize, range_lo: f64, range_hi: f64) -> Self {
        Histogram {
            bins: vec![0.0; bins],
            range_lo,
            range_hi,
            pixel_count: 0,
        }
    }
}

/// Equal-width histogram over `[range_lo, range_hi]`. Out-of-range values
/// clamp into the end bins; non-finite values are ignored.
pub fn intensity_histogram(
    pixels: &[f64],
    bins: usize,
    range_lo: f64,
    range_hi: f64,
) -> Result<Histogram> {
    if !(range_lo.is_finite() && range_hi.is_finite() && range_hi > range_lo) {
        return Err(Error::InvalidRange {
            lo: range_lo,
            hi: range_hi,
        });
    }
    if bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    let scale = bins as f64 / (range_hi - range_lo);
    let mut n = 0usize;
    for &v in pixels.iter().filter(|v| v.is_finite()) {
        let b = ((v - range_lo) * scale).floor();
        let idx = if b < 0.0 {
            0
        } else {
            (b as usize).min(bins - 1)
        };
        counts[idx] += 1;
        n += 1;
    }
    if n == 0 {
        return Ok(Histogram::zeros(bins, range_lo, range_hi));
    }
    Ok(Histogram {
        bins: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        range_lo,
        range_hi,
        pixel_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(ncols: usize, nrows: usize, cs: f64, f: impl Fn(usize, usize) -> f64) -> RasterGrid {
        let values = (0..nrows)
            .flat_map(|r| (0..ncols).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        RasterGrid::new(
            "R",
            Point::new(0.0, 0.0),
            cs,
            ncols,
            nrows,
            DEFAULT_NODATA,
            values,
        )
        .unwrap()
    }

    #[test]
    fn reads_two_by_two() {
        let text = "ncols 2\nnrows 2\nxllcorner 10\nyllcorner 20\ncellsize 0.5\nNODATA_value -9999\n1 2\n3 4\n";
        let g = read_raster(text.as_bytes(), "R").unwrap();
        assert_eq!((g.ncols, g.nrows), (2, 2));
        assert_eq!(g.values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.cell_center(0, 0), Point::new(10.25, 20.75));
    }

    #[test]
    fn short_rows_are_dimension_mismatch() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n";
        assert!(matches!(
            read_raster(text.as_bytes(), "R"),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn negative_cellsize_rejected() {
        let text =
            "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize -1\nNODATA_value -9999\n5\n";
        assert!(matches!(
            read_raster(text.as_bytes(), "R"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn write_read_round_trip() {
        let g = grid(3, 2, 2.5, |r, c| (r * 3 + c) as f64 * 1.25 - 0.5);
        let mut buf = Vec::new();
        write_raster(&g, &mut buf).unwrap();
        assert_eq!(read_raster(buf.as_slice(), "R").unwrap(), g);
    }

    #[test]
    fn footprint_corners() {
        let set = |r: FootprintRect| {
            let mut v: Vec<(i64, i64)> = r
                .corners()
                .iter()
                .map(|p| ((p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64))
                .collect();
            v.sort();
            v
        };
        let axis = FootprintRect::new(Point::new(0.0, 0.0), 0.0, 120.0, 120.0).unwrap();
        let expect: Vec<(i64, i64)> = {
            let mut v = vec![(-60, -60), (-60, 60), (60, -60), (60, 60)]
                .into_iter()
                .map(|(a, b)| (a * 1_000_000, b * 1_000_000))
                .collect::<Vec<_>>();
            v.sort();
            v
        };
        assert_eq!(set(axis), expect);
        let east = FootprintRect::new(Point::new(0.0, 0.0), 90.0, 120.0, 120.0).unwrap();
        assert_eq!(set(east), expect);

        let diag = FootprintRect::new(Point::new(0.0, 0.0), 45.0, 120.0, 120.0).unwrap();
        let d = 60.0 * 2f64.sqrt();
        for target in [(0.0, d), (0.0, -d), (d, 0.0), (-d, 0.0)] {
            assert!(diag
                .corners()
                .iter()
                .any(|p| (p.x - target.0).abs() < 1e-9 && (p.y - target.1).abs() < 1e-9));
        }
        assert!((d - 84.853).abs() < 1e-3);
    }

    #[test]
    fn footprint_from_edge_uses_centroid_and_bearing() {
        let e = RoadEdge::from_geometry(
            "e",
            "a",
            "b",
            vec![Point::new(0.0, 0.0), Point::new(100.0, 0.0)],
        )
        .unwrap();
        let r = footprint_rectangle(&e, 120.0, 120.0, 5).unwrap();
        assert_eq!(r.center, Point::new(50.0, 0.0));
        assert_eq!(r.bearing_deg, 90.0);
        assert!(FootprintRect::new(Point::new(0.0, 0.0), 0.0, 0.0, 10.0).is_err());
    }

    #[test]
    fn constant_raster_patch() {
        let g = grid(40, 40, 1.0, |_, _| 7.0);
        let rect = FootprintRect::new(Point::new(20.0, 20.0), 30.0, 10.0, 10.0).unwrap();
        let px = sample_patch(&g, &rect).unwrap();
        assert!(!px.is_empty());
        assert!(px.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn patch_off_raster_is_empty() {
        let g = grid(10, 10, 1.0, |_, _| 1.0);
        let rect = FootprintRect::new(Point::new(500.0, 500.0), 0.0, 10.0, 10.0).unwrap();
        assert!(matches!(sample_patch(&g, &rect), Err(Error::EmptyPatch)));
    }

    #[test]
    fn nodata_cells_excluded() {
        let g = grid(10, 10, 1.0, |r, _| if r < 5 { DEFAULT_NODATA } else { 3.0 });
        let rect = FootprintRect::new(Point::new(5.0, 5.0), 0.0, 10.0, 10.0).unwrap();
        let px = sample_patch(&g, &rect).unwrap();
        assert_eq!(px.len(), 50);
        assert!(px.iter().all(|&v| v == 3.0));
    }

    /// Brute-force membership count over every cell centre.
    fn brute_force_count(g: &RasterGrid, rect: &FootprintRect) -> usize {
        let (s, c) = {
            let r = rect.bearing_deg.to_radians();
            (r.sin(), r.cos())
        };
        let mut n = 0;
        for row in 0..g.nrows {
            for col in 0..g.ncols {
                let p = g.cell_center(row, col);
                let (dx, dy) = (p.x - rect.center.x, p.y - rect.center.y);
                let along = dx * s + dy * c;
                let across = dx * c - dy * s;
                if along.abs() <= rect.height_m / 2.0 && across.abs() <= rect.width_m / 2.0 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn ten_metre_square_on_half_metre_grid() {
        let g = grid(200, 200, 0.5, |r, c| (r + c) as f64);
        let rect = FootprintRect::new(Point::new(50.0, 50.0), 0.0, 10.0, 10.0).unwrap();
        let oracle = brute_force_count(&g, &rect);
        assert_eq!(oracle, 400);
        assert_eq!(sample_patch(&g, &rect).unwrap().len(), oracle);
    }

    #[test]
    fn axis_aligned_patch_equals_index_slice() {
        let g = grid(60, 50, 0.5, |r, c| (r * 1000 + c) as f64);
        // centre on a cell corner so no centre lies on the boundary
        let rect = FootprintRect::new(Point::new(12.0, 9.0), 0.0, 7.0, 5.0).unwrap();
        let px = sample_patch(&g, &rect).unwrap();
        // x in [8.5, 15.5] -> cols 17..=30 ; y in [6.5, 11.5] -> rows (from top 25 m) 27..=36
        let mut expected = Vec::new();
        for row in 27..=36 {
            for col in 17..=30 {
                expected.push(g.get(row, col));
            }
        }
        assert_eq!(px, expected);
    }

    #[test]
    fn histogram_examples() {
        let h = intensity_histogram(&[0.0; 50], 32, 0.0, 256.0).unwrap();
        assert_eq!(h.bins[0], 1.0);
        assert!(h.bins[1..].iter().all(|&b| b == 0.0));

        let ramp: Vec<f64> = (0..256).map(f64::from).collect();
        let h = intensity_histogram(&ramp, 32, 0.0, 256.0).unwrap();
        assert!(h.bins.iter().all(|&b| b == 0.03125));

        let h = intensity_histogram(&[], 32, 0.0, 256.0).unwrap();
        assert_eq!(h.bins, vec![0.0; 32]);
        assert_eq!(h.pixel_count, 0);

        let h = intensity_histogram(&[256.0, 1e9, -5.0], 32, 0.0, 256.0).unwrap();
        assert_eq!(h.bins[31], 2.0 / 3.0);
        assert_eq!(h.bins[0], 1.0 / 3.0);

        assert!(matches!(
            intensity_histogram(&[1.0], 32, 5.0, 5.0),
            Err(Error::InvalidRange { .. })
        ));
    }

    #[test]
    fn dsm_channel_range_from_values() {
        let mut g = grid(2, 2, 1.0, |r, c| (r * 2 + c) as f64 * 10.0);
        g.channel_name = "DSM".into();
        let ch = Channel::new(g.clone(), None, None).unwrap();
        assert_eq!((ch.range_lo, ch.range_hi), (0.0, 30.0));
        g.channel_name = "R".into();
        let ch = Channel::new(g, None, None).unwrap();
        assert_eq!((ch.range_lo, ch.range_hi), (0.0, 256.0));
    }

    proptest! {
        #[test]
        fn histogram_normalised_and_permutation_invariant(
            mut px in prop::collection::vec(-10.0f64..300.0, 0..400),
            seed in any::<u64>(),
        ) {
            let h = intensity_histogram(&px, 32, 0.0, 256.0).unwrap();
            let total: f64 = h.bins.iter().sum();
            if px.is_empty() {
                prop_assert_eq!(total, 0.0);
            } else {
                prop_assert!((total - 1.0).abs() <= 1e-9);
            }
            prop_assert!(h.bins.iter().all(|&b| (0.0..=1.0).contains(&b)));
            use rand::{seq::SliceRandom, SeedableRng};
            px.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(intensity_histogram(&px, 32, 0.0, 256.0).unwrap(), h);
        }

        #[test]
        fn patch_invariant_under_half_turn(
            cx in 5.0f64..45.0, cy in 5.0f64..45.0, bearing in 0.0f64..360.0,
            w in 1.0f64..20.0, h in 1.0f64..20.0,
        ) {
            let g = grid(50, 50, 1.0, |r, c| (r * 50 + c) as f64);
            let a = FootprintRect::new(Point::new(cx, cy), bearing, w, h).unwrap();
            let b = FootprintRect::new(Point::new(cx, cy), bearing + 180.0, w, h).unwrap();
            let pa = sample_patch(&g, &a).ok();
            let pb = sample_patch(&g, &b).ok();
            prop_assert_eq!(pa, pb);
        }
    }
}
