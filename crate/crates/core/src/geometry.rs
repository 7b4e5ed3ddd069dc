//! Planar polyline utilities. Coordinates are projected meters; `y` points north.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn lerp(&self, other: &Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

pub fn arc_length(geometry: &[Point]) -> f64 {
    geometry.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Cumulative arc length at each vertex; first entry is 0.
pub fn cumulative_lengths(geometry: &[Point]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(geometry.len());
    out.push(0.0);
    for w in geometry.windows(2) {
        acc += w[0].distance(&w[1]);
        out.push(acc);
    }
    out
}

/// Compass bearing of the first-to-last displacement, degrees clockwise
/// from north, in `[0, 360)`.
pub fn edge_bearing(geometry: &[Point]) -> Result<f64> {
    if geometry.len() < 2 {
        return Err(Error::Degenerate(format!(
            "bearing needs at least 2 points, got {}",
            geometry.len()
        )));
    }
    let first = geometry[0];
    let last = geometry[geometry.len() - 1];
    let (dx, dy) = (last.x - first.x, last.y - first.y);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::Degenerate("first point equals last point".into()));
    }
    Ok(normalize_degrees(dx.atan2(dy).to_degrees()))
}

pub(crate) fn normalize_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Point at arc-length position `s` (clamped to the polyline).
fn point_at(geometry: &[Point], cum: &[f64], s: f64) -> Point {
    let total = cum[cum.len() - 1];
    if s <= 0.0 {
        return geometry[0];
    }
    if s >= total {
        return geometry[geometry.len() - 1];
    }
    // first vertex whose cumulative length exceeds s
    let hi = cum.partition_point(|&c| c <= s);
    let lo = hi - 1;
    let seg = cum[hi] - cum[lo];
    geometry[lo].lerp(&geometry[hi], (s - cum[lo]) / seg)
}

/// Sub-polyline between arc-length positions `s0 <= s1`. Both ends are
/// interpolated; original vertices strictly inside the interval are kept.
pub(crate) fn sub_polyline(geometry: &[Point], cum: &[f64], s0: f64, s1: f64) -> Vec<Point> {
    let mut out = vec![point_at(geometry, cum, s0)];
    for (p, &c) in geometry.iter().zip(cum) {
        if c > s0 && c < s1 {
            out.push(*p);
        }
    }
    if s1 > s0 {
        out.push(point_at(geometry, cum, s1));
    }
    out
}

/// Result of splitting a polyline at an arc-length fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPolyline {
    pub point: Point,
    pub before: Vec<Point>,
    pub after: Vec<Point>,
}

/// Locates the point at arc-length fraction `t` and splits the polyline
/// there. At `t = 0` (`t = 1`) the first (second) part is the single split
/// point.
pub fn interpolate_along(geometry: &[Point], t: f64) -> Result<SplitPolyline> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("split fraction {t} outside [0, 1]")));
    }
    let cum = checked_cumulative(geometry)?;
    let total = cum[cum.len() - 1];
    let s = if t == 1.0 { total } else { total * t };
    Ok(SplitPolyline {
        point: point_at(geometry, &cum, s),
        before: sub_polyline(geometry, &cum, 0.0, s),
        after: sub_polyline(geometry, &cum, s, total),
    })
}

fn checked_cumulative(geometry: &[Point]) -> Result<Vec<f64>> {
    if geometry.len() < 2 {
        return Err(Error::Degenerate(format!(
            "polyline needs at least 2 points, got {}",
            geometry.len()
        )));
    }
    let cum = cumulative_lengths(geometry);
    let total = cum[cum.len() - 1];
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate(format!("arc length {total}")));
    }
    Ok(cum)
}

/// Geometry resampled to a fixed number of equally spaced points.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub points: Vec<Point>,
    pub centroid: Point,
    /// `(northing, easting)` of each point relative to the centroid,
    /// interleaved per point.
    pub offsets: Vec<f64>,
}

pub fn resample_geometry(geometry: &[Point], m: usize) -> Result<Resampled> {
    if m < 2 {
        return Err(Error::Domain(format!("resample count {m} < 2")));
    }
    let cum = checked_cumulative(geometry)?;
    let total = cum[cum.len() - 1];
    let points: Vec<Point> = (0..m)
        .map(|j| {
            let s = if j == m - 1 {
                total
            } else {
                total * j as f64 / (m - 1) as f64
            };
            point_at(geometry, &cum, s)
        })
        .collect();
    let n = m as f64;
    let centroid = Point::new(
        points.iter().map(|p| p.x).sum::<f64>() / n,
        points.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let offsets = points
        .iter()
        .flat_map(|p| [p.y - centroid.y, p.x - centroid.x])
        .collect();
    Ok(Resampled {
        points,
        centroid,
        offsets,
    })
}

/// Shortest distance from `p` to any segment of the polyline.
pub fn distance_to_polyline(p: &Point, geometry: &[Point]) -> f64 {
    if geometry.len() == 1 {
        return p.distance(&geometry[0]);
    }
    geometry
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            if len2 == 0.0 {
                return p.distance(&a);
            }
            let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
            p.distance(&a.lerp(&b, t))
        })
        .fold(f64::INFINITY, f64::min)
}
