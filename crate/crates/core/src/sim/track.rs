//! Polyline tracks with constant half-width.
//!
//! Text format, one item per line (`#` starts a comment):
//!
//! ```text
//! half_width 6.0
//! closed true
//! -100 -50
//! 100 -50
//! ...
//! -100 -50      # closed tracks repeat the first point
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::geometry::{SegmentGrid, Vec2};
use super::SimError;

const CLOSURE_TOL: f64 = 1e-9;
const GRID_CELL: f64 = 10.0;
const GRID_MARGIN: f64 = 20.0;

/// Nearest point of the centerline to some query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    /// arc length from the start point
    pub along: f64,
    /// signed distance from the axis, positive to the left of travel direction
    pub lateral: f64,
    /// direction of the track axis at the projection
    pub axis_angle: f64,
}

#[derive(Debug, Clone)]
pub struct Track {
    // closed tracks store each point once; the closing segment is implicit
    centerline: Vec<Vec2>,
    half_width: f64,
    closed: bool,
    // arc length at each centerline point
    cumulative: Vec<f64>,
    length: f64,
    edges: SegmentGrid,
}

impl Track {
    pub fn new(points: Vec<Vec2>, half_width: f64, closed: bool) -> Result<Self, SimError> {
        let bad = |m: String| Err(SimError::InvalidTrack(m));
        if !(half_width.is_finite() && half_width > super::car::CAR_WIDTH) {
            return bad(format!(
                "half width {half_width} must exceed the car width {}",
                super::car::CAR_WIDTH
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return bad("non-finite centerline point".into());
        }
        let mut points = points;
        if closed {
            if points.len() < 4 {
                return bad("a closed track needs at least three distinct points".into());
            }
            let (first, last) = (points[0], points[points.len() - 1]);
            if (first - last).norm() > CLOSURE_TOL {
                return bad(format!(
                    "closed track does not loop: first {first:?}, last {last:?}"
                ));
            }
            points.pop();
        } else if points.len() < 2 {
            return bad("an open track needs at least two points".into());
        }
        let n_segments = if closed {
            points.len()
        } else {
            points.len() - 1
        };
        for i in 0..n_segments {
            let (a, b) = (points[i], points[(i + 1) % points.len()]);
            if (b - a).norm() <= CLOSURE_TOL {
                return bad(format!("consecutive points {i} and {} coincide", i + 1));
            }
        }

        let mut cumulative = Vec::with_capacity(points.len());
        let mut length = 0.0;
        for i in 0..points.len() {
            cumulative.push(length);
            if i < n_segments {
                length += (points[(i + 1) % points.len()] - points[i]).norm();
            }
        }

        let (left, right) = offset_edges(&points, half_width, closed);
        let mut segments = Vec::new();
        for edge in [&left, &right] {
            for i in 0..n_segments {
                segments.push((edge[i], edge[(i + 1) % edge.len()]));
            }
        }
        Ok(Self {
            centerline: points,
            half_width,
            closed,
            cumulative,
            length,
            edges: SegmentGrid::new(segments, GRID_CELL, GRID_MARGIN),
        })
    }

    /// Straight open track from the origin along +x.
    pub fn straight(length: f64, half_width: f64) -> Result<Self, SimError> {
        Self::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(length, 0.0)],
            half_width,
            false,
        )
    }

    /// Counter-clockwise oval: two straights of length `straight` joined by
    /// half circles of `radius`, each approximated by `arc_segments` chords.
    /// The start line is at the beginning of the lower straight.
    pub fn oval(
        straight: f64,
        radius: f64,
        half_width: f64,
        arc_segments: usize,
    ) -> Result<Self, SimError> {
        let h = straight / 2.0;
        let mut points = vec![Vec2::new(-h, -radius)];
        let arc = |center: Vec2, from: f64, points: &mut Vec<Vec2>| {
            for k in 0..=arc_segments {
                let t = from + PI * k as f64 / arc_segments as f64;
                points.push(center + Vec2::from_angle(t) * radius);
            }
        };
        arc(Vec2::new(h, 0.0), -PI / 2.0, &mut points);
        arc(Vec2::new(-h, 0.0), PI / 2.0, &mut points);
        // the last arc point lands on the start point up to rounding
        let n = points.len();
        points[n - 1] = points[0];
        Self::new(points, half_width, true)
    }

    /// The default oval used by the experiments.
    pub fn default_oval() -> Self {
        Self::oval(200.0, 50.0, 6.0, 48).expect("default oval is valid")
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn centerline(&self) -> &[Vec2] {
        &self.centerline
    }

    fn n_segments(&self) -> usize {
        if self.closed {
            self.centerline.len()
        } else {
            self.centerline.len() - 1
        }
    }

    fn segment(&self, i: usize) -> (Vec2, Vec2) {
        (
            self.centerline[i],
            self.centerline[(i + 1) % self.centerline.len()],
        )
    }

    /// Track edges as segments (left edge first, then right edge).
    pub fn edge_segments(&self) -> &[(Vec2, Vec2)] {
        self.edges.segments()
    }

    pub(crate) fn edge_grid(&self) -> &SegmentGrid {
        &self.edges
    }

    /// Start position and axis direction.
    pub fn start(&self) -> (Vec2, f64) {
        let (a, b) = self.segment(0);
        (a, (b - a).angle())
    }

    /// Nearest centerline point, by exhaustive search over segments.
    pub fn project(&self, p: Vec2) -> Projection {
        let mut best: Option<(f64, Projection)> = None;
        for i in 0..self.n_segments() {
            let (a, b) = self.segment(i);
            let edge = b - a;
            let len = edge.norm();
            let u = ((p - a).dot(edge) / (len * len)).clamp(0.0, 1.0);
            let foot = a + edge * u;
            let dist = (p - foot).norm();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                let side = edge.cross(p - a);
                let lateral = if side >= 0.0 { dist } else { -dist };
                let mut along = self.cumulative[i] + u * len;
                if self.closed && along >= self.length {
                    along -= self.length;
                }
                best = Some((
                    dist,
                    Projection {
                        segment: i,
                        along,
                        lateral,
                        axis_angle: edge.angle(),
                    },
                ));
            }
        }
        best.expect("tracks have at least one segment").1
    }
}

// Miter offsets: each edge segment lies exactly `half_width` from its centerline segment.
fn offset_edges(points: &[Vec2], half_width: f64, closed: bool) -> (Vec<Vec2>, Vec<Vec2>) {
    let n = points.len();
    let normal = |i: usize, j: usize| (points[j] - points[i]).normalized().perp();
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for i in 0..n {
        let prev = if i > 0 {
            Some(normal(i - 1, i))
        } else if closed {
            Some(normal(n - 1, 0))
        } else {
            None
        };
        let next = if i + 1 < n {
            Some(normal(i, i + 1))
        } else if closed {
            Some(normal(n - 1, 0))
        } else {
            None
        };
        let offset = match (prev, next) {
            (Some(p), Some(q)) => {
                let m = (p + q).normalized();
                m * (half_width / m.dot(q))
            }
            (Some(p), None) | (None, Some(p)) => p * half_width,
            (None, None) => unreachable!("tracks have at least two points"),
        };
        left.push(points[i] + offset);
        right.push(points[i] - offset);
    }
    (left, right)
}

impl FromStr for Track {
    type Err = SimError;

    fn from_str(text: &str) -> Result<Self, SimError> {
        let mut half_width = None;
        let mut closed = None;
        let mut points = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| SimError::TrackParse {
                line: idx + 1,
                msg: m,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.as_slice() {
                ["half_width", v] => {
                    half_width = Some(v.parse::<f64>().map_err(|e| err(format!("{v:?}: {e}")))?)
                }
                ["closed", v] => {
                    closed = Some(v.parse::<bool>().map_err(|e| err(format!("{v:?}: {e}")))?)
                }
                [x, y] => {
                    let x = x.parse::<f64>().map_err(|e| err(format!("{x:?}: {e}")))?;
                    let y = y.parse::<f64>().map_err(|e| err(format!("{y:?}: {e}")))?;
                    points.push(Vec2::new(x, y));
                }
                _ => return Err(err(format!("unrecognised line {line:?}"))),
            }
        }
        let missing = |what: &str| SimError::TrackParse {
            line: 0,
            msg: format!("missing `{what}` header"),
        };
        Track::new(
            points,
            half_width.ok_or_else(|| missing("half_width"))?,
            closed.ok_or_else(|| missing("closed"))?,
        )
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "half_width {}", self.half_width)?;
        writeln!(f, "closed {}", self.closed)?;
        for p in &self.centerline {
            writeln!(f, "{} {}", p.x, p.y)?;
        }
        if self.closed {
            let p = self.centerline[0];
            writeln!(f, "{} {}", p.x, p.y)?;
        }
        Ok(())
    }
}
