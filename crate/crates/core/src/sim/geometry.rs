//! Planar vectors, ray/segment intersection and a uniform grid for ray casts.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Self {
        self * (1.0 / self.norm())
    }

    /// Rotated a quarter turn counter-clockwise.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Distance along the ray `origin + t * dir` (`dir` of unit length) to the
/// segment `[a, b]`, if they meet at some `t >= 0`. Parallel segments are
/// treated as missed.
pub fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let edge = b - a;
    let denom = dir.cross(edge);
    if denom.abs() < 1e-14 {
        return None;
    }
    let w = a - origin;
    let t = w.cross(edge) / denom;
    let u = w.cross(dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Segments bucketed into square cells; rays walk the cells in order and
/// stop at the first cell whose exit lies beyond the best hit so far.
#[derive(Debug, Clone)]
pub struct SegmentGrid {
    segments: Vec<(Vec2, Vec2)>,
    min: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl SegmentGrid {
    /// `margin` extends the grid beyond the segments' bounding box so ray
    /// origins slightly outside it still take the fast path.
    pub fn new(segments: Vec<(Vec2, Vec2)>, cell: f64, margin: f64) -> Self {
        assert!(cell > 0.0);
        let (mut lo, mut hi) = (
            Vec2::new(f64::INFINITY, f64::INFINITY),
            Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for (a, b) in &segments {
            for p in [a, b] {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        if segments.is_empty() {
            lo = Vec2::default();
            hi = Vec2::default();
        }
        let min = lo - Vec2::new(margin, margin);
        let nx = (((hi.x - lo.x + 2.0 * margin) / cell).floor() as usize) + 1;
        let ny = (((hi.y - lo.y + 2.0 * margin) / cell).floor() as usize) + 1;
        let mut cells = vec![Vec::new(); nx * ny];
        for (idx, (a, b)) in segments.iter().enumerate() {
            let (x0, y0) = Self::cell_of(min, cell, Vec2::new(a.x.min(b.x), a.y.min(b.y)));
            let (x1, y1) = Self::cell_of(min, cell, Vec2::new(a.x.max(b.x), a.y.max(b.y)));
            for iy in y0.max(0)..=y1.min(ny as i64 - 1) {
                for ix in x0.max(0)..=x1.min(nx as i64 - 1) {
                    cells[iy as usize * nx + ix as usize].push(idx as u32);
                }
            }
        }
        Self {
            segments,
            min,
            cell,
            nx,
            ny,
            cells,
        }
    }

    fn cell_of(min: Vec2, cell: f64, p: Vec2) -> (i64, i64) {
        (
            ((p.x - min.x) / cell).floor() as i64,
            ((p.y - min.y) / cell).floor() as i64,
        )
    }

    pub fn segments(&self) -> &[(Vec2, Vec2)] {
        &self.segments
    }

    /// Nearest hit within `max_range` by testing every segment.
    pub fn cast_brute_force(&self, origin: Vec2, dir: Vec2, max_range: f64) -> Option<f64> {
        self.segments
            .iter()
            .filter_map(|(a, b)| ray_segment(origin, dir, *a, *b))
            .filter(|t| *t <= max_range)
            .min_by(f64::total_cmp)
    }

    /// Nearest hit within `max_range`.
    pub fn cast(&self, origin: Vec2, dir: Vec2, max_range: f64) -> Option<f64> {
        let (mut ix, mut iy) = Self::cell_of(self.min, self.cell, origin);
        if ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
            return self.cast_brute_force(origin, dir, max_range);
        }

        let axis = |o: f64, d: f64, lo: f64, i: i64| -> (i64, f64, f64) {
            if d > 0.0 {
                let next = lo + (i + 1) as f64 * self.cell;
                (1, (next - o) / d, self.cell / d)
            } else if d < 0.0 {
                let next = lo + i as f64 * self.cell;
                (-1, (next - o) / d, -self.cell / d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_x, mut t_max_x, dt_x) = axis(origin.x, dir.x, self.min.x, ix);
        let (step_y, mut t_max_y, dt_y) = axis(origin.y, dir.y, self.min.y, iy);

        let mut best: Option<f64> = None;
        loop {
            for &seg in &self.cells[iy as usize * self.nx + ix as usize] {
                let (a, b) = self.segments[seg as usize];
                if let Some(t) = ray_segment(origin, dir, a, b) {
                    if t <= max_range && best.is_none_or(|bt| t < bt) {
                        best = Some(t);
                    }
                }
            }
            let exit = t_max_x.min(t_max_y);
            if best.is_some_and(|bt| bt <= exit) || exit > max_range {
                return best;
            }
            if t_max_x < t_max_y {
                ix += step_x;
                t_max_x += dt_x;
            } else {
                iy += step_y;
                t_max_y += dt_y;
            }
            if ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
                return best;
            }
        }
    }
}
