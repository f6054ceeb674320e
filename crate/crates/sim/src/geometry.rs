//! Planar geometry on convex polygons.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
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

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Self) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            Self::new(self.x / n, self.y / n)
        }
    }

    /// Unit vector 90° clockwise (to the right of a direction of travel).
    pub fn right(self) -> Self {
        Self::new(self.y, -self.x)
    }

    pub fn left(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
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

/// Maps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn of_points(pts: &[Vec2]) -> Self {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn inflate(&self, r: f64) -> Self {
        Self {
            min: Vec2::new(self.min.x - r, self.min.y - r),
            max: Vec2::new(self.max.x + r, self.max.y + r),
        }
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub points: Vec<Vec2>,
}

impl Polygon {
    /// Builds a polygon, reversing clockwise input so vertices end up CCW.
    pub fn new(mut points: Vec<Vec2>) -> Self {
        if signed_area(&points) < 0.0 {
            points.reverse();
        }
        Self { points }
    }

    /// Oriented rectangle with the given center, heading and half-extents
    /// (`half_len` along the heading, `half_width` across it).
    pub fn oriented_rect(center: Vec2, heading: f64, half_len: f64, half_width: f64) -> Self {
        let f = Vec2::from_angle(heading);
        let l = f.left();
        Self::new(vec![
            center - f * half_len - l * half_width,
            center + f * half_len - l * half_width,
            center + f * half_len + l * half_width,
            center - f * half_len + l * half_width,
        ])
    }

    pub fn axis_rect(min: Vec2, max: Vec2) -> Self {
        Self::new(vec![min, Vec2::new(max.x, min.y), max, Vec2::new(min.x, max.y)])
    }

    /// Quad covering lateral offsets `[lat_lo, lat_hi]` (positive = right of
    /// travel) along the segment `a → b`.
    pub fn strip(a: Vec2, b: Vec2, lat_lo: f64, lat_hi: f64) -> Self {
        let r = (b - a).normalized().right();
        Self::new(vec![a + r * lat_lo, b + r * lat_lo, b + r * lat_hi, a + r * lat_hi])
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.points).abs()
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::of_points(&self.points)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let n = self.points.len();
        (0..n).all(|i| {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            (b - a).cross(p - a) >= 0.0
        })
    }

    /// Sutherland–Hodgman clip of `self` against the convex `clip`.
    pub fn intersection(&self, clip: &Polygon) -> Polygon {
        let mut output = self.points.clone();
        let n = clip.points.len();
        for i in 0..n {
            if output.is_empty() {
                break;
            }
            let a = clip.points[i];
            let b = clip.points[(i + 1) % n];
            let edge = b - a;
            let input = std::mem::take(&mut output);
            let inside = |p: Vec2| edge.cross(p - a) >= 0.0;
            for j in 0..input.len() {
                let cur = input[j];
                let prev = input[(j + input.len() - 1) % input.len()];
                let (ci, pi) = (inside(cur), inside(prev));
                if ci {
                    if !pi {
                        output.push(segment_line_intersection(prev, cur, a, b));
                    }
                    output.push(cur);
                } else if pi {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
            }
        }
        Polygon { points: output }
    }

    pub fn intersection_area(&self, other: &Polygon) -> f64 {
        if !self.aabb().overlaps(&other.aabb()) {
            return 0.0;
        }
        let clipped = self.intersection(other);
        if clipped.points.len() < 3 {
            0.0
        } else {
            clipped.area()
        }
    }

    /// Separating-axis test; touching boundaries count as intersecting.
    pub fn intersects(&self, other: &Polygon) -> bool {
        if !self.aabb().overlaps(&other.aabb()) {
            return false;
        }
        for poly in [self, other] {
            let n = poly.points.len();
            for i in 0..n {
                let edge = poly.points[(i + 1) % n] - poly.points[i];
                let axis = edge.left();
                let (a0, a1) = project(&self.points, axis);
                let (b0, b1) = project(&other.points, axis);
                if a1 < b0 || b1 < a0 {
                    return false;
                }
            }
        }
        true
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        let n = self.points.len();
        (0..n)
            .map(|i| point_segment_distance(p, self.points[i], self.points[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn intersects_disc(&self, center: Vec2, radius: f64) -> bool {
        self.distance_to_point(center) <= radius
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.points.len() as f64;
        let s = self.points.iter().fold(Vec2::default(), |acc, p| acc + *p);
        s * (1.0 / n)
    }
}

fn project(points: &[Vec2], axis: Vec2) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

fn signed_area(points: &[Vec2]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for i in 0..n {
        s += points[i].cross(points[(i + 1) % n]);
    }
    0.5 * s
}

fn segment_line_intersection(p: Vec2, q: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let d = q - p;
    let e = b - a;
    let denom = d.cross(e);
    if denom == 0.0 {
        return q;
    }
    let t = (a - p).cross(e) / denom;
    p + d * t
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Arc-length parametrised polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Vec2>,
    /// Cumulative arc length at each point.
    pub arc: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut arc = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += p.dist(points[i - 1]);
            }
            arc.push(acc);
        }
        Self { points, arc }
    }

    pub fn length(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len();
        if n < 2 {
            return 0;
        }
        match self.arc.binary_search_by(|a| a.partial_cmp(&s).expect("finite arc")) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.arc[i + 1] - self.arc[i];
        if seg == 0.0 {
            return a;
        }
        a + (b - a) * ((s - self.arc[i]) / seg)
    }

    pub fn direction_at(&self, s: f64) -> Vec2 {
        if self.points.len() < 2 {
            return Vec2::new(1.0, 0.0);
        }
        let i = self.segment_at(s.clamp(0.0, self.length()));
        (self.points[i + 1] - self.points[i]).normalized()
    }

    /// Sub-polyline between arc lengths `a ≤ b`.
    pub fn slice(&self, a: f64, b: f64) -> Vec<Vec2> {
        let mut out = vec![self.point_at(a)];
        for (p, &s) in self.points.iter().zip(&self.arc) {
            if s > a && s < b {
                out.push(*p);
            }
        }
        out.push(self.point_at(b));
        out
    }

    /// Polyline offset sideways by `d` (positive = right), with miter joins.
    pub fn offset(&self, d: f64) -> Polyline {
        let n = self.points.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let p = self.points[i];
            let dir_in = (i > 0).then(|| (p - self.points[i - 1]).normalized());
            let dir_out = (i + 1 < n).then(|| (self.points[i + 1] - p).normalized());
            let q = match (dir_in, dir_out) {
                (Some(a), Some(b)) => {
                    let bis = (a.right() + b.right()).normalized();
                    let cos = bis.dot(a.right()).max(0.2);
                    p + bis * (d / cos)
                }
                (Some(a), None) => p + a.right() * d,
                (None, Some(b)) => p + b.right() * d,
                (None, None) => p,
            };
            out.push(q);
        }
        Polyline::new(out)
    }

    /// Subdivides long segments so consecutive points are at most `max_step`
    /// apart. Original vertices and arc lengths are preserved.
    pub fn densify(&self, max_step: f64) -> Polyline {
        let mut pts = Vec::with_capacity(self.points.len());
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                let a = self.points[i - 1];
                let n = (a.dist(*p) / max_step).ceil() as usize;
                for k in 1..n {
                    pts.push(a + (*p - a) * (k as f64 / n as f64));
                }
            }
            pts.push(*p);
        }
        Polyline::new(pts)
    }

    /// Resamples at uniform spacing of at most `max_step`.
    pub fn resample(&self, max_step: f64) -> Polyline {
        let len = self.length();
        let n = ((len / max_step).ceil() as usize).max(1);
        let pts = (0..=n).map(|k| self.point_at(len * k as f64 / n as f64)).collect();
        Polyline::new(pts)
    }

    /// Closest point search restricted to segments `[lo, hi)`. Returns
    /// `(segment index, arc length, distance)`.
    pub fn project(&self, p: Vec2, lo: usize, hi: usize) -> (usize, f64, f64) {
        let hi = hi.min(self.points.len().saturating_sub(1));
        let mut best = (lo, self.arc.get(lo).copied().unwrap_or(0.0), f64::INFINITY);
        for i in lo..hi {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) };
            let q = a + ab * t;
            let d = p.dist(q);
            if d < best.2 {
                best = (i, self.arc[i] + t * (self.arc[i + 1] - self.arc[i]), d);
            }
        }
        best
    }
}

/// Cubic Bézier from `p0` heading `d0` to `p3` heading `d3`, sampled into
/// `n + 1` points.
pub fn bezier_connector(p0: Vec2, d0: Vec2, p3: Vec2, d3: Vec2, n: usize) -> Vec<Vec2> {
    // 0.5523 is the quarter-circle control ratio; the chord of a quarter arc is R·√2.
    let k = p0.dist(p3) * 0.5523 / std::f64::consts::SQRT_2;
    let p1 = p0 + d0 * k;
    let p2 = p3 - d3 * k;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
        })
        .collect()
}
