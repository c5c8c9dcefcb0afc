//! Planar geometry helpers shared by the map builder, the simulator and the renderer.

use serde::{Deserialize, Serialize};

/// A point (or vector) in the local metric frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n)
        } else {
            self
        }
    }

    /// Unit normal pointing to the right of this direction.
    pub fn right_normal(self) -> Vec2 {
        Vec2::new(self.y, -self.x).normalized()
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn from_heading(h: f64) -> Vec2 {
        Vec2::new(h.cos(), h.sin())
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        Vec2::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Polyline with cached cumulative arc length for fast station lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pts: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(pts: Vec<Vec2>) -> Self {
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        for (i, p) in pts.iter().enumerate() {
            if i > 0 {
                acc += pts[i - 1].dist(*p);
            }
            cum.push(acc);
        }
        Self { pts, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.pts
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    fn segment_at(&self, s: f64) -> usize {
        if self.pts.len() < 2 {
            return 0;
        }
        let last = self.pts.len() - 2;
        match self
            .cum
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        }
    }

    /// Position and heading at arc length `s`, extrapolating linearly past either end.
    pub fn pose_at(&self, s: f64) -> (Vec2, f64) {
        match self.pts.len() {
            0 => (Vec2::default(), 0.0),
            1 => (self.pts[0], 0.0),
            _ => {
                let i = self.segment_at(s);
                let a = self.pts[i];
                let b = self.pts[i + 1];
                let seg = b.sub(a);
                let len = seg.norm();
                let dir = if len > 0.0 { seg.scale(1.0 / len) } else { Vec2::new(1.0, 0.0) };
                let p = a.add(dir.scale(s - self.cum[i]));
                (p, dir.heading())
            }
        }
    }

    /// Arc-length of the orthogonal projection of `p` onto the polyline, and the distance to it.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for (i, w) in self.pts.windows(2).enumerate() {
            let seg = w[1].sub(w[0]);
            let l2 = seg.dot(seg);
            let t = if l2 > 0.0 { (p.sub(w[0]).dot(seg) / l2).clamp(0.0, 1.0) } else { 0.0 };
            let q = w[0].add(seg.scale(t));
            let d = q.dist(p);
            if d < best.1 {
                best = (self.cum[i] + t * l2.sqrt(), d);
            }
        }
        best
    }

    /// Like [`Polyline::project`] but the lateral distance is signed, positive to the right.
    pub fn project_signed(&self, p: Vec2) -> (f64, f64) {
        let (s, d) = self.project(p);
        let (q, h) = self.pose_at(s.clamp(0.0, self.length()));
        let side = Vec2::from_heading(h).cross(p.sub(q));
        (s, if side > 0.0 { -d } else { d })
    }
}

/// Distance from point `p` to segment `ab`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let seg = b.sub(a);
    let l2 = seg.dot(seg);
    if l2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(seg) / l2).clamp(0.0, 1.0);
    a.add(seg.scale(t)).dist(p)
}

/// Intersection parameters (t along ab, u along cd) of two segments, if they cross.
pub fn segment_intersection(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> Option<(f64, f64)> {
    let r = b.sub(a);
    let s = d.sub(c);
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = c.sub(a);
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some((t, u))
    } else {
        None
    }
}

/// Minimum distance between two polylines.
pub fn polyline_distance(a: &[Vec2], b: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for wa in a.windows(2) {
        for wb in b.windows(2) {
            if segment_intersection(wa[0], wa[1], wb[0], wb[1]).is_some() {
                return 0.0;
            }
            best = best
                .min(point_segment_distance(wa[0], wb[0], wb[1]))
                .min(point_segment_distance(wa[1], wb[0], wb[1]))
                .min(point_segment_distance(wb[0], wa[0], wa[1]))
                .min(point_segment_distance(wb[1], wa[0], wa[1]));
        }
    }
    best
}

/// Offset a polyline laterally; positive `offset` shifts to the right of the travel direction.
/// Interior vertices use the mitred bisector so parallel segments stay at constant distance.
pub fn offset_polyline(pts: &[Vec2], offset: f64) -> Vec<Vec2> {
    let n = pts.len();
    if n < 2 || offset == 0.0 {
        return pts.to_vec();
    }
    let normals: Vec<Vec2> = pts.windows(2).map(|w| w[1].sub(w[0]).right_normal()).collect();
    (0..n)
        .map(|i| {
            let nrm = if i == 0 {
                normals[0]
            } else if i == n - 1 {
                normals[n - 2]
            } else {
                let bis = normals[i - 1].add(normals[i]);
                let bn = bis.norm();
                if bn < 1e-9 {
                    normals[i]
                } else {
                    let bis = bis.scale(1.0 / bn);
                    let cos_half = bis.dot(normals[i]).max(0.25);
                    bis.scale(1.0 / cos_half)
                }
            };
            pts[i].add(nrm.scale(offset))
        })
        .collect()
}

/// Cut `trim_start` meters off the start and `trim_end` off the end of a polyline.
pub fn trim_polyline(pts: &[Vec2], trim_start: f64, trim_end: f64) -> Vec<Vec2> {
    let pl = Polyline::new(pts.to_vec());
    let len = pl.length();
    let s0 = trim_start.max(0.0);
    let s1 = (len - trim_end.max(0.0)).max(s0);
    let mut out = vec![pl.pose_at(s0).0];
    for (i, p) in pts.iter().enumerate() {
        let c = pl.cum[i];
        if c > s0 + 1e-9 && c < s1 - 1e-9 {
            out.push(*p);
        }
    }
    out.push(pl.pose_at(s1).0);
    out
}

/// Corners of an oriented rectangle centred at `c`.
pub fn rect_corners(c: Vec2, heading: f64, length: f64, width: f64) -> [Vec2; 4] {
    let f = Vec2::from_heading(heading).scale(length / 2.0);
    let l = Vec2::from_heading(heading + std::f64::consts::FRAC_PI_2).scale(width / 2.0);
    [
        c.add(f).add(l),
        c.add(f).sub(l),
        c.sub(f).sub(l),
        c.sub(f).add(l),
    ]
}

/// Separating-axis overlap test for two convex quadrilaterals.
pub fn quads_overlap(a: &[Vec2; 4], b: &[Vec2; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let edge = poly[(i + 1) % 4].sub(poly[i]);
            let axis = Vec2::new(-edge.y, edge.x);
            let (amin, amax) = span(a, axis);
            let (bmin, bmax) = span(b, axis);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
    }
    true
}

fn span(p: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let d = v.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// Gap between two convex quadrilaterals; zero when they overlap.
pub fn quad_distance(a: &[Vec2; 4], b: &[Vec2; 4]) -> f64 {
    if quads_overlap(a, b) {
        return 0.0;
    }
    let mut closed_a = a.to_vec();
    closed_a.push(a[0]);
    let mut closed_b = b.to_vec();
    closed_b.push(b[0]);
    polyline_distance(&closed_a, &closed_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_along_polyline() {
        let pl = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)]);
        assert_eq!(pl.length(), 20.0);
        let (p, h) = pl.pose_at(15.0);
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 5.0).abs() < 1e-12);
        assert!((h - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let (s, d) = pl.project(Vec2::new(12.0, 3.0));
        assert!((s - 13.0).abs() < 1e-12 && (d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn offset_straight_line() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        let r = offset_polyline(&pts, 1.75);
        assert_eq!(r[0], Vec2::new(0.0, -1.75));
        assert_eq!(r[1], Vec2::new(100.0, -1.75));
    }

    #[test]
    fn trim_keeps_interior_vertices() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(20.0, 0.0)];
        let t = trim_polyline(&pts, 2.0, 3.0);
        assert_eq!(t, vec![Vec2::new(2.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(17.0, 0.0)]);
    }

    #[test]
    fn rectangles_overlap() {
        let a = rect_corners(Vec2::new(0.0, 0.0), 0.0, 4.5, 1.8);
        let b = rect_corners(Vec2::new(4.0, 0.0), 0.3, 4.5, 1.8);
        let c = rect_corners(Vec2::new(7.0, 0.0), 0.0, 4.5, 1.8);
        assert!(quads_overlap(&a, &b));
        assert!(!quads_overlap(&a, &c));
        assert!((quad_distance(&a, &c) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn angle_wrap() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
