use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

pub type Vec2 = [f64; 2];

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    norm(sub(a, b))
}

/// Wraps an angle into [0, 2π).
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed smallest difference a − b in (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}

/// Expresses world vector `v` in a frame rotated by `heading`.
pub fn to_frame(v: Vec2, heading: f64) -> Vec2 {
    let (s, c) = heading.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

/// Distance from point `p` to segment `ab`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Rectangle with arbitrary heading; `heading` points along the length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn axis_aligned(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        OrientedRect {
            center: [(x0 + x1) / 2.0, (y0 + y1) / 2.0],
            heading: 0.0,
            length: (x1 - x0).abs(),
            width: (y1 - y0).abs(),
        }
    }

    /// Point in the rectangle's own frame.
    pub fn local(&self, p: Vec2) -> Vec2 {
        to_frame(sub(p, self.center), self.heading)
    }

    pub fn world(&self, local: Vec2) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        [self.center[0] + c * local[0] - s * local[1], self.center[1] + s * local[0] + c * local[1]]
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let l = self.local(p);
        let dx = (l[0].abs() - self.length / 2.0).max(0.0);
        let dy = (l[1].abs() - self.width / 2.0).max(0.0);
        dx.hypot(dy)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [self.world([hl, hw]), self.world([-hl, hw]), self.world([-hl, -hw]), self.world([hl, -hw])]
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let axes = [self.heading, self.heading + std::f64::consts::FRAC_PI_2, other.heading, other.heading + std::f64::consts::FRAC_PI_2];
        let (ca, cb) = (self.corners(), other.corners());
        axes.iter().all(|&ang| {
            let ax = [ang.cos(), ang.sin()];
            let proj = |cs: &[Vec2; 4]| {
                cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let d = c[0] * ax[0] + c[1] * ax[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = proj(&ca);
            let (b0, b1) = proj(&cb);
            a0 <= b1 && b0 <= a1
        })
    }

    /// Whether segment `ab` passes through the rectangle (slab test).
    pub fn intersects_segment(&self, a: Vec2, b: Vec2) -> bool {
        let (la, lb) = (self.local(a), self.local(b));
        let half = [self.length / 2.0, self.width / 2.0];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..2 {
            let d = lb[k] - la[k];
            if d.abs() < 1e-12 {
                if la[k].abs() > half[k] {
                    return false;
                }
                continue;
            }
            let mut ta = (-half[k] - la[k]) / d;
            let mut tb = (half[k] - la[k]) / d;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}
