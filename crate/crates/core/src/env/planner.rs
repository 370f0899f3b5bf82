//! Anytime weighted hybrid A* over (x, y, heading).
//!
//! Successors are bicycle-model arcs, one per steering bin. Each arc costs
//! its length times the footprint cost of the pose it ends in, plus a small
//! steering surcharge so that straight driving wins ties. The search is
//! repeated with a decreasing heuristic weight and the cheapest path kept.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use super::costmap::{CostMap, COST_OBSTACLE};
use super::geometry::{angle_diff, dist, point_segment_distance, wrap_angle, OrientedRect, Vec2};
use crate::error::{NavqError, Result};

/// Steering bins in degrees.
pub const STEERING_BINS_DEG: [f64; 5] = [-50.0, -25.0, 0.0, 25.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn pos(&self) -> Vec2 {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Arc length of one motion primitive (m).
    #[serde(default = "d_step")]
    pub step: f64,
    #[serde(default = "d_heading_bins")]
    pub heading_bins: usize,
    /// Goal tolerance (m).
    #[serde(default = "d_goal_tol")]
    pub goal_tolerance: f64,
    /// Heuristic weights tried in order; the best path over all runs wins.
    #[serde(default = "d_weights")]
    pub weights: Vec<f64>,
    /// Added per metre of arc for each 25° of steering.
    #[serde(default = "d_steer_cost")]
    pub steering_cost: f64,
    /// Footprint costs at or above this are impassable; `None` makes every
    /// pose passable at its cost.
    #[serde(default = "d_lethal")]
    pub lethal_cost: Option<u32>,
    #[serde(default = "d_max_expansions")]
    pub max_expansions: usize,
}

fn d_step() -> f64 {
    1.0
}
fn d_heading_bins() -> usize {
    72
}
fn d_goal_tol() -> f64 {
    1.0
}
fn d_weights() -> Vec<f64> {
    vec![2.0, 1.0]
}
fn d_steer_cost() -> f64 {
    0.05
}
fn d_lethal() -> Option<u32> {
    Some(COST_OBSTACLE)
}
fn d_max_expansions() -> usize {
    200_000
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            step: d_step(),
            heading_bins: d_heading_bins(),
            goal_tolerance: d_goal_tol(),
            weights: d_weights(),
            steering_cost: d_steer_cost(),
            lethal_cost: d_lethal(),
            max_expansions: d_max_expansions(),
        }
    }
}

/// Vehicle dimensions the planner needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleShape {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleShape {
    pub fn footprint(&self, pose: &Pose) -> OrientedRect {
        OrientedRect { center: pose.pos(), heading: pose.heading, length: self.length, width: self.width }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub poses: Vec<Pose>,
    /// Steering bin (degrees) used to reach `poses[i + 1]` from `poses[i]`.
    pub steering: Vec<f64>,
    pub cost: f64,
}

impl Path {
    pub fn empty() -> Self {
        Path { poses: Vec::new(), steering: Vec::new(), cost: 0.0 }
    }

    pub fn is_empty(&self) -> bool {
        self.poses.len() < 2
    }

    /// Signed lateral offset of `p` from the path (positive to the left of
    /// the travel direction) and the index of the closest segment.
    pub fn cross_track(&self, p: Vec2) -> (f64, usize) {
        if self.poses.len() < 2 {
            return (0.0, 0);
        }
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..self.poses.len() - 1 {
            let d = point_segment_distance(p, self.poses[i].pos(), self.poses[i + 1].pos());
            if d < best.0 {
                best = (d, i);
            }
        }
        let (a, b) = (self.poses[best.1].pos(), self.poses[best.1 + 1].pos());
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        (best.0.copysign(if cross == 0.0 { 1.0 } else { cross }), best.1)
    }
}

#[derive(Clone, Copy)]
struct Node {
    f: f64,
    g: f64,
    idx: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.idx == other.idx
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then on insertion order for determinism
        other.f.total_cmp(&self.f).then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Integrates the bicycle model along an arc of length `len`.
pub fn drive_arc(pose: &Pose, steer_deg: f64, len: f64, wheelbase: f64) -> Pose {
    let substeps = 4;
    let ds = len / substeps as f64;
    let k = steer_deg.to_radians().tan() / wheelbase;
    let mut p = *pose;
    for _ in 0..substeps {
        p.x += ds * p.heading.cos();
        p.y += ds * p.heading.sin();
        p.heading = wrap_angle(p.heading + ds * k);
    }
    p
}

fn pose_cost(map: &CostMap, shape: &VehicleShape, pose: &Pose) -> u32 {
    map.footprint_cost(&shape.footprint(pose))
}

/// Cost of a pose sequence evaluated the same way the planner scores arcs,
/// without any lethal cut-off or steering surcharge.
pub fn path_cost(map: &CostMap, shape: &VehicleShape, poses: &[Pose]) -> f64 {
    poses
        .windows(2)
        .map(|w| dist(w[0].pos(), w[1].pos()) * pose_cost(map, shape, &w[1]) as f64)
        .sum()
}

struct Search<'a> {
    map: &'a CostMap,
    shape: VehicleShape,
    cfg: &'a PlannerConfig,
}

impl Search<'_> {
    fn key(&self, p: &Pose) -> (i64, i64, usize) {
        let cell = self.cfg.step / 2.0;
        let hb = ((wrap_angle(p.heading) / std::f64::consts::TAU) * self.cfg.heading_bins as f64).round() as usize
            % self.cfg.heading_bins;
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, hb)
    }

    fn passable(&self, cost: u32) -> bool {
        self.cfg.lethal_cost.is_none_or(|l| cost < l)
    }

    fn run(&self, start: &Pose, goal: Vec2, weight: f64) -> Option<Path> {
        let mut poses: Vec<Pose> = vec![*start];
        let mut parent: Vec<(usize, f64)> = vec![(usize::MAX, 0.0)];
        let mut best_g: HashMap<(i64, i64, usize), f64> = HashMap::new();
        let mut open = BinaryHeap::new();
        best_g.insert(self.key(start), 0.0);
        open.push(Node { f: weight * dist(start.pos(), goal), g: 0.0, idx: 0 });
        let mut expansions = 0;
        while let Some(node) = open.pop() {
            let pose = poses[node.idx];
            if best_g.get(&self.key(&pose)).is_some_and(|&g| node.g > g) {
                continue;
            }
            if dist(pose.pos(), goal) <= self.cfg.goal_tolerance {
                return Some(self.reconstruct(&poses, &parent, node.idx, node.g));
            }
            expansions += 1;
            if expansions > self.cfg.max_expansions {
                return None;
            }
            for steer in STEERING_BINS_DEG {
                let next = drive_arc(&pose, steer, self.cfg.step, self.shape.wheelbase);
                if !self.map.contains(next.pos()) {
                    continue;
                }
                let c = pose_cost(self.map, &self.shape, &next);
                if !self.passable(c) {
                    continue;
                }
                let g = node.g + self.cfg.step * (c as f64 + self.cfg.steering_cost * steer.abs() / 25.0);
                let k = self.key(&next);
                if best_g.get(&k).is_some_and(|&old| old <= g) {
                    continue;
                }
                best_g.insert(k, g);
                poses.push(next);
                parent.push((node.idx, steer));
                open.push(Node { f: g + weight * dist(next.pos(), goal), g, idx: poses.len() - 1 });
            }
        }
        None
    }

    fn reconstruct(&self, poses: &[Pose], parent: &[(usize, f64)], mut idx: usize, g: f64) -> Path {
        let mut out = vec![poses[idx]];
        let mut steering = Vec::new();
        while parent[idx].0 != usize::MAX {
            steering.push(parent[idx].1);
            idx = parent[idx].0;
            out.push(poses[idx]);
        }
        out.reverse();
        steering.reverse();
        Path { poses: out, steering, cost: g }
    }
}

/// Plans from `start` to `goal`. `start == goal` yields an empty path.
pub fn plan_path(map: &CostMap, shape: VehicleShape, start: Pose, goal: Vec2, cfg: &PlannerConfig) -> Result<Path> {
    if !map.contains(start.pos()) || !map.contains(goal) {
        return Err(NavqError::Planning("start or goal outside the cost map".into()));
    }
    if dist(start.pos(), goal) <= 1e-9 {
        return Ok(Path::empty());
    }
    if let Some(l) = cfg.lethal_cost {
        if pose_cost(map, &shape, &start) >= l {
            return Err(NavqError::Planning("start pose collides with an obstacle".into()));
        }
    }
    let search = Search { map, shape, cfg };
    let mut best: Option<Path> = None;
    for &w in &cfg.weights {
        if let Some(p) = search.run(&start, goal, w) {
            if best.as_ref().is_none_or(|b| p.cost < b.cost) {
                best = Some(p);
            }
        }
    }
    best.ok_or_else(|| NavqError::Planning("no path to goal".into()))
}

/// Chooses the steering bin whose one-step prediction best follows `path`.
/// Ties go to the smaller absolute angle, so a stationary car never steers.
pub fn tracking_steer(path: &Path, pose: &Pose, speed: f64, dt: f64, wheelbase: f64) -> f64 {
    if path.is_empty() || speed <= 0.0 {
        return 0.0;
    }
    let mut best = (f64::INFINITY, 0.0f64);
    for steer in [0.0, -25.0, 25.0, -50.0, 50.0] {
        let next = drive_arc(pose, steer, speed * dt, wheelbase);
        let (lat, i) = path.cross_track(next.pos());
        let seg = (path.poses[i], path.poses[i + 1]);
        let dir = (seg.1.y - seg.0.y).atan2(seg.1.x - seg.0.x);
        let err = lat.abs() + 2.0 * angle_diff(next.heading, dir).abs();
        if err < best.0 - 1e-9 {
            best = (err, steer);
        }
    }
    best.1
}
