//! Collision-free navigation POMDP.
//!
//! A bicycle-model car drives along a planner path while the agent picks
//! the speed action. Pedestrians walk straight to goals the car cannot
//! observe; the car only sees unoccluded pedestrians inside the sensing
//! radius.

pub mod costmap;
pub mod geometry;
pub mod planner;
pub mod scenes;

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{NavqError, Result};
use costmap::CostMap;
use geometry::{dist, norm, sub, to_frame, wrap_angle, OrientedRect, Vec2};
use planner::{plan_path, tracking_steer, Path, PlannerConfig, Pose, VehicleShape};
pub use scenes::{generate_scenes, Scene, SceneGridConfig, Split};

pub const KMH: f64 = 1.0 / 3.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_wheelbase")]
    pub wheelbase: f64,
    #[serde(default = "d_car_length")]
    pub car_length: f64,
    #[serde(default = "d_car_width")]
    pub car_width: f64,
    #[serde(default = "d_ped_radius")]
    pub pedestrian_radius: f64,
    #[serde(default = "d_near_miss")]
    pub near_miss_margin: f64,
    #[serde(default = "d_sensing")]
    pub sensing_radius: f64,
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
    #[serde(default = "d_speed_step")]
    pub speed_step_kmh: f64,
    #[serde(default = "d_speed_limit")]
    pub speed_limit_kmh: f64,
    /// Speed clamp for the kinematics (not the reward limit).
    #[serde(default = "d_max_speed")]
    pub max_speed_kmh: f64,
    /// Impact speed at which the hit factor equals 1.
    #[serde(default = "d_impact_ref")]
    pub impact_reference_kmh: f64,
    #[serde(default = "d_goal_radius")]
    pub goal_radius: f64,
    /// Number of pedestrian slots in the observation.
    #[serde(default = "d_slots")]
    pub pedestrian_slots: usize,
    #[serde(default = "d_resolution")]
    pub map_resolution: f64,
    #[serde(default)]
    pub planner: PlannerConfig,
}

fn d_dt() -> f64 {
    0.1
}
fn d_wheelbase() -> f64 {
    2.5
}
fn d_car_length() -> f64 {
    4.5
}
fn d_car_width() -> f64 {
    2.0
}
fn d_ped_radius() -> f64 {
    0.3
}
fn d_near_miss() -> f64 {
    1.5
}
fn d_sensing() -> f64 {
    50.0
}
fn d_max_steps() -> usize {
    500
}
fn d_speed_step() -> f64 {
    5.0
}
fn d_speed_limit() -> f64 {
    50.0
}
fn d_max_speed() -> f64 {
    80.0
}
fn d_impact_ref() -> f64 {
    50.0
}
fn d_goal_radius() -> f64 {
    2.0
}
fn d_slots() -> usize {
    4
}
fn d_resolution() -> f64 {
    0.5
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: d_dt(),
            wheelbase: d_wheelbase(),
            car_length: d_car_length(),
            car_width: d_car_width(),
            pedestrian_radius: d_ped_radius(),
            near_miss_margin: d_near_miss(),
            sensing_radius: d_sensing(),
            max_steps: d_max_steps(),
            speed_step_kmh: d_speed_step(),
            speed_limit_kmh: d_speed_limit(),
            max_speed_kmh: d_max_speed(),
            impact_reference_kmh: d_impact_ref(),
            goal_radius: d_goal_radius(),
            pedestrian_slots: d_slots(),
            map_resolution: d_resolution(),
            planner: PlannerConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("wheelbase", self.wheelbase),
            ("car_length", self.car_length),
            ("car_width", self.car_width),
            ("speed_step_kmh", self.speed_step_kmh),
            ("speed_limit_kmh", self.speed_limit_kmh),
            ("max_speed_kmh", self.max_speed_kmh),
            ("impact_reference_kmh", self.impact_reference_kmh),
            ("map_resolution", self.map_resolution),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NavqError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(NavqError::Config("max_steps must be >= 1".into()));
        }
        if self.pedestrian_radius < 0.0 || self.near_miss_margin < 0.0 || self.goal_radius < 0.0 {
            return Err(NavqError::Config("radii and margins must be >= 0".into()));
        }
        Ok(())
    }

    pub fn vehicle(&self) -> VehicleShape {
        VehicleShape { wheelbase: self.wheelbase, length: self.car_length, width: self.car_width }
    }

    /// Length of the feature vector produced by [`Observation::features`].
    pub fn observation_dim(&self) -> usize {
        8 + 5 * self.pedestrian_slots
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedAction {
    Accelerate,
    Maintain,
    Decelerate,
}

impl SpeedAction {
    pub const ALL: [SpeedAction; 3] = [SpeedAction::Accelerate, SpeedAction::Maintain, SpeedAction::Decelerate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// +1 / 0 / −1.
    pub fn sign(self) -> f64 {
        match self {
            SpeedAction::Accelerate => 1.0,
            SpeedAction::Maintain => 0.0,
            SpeedAction::Decelerate => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub acc: SpeedAction,
    /// Steering angle in degrees, one of the planner bins.
    pub steer_deg: f64,
}

impl Action {
    pub fn new(acc: SpeedAction, steer_deg: f64) -> Result<Self> {
        if !planner::STEERING_BINS_DEG.contains(&steer_deg) {
            return Err(NavqError::Input(format!("steering {steer_deg}° is not a valid bin")));
        }
        Ok(Action { acc, steer_deg })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub position: Vec2,
    pub goal: Vec2,
    /// m/s, never negative.
    pub speed: f64,
    /// Radians in [0, 2π).
    pub heading: f64,
}

impl CarState {
    pub fn pose(&self) -> Pose {
        Pose { x: self.position[0], y: self.position[1], heading: self.heading }
    }

    pub fn velocity(&self) -> Vec2 {
        [self.speed * self.heading.cos(), self.speed * self.heading.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub position: Vec2,
    pub goal: Vec2,
    pub speed: f64,
    pub heading: f64,
}

impl PedestrianState {
    fn from_spawn(s: &scenes::PedestrianSpawn) -> Self {
        let d = sub(s.goal, s.position);
        PedestrianState { position: s.position, goal: s.goal, speed: s.speed, heading: wrap_angle(d[1].atan2(d[0])) }
    }

    /// Current velocity; zero once the goal is reached.
    pub fn velocity(&self) -> Vec2 {
        if dist(self.position, self.goal) < 1e-9 {
            return [0.0, 0.0];
        }
        [self.speed * self.heading.cos(), self.speed * self.heading.sin()]
    }

    fn advance(&mut self, dt: f64) {
        let to_goal = sub(self.goal, self.position);
        let remaining = norm(to_goal);
        let step = self.speed * dt;
        if remaining <= step {
            self.position = self.goal;
        } else {
            self.position = [self.position[0] + to_goal[0] / remaining * step, self.position[1] + to_goal[1] / remaining * step];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtherCar {
    pub rect: OrientedRect,
    pub speed: f64,
}

impl OtherCar {
    fn advance(&mut self, dt: f64) {
        let (s, c) = self.rect.heading.sin_cos();
        self.rect.center = [self.rect.center[0] + c * self.speed * dt, self.rect.center[1] + s * self.speed * dt];
    }

    pub fn velocity(&self) -> Vec2 {
        [self.speed * self.rect.heading.cos(), self.speed * self.rect.heading.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proximity {
    Clear,
    NearMiss,
    Hit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Goal => "goal",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

/// One visible pedestrian slot. Pedestrian goals are hidden state and have
/// no field here.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PedestrianObservation {
    /// Position relative to the car, in the car frame (m).
    pub rel_position: Vec2,
    /// Velocity relative to the car, in the car frame (m/s).
    pub rel_velocity: Vec2,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Goal relative to the car, in the car frame (m).
    pub goal_rel: Vec2,
    pub cross_track: f64,
    pub speed: f64,
    pub prev_speed_action: [f64; 3],
    pub prev_reward: f64,
    pub pedestrians: Vec<PedestrianObservation>,
}

impl Observation {
    /// Scaled feature vector for the encoder.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(8 + 5 * self.pedestrians.len());
        f.push(self.goal_rel[0] / 100.0);
        f.push(self.goal_rel[1] / 100.0);
        f.push(self.cross_track / 5.0);
        f.push(self.speed / (50.0 * KMH));
        f.extend_from_slice(&self.prev_speed_action);
        f.push((self.prev_reward / 100.0).clamp(-3.0, 3.0));
        for p in &self.pedestrians {
            f.push(p.rel_position[0] / 50.0);
            f.push(p.rel_position[1] / 50.0);
            f.push(p.rel_velocity[0] / 15.0);
            f.push(p.rel_velocity[1] / 15.0);
            f.push(if p.visible { 1.0 } else { 0.0 });
        }
        f
    }
}

/// Per-term reward. `total` is the sum of the other fields.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub goal: f64,
    pub hit: f64,
    pub obstacle: f64,
    pub near_miss: f64,
    pub over_speeding: f64,
    pub not_goal: f64,
    pub braking: f64,
    pub steer: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn terms(&self) -> [f64; 8] {
        [self.goal, self.hit, self.obstacle, self.near_miss, self.over_speeding, self.not_goal, self.braking, self.steer]
    }

    fn finish(mut self) -> Self {
        self.total = self.terms().iter().sum();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub outcome: Option<Outcome>,
    pub near_miss: bool,
    pub collision: bool,
    pub steer_deg: f64,
}

/// Evolving state of one episode.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub config: Arc<EnvConfig>,
    pub scene: Arc<Scene>,
    pub cost_map: Arc<CostMap>,
    pub path: Arc<Path>,
    pub car: CarState,
    pub pedestrians: Vec<PedestrianState>,
    pub other_cars: Vec<OtherCar>,
    pub step: usize,
    /// Speed when the last action was issued.
    pub speed_before_action: f64,
    pub prev_action: Option<Action>,
    pub prev_reward: f64,
    pub goal_reached: bool,
    pub done: bool,
    pub outcome: Option<Outcome>,
}

/// Places the car at the scene start with zero speed and plans its path.
pub fn reset(scene: &Scene, config: &Arc<EnvConfig>) -> Result<(WorldState, Observation)> {
    config.validate()?;
    let map = scenes::scene_cost_map(scene, config.map_resolution)?;
    let path = plan_path(&map, config.vehicle(), scene.car_start, scene.car_goal, &config.planner)
        .map_err(|e| NavqError::Scene(format!("scenario {}: {e}", scene.scenario_id)))?;
    reset_with(scene, config, Arc::new(map), Arc::new(path))
}

/// Like [`reset`] with a precomputed map and path (scenes that share a
/// static layout can reuse them).
pub fn reset_with(scene: &Scene, config: &Arc<EnvConfig>, map: Arc<CostMap>, path: Arc<Path>) -> Result<(WorldState, Observation)> {
    let state = WorldState {
        config: Arc::clone(config),
        scene: Arc::new(scene.clone()),
        cost_map: map,
        path,
        car: CarState { position: scene.car_start.pos(), goal: scene.car_goal, speed: 0.0, heading: wrap_angle(scene.car_start.heading) },
        pedestrians: scene.pedestrians.iter().map(PedestrianState::from_spawn).collect(),
        other_cars: scene
            .other_cars
            .iter()
            .map(|c| OtherCar {
                rect: OrientedRect { center: c.pose.pos(), heading: c.pose.heading, length: c.length, width: c.width },
                speed: c.speed,
            })
            .collect(),
        step: 0,
        speed_before_action: 0.0,
        prev_action: None,
        prev_reward: 0.0,
        goal_reached: false,
        done: false,
        outcome: None,
    };
    let obs = state.observe();
    Ok((state, obs))
}

impl WorldState {
    pub fn car_footprint(&self) -> OrientedRect {
        self.config.vehicle().footprint(&self.car.pose())
    }

    pub fn goal_distance(&self) -> f64 {
        dist(self.car.position, self.car.goal)
    }

    /// Steering bin the path tracker would use at the current speed.
    pub fn planner_steering(&self) -> f64 {
        tracking_steer(&self.path, &self.car.pose(), self.car.speed, self.config.dt, self.config.wheelbase)
    }

    /// Steering for the next step given the speed action about to be applied.
    pub fn planner_steering_for(&self, acc: SpeedAction) -> f64 {
        let v = self.next_speed(acc);
        tracking_steer(&self.path, &self.car.pose(), v, self.config.dt, self.config.wheelbase)
    }

    fn next_speed(&self, acc: SpeedAction) -> f64 {
        (self.car.speed + acc.sign() * self.config.speed_step_kmh * KMH).clamp(0.0, self.config.max_speed_kmh * KMH)
    }

    fn occluders(&self) -> impl Iterator<Item = &OrientedRect> {
        self.scene.static_obstacles.iter().chain(self.other_cars.iter().map(|c| &c.rect))
    }

    /// Pedestrian is inside the sensing radius and no obstacle blocks the
    /// line of sight from the car centre.
    pub fn is_visible(&self, ped: &PedestrianState) -> bool {
        if dist(ped.position, self.car.position) > self.config.sensing_radius {
            return false;
        }
        !self.occluders().any(|r| r.intersects_segment(self.car.position, ped.position))
    }

    pub fn observe(&self) -> Observation {
        let heading = self.car.heading;
        let car_vel = self.car.velocity();
        let mut visible: Vec<(f64, PedestrianObservation)> = self
            .pedestrians
            .iter()
            .filter(|p| self.is_visible(p))
            .map(|p| {
                let rel = sub(p.position, self.car.position);
                let vel = sub(p.velocity(), car_vel);
                (norm(rel), PedestrianObservation { rel_position: to_frame(rel, heading), rel_velocity: to_frame(vel, heading), visible: true })
            })
            .collect();
        visible.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut slots: Vec<PedestrianObservation> = visible.into_iter().map(|v| v.1).take(self.config.pedestrian_slots).collect();
        slots.resize(self.config.pedestrian_slots, PedestrianObservation::default());
        let mut prev = [0.0; 3];
        if let Some(a) = self.prev_action {
            prev[a.acc.index()] = 1.0;
        }
        Observation {
            goal_rel: to_frame(sub(self.car.goal, self.car.position), heading),
            cross_track: self.path.cross_track(self.car.position).0,
            speed: self.car.speed,
            prev_speed_action: prev,
            prev_reward: self.prev_reward,
            pedestrians: slots,
        }
    }

    fn collides_with_car_or_static(&self) -> bool {
        let fp = self.car_footprint();
        self.occluders().any(|r| fp.overlaps(r))
    }

    /// Steps with the speed action and the planner's steering.
    pub fn step_speed(&mut self, acc: SpeedAction) -> Result<(Observation, RewardBreakdown, bool, StepInfo)> {
        let steer = self.planner_steering_for(acc);
        self.step(Action { acc, steer_deg: steer })
    }

    /// Advances one Δt. Errors if the episode is already over.
    pub fn step(&mut self, action: Action) -> Result<(Observation, RewardBreakdown, bool, StepInfo)> {
        if self.done {
            return Err(NavqError::Usage("episode already finished".into()));
        }
        let dt = self.config.dt;
        self.speed_before_action = self.car.speed;
        let v = self.next_speed(action.acc);
        let old = self.car.position;
        self.car.speed = v;
        self.car.position = [old[0] + v * self.car.heading.cos() * dt, old[1] + v * self.car.heading.sin() * dt];
        self.car.heading = wrap_angle(self.car.heading + v / self.config.wheelbase * action.steer_deg.to_radians().tan() * dt);
        for p in &mut self.pedestrians {
            p.advance(dt);
        }
        for c in &mut self.other_cars {
            c.advance(dt);
        }
        self.step += 1;
        self.prev_action = Some(action);
        self.goal_reached = geometry::point_segment_distance(self.car.goal, old, self.car.position) <= self.config.goal_radius;

        let prox = check_proximity(self);
        let collision = v > 0.0 && (prox.contains(&Proximity::Hit) || self.collides_with_car_or_static());
        let reward = compute_reward(self, &action);
        self.prev_reward = reward.total;
        self.outcome = if self.goal_reached {
            Some(Outcome::Goal)
        } else if collision {
            Some(Outcome::Collision)
        } else if self.step >= self.config.max_steps {
            Some(Outcome::Timeout)
        } else {
            None
        };
        self.done = self.outcome.is_some();
        let info = StepInfo { outcome: self.outcome, near_miss: prox.contains(&Proximity::NearMiss), collision, steer_deg: action.steer_deg };
        Ok((self.observe(), reward, self.done, info))
    }
}

/// Per-pedestrian proximity to the car footprint.
pub fn check_proximity(state: &WorldState) -> Vec<Proximity> {
    let fp = state.car_footprint();
    let cfg = &state.config;
    state
        .pedestrians
        .iter()
        .map(|p| {
            let d = fp.distance_to_point(p.position);
            if d <= cfg.pedestrian_radius {
                Proximity::Hit
            } else if state.car.speed > 0.0 && d - cfg.pedestrian_radius <= cfg.near_miss_margin {
                Proximity::NearMiss
            } else {
                Proximity::Clear
            }
        })
        .collect()
}

/// Reward for arriving in `state` after `prev_action`; every applicable term
/// is summed.
pub fn compute_reward(state: &WorldState, prev_action: &Action) -> RewardBreakdown {
    let cfg = &state.config;
    let v = state.car.speed;
    let v_kmh = v / KMH;
    let prox = check_proximity(state);
    let contact = prox.contains(&Proximity::Hit) || state.collides_with_car_or_static();
    let mut r = RewardBreakdown::default();
    let at_goal = state.goal_reached || state.goal_distance() <= cfg.goal_radius;
    if at_goal {
        r.goal = 200.0;
    }
    if contact && v > 0.0 {
        r.hit = -100.0 * v_kmh / cfg.impact_reference_kmh;
        r.obstacle = -(state.cost_map.footprint_cost(&state.car_footprint()) as f64);
    }
    if prox.contains(&Proximity::NearMiss) {
        r.near_miss = -10.0;
    }
    if v_kmh > cfg.speed_limit_kmh + 1e-9 {
        r.over_speeding = -10.0;
    }
    if !at_goal {
        r.not_goal = -state.goal_distance() / 1000.0;
    }
    if prev_action.acc == SpeedAction::Decelerate && state.speed_before_action <= 0.0 {
        r.braking = -1.0;
    }
    if prev_action.steer_deg != 0.0 {
        r.steer = -1.0;
    }
    r.finish()
}
