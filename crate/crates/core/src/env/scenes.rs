//! Scenario templates and the scene grid.
//!
//! All templates share a straight road running along +x:
//!
//! | y range (m)  | strip                                   |
//! |--------------|-----------------------------------------|
//! | 0.0 – 3.0    | right sidewalk                          |
//! | 3.0 – 5.5    | parking strip (road)                    |
//! | 5.5 – 9.5    | ego lane, centre 7.5                    |
//! | 9.5 – 13.5   | oncoming lane, centre 11.5              |
//! | 13.5 – 16.5  | left sidewalk                           |
//!
//! The car starts at x = 5 heading +x and drives ~100 m to x = 105. The
//! pedestrian's conflict point lies `crossing_offset + spawn_distance`
//! metres ahead of the car start.

use serde::{Deserialize, Serialize};

use super::costmap::{CostMap, COST_OBSTACLE, COST_ROAD, COST_SIDEWALK};
use super::geometry::{OrientedRect, Vec2};
use super::planner::Pose;
use crate::error::{config_err, Result};

pub const ROAD_LENGTH: f64 = 110.0;
pub const ROAD_WIDTH: f64 = 16.5;
pub const EGO_LANE_Y: f64 = 7.5;
pub const ONCOMING_LANE_Y: f64 = 11.5;
pub const PARKING_Y: f64 = 4.25;
pub const RIGHT_SIDEWALK_Y: f64 = 2.0;
pub const LEFT_SIDEWALK_Y: f64 = 15.0;
pub const CAR_START_X: f64 = 5.0;
pub const CAR_GOAL_X: f64 = 105.0;
pub const ALL_SCENARIOS: [u8; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
pub const TRAIN_SCENARIOS: [u8; 6] = [1, 3, 4, 5, 6, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianSpawn {
    pub position: Vec2,
    pub goal: Vec2,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtherCarSpawn {
    pub pose: Pose,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

/// One instantiation of a scenario template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scenario_id: u8,
    pub car_start: Pose,
    pub car_goal: Vec2,
    pub spawn_distance: f64,
    pub pedestrian_speed: f64,
    pub pedestrians: Vec<PedestrianSpawn>,
    pub static_obstacles: Vec<OrientedRect>,
    pub other_cars: Vec<OtherCarSpawn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridAxis {
    /// Inclusive values `start, start + step, …, ≤ stop`.
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || self.stop < self.start || !self.start.is_finite() || !self.stop.is_finite() {
            return config_err(format!("invalid grid axis {self:?}"));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        // round to 1e-9 so 0.6 + 3·0.1 prints as 0.9
        Ok((0..n).map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGridConfig {
    pub scenarios: Vec<u8>,
    pub speed: GridAxis,
    pub distance: GridAxis,
    /// Distance from the car start to the zero-distance conflict point (m).
    #[serde(default = "d_crossing_offset")]
    pub crossing_offset: f64,
}

fn d_crossing_offset() -> f64 {
    10.0
}

impl SceneGridConfig {
    pub fn default_for(split: Split) -> Self {
        match split {
            Split::Train => SceneGridConfig {
                scenarios: TRAIN_SCENARIOS.to_vec(),
                speed: GridAxis { start: 0.6, stop: 2.0, step: 0.1 },
                distance: GridAxis { start: 0.0, stop: 40.0, step: 1.0 },
                crossing_offset: d_crossing_offset(),
            },
            Split::Test => SceneGridConfig {
                scenarios: ALL_SCENARIOS.to_vec(),
                speed: GridAxis { start: 0.25, stop: 2.85, step: 0.1 },
                distance: GridAxis { start: 4.75, stop: 49.25, step: 1.0 },
                crossing_offset: d_crossing_offset(),
            },
        }
    }
}

/// Scenario × speed × distance grid in that nesting order.
pub fn generate_scenes(grid: &SceneGridConfig) -> Result<Vec<Scene>> {
    if grid.scenarios.is_empty() {
        return config_err("scene grid has no scenarios");
    }
    let speeds = grid.speed.values()?;
    let dists = grid.distance.values()?;
    let mut out = Vec::with_capacity(grid.scenarios.len() * speeds.len() * dists.len());
    for &id in &grid.scenarios {
        for &v in &speeds {
            for &d in &dists {
                out.push(scene_from_template(id, v, d, grid.crossing_offset)?);
            }
        }
    }
    Ok(out)
}

fn parked_car(x_center: f64, y_center: f64) -> OrientedRect {
    OrientedRect { center: [x_center, y_center], heading: 0.0, length: 4.5, width: 2.0 }
}

/// Builds one scene. `spawn_distance` shifts the conflict point ahead of the car.
pub fn scene_from_template(scenario_id: u8, ped_speed: f64, spawn_distance: f64, crossing_offset: f64) -> Result<Scene> {
    if !(ped_speed >= 0.0) || !spawn_distance.is_finite() {
        return config_err("pedestrian speed must be >= 0 and distance finite");
    }
    let xc = CAR_START_X + crossing_offset + spawn_distance;
    let cross_right = |x: f64| PedestrianSpawn { position: [x, RIGHT_SIDEWALK_Y], goal: [x, LEFT_SIDEWALK_Y], speed: ped_speed };
    let cross_left = |x: f64| PedestrianSpawn { position: [x, LEFT_SIDEWALK_Y], goal: [x, RIGHT_SIDEWALK_Y], speed: ped_speed };
    let oncoming = OtherCarSpawn {
        pose: Pose { x: (xc + 25.0).min(ROAD_LENGTH - 3.0), y: ONCOMING_LANE_Y, heading: std::f64::consts::PI },
        speed: 8.0,
        length: 4.5,
        width: 2.0,
    };
    let (pedestrians, static_obstacles, other_cars) = match scenario_id {
        // crossing from the right, unobstructed
        1 => (vec![cross_right(xc)], vec![], vec![]),
        // crossing from the left, unobstructed
        2 => (vec![cross_left(xc)], vec![], vec![]),
        // from the right, hidden behind a parked car
        3 => (vec![cross_right(xc)], vec![parked_car(xc - 4.0, PARKING_Y)], vec![]),
        // from the right, hidden behind two parked cars
        4 => (vec![cross_right(xc)], vec![parked_car(xc - 4.0, PARKING_Y), parked_car(xc - 9.0, PARKING_Y)], vec![]),
        // from the right with an oncoming car
        5 => (vec![cross_right(xc)], vec![], vec![oncoming]),
        // from the left, masked by an oncoming car
        6 => (vec![cross_left(xc)], vec![], vec![oncoming]),
        // walking towards the car along the parking strip edge
        7 => (
            vec![PedestrianSpawn { position: [xc, 5.0], goal: [CAR_START_X - 4.0, 5.0], speed: ped_speed }],
            vec![],
            vec![],
        ),
        // from the left, hidden behind a car stopped in the oncoming lane
        8 => (vec![cross_left(xc)], vec![parked_car(xc - 4.0, ONCOMING_LANE_Y)], vec![]),
        _ => return config_err(format!("unknown scenario id {scenario_id} (templates exist for 1..=8)")),
    };
    Ok(Scene {
        scenario_id,
        car_start: Pose { x: CAR_START_X, y: EGO_LANE_Y, heading: 0.0 },
        car_goal: [CAR_GOAL_X, EGO_LANE_Y],
        spawn_distance,
        pedestrian_speed: ped_speed,
        pedestrians,
        static_obstacles,
        other_cars,
    })
}

/// Static cost map of a scene: sidewalks at 50, road at 1, static
/// obstacles at 100. Moving cars are not drawn.
pub fn scene_cost_map(scene: &Scene, resolution: f64) -> Result<CostMap> {
    let w = (ROAD_LENGTH / resolution).round() as usize;
    let h = (ROAD_WIDTH / resolution).round() as usize;
    let mut map = CostMap::new(w, h, resolution, COST_ROAD)?;
    map.fill_rect(0.0, 0.0, ROAD_LENGTH, 3.0, COST_SIDEWALK);
    map.fill_rect(0.0, 13.5, ROAD_LENGTH, ROAD_WIDTH, COST_SIDEWALK);
    for r in &scene.static_obstacles {
        map.stamp(r, COST_OBSTACLE);
    }
    Ok(map)
}
