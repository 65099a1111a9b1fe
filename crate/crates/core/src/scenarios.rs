//! Nine-template pedestrian-crossing benchmark and its stratified split.
//!
//! The ego drives along the right lane of a straight two-lane road
//! (`y ∈ [-3, 3]`, lane centre `y = -1.5`) from `x = 0` to `x = 60`. Each
//! template adds one crossing pedestrian whose straight path intersects the
//! ego lane at `x = crossDist`, plus template specific obstacles and traffic.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Rect, Vec2};
use crate::world::{AgentKind, AgentState, ExoAgent, WorldState};

pub const ROAD_HALF_WIDTH: f64 = 3.0;
pub const EGO_LANE_Y: f64 = -1.5;
pub const EGO_START_X: f64 = 0.0;
pub const EGO_GOAL_X: f64 = 60.0;
pub const EGO_START_SPEED: f64 = 5.0;
pub const PARKED_CAR: (f64, f64) = (4.5, 1.8);
pub const ARM_LENGTH: f64 = 30.0;
const ARM_HALF_WIDTH: f64 = 3.0;
const BLOCK_DEPTH: f64 = 15.0;
const BLOCK_SETBACK: f64 = 4.5;
/// Nominal ego speed used to time the pedestrian's arrival at the lane.
const NOMINAL_EGO_SPEED: f64 = 5.0;
const MAX_LATERAL: f64 = 15.0;

pub const SPEED_RANGE: (f64, f64) = (0.5, 2.0);
pub const DIST_RANGE: (f64, f64) = (5.0, 45.0);

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange { what: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("unknown scenario template {0}")]
    UnknownTemplate(u8),
    #[error("invalid grid spec: {0}")]
    BadGrid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    StraightRoad,
    OccludedParkedCar,
    IncomingCar,
    TIntersection,
    CrossIntersection,
}

/// Side of the road the pedestrian starts from, as seen by the ego.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Right,
    Left,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Right => -1.0,
            Side::Left => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub id: u8,
    pub layout: Layout,
    pub side: Side,
}

pub const TEMPLATES: [ScenarioTemplate; 9] = [
    ScenarioTemplate { id: 1, layout: Layout::StraightRoad, side: Side::Right },
    ScenarioTemplate { id: 2, layout: Layout::OccludedParkedCar, side: Side::Right },
    ScenarioTemplate { id: 3, layout: Layout::StraightRoad, side: Side::Left },
    ScenarioTemplate { id: 4, layout: Layout::OccludedParkedCar, side: Side::Left },
    ScenarioTemplate { id: 5, layout: Layout::IncomingCar, side: Side::Left },
    ScenarioTemplate { id: 6, layout: Layout::TIntersection, side: Side::Left },
    ScenarioTemplate { id: 7, layout: Layout::TIntersection, side: Side::Right },
    ScenarioTemplate { id: 8, layout: Layout::CrossIntersection, side: Side::Left },
    ScenarioTemplate { id: 9, layout: Layout::CrossIntersection, side: Side::Right },
];

impl ScenarioTemplate {
    pub fn by_id(id: u8) -> Result<ScenarioTemplate, ScenarioError> {
        TEMPLATES.iter().copied().find(|t| t.id == id).ok_or(ScenarioError::UnknownTemplate(id))
    }

    pub fn ego_start(&self) -> Vec2 {
        Vec2::new(EGO_START_X, EGO_LANE_Y)
    }

    pub fn ego_goal(&self) -> Vec2 {
        Vec2::new(EGO_GOAL_X, EGO_LANE_Y)
    }
}

/// One exo agent as authored in a scene: true initial state plus the
/// hypothesis space a tracker may use for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneAgent {
    pub kind: AgentKind,
    pub state: AgentState,
    /// Candidate destinations; the true goal is always a member.
    pub goal_set: Vec<Vec2>,
    /// Plausible speed interval for this agent.
    pub speed_range: (f64, f64),
    /// Area where the agent may stand when it cannot be seen.
    pub spawn_region: Rect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scene {
    pub scene_id: String,
    pub template_id: u8,
    pub ped_speed: f64,
    pub cross_dist: f64,
    pub seed: u64,
    pub ego: AgentState,
    pub exo: Vec<SceneAgent>,
    pub obstacles: Vec<Rect>,
}

impl Scene {
    pub fn initial_state(&self) -> WorldState {
        WorldState {
            ego: self.ego,
            exo: self.exo.iter().map(|a| ExoAgent { kind: a.kind, state: a.state }).collect(),
            obstacles: self.obstacles.clone().into(),
            t: 0,
        }
    }

    pub fn template(&self) -> ScenarioTemplate {
        ScenarioTemplate::by_id(self.template_id).expect("scene built from a known template")
    }
}

fn check_range(what: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<(), ScenarioError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(ScenarioError::OutOfRange { what, value, lo, hi })
    }
}

pub(crate) fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn scene_id(template_id: u8, ped_speed: f64, cross_dist: f64, seed: u64) -> String {
    format!("t{template_id}-v{ped_speed:.3}-d{cross_dist:.2}-s{seed}")
}

fn pedestrian_goal_set(start: Vec2, cross_goal: Vec2) -> Vec<Vec2> {
    vec![cross_goal, Vec2::new(start.x + 10.0, start.y), Vec2::new(start.x - 10.0, start.y)]
}

fn intersection_blocks(cross_dist: f64, sign: f64) -> [Rect; 2] {
    let near = sign * BLOCK_SETBACK;
    let far = sign * (BLOCK_SETBACK + BLOCK_DEPTH);
    let before = Rect::new(
        Vec2::new(cross_dist - ARM_HALF_WIDTH - BLOCK_DEPTH, near),
        Vec2::new(cross_dist - ARM_HALF_WIDTH, far),
    );
    let after = Rect::new(
        Vec2::new(cross_dist + ARM_HALF_WIDTH, near),
        Vec2::new(cross_dist + ARM_HALF_WIDTH + BLOCK_DEPTH, far),
    );
    [before, after]
}

pub fn build_scene(
    template: &ScenarioTemplate,
    ped_speed: f64,
    cross_dist: f64,
    seed: u64,
) -> Result<Scene, ScenarioError> {
    check_range("pedSpeed", ped_speed, SPEED_RANGE)?;
    check_range("crossDist", cross_dist, DIST_RANGE)?;

    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
        &[template.id],
        &ped_speed.to_bits().to_le_bytes(),
        &cross_dist.to_bits().to_le_bytes(),
        &seed.to_le_bytes(),
    ]));
    let s = template.side.sign();
    let ego = AgentState::moving(template.ego_start(), template.ego_goal(), 0.0, EGO_START_SPEED);
    let mut obstacles = Vec::new();
    let mut exo = Vec::new();

    let (ped_start, cross_goal) = match template.layout {
        Layout::OccludedParkedCar => {
            let (len, width) = PARKED_CAR;
            let y_mid = s * (ROAD_HALF_WIDTH + 0.1 + width / 2.0);
            obstacles.push(Rect::new(
                Vec2::new(cross_dist - 0.5 - len, y_mid - width / 2.0),
                Vec2::new(cross_dist - 0.5, y_mid + width / 2.0),
            ));
            let goal_y = -s * (6.0 + rng.gen_range(-0.5..0.5));
            (Vec2::new(cross_dist, s * 4.5), Vec2::new(cross_dist, goal_y))
        }
        _ => {
            // Time the crossing so the pedestrian reaches the ego lane roughly
            // when an undisturbed ego would.
            let walk = ped_speed * cross_dist / NOMINAL_EGO_SPEED + rng.gen_range(-0.5..0.5);
            let y = (EGO_LANE_Y + s * walk).abs().clamp(ROAD_HALF_WIDTH + 0.5, MAX_LATERAL) * s;
            (Vec2::new(cross_dist, y), Vec2::new(cross_dist, -s * 6.0))
        }
    };

    match template.layout {
        Layout::TIntersection => obstacles.extend(intersection_blocks(cross_dist, s)),
        Layout::CrossIntersection => {
            obstacles.extend(intersection_blocks(cross_dist, s));
            obstacles.extend(intersection_blocks(cross_dist, -s));
        }
        _ => {}
    }

    let spawn_region = Rect::new(
        Vec2::new(cross_dist - 8.0, s * (ROAD_HALF_WIDTH + 0.1)),
        Vec2::new(cross_dist + 4.0, s * (ROAD_HALF_WIDTH + 0.1 + 8.0)),
    );
    exo.push(SceneAgent {
        kind: AgentKind::Pedestrian,
        state: AgentState::toward_goal(ped_start, cross_goal, ped_speed),
        goal_set: pedestrian_goal_set(ped_start, cross_goal),
        speed_range: SPEED_RANGE,
        spawn_region,
    });

    if template.layout == Layout::IncomingCar {
        let start = Vec2::new(cross_dist + 25.0 + rng.gen_range(-2.0..2.0), -EGO_LANE_Y);
        let goal = Vec2::new(-20.0, -EGO_LANE_Y);
        exo.push(SceneAgent {
            kind: AgentKind::Car,
            state: AgentState::moving(start, goal, PI, 5.0),
            goal_set: vec![goal],
            speed_range: (3.0, 7.0),
            spawn_region: Rect::new(Vec2::new(-20.0, 0.0), Vec2::new(90.0, ROAD_HALF_WIDTH)),
        });
    }

    Ok(Scene {
        scene_id: scene_id(template.id, ped_speed, cross_dist, seed),
        template_id: template.id,
        ped_speed,
        cross_dist,
        seed,
        ego,
        exo,
        obstacles,
    })
}

/// Cartesian parameter grid over templates, pedestrian speeds and crossing distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub templates: Vec<u8>,
    pub speeds: Vec<f64>,
    pub dists: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid {
            templates: TEMPLATES.iter().map(|t| t.id).collect(),
            speeds: (0..7).map(|i| 0.5 + 0.25 * i as f64).collect(),
            dists: (1..=9).map(|i| 5.0 * i as f64).collect(),
        }
    }
}

impl ParamGrid {
    pub fn len(&self) -> usize {
        self.templates.len() * self.speeds.len() * self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromStr for ParamGrid {
    type Err = ScenarioError;

    /// `templates=1,2;speeds=0.5,1.0;dists=10,20`; omitted keys keep defaults.
    fn from_str(spec: &str) -> Result<Self, ScenarioError> {
        let mut grid = ParamGrid::default();
        let bad = |m: String| ScenarioError::BadGrid(m);
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part.split_once('=').ok_or_else(|| bad(part.to_string()))?;
            let items = values.split(',').map(str::trim).filter(|v| !v.is_empty());
            match key.trim() {
                "templates" => {
                    grid.templates = items
                        .map(|v| v.parse::<u8>().map_err(|e| bad(format!("{v}: {e}"))))
                        .collect::<Result<_, _>>()?;
                }
                "speeds" => {
                    grid.speeds = items
                        .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v}: {e}"))))
                        .collect::<Result<_, _>>()?;
                }
                "dists" => {
                    grid.dists = items
                        .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v}: {e}"))))
                        .collect::<Result<_, _>>()?;
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(grid)
    }
}

pub fn generate_benchmark(grid: &ParamGrid, seed: u64) -> Result<Vec<Scene>, ScenarioError> {
    let mut scenes = Vec::with_capacity(grid.len());
    for &tid in &grid.templates {
        let template = ScenarioTemplate::by_id(tid)?;
        for &v in &grid.speeds {
            for &d in &grid.dists {
                scenes.push(build_scene(&template, v, d, seed)?);
            }
        }
    }
    Ok(scenes)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Scene>,
    pub calib: Vec<Scene>,
    pub test: Vec<Scene>,
}

/// Stratified 25:25:50 partition. Within each template, scenes are ordered by
/// a keyed hash of their id; the first quarter (rounded) trains, the next
/// quarter calibrates, the remainder tests.
pub fn split_benchmark(scenes: &[Scene], seed: u64) -> Split {
    let mut strata: BTreeMap<u8, Vec<(u64, &Scene)>> = BTreeMap::new();
    for s in scenes {
        let key = stable_hash(&[&seed.to_le_bytes(), s.scene_id.as_bytes()]);
        strata.entry(s.template_id).or_default().push((key, s));
    }
    let mut split = Split::default();
    for (_, mut members) in strata {
        members.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.scene_id.cmp(&b.1.scene_id)));
        let n = members.len();
        let quarter = (n as f64 * 0.25).round() as usize;
        let n_train = quarter.min(n);
        let n_calib = quarter.min(n - n_train);
        for (i, (_, s)) in members.into_iter().enumerate() {
            let dst = if i < n_train {
                &mut split.train
            } else if i < n_train + n_calib {
                &mut split.calib
            } else {
                &mut split.test
            };
            dst.push(s.clone());
        }
    }
    split
}
