//! Costmap construction and anytime weighted hybrid A* for the ego path.
//!
//! The search runs on an exact state lattice: a state is a grid cell, one of
//! 16 heading bins and the steering label of the primitive that reached it.
//! Motion primitives are precomputed from the cell centre for every
//! (heading bin, steer) pair, so the graph is identical no matter which
//! order states are discovered in. Only the first primitive leaves from the
//! true ego pose.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_heading, Pose, Rect, Vec2};
use crate::meter::{Cost, Meter};
use crate::prediction::TrajPrediction;

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("no collision-free path to the goal")]
    NoPath,
    #[error("start pose ({0:.2}, {1:.2}) lies outside the costmap")]
    StartOutsideMap(f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PathConfig {
    pub resolution: f64,
    pub heading_bins: usize,
    pub steers: Vec<f64>,
    pub step_len: f64,
    pub samples: usize,
    pub cell_cost_weight: f64,
    pub steer_change_weight: f64,
    pub weights: Vec<f64>,
    pub budget_ms: f64,
    pub d_goal: f64,
    pub wheelbase: f64,
    pub pred_radius: f64,
    pub pred_peak: f64,
    pub pred_decay: f64,
    pub margin: f64,
    /// Hard expansion cap for the first (solution-less) weight stage.
    pub max_expansions: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            resolution: 0.2,
            heading_bins: 16,
            steers: vec![-50.0, -25.0, 0.0, 25.0, 50.0],
            step_len: 1.0,
            samples: 5,
            cell_cost_weight: 5.0,
            steer_change_weight: 0.02,
            weights: vec![2.0, 1.5, 1.2, 1.0],
            budget_ms: 50.0,
            d_goal: 2.0,
            wheelbase: 2.5,
            pred_radius: 1.0,
            pred_peak: 0.8,
            pred_decay: 0.9,
            margin: 5.0,
            max_expansions: 2_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Free(f64),
    Blocked,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Costmap {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    cost: Vec<f64>,
    blocked: Vec<bool>,
}

const EDGE_EPS: f64 = 1e-9;

impl Costmap {
    pub fn empty(origin: Vec2, resolution: f64, width: usize, height: usize) -> Self {
        Costmap {
            origin,
            resolution,
            width,
            height,
            cost: vec![0.0; width * height],
            blocked: vec![false; width * height],
        }
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(i32, i32)> {
        let ix = ((p.x - self.origin.x) / self.resolution).floor();
        let iy = ((p.y - self.origin.y) / self.resolution).floor();
        self.in_bounds(ix as i64, iy as i64).then_some((ix as i32, iy as i32))
    }

    fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    pub fn center(&self, ix: i32, iy: i32) -> Vec2 {
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn get(&self, ix: i32, iy: i32) -> Option<Cell> {
        if !self.in_bounds(ix as i64, iy as i64) {
            return None;
        }
        let i = iy as usize * self.width + ix as usize;
        Some(if self.blocked[i] { Cell::Blocked } else { Cell::Free(self.cost[i]) })
    }

    pub fn set_cost(&mut self, ix: i32, iy: i32, c: f64) {
        if self.in_bounds(ix as i64, iy as i64) {
            let i = iy as usize * self.width + ix as usize;
            self.cost[i] = c;
        }
    }

    /// Marks every cell whose area overlaps the rectangle with positive area.
    pub fn block_rect(&mut self, r: &Rect) {
        let res = self.resolution;
        let x0 = (((r.min.x - self.origin.x) / res) + EDGE_EPS).floor().max(0.0) as usize;
        let y0 = (((r.min.y - self.origin.y) / res) + EDGE_EPS).floor().max(0.0) as usize;
        let x1 = ((((r.max.x - self.origin.x) / res) - EDGE_EPS).ceil().max(0.0) as usize).min(self.width);
        let y1 = ((((r.max.y - self.origin.y) / res) - EDGE_EPS).ceil().max(0.0) as usize).min(self.height);
        for iy in y0..y1 {
            for ix in x0..x1 {
                self.blocked[iy * self.width + ix] = true;
            }
        }
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|b| **b).count()
    }

    pub fn max_cost(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    /// Raises cells whose centre lies within `radius` of `p` to at least `c`.
    pub fn splat(&mut self, p: Vec2, radius: f64, c: f64) {
        let res = self.resolution;
        let lo_x = (((p.x - radius - self.origin.x) / res).floor() as i64).max(0);
        let hi_x = (((p.x + radius - self.origin.x) / res).ceil() as i64).min(self.width as i64 - 1);
        let lo_y = (((p.y - radius - self.origin.y) / res).floor() as i64).max(0);
        let hi_y = (((p.y + radius - self.origin.y) / res).ceil() as i64).min(self.height as i64 - 1);
        for iy in lo_y..=hi_y {
            for ix in lo_x..=hi_x {
                if self.center(ix as i32, iy as i32).distance(p) <= radius {
                    let i = iy as usize * self.width + ix as usize;
                    if self.cost[i] < c {
                        self.cost[i] = c;
                    }
                }
            }
        }
    }
}

/// Costmap around the ego, its goal, all obstacles and all predictions.
pub fn build_costmap(
    ego: Pose,
    goal: Vec2,
    obstacles: &[Rect],
    preds: &TrajPrediction,
    cfg: &PathConfig,
) -> Costmap {
    let mut bounds = Rect::new(ego.pos, goal);
    for r in obstacles {
        bounds = bounds.union(r);
    }
    for p in preds.paths.iter().flatten() {
        bounds = bounds.union(&Rect::new(*p, *p));
    }
    let bounds = bounds.expand(cfg.margin);
    let res = cfg.resolution;
    let origin = Vec2::new((bounds.min.x / res).floor() * res, (bounds.min.y / res).floor() * res);
    let width = ((bounds.max.x - origin.x) / res).ceil() as usize;
    let height = ((bounds.max.y - origin.y) / res).ceil() as usize;
    let mut map = Costmap::empty(origin, res, width, height);
    for r in obstacles {
        map.block_rect(r);
    }
    for path in &preds.paths {
        for (k, p) in path.iter().enumerate() {
            map.splat(*p, cfg.pred_radius, cfg.pred_peak * cfg.pred_decay.powi(k as i32));
        }
    }
    map
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeState {
    pub ix: i32,
    pub iy: i32,
    pub hbin: u8,
    /// Index into [`PathConfig::steers`] of the primitive that led here.
    pub steer: u8,
}

impl LatticeState {
    fn key(self) -> u64 {
        ((self.ix as u32 as u64) << 32)
            | ((self.iy as u16 as u64) << 16)
            | ((self.hbin as u64) << 8)
            | self.steer as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub to: LatticeState,
    pub cost: f64,
}

#[derive(Clone, Debug)]
struct Primitive {
    dx: i32,
    dy: i32,
    hbin_to: u8,
    samples: Vec<(i32, i32)>,
}

fn arc_point(start: Pose, kappa: f64, s: f64) -> Pose {
    let th = start.heading;
    if kappa.abs() < 1e-12 {
        Pose::new(start.pos + Vec2::from_angle(th) * s, th)
    } else {
        let th2 = th + kappa * s;
        let d = Vec2::new((th2.sin() - th.sin()) / kappa, -(th2.cos() - th.cos()) / kappa);
        Pose::new(start.pos + d, normalize_heading(th2))
    }
}

/// Precomputed primitive graph for one [`PathConfig`].
#[derive(Clone, Debug)]
pub struct Lattice {
    pub cfg: PathConfig,
    table: Vec<Primitive>,
    max_disp: f64,
}

impl Lattice {
    pub fn new(cfg: PathConfig) -> Self {
        let res = cfg.resolution;
        let bin = TAU / cfg.heading_bins as f64;
        let mut table = Vec::with_capacity(cfg.heading_bins * cfg.steers.len());
        let mut max_disp: f64 = 0.0;
        for hb in 0..cfg.heading_bins {
            for &steer in &cfg.steers {
                let start = Pose::new(Vec2::new(0.5 * res, 0.5 * res), hb as f64 * bin);
                let kappa = steer.to_radians().tan() / cfg.wheelbase;
                let cell = |p: Vec2| ((p.x / res).floor() as i32, (p.y / res).floor() as i32);
                let samples: Vec<(i32, i32)> = (1..=cfg.samples)
                    .map(|i| cell(arc_point(start, kappa, cfg.step_len * i as f64 / cfg.samples as f64).pos))
                    .collect();
                let end = arc_point(start, kappa, cfg.step_len);
                let (dx, dy) = cell(end.pos);
                let hbin_to = ((end.heading / bin).round() as usize % cfg.heading_bins) as u8;
                max_disp = max_disp.max(((dx * dx + dy * dy) as f64).sqrt() * res);
                table.push(Primitive { dx, dy, hbin_to, samples });
            }
        }
        Lattice { cfg, table, max_disp }
    }

    /// Largest centre-to-centre displacement of any primitive.
    pub fn max_displacement(&self) -> f64 {
        self.max_disp
    }

    fn steer_change(&self, from: usize, to: usize) -> f64 {
        self.cfg.steer_change_weight * (self.cfg.steers[to] - self.cfg.steers[from]).abs()
    }

    fn cells_cost(&self, map: &Costmap, cells: impl Iterator<Item = (i32, i32)>) -> Option<f64> {
        let mut sum = 0.0;
        for (ix, iy) in cells {
            match map.get(ix, iy)? {
                Cell::Blocked => return None,
                Cell::Free(c) => sum += c,
            }
        }
        Some(self.cfg.step_len + self.cfg.cell_cost_weight * sum)
    }

    /// Lattice successors of `s`; `None` entries are blocked or off-map.
    pub fn successors(&self, map: &Costmap, s: LatticeState) -> Vec<Edge> {
        let n = self.cfg.steers.len();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let p = &self.table[s.hbin as usize * n + k];
            let cells = p.samples.iter().map(|(x, y)| (s.ix + x, s.iy + y));
            if let Some(c) = self.cells_cost(map, cells) {
                out.push(Edge {
                    to: LatticeState { ix: s.ix + p.dx, iy: s.iy + p.dy, hbin: p.hbin_to, steer: k as u8 },
                    cost: c + self.steer_change(s.steer as usize, k),
                });
            }
        }
        out
    }

    /// Successors of the continuous start pose. The previous steer is 0.
    pub fn start_successors(&self, map: &Costmap, start: Pose) -> Vec<Edge> {
        let bin = TAU / self.cfg.heading_bins as f64;
        let straight = self.cfg.steers.iter().position(|s| *s == 0.0).unwrap_or(0);
        let mut out = Vec::new();
        for (k, &steer) in self.cfg.steers.iter().enumerate() {
            let kappa = steer.to_radians().tan() / self.cfg.wheelbase;
            let pts: Vec<Vec2> = (1..=self.cfg.samples)
                .map(|i| {
                    arc_point(start, kappa, self.cfg.step_len * i as f64 / self.cfg.samples as f64).pos
                })
                .collect();
            let Some(cells) = pts.iter().map(|p| map.cell_of(*p)).collect::<Option<Vec<_>>>() else {
                continue;
            };
            let Some(c) = self.cells_cost(map, cells.iter().copied()) else { continue };
            let end = arc_point(start, kappa, self.cfg.step_len);
            let (ix, iy) = *cells.last().expect("at least one sample");
            let hbin = ((end.heading / bin).round() as usize % self.cfg.heading_bins) as u8;
            out.push(Edge {
                to: LatticeState { ix, iy, hbin, steer: k as u8 },
                cost: c + self.steer_change(straight, k),
            });
        }
        out
    }

    pub fn is_goal(&self, map: &Costmap, s: LatticeState, goal: Vec2) -> bool {
        map.center(s.ix, s.iy).distance(goal) < self.cfg.d_goal - EDGE_EPS
    }

    /// Admissible cost-to-go: every primitive costs at least its arc length
    /// and moves at most `max_displacement`.
    pub fn heuristic(&self, map: &Costmap, s: LatticeState, goal: Vec2) -> f64 {
        let d = map.center(s.ix, s.iy).distance(goal) - self.cfg.d_goal;
        self.cfg.step_len * d.max(0.0) / self.max_disp
    }

    pub fn pose_of(&self, map: &Costmap, s: LatticeState) -> Pose {
        Pose::new(map.center(s.ix, s.iy), s.hbin as f64 * TAU / self.cfg.heading_bins as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub poses: Vec<Pose>,
    /// Steering label (degrees) of each primitive; one fewer than poses.
    pub steers: Vec<f64>,
    pub cost: f64,
    /// Incumbent cost after each solution improvement.
    pub incumbents: Vec<f64>,
    pub expansions: u64,
}

impl PlannedPath {
    pub fn single(p: Pose) -> Self {
        PlannedPath { poses: vec![p], steers: vec![], cost: 0.0, incumbents: vec![0.0], expansions: 0 }
    }
}

#[derive(Clone, Copy)]
struct Open {
    f: f64,
    g: f64,
    key: u64,
    state: LatticeState,
}

impl PartialEq for Open {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Open {
    // min-heap on f, then larger g, then key for determinism
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then(self.g.total_cmp(&o.g)).then(o.key.cmp(&self.key))
    }
}

const START_KEY: u64 = u64::MAX;

struct Record {
    g: f64,
    parent: u64,
    state: LatticeState,
}

fn reconstruct(
    lattice: &Lattice,
    map: &Costmap,
    start: Pose,
    records: &FxHashMap<u64, Record>,
    goal_key: u64,
) -> (Vec<Pose>, Vec<f64>) {
    let mut chain = Vec::new();
    let mut k = goal_key;
    while k != START_KEY {
        let r = &records[&k];
        chain.push(r.state);
        k = r.parent;
    }
    chain.reverse();
    let mut poses = vec![start];
    let mut steers = Vec::with_capacity(chain.len());
    for s in chain {
        poses.push(lattice.pose_of(map, s));
        steers.push(lattice.cfg.steers[s.steer as usize]);
    }
    (poses, steers)
}

/// One weighted A* pass, pruning against `incumbent`.
#[allow(clippy::too_many_arguments)]
fn weighted_search(
    lattice: &Lattice,
    map: &Costmap,
    start: Pose,
    goal: Vec2,
    w: f64,
    incumbent: f64,
    meter: &mut Meter,
    deadline: Option<f64>,
    expansions: &mut u64,
) -> Option<(f64, Vec<Pose>, Vec<f64>)> {
    let mut records: FxHashMap<u64, Record> = FxHashMap::default();
    let mut open = BinaryHeap::new();
    let push = |e: Edge, parent: u64, g_parent: f64, records: &mut FxHashMap<u64, Record>, open: &mut BinaryHeap<Open>| {
        let g = g_parent + e.cost;
        let h = lattice.heuristic(map, e.to, goal);
        if g + h >= incumbent {
            return;
        }
        let key = e.to.key();
        if records.get(&key).is_some_and(|r| r.g <= g) {
            return;
        }
        records.insert(key, Record { g, parent, state: e.to });
        open.push(Open { f: g + w * h, g, key, state: e.to });
    };
    for e in lattice.start_successors(map, start) {
        push(e, START_KEY, 0.0, &mut records, &mut open);
    }
    while let Some(node) = open.pop() {
        if records[&node.key].g < node.g {
            continue;
        }
        if node.g + lattice.heuristic(map, node.state, goal) >= incumbent {
            continue;
        }
        if lattice.is_goal(map, node.state, goal) {
            let (poses, steers) = reconstruct(lattice, map, start, &records, node.key);
            return Some((node.g, poses, steers));
        }
        if deadline.is_some_and(|d| meter.elapsed_ms() >= d) {
            return None;
        }
        if *expansions >= lattice.cfg.max_expansions {
            return None;
        }
        *expansions += 1;
        meter.charge(Cost::SearchExpansion);
        for e in lattice.successors(map, node.state) {
            push(e, node.key, node.g, &mut records, &mut open);
        }
    }
    None
}

/// Anytime weighted hybrid A*. The first weight stage always runs to a
/// solution or to exhaustion; later stages stop when the budget is spent.
pub fn hybrid_astar(
    lattice: &Lattice,
    start: Pose,
    goal: Vec2,
    map: &Costmap,
    meter: &mut Meter,
) -> Result<PlannedPath, PathError> {
    if map.cell_of(start.pos).is_none() {
        return Err(PathError::StartOutsideMap(start.pos.x, start.pos.y));
    }
    if start.pos.distance(goal) < lattice.cfg.d_goal {
        return Ok(PlannedPath::single(start));
    }
    let deadline = meter.elapsed_ms() + lattice.cfg.budget_ms;
    let mut best: Option<PlannedPath> = None;
    let mut expansions = 0u64;
    for &w in &lattice.cfg.weights {
        let incumbent = best.as_ref().map_or(f64::INFINITY, |b| b.cost);
        let limit = best.as_ref().map(|_| deadline);
        if limit.is_some_and(|d| meter.elapsed_ms() >= d) {
            break;
        }
        match weighted_search(lattice, map, start, goal, w, incumbent, meter, limit, &mut expansions) {
            Some((cost, poses, steers)) => {
                let mut incumbents = best.map(|b| b.incumbents).unwrap_or_default();
                incumbents.push(cost);
                best = Some(PlannedPath { poses, steers, cost, incumbents, expansions: 0 });
            }
            None if best.is_none() => return Err(PathError::NoPath),
            None => {}
        }
    }
    let mut path = best.ok_or(PathError::NoPath)?;
    path.expansions = expansions;
    Ok(path)
}

/// Steering command of the first primitive, 0 for a single-pose path.
pub fn extract_steering(path: &PlannedPath) -> f64 {
    path.steers.first().copied().unwrap_or(0.0)
}
