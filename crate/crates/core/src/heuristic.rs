//! Longitudinal heuristic speed planning in the station–time (X-T) plane.
//!
//! Obstacles whose predicted lateral position falls inside a corridor are
//! projected into an occupancy grid over `(t, x)`. A hybrid A* search over
//! constant-acceleration primitives finds the profile that loses the least
//! time against driving at `v_max`, and the slope of that profile becomes the
//! per-knot speed target `v_pre`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::knot_times;
use crate::prediction::PredictedObstacle;

/// Lateral band `[y_min, y_max]` whose obstacles block the X-T grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub y_min: f64,
    pub y_max: f64,
}

impl Corridor {
    pub fn new(y_min: f64, y_max: f64) -> Result<Self> {
        if !(y_min < y_max) {
            return Err(Error::InvalidArgument(format!(
                "corridor bounds must satisfy y_min < y_max, got [{y_min}, {y_max}]"
            )));
        }
        Ok(Self { y_min, y_max })
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XtConfig {
    pub x_res: f64,
    pub t_res: f64,
    pub x_extent: f64,
    /// Extra length added on both sides of every obstacle interval (m).
    pub margin: f64,
    /// Distance over which the soft proximity cost decays to zero (m).
    pub proximity_range: f64,
    pub w_time: f64,
    pub w_terminal: f64,
    pub w_proximity: f64,
    /// Small charge on `a²·Δt` so that equal-time profiles prefer gentle ones.
    pub w_accel: f64,
    /// Length of the closing window over which the terminal speed term is
    /// also charged, so profiles settle before the horizon ends (s).
    pub settle_time: f64,
    /// Gap below which a lead vehicle sets the settle target speed (m).
    pub follow_range: f64,
    /// Width of a speed bucket for duplicate detection (m/s).
    pub v_bucket: f64,
}

impl Default for XtConfig {
    fn default() -> Self {
        Self {
            x_res: 2.0,
            t_res: 0.5,
            x_extent: 300.0,
            margin: 8.0,
            proximity_range: 20.0,
            w_time: 1.0,
            w_terminal: 1.0,
            w_proximity: 0.1,
            w_accel: 1e-3,
            settle_time: 7.0,
            follow_range: 60.0,
            v_bucket: 1.0,
        }
    }
}

/// An obstacle's longitudinal interval and speed at one time slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blocker {
    pub lo: f64,
    pub hi: f64,
    pub v: f64,
}

/// Occupancy grid over time slices `t_k = k·t_res` and cells
/// `[x0 + c·x_res, x0 + (c+1)·x_res)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XtGrid {
    pub x0: f64,
    pub x_res: f64,
    pub t_res: f64,
    pub n_cells: usize,
    pub n_slices: usize,
    occupied: Vec<bool>,
    soft: Vec<f64>,
    blockers: Vec<Vec<Blocker>>,
}

impl XtGrid {
    /// Empty grid starting at station `x0`.
    pub fn free(x0: f64, n_slices: usize, config: &XtConfig) -> Self {
        let n_cells = (config.x_extent / config.x_res).ceil() as usize;
        Self {
            x0,
            x_res: config.x_res,
            t_res: config.t_res,
            n_cells,
            n_slices,
            occupied: vec![false; n_cells * n_slices],
            soft: vec![0.0; n_cells * n_slices],
            blockers: vec![Vec::new(); n_slices],
        }
    }

    pub fn t_extent(&self) -> f64 {
        (self.n_slices - 1) as f64 * self.t_res
    }

    /// Unbounded cell index of station `x`.
    pub fn cell_index(&self, x: f64) -> i64 {
        ((x - self.x0) / self.x_res).floor() as i64
    }

    pub fn cell_of(&self, x: f64) -> Option<usize> {
        let c = ((x - self.x0) / self.x_res).floor();
        if c < 0.0 || c >= self.n_cells as f64 {
            None
        } else {
            Some(c as usize)
        }
    }

    pub fn is_occupied(&self, slice: usize, cell: usize) -> bool {
        self.occupied[slice * self.n_cells + cell]
    }

    pub fn soft_cost(&self, slice: usize, cell: usize) -> f64 {
        self.soft[slice * self.n_cells + cell]
    }

    pub fn blockers(&self, slice: usize) -> &[Blocker] {
        &self.blockers[slice]
    }

    /// Marks every cell intersecting `[lo, hi]` on `slice` as occupied.
    pub fn block(&mut self, slice: usize, lo: f64, hi: f64, v: f64) {
        self.blockers[slice].push(Blocker { lo, hi, v });
        let first = ((lo - self.x0) / self.x_res).floor().max(0.0);
        let last = ((hi - self.x0) / self.x_res).floor();
        if last < 0.0 || first >= self.n_cells as f64 {
            return;
        }
        let last = (last as usize).min(self.n_cells - 1);
        for c in first as usize..=last {
            self.occupied[slice * self.n_cells + c] = true;
        }
    }

    fn fill_soft_costs(&mut self, range: f64) {
        for k in 0..self.n_slices {
            let mut next_blocked: Option<usize> = None;
            for c in (0..self.n_cells).rev() {
                let idx = k * self.n_cells + c;
                if self.occupied[idx] {
                    next_blocked = Some(c);
                    self.soft[idx] = 0.0;
                    continue;
                }
                self.soft[idx] = match next_blocked {
                    Some(b) => {
                        let gap = (b - c) as f64 * self.x_res;
                        (1.0 - gap / range).max(0.0)
                    }
                    None => 0.0,
                };
            }
        }
    }

    /// Rows `(t, x, occupied)` for every cell, slice-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,occupied\n");
        for k in 0..self.n_slices {
            for c in 0..self.n_cells {
                out.push_str(&format!(
                    "{},{},{}\n",
                    k as f64 * self.t_res,
                    self.x0 + c as f64 * self.x_res,
                    u8::from(self.is_occupied(k, c))
                ));
            }
        }
        out
    }
}

// Obstacle pose at time t by piecewise-linear interpolation of the knots,
// extrapolated backwards from the first knot with its velocity.
fn obstacle_at(pred: &PredictedObstacle, times: &[f64], t: f64) -> (f64, f64, f64) {
    let v = pred.velocities.first().copied().unwrap_or(0.0);
    let first = pred.poses[0];
    if t <= times[0] {
        let back = times[0] - t;
        let (s, c) = first.theta.sin_cos();
        return (first.x - v * back * c, first.y - v * back * s, v);
    }
    for k in 1..times.len() {
        if t <= times[k] {
            let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
            let (a, b) = (pred.poses[k - 1], pred.poses[k]);
            return (
                a.x + (b.x - a.x) * w,
                a.y + (b.y - a.y) * w,
                pred.velocities[k],
            );
        }
    }
    let last = pred.poses[pred.len() - 1];
    (last.x, last.y, pred.velocities[pred.len() - 1])
}

/// Projects the obstacles inside `corridor` into an X-T occupancy grid
/// starting at the ego's station and covering `n` knots of `dt_schedule`.
pub fn build_xt_grid(
    ego_x: f64,
    predictions: &[PredictedObstacle],
    dt_schedule: &[f64],
    corridor: Corridor,
    config: &XtConfig,
) -> XtGrid {
    let horizon: f64 = dt_schedule.iter().sum();
    let max_dt = dt_schedule.iter().cloned().fold(0.0, f64::max);
    let t_extent = horizon.max(dt_schedule.len() as f64 * max_dt);
    let n_slices = (t_extent / config.t_res - 1e-9).ceil() as usize + 1;
    let mut grid = XtGrid::free(ego_x, n_slices, config);
    let times = knot_times(dt_schedule);
    for pred in predictions.iter().filter(|p| !p.is_empty()) {
        for k in 0..n_slices {
            let t = k as f64 * config.t_res;
            let (x, y, v) = obstacle_at(pred, &times, t);
            if corridor.contains(y) {
                grid.block(
                    k,
                    x - pred.l2 - config.margin,
                    x + pred.l1 + config.margin,
                    v,
                );
            }
        }
    }
    grid.fill_soft_costs(config.proximity_range);
    grid
}

/// Node of a station–time profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XtNode {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    /// Lane the node lies in; 0 for single-grid searches.
    #[serde(default)]
    pub lane: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XtProfile {
    pub nodes: Vec<XtNode>,
    pub cost: f64,
    /// False when the search failed and a follow profile was substituted.
    pub searched: bool,
}

impl XtProfile {
    /// Station at time `t` by linear interpolation.
    pub fn x_at(&self, t: f64) -> Option<f64> {
        let first = self.nodes.first()?;
        let last = self.nodes.last()?;
        if t < first.t - 1e-9 || t > last.t + 1e-9 {
            return None;
        }
        let k = self
            .nodes
            .partition_point(|n| n.t < t)
            .max(1)
            .min(self.nodes.len() - 1);
        let (a, b) = (self.nodes[k - 1], self.nodes[k]);
        if b.t <= a.t {
            return Some(b.x);
        }
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        Some(a.x + (b.x - a.x) * w)
    }

    pub fn mean_speed(&self) -> f64 {
        match (self.nodes.first(), self.nodes.last()) {
            (Some(a), Some(b)) if b.t > a.t => (b.x - a.x) / (b.t - a.t),
            _ => 0.0,
        }
    }

    pub fn terminal_speed(&self) -> f64 {
        self.nodes.last().map_or(0.0, |n| n.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimits {
    pub v_max: f64,
    pub a_max: f64,
}

/// Acceleration primitives in tie-break order (smallest magnitude first).
fn primitives(a_max: f64) -> [f64; 5] {
    [0.0, -0.5 * a_max, 0.5 * a_max, -a_max, a_max]
}

/// One primitive applied over a slice, landing at `(x, v)` on `slice`.
pub(crate) struct Move {
    pub slice: usize,
    pub cell: i64,
    pub x: f64,
    pub v: f64,
    pub dx: f64,
    pub a: f64,
}

/// Speed the ego at `(x, v)` on `slice` should settle to: the nearest lead's
/// speed if holding `v` would bring it within `follow_range` of that lead by
/// the end of the horizon, otherwise `v_max`.
fn follow_target(
    grid: &XtGrid,
    config: &XtConfig,
    limits: &SpeedLimits,
    slice: usize,
    x: f64,
    v: f64,
) -> f64 {
    let remaining = grid.t_extent() - slice as f64 * grid.t_res;
    grid.blockers[slice]
        .iter()
        .filter(|b| b.lo >= x)
        .min_by(|a, b| a.lo.total_cmp(&b.lo))
        .filter(|b| b.lo - x + (b.v - v) * remaining <= config.follow_range)
        .map_or(limits.v_max, |b| b.v.min(limits.v_max))
}

/// Cost of one move.
pub(crate) fn edge_cost(grid: &XtGrid, config: &XtConfig, limits: &SpeedLimits, m: &Move) -> f64 {
    let soft = if m.cell < grid.n_cells as i64 {
        grid.soft_cost(m.slice, m.cell as usize)
    } else {
        0.0
    };
    let mut cost = config.w_time * (grid.t_res - m.dx / limits.v_max)
        + config.w_proximity * soft
        + config.w_accel * m.a * m.a * grid.t_res;
    let t = m.slice as f64 * grid.t_res;
    if config.settle_time > 0.0 && t > grid.t_extent() - config.settle_time + 1e-9 {
        let target = follow_target(grid, config, limits, m.slice, m.x, m.v);
        cost += config.w_terminal * (target - m.v).abs() / limits.a_max * grid.t_res
            / config.settle_time;
    }
    cost
}

/// Nearest blocker on the last slice whose interval starts ahead of `x`.
fn lead_at_end(grid: &XtGrid, x: f64) -> Option<Blocker> {
    grid.blockers[grid.n_slices - 1]
        .iter()
        .filter(|b| b.lo >= x)
        .min_by(|a, b| a.lo.total_cmp(&b.lo))
        .copied()
}

/// Terminal penalty for ending at `(x, v)`. On a free road it is the shortfall
/// against `v_max`; behind a blocker it is the mismatch with the lead's speed,
/// since excess speed cannot be held there. `None` when the ego could no
/// longer brake to the lead's speed in time.
pub(crate) fn terminal_cost(
    grid: &XtGrid,
    config: &XtConfig,
    limits: &SpeedLimits,
    x: f64,
    v: f64,
) -> Option<f64> {
    let target = match lead_at_end(grid, x) {
        Some(lead) => {
            let target = lead.v.min(limits.v_max);
            let braking = (v * v - target * target).max(0.0) / (2.0 * limits.a_max);
            if x + braking > lead.lo {
                return None;
            }
            return Some(config.w_terminal * (target - v).abs() / limits.a_max);
        }
        None => limits.v_max,
    };
    Some(config.w_terminal * (target - v).max(0.0) / limits.a_max)
}

/// Checks the move `x → x'` from slice `k` to `k+1`: the swept cells must be
/// free on slice `k` and the landing cell free on slice `k+1`. Cells the ego has
/// already left may fill up behind it. Blocked intervals are longer than any
/// one-slice relative displacement, so no obstacle can be jumped over unseen.
/// Stations past the grid extent are outside sensing range and treated as
/// free. Returns the landing cell index.
pub(crate) fn transition_free(grid: &XtGrid, k: usize, x: f64, x_next: f64) -> Option<i64> {
    let start = grid.cell_index(x);
    let end = grid.cell_index(x_next);
    if start < 0 {
        return None;
    }
    let last = end.min(grid.n_cells as i64 - 1);
    if (start..=last).any(|c| grid.is_occupied(k, c as usize)) {
        return None;
    }
    if end == last && grid.is_occupied(k + 1, end as usize) {
        return None;
    }
    Some(end)
}

#[derive(Clone, Copy)]
struct Open {
    f: f64,
    accel_rank: usize,
    seq: u64,
    id: usize,
    terminal: bool,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    // Reversed so that BinaryHeap pops the smallest key.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.accel_rank.cmp(&self.accel_rank))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Each search bucket keeps two representatives: the cheapest node and the
/// rearmost node. The rearmost one survives when the cheaper, further-ahead
/// node later runs into a lead vehicle that has to be followed.
struct Bucket {
    best_g: f64,
    rear_x: f64,
    rear_g: f64,
}

impl Default for Bucket {
    fn default() -> Self {
        Self {
            best_g: f64::INFINITY,
            rear_x: f64::INFINITY,
            rear_g: f64::INFINITY,
        }
    }
}

impl Bucket {
    fn admit(&mut self, g: f64, x: f64) -> bool {
        let mut admitted = false;
        if g < self.best_g {
            self.best_g = g;
            admitted = true;
        }
        if x < self.rear_x - 1e-9 || (x <= self.rear_x + 1e-9 && g < self.rear_g) {
            self.rear_x = x;
            self.rear_g = g;
            admitted = true;
        }
        admitted
    }
}

struct Node {
    slice: usize,
    lane: usize,
    x: f64,
    v: f64,
    g: f64,
    parent: Option<usize>,
}

/// X-T grid of one lane, for the multi-lane search.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneGrid {
    pub lane: usize,
    pub grid: XtGrid,
    /// Cost of starting in this lane, `None` if the search may not start here.
    pub entry_cost: Option<f64>,
}

/// Lane switches inside the multi-lane search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneSwitch {
    /// Cost added per switch (s).
    pub penalty: f64,
    /// Slices a switch takes; the ego must be clear in both lanes throughout.
    pub slices: usize,
}

/// Lower bound on the remaining cost from `(slice, x, v)`.
fn heuristic(
    grid: &XtGrid,
    config: &XtConfig,
    limits: &SpeedLimits,
    slowest_target: f64,
    slice: usize,
    v: f64,
) -> f64 {
    let remaining = (grid.n_slices - 1 - slice) as f64 * grid.t_res;
    let t_acc = ((limits.v_max - v) / limits.a_max).clamp(0.0, remaining);
    let dx_best =
        v * t_acc + 0.5 * limits.a_max * t_acc * t_acc + limits.v_max.max(v) * (remaining - t_acc);
    let v_best = (v + limits.a_max * remaining).min(limits.v_max);
    config.w_time * (remaining - dx_best / limits.v_max)
        + config.w_terminal * (slowest_target - v_best).max(0.0) / limits.a_max
}

/// Hybrid A* over `(slice, x-cell, v-bucket)` with continuous `x`, `v` per node.
/// Falls back to [`follow_profile`] when no collision-free profile exists.
pub fn search_xt(grid: &XtGrid, start_v: f64, limits: SpeedLimits, config: &XtConfig) -> XtProfile {
    let lanes = [LaneGrid {
        lane: 0,
        grid: grid.clone(),
        entry_cost: Some(0.0),
    }];
    search_xt_lanes(&lanes, start_v, limits, config, None)
        .unwrap_or_else(|| follow_profile(grid, start_v, &limits))
}

/// The same search with the lane as an extra state. Besides the
/// longitudinal primitives, a node may switch to an adjacent lane by holding
/// one primitive for `switch.slices` slices, which must be free in both lanes.
/// Returns `None` when no lane admits a collision-free profile.
pub fn search_xt_lanes(
    lanes: &[LaneGrid],
    start_v: f64,
    limits: SpeedLimits,
    config: &XtConfig,
    switch: Option<LaneSwitch>,
) -> Option<XtProfile> {
    let limits = &limits;
    let first = &lanes.first()?.grid;
    let dt = first.t_res;
    let last = first.n_slices - 1;
    let slowest_target = lanes
        .iter()
        .flat_map(|l| l.grid.blockers[last].iter().map(|b| b.v))
        .fold(limits.v_max, f64::min);
    let h = |slice: usize, v: f64| heuristic(first, config, limits, slowest_target, slice, v);
    let index_of = |lane: usize| lanes.iter().position(|l| l.lane == lane);
    let v0 = start_v.clamp(0.0, limits.v_max);
    let mut nodes = Vec::new();
    let mut best: HashMap<(usize, usize, i64, i64), Bucket> = HashMap::new();
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, l) in lanes.iter().enumerate() {
        let Some(entry) = l.entry_cost else { continue };
        let Some(cell) = l.grid.cell_of(l.grid.x0) else { continue };
        if l.grid.is_occupied(0, cell) {
            continue;
        }
        nodes.push(Node {
            slice: 0,
            lane: i,
            x: l.grid.x0,
            v: v0,
            g: entry,
            parent: None,
        });
        seq += 1;
        open.push(Open {
            f: entry + h(0, v0),
            accel_rank: 0,
            seq,
            id: nodes.len() - 1,
            terminal: false,
        });
    }
    while let Some(item) = open.pop() {
        let (slice, lane, x, v, g) = {
            let n = &nodes[item.id];
            (n.slice, n.lane, n.x, n.v, n.g)
        };
        let grid = &lanes[lane].grid;
        if slice == last {
            if item.terminal {
                return Some(reconstruct(&nodes, lanes, item.id, item.f, dt));
            }
            // The pushed key used a lower bound on the terminal term; requeue
            // with the exact total so the first finalized pop is optimal.
            if let Some(tc) = terminal_cost(grid, config, limits, x, v) {
                seq += 1;
                open.push(Open {
                    f: g + tc,
                    accel_rank: item.accel_rank,
                    seq,
                    id: item.id,
                    terminal: true,
                });
            }
            continue;
        }
        let mut targets = vec![(lane, 1)];
        if let Some(sw) = switch.filter(|sw| sw.slices >= 1 && slice + sw.slices <= last) {
            let here = lanes[lane].lane;
            for other in [here.checked_sub(1), here.checked_add(1)].into_iter().flatten() {
                if let Some(j) = index_of(other) {
                    targets.push((j, sw.slices));
                }
            }
        }
        for (to, span) in targets {
            let to_grid = &lanes[to].grid;
            for (rank, a) in primitives(limits.a_max).into_iter().enumerate() {
                let mut chain = Vec::with_capacity(span);
                let (mut xs, mut vs, mut gs) = (x, v, g);
                let mut cell = 0;
                let mut ok = true;
                for k in slice..slice + span {
                    let v_next = vs + a * dt;
                    if v_next < -1e-9 || v_next > limits.v_max + 1e-9 {
                        ok = false;
                        break;
                    }
                    let v_next = v_next.clamp(0.0, limits.v_max);
                    let dx = 0.5 * (vs + v_next) * dt;
                    let x_next = xs + dx;
                    let Some(c) = transition_free(to_grid, k, xs, x_next) else {
                        ok = false;
                        break;
                    };
                    let step = Move {
                        slice: k + 1,
                        cell: c,
                        x: x_next,
                        v: v_next,
                        dx,
                        a,
                    };
                    gs += edge_cost(to_grid, config, limits, &step);
                    if to != lane {
                        if transition_free(grid, k, xs, x_next).is_none() {
                            ok = false;
                            break;
                        }
                        if c >= 0 && c < grid.n_cells as i64 {
                            gs += config.w_proximity * grid.soft_cost(k + 1, c as usize);
                        }
                    }
                    cell = c;
                    xs = x_next;
                    vs = v_next;
                    chain.push((k + 1, xs, vs, gs));
                }
                if !ok {
                    continue;
                }
                if to != lane {
                    gs += switch.map_or(0.0, |sw| sw.penalty);
                }
                let end = slice + span;
                let key = (end, to, cell, (vs / config.v_bucket).floor() as i64);
                if !best.entry(key).or_default().admit(gs, xs) {
                    continue;
                }
                let mut parent = item.id;
                for &(k, xk, vk, gk) in &chain[..chain.len() - 1] {
                    nodes.push(Node {
                        slice: k,
                        lane,
                        x: xk,
                        v: vk,
                        g: gk,
                        parent: Some(parent),
                    });
                    parent = nodes.len() - 1;
                }
                nodes.push(Node {
                    slice: end,
                    lane: to,
                    x: xs,
                    v: vs,
                    g: gs,
                    parent: Some(parent),
                });
                seq += 1;
                open.push(Open {
                    f: gs + h(end, vs),
                    accel_rank: rank,
                    seq,
                    id: nodes.len() - 1,
                    terminal: false,
                });
            }
        }
    }
    None
}

fn reconstruct(nodes: &[Node], lanes: &[LaneGrid], mut id: usize, cost: f64, dt: f64) -> XtProfile {
    let mut out = Vec::new();
    loop {
        let n = &nodes[id];
        out.push(XtNode {
            t: n.slice as f64 * dt,
            x: n.x,
            v: n.v,
            lane: lanes[n.lane].lane,
        });
        match n.parent {
            Some(p) => id = p,
            None => break,
        }
    }
    out.reverse();
    XtProfile {
        nodes: out,
        cost,
        searched: true,
    }
}

/// Degenerate profile: brake at `a_max` toward the speed of the nearest
/// blocker ahead and hold it. Used when the search finds nothing.
pub fn follow_profile(grid: &XtGrid, start_v: f64, limits: &SpeedLimits) -> XtProfile {
    let dt = grid.t_res;
    let mut x = grid.x0;
    let mut v = start_v.clamp(0.0, limits.v_max);
    let mut nodes = vec![XtNode { t: 0.0, x, v, lane: 0 }];
    for k in 1..grid.n_slices {
        let lead = grid.blockers[k - 1]
            .iter()
            .filter(|b| b.hi >= x)
            .min_by(|a, b| a.lo.total_cmp(&b.lo));
        let target = match lead {
            Some(b) if b.lo <= x => 0.0,
            Some(b) => b.v.min(limits.v_max),
            None => v,
        };
        let v_next = if target < v {
            (v - limits.a_max * dt).max(target)
        } else {
            v
        };
        x += 0.5 * (v + v_next) * dt;
        v = v_next;
        nodes.push(XtNode {
            t: k as f64 * dt,
            x,
            v,
            lane: 0,
        });
    }
    XtProfile {
        nodes,
        cost: f64::INFINITY,
        searched: false,
    }
}

/// Per-knot speed targets `v_pre_i = (x(t_i) − x(t_{i−1}))/Δt_i`.
pub fn profile_to_vpre(profile: &XtProfile, dt_schedule: &[f64]) -> Result<Vec<f64>> {
    let mut t_prev = profile.nodes.first().map_or(0.0, |n| n.t);
    let mut out = Vec::with_capacity(dt_schedule.len());
    for &dt in dt_schedule {
        let t = t_prev + dt;
        let (Some(a), Some(b)) = (profile.x_at(t_prev), profile.x_at(t)) else {
            return Err(Error::InvalidArgument(format!(
                "profile ends before t = {t:.3} s"
            )));
        };
        out.push((b - a) / dt);
        t_prev = t;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::prediction::{predict, ObstacleState, PredictionConfig};
    use approx::assert_relative_eq;

    const LIMITS: SpeedLimits = SpeedLimits {
        v_max: 33.3,
        a_max: 2.0,
    };

    fn pred(id: usize, x: f64, y: f64, v: f64) -> PredictedObstacle {
        predict(
            id,
            &ObstacleState::new(x, y, v, 0.0),
            20,
            &[0.5; 20],
            &PredictionConfig::default(),
        )
        .unwrap()
    }

    fn road() -> Corridor {
        Corridor::new(0.0, 8.0).unwrap()
    }

    #[test]
    fn empty_world_gives_free_grid() {
        let g = build_xt_grid(0.0, &[], &[0.5; 20], road(), &XtConfig::default());
        assert_eq!(g.n_slices, 21);
        assert_eq!(g.n_cells, 150);
        assert!((0..g.n_slices).all(|k| (0..g.n_cells).all(|c| !g.is_occupied(k, c))));
    }

    #[test]
    fn stationary_obstacle_blocks_a_column() {
        let cfg = XtConfig::default();
        let g = build_xt_grid(0.0, &[pred(0, 50.0, 2.0, 0.0)], &[0.5; 20], road(), &cfg);
        for k in 0..g.n_slices {
            assert!(g.is_occupied(k, 25));
            assert!(!g.is_occupied(k, 5));
            let blocked: Vec<usize> = (0..g.n_cells).filter(|&c| g.is_occupied(k, c)).collect();
            let lo = ((50.0 - 1.77 - cfg.margin) / 2.0f64).floor() as usize;
            let hi = ((50.0 + 1.18 + cfg.margin) / 2.0f64).floor() as usize;
            assert_eq!(blocked, (lo..=hi).collect::<Vec<_>>());
        }
    }

    #[test]
    fn moving_obstacle_advances_per_slice() {
        let g = build_xt_grid(
            20.0,
            &[pred(2, 100.0, 2.2, 25.0)],
            &[0.5; 20],
            road(),
            &XtConfig::default(),
        );
        let b0 = g.blockers(0)[0];
        for k in 1..g.n_slices {
            let b = g.blockers(k)[0];
            assert_relative_eq!(b.lo - b0.lo, 12.5 * k as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn obstacles_outside_corridor_are_ignored() {
        let lane = Corridor::new(4.0, 8.0).unwrap();
        let g = build_xt_grid(
            0.0,
            &[pred(0, 50.0, 2.0, 0.0)],
            &[0.5; 20],
            lane,
            &XtConfig::default(),
        );
        assert!(g.blockers(0).is_empty());
        assert!(Corridor::new(3.0, 3.0).is_err());
    }

    #[test]
    fn free_grid_holds_top_speed() {
        let g = build_xt_grid(0.0, &[], &[0.5; 20], road(), &XtConfig::default());
        let p = search_xt(&g, 33.3, LIMITS, &XtConfig::default());
        assert!(p.searched);
        for (k, n) in p.nodes.iter().enumerate() {
            assert_relative_eq!(n.v, 33.3);
            assert_relative_eq!(n.x, 33.3 * 0.5 * k as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn free_grid_from_rest_accelerates_at_limit() {
        let g = build_xt_grid(0.0, &[], &[0.5; 20], road(), &XtConfig::default());
        let p = search_xt(&g, 0.0, LIMITS, &XtConfig::default());
        for (k, n) in p.nodes.iter().enumerate() {
            assert_relative_eq!(n.v, (k as f64).min(33.3), epsilon = 1e-9);
        }
    }

    #[test]
    fn profile_never_enters_occupied_cells() {
        let obs = [pred(0, 60.0, 2.0, 18.0), pred(1, 200.0, 6.0, 22.0)];
        let g = build_xt_grid(0.0, &obs, &[0.5; 20], road(), &XtConfig::default());
        let p = search_xt(&g, 30.0, LIMITS, &XtConfig::default());
        assert!(p.searched);
        for (k, n) in p.nodes.iter().enumerate() {
            if let Some(c) = g.cell_of(n.x) {
                assert!(!g.is_occupied(k, c));
            }
            assert!(n.x < g.blockers(k)[0].lo);
        }
        assert!(p.mean_speed() < 23.1);
    }

    #[test]
    fn blocked_start_falls_back_to_following() {
        let g = build_xt_grid(
            0.0,
            &[pred(0, 3.0, 2.0, 20.0)],
            &[0.5; 20],
            road(),
            &XtConfig::default(),
        );
        let p = search_xt(&g, 30.0, LIMITS, &XtConfig::default());
        assert!(!p.searched);
        assert!(p
            .nodes
            .windows(2)
            .all(|w| w[1].x >= w[0].x && w[1].v <= w[0].v));
    }

    #[test]
    fn vpre_examples() {
        let constant = XtProfile {
            nodes: (0..=20)
                .map(|k| XtNode {
                    t: 0.5 * k as f64,
                    x: 15.0 * k as f64,
                    v: 30.0,
                    lane: 0,
                })
                .collect(),
            cost: 0.0,
            searched: true,
        };
        let v = profile_to_vpre(&constant, &[0.5; 20]).unwrap();
        assert!(v.iter().all(|&s| (s - 30.0).abs() < 1e-12));

        let g = build_xt_grid(0.0, &[], &[0.5; 20], road(), &XtConfig::default());
        let ramp = search_xt(&g, 20.0, LIMITS, &XtConfig::default());
        let v = profile_to_vpre(&ramp, &[0.5; 20]).unwrap();
        for w in v.windows(2) {
            assert!(w[1] - w[0] <= 1.0 + 1e-9);
        }
        assert!(profile_to_vpre(&constant, &[0.5; 25]).is_err());
    }

    #[test]
    fn search_is_deterministic() {
        let obs = [pred(0, 40.0, 2.0, 20.0), pred(1, 120.0, 6.0, 25.0)];
        let g = build_xt_grid(0.0, &obs, &[0.5; 20], road(), &XtConfig::default());
        let a = search_xt(&g, 28.0, LIMITS, &XtConfig::default());
        let b = search_xt(&g, 28.0, LIMITS, &XtConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn grid_dump_has_one_row_per_cell() {
        let g = build_xt_grid(
            0.0,
            &[pred(0, 50.0, 2.0, 0.0)],
            &[0.5; 4],
            road(),
            &XtConfig::default(),
        );
        let csv = g.to_csv();
        assert_eq!(csv.lines().count(), 1 + g.n_slices * g.n_cells);
        assert!(csv.starts_with("t,x,occupied\n0,0,0\n"));
    }

    #[test]
    fn interpolation_before_first_knot_extrapolates() {
        let p = pred(0, 100.0, 2.0, 20.0);
        let times = knot_times(&[0.5; 20]);
        let (x, _, _) = obstacle_at(&p, &times, 0.0);
        assert_relative_eq!(x, 100.0, epsilon = 1e-12);
        let _ = Pose::default();
    }

    fn lane_grids(obs: &[PredictedObstacle]) -> Vec<LaneGrid> {
        [(0, 0.0, 4.0), (1, 4.0, 8.0)]
            .into_iter()
            .map(|(lane, lo, hi)| LaneGrid {
                lane,
                grid: build_xt_grid(
                    0.0,
                    obs,
                    &[0.5; 20],
                    Corridor::new(lo, hi).unwrap(),
                    &XtConfig::default(),
                ),
                entry_cost: (lane == 0).then_some(0.0),
            })
            .collect()
    }

    const SWITCH: LaneSwitch = LaneSwitch {
        penalty: 0.5,
        slices: 4,
    };

    #[test]
    fn lane_switch_passes_slow_car() {
        let obs = [pred(0, 60.0, 2.0, 15.0)];
        let lanes = lane_grids(&obs);
        let cfg = XtConfig::default();
        let stay = search_xt(&lanes[0].grid, 25.0, LIMITS, &cfg);
        let p = search_xt_lanes(&lanes, 25.0, LIMITS, &cfg, Some(SWITCH)).unwrap();
        assert!(p.nodes.iter().any(|n| n.lane == 1));
        assert!(p.cost < stay.cost);
        assert!(p.terminal_speed() > 25.0);
        assert_eq!(p.nodes.len(), 21);
        // while in lane 0 the ego never overlaps the slow car's blocked interval
        for (k, n) in p.nodes.iter().enumerate() {
            if n.lane == 0 {
                if let Some(c) = lanes[0].grid.cell_of(n.x) {
                    assert!(!lanes[0].grid.is_occupied(k, c));
                }
            }
        }
    }

    #[test]
    fn lane_switch_needs_adjacent_lane_clear() {
        // a car alongside at the same speed keeps lane 1 shut for the horizon
        let obs = [pred(0, 60.0, 2.0, 15.0), pred(1, 0.0, 6.0, 25.0)];
        let lanes = lane_grids(&obs);
        let p = search_xt_lanes(&lanes, 25.0, LIMITS, &XtConfig::default(), Some(SWITCH)).unwrap();
        assert!(p.nodes.iter().all(|n| n.lane == 0));
        assert!(p.terminal_speed() <= 15.0 + 1e-9);
    }

    #[test]
    fn single_lane_search_matches_lane_search_without_switches() {
        let obs = [pred(0, 60.0, 2.0, 15.0)];
        let lanes = lane_grids(&obs);
        let cfg = XtConfig::default();
        let a = search_xt(&lanes[0].grid, 25.0, LIMITS, &cfg);
        let b = search_xt_lanes(&lanes, 25.0, LIMITS, &cfg, None).unwrap();
        assert_eq!(a, b);
    }
}
