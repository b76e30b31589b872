//! Trajectory optimization problem: speed-tracking cost, RK4 dynamics,
//! rollover and slip limits, time-matched collision rows and box bounds.
//!
//! Decision variables are the knot states `X_1..X_n` and the inputs
//! `U_1..U_n`, where `U_i` is held over `[t_{i−1}, t_i]` and drives
//! `X_{i−1} → X_i`. `X_0` is the measured state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::collision::{generate_constraints, Body, CollisionConfig, CollisionConstraintSet};
use crate::dynamics::{
    lateral_acceleration_grad, lateral_acceleration_vec, slip_angles_grad, slip_angles_vec,
    ControlInput, InputJacobian, InputVec, Limits, StateJacobian, StateVec, Transition,
    VehicleParams, VehicleState, NU, NX,
};
use crate::error::{Error, Result};
use crate::prediction::PredictedObstacle;
use crate::solver::riccati::InputHessian;
use crate::solver::{
    solve_ipm, Duals, Guess, SolveStatus, SolverOptions, StageHessian, StagedNlp, Violation,
};

/// Cost weights: `w1·a² + w2·γ² + w3·(vx − v_pre)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            w1: 50.0,
            w2: 100.0,
            w3: 10.0,
        }
    }
}

impl Weights {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w1: self.w1 * c,
            w2: self.w2 * c,
            w3: self.w3 * c,
        }
    }
}

/// Lateral extent of the drivable road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadBounds {
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub weights: Weights,
    pub limits: Limits,
    /// RK4 sub-steps per knot interval.
    pub substeps: usize,
    pub solver: SolverOptions,
    pub collision: CollisionConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            limits: Limits::default(),
            substeps: 10,
            solver: SolverOptions::default(),
            collision: CollisionConfig::default(),
        }
    }
}

/// `Σᵢ w1·aᵢ² + w2·γᵢ² + w3·(vxᵢ − v_preᵢ)²`.
pub fn cost(
    states: &[VehicleState],
    inputs: &[ControlInput],
    v_pre: &[f64],
    weights: &Weights,
) -> Result<f64> {
    if states.len() != v_pre.len() || inputs.len() != v_pre.len() {
        return Err(Error::HorizonMismatch {
            expected: v_pre.len(),
            found: states.len().min(inputs.len()),
        });
    }
    Ok(states
        .iter()
        .zip(inputs)
        .zip(v_pre)
        .map(|((x, u), vp)| {
            weights.w1 * u.a * u.a
                + weights.w2 * u.gamma * u.gamma
                + weights.w3 * (x.vx - vp).powi(2)
        })
        .sum())
}

// Fixed per-knot rows, in order.
const ROLL_POS: usize = 0;
const ROLL_NEG: usize = 1;
const SLIP_F_POS: usize = 2;
const SLIP_F_NEG: usize = 3;
const SLIP_R_POS: usize = 4;
const SLIP_R_NEG: usize = 5;
const Y_HI: usize = 6;
const Y_LO: usize = 7;
const DELTA_HI: usize = 8;
const DELTA_LO: usize = 9;
const VX_HI: usize = 10;
const VX_LO: usize = 11;
/// Safety and bound rows per knot before the collision rows.
pub const FIXED_STATE_ROWS: usize = 12;
/// Bound rows per input.
pub const INPUT_ROWS: usize = 4;

/// Box bounds on `(y, δ, vx)` for one knot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub y: (f64, f64),
    pub delta: (f64, f64),
    pub vx: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningProblem {
    pub n: usize,
    pub dt_schedule: Vec<f64>,
    pub initial: VehicleState,
    pub v_pre: Vec<f64>,
    pub collisions: CollisionConstraintSet,
    pub params: VehicleParams,
    pub weights: Weights,
    pub limits: Limits,
    pub road: RoadBounds,
    pub solver: SolverOptions,
    /// Bounds per knot `1..=n` (index `i − 1`).
    pub state_bounds: Vec<StateBox>,
    /// Set when `X_0` already violates a bound; knot 1 bounds were widened.
    pub relaxed_start: bool,
    transition: Transition,
    collision_rows: Vec<Vec<usize>>,
}

/// Builds the optimization problem for one planning cycle.
pub fn build_problem(
    x0: &VehicleState,
    v_pre: &[f64],
    dt_schedule: &[f64],
    predictions: &[PredictedObstacle],
    road: RoadBounds,
    params: &VehicleParams,
    config: &OptimizerConfig,
) -> Result<PlanningProblem> {
    let n = v_pre.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be ≥ 2, got {n}"
        )));
    }
    if dt_schedule.len() != n {
        return Err(Error::HorizonMismatch {
            expected: n,
            found: dt_schedule.len(),
        });
    }
    if dt_schedule.iter().any(|dt| !(*dt > 0.0)) {
        return Err(Error::InvalidArgument("time steps must be positive".into()));
    }
    let w = config.weights;
    if w.w1 < 0.0 || w.w2 < 0.0 || w.w3 < 0.0 {
        return Err(Error::InvalidArgument(
            "weights must be non-negative".into(),
        ));
    }
    if !(road.y_min < road.y_max) {
        return Err(Error::InvalidArgument(
            "road bounds must satisfy y_min < y_max".into(),
        ));
    }
    params.validate()?;
    if !x0.is_finite() || x0.vx < params.vx_floor {
        return Err(Error::SpeedBelowFloor {
            vx: x0.vx,
            floor: params.vx_floor,
        });
    }
    let body = Body {
        l1: params.l1,
        l2: params.l2,
    };
    let collisions = generate_constraints(n, predictions, body, params.radius, &config.collision)?;
    let mut collision_rows = vec![Vec::new(); n];
    for (idx, c) in collisions.constraints.iter().enumerate() {
        collision_rows[c.step].push(idx);
    }
    let limits = config.limits;
    let nominal = StateBox {
        y: (road.y_min + params.radius, road.y_max - params.radius),
        delta: (-limits.delta_max, limits.delta_max),
        vx: (params.vx_floor, limits.v_max),
    };
    let widen = |b: (f64, f64), v: f64| (b.0.min(v), b.1.max(v));
    let first = StateBox {
        y: widen(nominal.y, x0.y),
        delta: widen(nominal.delta, x0.delta),
        vx: widen(nominal.vx, x0.vx),
    };
    let relaxed_start = first != nominal;
    let mut state_bounds = vec![nominal; n];
    state_bounds[0] = first;
    Ok(PlanningProblem {
        n,
        dt_schedule: dt_schedule.to_vec(),
        initial: *x0,
        v_pre: v_pre.to_vec(),
        collisions,
        params: *params,
        weights: w,
        limits,
        road,
        solver: config.solver,
        state_bounds,
        relaxed_start,
        transition: Transition::new(*params, config.substeps),
        collision_rows,
    })
}

impl PlanningProblem {
    pub fn decision_variables(&self) -> usize {
        self.n * (NX + NU)
    }

    pub fn dynamics_rows(&self) -> usize {
        self.n * NX
    }

    /// Roll (two-sided) and slip rows over the horizon.
    pub fn safety_rows(&self) -> usize {
        6 * self.n
    }

    pub fn transition(&self) -> &Transition {
        &self.transition
    }

    /// Rollout from `X_0` under `inputs`.
    pub fn rollout(&self, inputs: &[ControlInput]) -> Result<Vec<VehicleState>> {
        let mut x = self.initial;
        let mut out = Vec::with_capacity(inputs.len());
        for (u, dt) in inputs.iter().zip(&self.dt_schedule) {
            x = self.transition.step(&x, u, *dt)?;
            out.push(x);
        }
        Ok(out)
    }

    /// Clips a state into the knot-`i` bounds (1-based).
    fn clip_state(&self, i: usize, x: &VehicleState) -> VehicleState {
        let b = &self.state_bounds[i - 1];
        let mut x = *x;
        x.y = x.y.clamp(b.y.0, b.y.1);
        x.delta = x.delta.clamp(b.delta.0, b.delta.1);
        x.vx = x.vx.clamp(b.vx.0, b.vx.1);
        x
    }

    fn clip_input(&self, u: &ControlInput) -> ControlInput {
        ControlInput::new(
            u.gamma.clamp(-self.limits.gamma_max, self.limits.gamma_max),
            u.a.clamp(-self.limits.a_max, self.limits.a_max),
        )
    }

    /// Guess obtained by steering `δ` back to zero and tracking `v_pre`
    /// with bounded acceleration.
    pub fn default_guess(&self) -> Guess {
        let mut x = self.initial;
        let mut states = Vec::with_capacity(self.n);
        let mut inputs = Vec::with_capacity(self.n);
        for (i, dt) in self.dt_schedule.iter().enumerate() {
            let u = self.clip_input(&ControlInput::new(
                -x.delta / dt,
                (self.v_pre[i] - x.vx) / dt,
            ));
            x = match self.transition.step(&x, &u, *dt) {
                Ok(next) => next,
                Err(_) => {
                    let mut next = x;
                    next.x += x.vx * dt;
                    next
                }
            };
            x = self.clip_state(i + 1, &x);
            states.push(x.to_vector());
            inputs.push(u.to_vector());
        }
        Guess {
            states,
            inputs,
            duals: None,
        }
    }

    /// Guess that follows a prescribed lateral path `y(t_i)` while tracking
    /// `v_pre`. Heading and yaw rate are taken from the path slope.
    pub fn lateral_guess(&self, y_path: &[f64]) -> Guess {
        let mut states = Vec::with_capacity(self.n);
        let mut inputs = Vec::with_capacity(self.n);
        let mut prev = self.initial;
        for i in 0..self.n {
            let dt = self.dt_schedule[i];
            let vx = self.v_pre[i].clamp(
                prev.vx - self.limits.a_max * dt,
                prev.vx + self.limits.a_max * dt,
            );
            let y = y_path[i];
            let dx = 0.5 * (prev.vx + vx) * dt;
            let theta = ((y - prev.y) / dx.max(1e-3)).atan();
            let mut next = VehicleState::new(
                prev.x + dx,
                y,
                theta,
                0.0,
                vx,
                0.0,
                (theta - prev.theta) / dt,
            );
            next = self.clip_state(i + 1, &next);
            inputs.push(
                self.clip_input(&ControlInput::new(0.0, (vx - prev.vx) / dt))
                    .to_vector(),
            );
            states.push(next.to_vector());
            prev = next;
        }
        Guess {
            states,
            inputs,
            duals: None,
        }
    }

    fn collision_count(&self, i: usize) -> usize {
        self.collision_rows[i - 1].len()
    }
}

/// Hessian of the lateral acceleration with respect to the state.
pub(crate) fn lateral_acceleration_hessian(s: &StateVec, p: &VehicleParams) -> StateJacobian {
    let (vx, vy, r) = (s[4], s[5], s[6]);
    let cf2 = 2.0 * p.c_alpha_f;
    let cr2 = 2.0 * p.c_alpha_r;
    let cv = -(cf2 + cr2) / p.mass;
    let cr = (cr2 * p.l2 - cf2 * p.l1) / p.mass;
    let mut h = StateJacobian::zeros();
    h[(4, 4)] = 2.0 * (cv * vy + cr * r) / (vx * vx * vx);
    h[(4, 5)] = -cv / (vx * vx);
    h[(4, 6)] = -1.0 - cr / (vx * vx);
    h[(5, 4)] = h[(4, 5)];
    h[(6, 4)] = h[(4, 6)];
    h
}

/// Hessians of the front and rear slip angles with respect to the state.
pub(crate) fn slip_angle_hessians(
    s: &StateVec,
    p: &VehicleParams,
) -> (StateJacobian, StateJacobian) {
    let (vx, vy, r) = (s[4], s[5], s[6]);
    let v2 = vx * vx;
    let mut hf = StateJacobian::zeros();
    hf[(4, 4)] = 2.0 * (vy + p.l1 * r) / (v2 * vx);
    hf[(4, 5)] = -1.0 / v2;
    hf[(4, 6)] = -p.l1 / v2;
    hf[(5, 4)] = hf[(4, 5)];
    hf[(6, 4)] = hf[(4, 6)];
    let mut hr = StateJacobian::zeros();
    hr[(4, 4)] = 2.0 * (vy - p.l2 * r) / (v2 * vx);
    hr[(4, 5)] = -1.0 / v2;
    hr[(4, 6)] = p.l2 / v2;
    hr[(5, 4)] = hr[(4, 5)];
    hr[(6, 4)] = hr[(4, 6)];
    (hf, hr)
}

impl StagedNlp for PlanningProblem {
    fn horizon(&self) -> usize {
        self.n
    }

    fn initial_state(&self) -> StateVec {
        self.initial.to_vector()
    }

    fn step(&self, k: usize, x: &StateVec, u: &InputVec) -> Result<StateVec> {
        self.transition.step_vec(x, u, self.dt_schedule[k])
    }

    fn step_jacobian(
        &self,
        k: usize,
        x: &StateVec,
        u: &InputVec,
    ) -> Result<(StateVec, StateJacobian, InputJacobian)> {
        self.transition
            .step_with_jacobian(x, u, self.dt_schedule[k])
    }

    fn step_curvature(
        &self,
        k: usize,
        x: &StateVec,
        u: &InputVec,
        w: &StateVec,
    ) -> Result<StageHessian> {
        // Central differences of the adjoint, one column per variable.
        let dt = self.dt_schedule[k];
        let mut h = StageHessian::zeros();
        for j in 0..NX + NU {
            let mut xp = *x;
            let mut up = *u;
            let mut xm = *x;
            let mut um = *u;
            let base = if j < NX { x[j] } else { u[j - NX] };
            let eps = 1e-6 * base.abs().max(1.0);
            if j < NX {
                xp[j] += eps;
                xm[j] -= eps;
            } else {
                up[j - NX] += eps;
                um[j - NX] -= eps;
            }
            let (gxp, gup) = self.transition.adjoint(&xp, &up, dt, w)?;
            let (gxm, gum) = self.transition.adjoint(&xm, &um, dt, w)?;
            for r in 0..NX {
                h[(r, j)] = (gxp[r] - gxm[r]) / (2.0 * eps);
            }
            for r in 0..NU {
                h[(NX + r, j)] = (gup[r] - gum[r]) / (2.0 * eps);
            }
        }
        Ok(0.5 * (h + h.transpose()))
    }

    fn state_cost(&self, i: usize, x: &StateVec) -> f64 {
        self.weights.w3 * (x[4] - self.v_pre[i - 1]).powi(2)
    }

    fn state_cost_derivatives(&self, i: usize, x: &StateVec) -> (StateVec, StateJacobian) {
        let mut g = StateVec::zeros();
        let mut h = StateJacobian::zeros();
        g[4] = 2.0 * self.weights.w3 * (x[4] - self.v_pre[i - 1]);
        h[(4, 4)] = 2.0 * self.weights.w3;
        (g, h)
    }

    fn input_cost(&self, _k: usize, u: &InputVec) -> f64 {
        self.weights.w2 * u[0] * u[0] + self.weights.w1 * u[1] * u[1]
    }

    fn input_cost_derivatives(&self, _k: usize, u: &InputVec) -> (InputVec, InputHessian) {
        (
            InputVec::new(2.0 * self.weights.w2 * u[0], 2.0 * self.weights.w1 * u[1]),
            InputHessian::from_diagonal(&InputVec::new(
                2.0 * self.weights.w2,
                2.0 * self.weights.w1,
            )),
        )
    }

    fn state_rows(&self, i: usize) -> usize {
        FIXED_STATE_ROWS + self.collision_count(i)
    }

    fn state_constraints(&self, i: usize, x: &StateVec) -> DVector<f64> {
        let mut c = DVector::zeros(self.state_rows(i));
        let p = &self.params;
        let b = &self.state_bounds[i - 1];
        let roll = lateral_acceleration_vec(x, p) / p.rollover_limit();
        let (af, ar) = slip_angles_vec(x, p);
        let af = af / self.limits.alpha_f_max;
        let ar = ar / self.limits.alpha_r_max;
        c[ROLL_POS] = roll - 1.0;
        c[ROLL_NEG] = -roll - 1.0;
        c[SLIP_F_POS] = af - 1.0;
        c[SLIP_F_NEG] = -af - 1.0;
        c[SLIP_R_POS] = ar - 1.0;
        c[SLIP_R_NEG] = -ar - 1.0;
        c[Y_HI] = x[1] - b.y.1;
        c[Y_LO] = b.y.0 - x[1];
        c[DELTA_HI] = x[3] - b.delta.1;
        c[DELTA_LO] = b.delta.0 - x[3];
        c[VX_HI] = x[4] - b.vx.1;
        c[VX_LO] = b.vx.0 - x[4];
        for (row, &idx) in self.collision_rows[i - 1].iter().enumerate() {
            let cc = &self.collisions.constraints[idx];
            c[FIXED_STATE_ROWS + row] = cc.value(x[0], x[1], x[2]) / (cc.required * cc.required);
        }
        c
    }

    fn state_constraint_jacobian(&self, i: usize, x: &StateVec) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.state_rows(i), NX);
        let p = &self.params;
        let g_roll = lateral_acceleration_grad(x, p) / p.rollover_limit();
        let (gf, gr) = slip_angles_grad(x, p);
        let gf = gf / self.limits.alpha_f_max;
        let gr = gr / self.limits.alpha_r_max;
        for c in 0..NX {
            j[(ROLL_POS, c)] = g_roll[c];
            j[(ROLL_NEG, c)] = -g_roll[c];
            j[(SLIP_F_POS, c)] = gf[c];
            j[(SLIP_F_NEG, c)] = -gf[c];
            j[(SLIP_R_POS, c)] = gr[c];
            j[(SLIP_R_NEG, c)] = -gr[c];
        }
        j[(Y_HI, 1)] = 1.0;
        j[(Y_LO, 1)] = -1.0;
        j[(DELTA_HI, 3)] = 1.0;
        j[(DELTA_LO, 3)] = -1.0;
        j[(VX_HI, 4)] = 1.0;
        j[(VX_LO, 4)] = -1.0;
        for (row, &idx) in self.collision_rows[i - 1].iter().enumerate() {
            let cc = &self.collisions.constraints[idx];
            let g = cc.gradient(x[0], x[1], x[2]) / (cc.required * cc.required);
            for c in 0..3 {
                j[(FIXED_STATE_ROWS + row, c)] = g[c];
            }
        }
        j
    }

    fn state_constraint_curvature(
        &self,
        i: usize,
        x: &StateVec,
        nu: &DVector<f64>,
    ) -> StateJacobian {
        let p = &self.params;
        let (hf, hr) = slip_angle_hessians(x, p);
        let mut h = lateral_acceleration_hessian(x, p)
            * ((nu[ROLL_POS] - nu[ROLL_NEG]) / p.rollover_limit())
            + hf * ((nu[SLIP_F_POS] - nu[SLIP_F_NEG]) / self.limits.alpha_f_max)
            + hr * ((nu[SLIP_R_POS] - nu[SLIP_R_NEG]) / self.limits.alpha_r_max);
        for (row, &idx) in self.collision_rows[i - 1].iter().enumerate() {
            let cc = &self.collisions.constraints[idx];
            let w = nu[FIXED_STATE_ROWS + row] / (cc.required * cc.required);
            let hc = cc.hessian(x[0], x[1], x[2]) * w;
            let mut view = h.fixed_view_mut::<3, 3>(0, 0);
            view += hc;
        }
        h
    }

    fn input_rows(&self, _k: usize) -> usize {
        INPUT_ROWS
    }

    fn input_constraints(&self, _k: usize, u: &InputVec) -> DVector<f64> {
        let l = &self.limits;
        DVector::from_vec(vec![
            u[0] - l.gamma_max,
            -l.gamma_max - u[0],
            u[1] - l.a_max,
            -l.a_max - u[1],
        ])
    }

    fn input_constraint_jacobian(&self, _k: usize, _u: &InputVec) -> DMatrix<f64> {
        DMatrix::from_row_slice(INPUT_ROWS, NU, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySolution {
    /// `X_1..X_n`.
    pub states: Vec<VehicleState>,
    /// `U_1..U_n`; `inputs[0]` is applied first.
    pub inputs: Vec<ControlInput>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub max_violation: f64,
    /// Scaled stationarity residual at the returned point.
    pub stationarity: f64,
    pub wall_time: f64,
    pub most_violated: Vec<Violation>,
    #[serde(skip)]
    pub duals: Option<Duals>,
}

impl TrajectorySolution {
    pub fn stats(&self) -> SolverStats {
        SolverStats {
            status: self.status,
            iterations: self.iterations,
            wall_time: self.wall_time,
            cost: self.objective,
            max_violation: self.max_violation,
        }
    }
}

/// Per-solve record emitted as one JSON line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub status: SolveStatus,
    pub iterations: usize,
    pub wall_time: f64,
    pub cost: f64,
    pub max_violation: f64,
}

impl SolverStats {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

/// Solves from `guess`, or from [`PlanningProblem::default_guess`].
pub fn solve(problem: &PlanningProblem, guess: Option<&Guess>) -> Result<TrajectorySolution> {
    let owned;
    let guess = match guess {
        Some(g) if g.states.len() == problem.n && g.inputs.len() == problem.n => g,
        _ => {
            owned = problem.default_guess();
            &owned
        }
    };
    let res = solve_ipm(problem, guess, &problem.solver)?;
    Ok(TrajectorySolution {
        states: res.states.iter().map(VehicleState::from_vector).collect(),
        inputs: res.inputs.iter().map(ControlInput::from_vector).collect(),
        objective: res.objective,
        status: res.status,
        iterations: res.iterations,
        max_violation: res.max_violation,
        stationarity: res.stationarity,
        wall_time: res.wall_time,
        most_violated: res.most_violated,
        duals: Some(res.duals),
    })
}

fn shift<T: Clone>(v: &[T]) -> Vec<T> {
    let mut out: Vec<T> = v.iter().skip(1).cloned().collect();
    if let Some(last) = v.last() {
        out.push(last.clone());
    }
    out
}

/// Initial guess for the next cycle: everything moves one knot earlier and
/// the last input is repeated. The new last state is the old one propagated
/// under that input (duplicated if propagation fails), then clipped to bounds.
pub fn shift_warm_start(prev: &TrajectorySolution, problem: &PlanningProblem) -> Guess {
    let n = problem.n;
    let mut inputs: Vec<ControlInput> = shift(&prev.inputs);
    let mut states: Vec<VehicleState> = shift(&prev.states);
    inputs.resize(n, inputs.last().copied().unwrap_or_default());
    states.resize(n, states.last().copied().unwrap_or(problem.initial));
    if prev.states.len() == n && n >= 2 {
        let last = prev.states[n - 1];
        if let Ok(next) = problem
            .transition
            .step(&last, &inputs[n - 1], problem.dt_schedule[n - 1])
        {
            states[n - 1] = next;
        }
    }
    let states = states
        .iter()
        .enumerate()
        .map(|(i, x)| problem.clip_state(i + 1, x).to_vector())
        .collect();
    let inputs = inputs
        .iter()
        .map(|u| problem.clip_input(u).to_vector())
        .collect();
    let duals = prev
        .duals
        .as_ref()
        .filter(|d| d.lambda.len() == n)
        .map(|d| {
            let mut state_slack = vec![DVector::zeros(0)];
            state_slack.extend(shift(&d.state_slack[1..]));
            let mut state_dual = vec![DVector::zeros(0)];
            state_dual.extend(shift(&d.state_dual[1..]));
            Duals {
                lambda: shift(&d.lambda),
                state_slack,
                state_dual,
                input_slack: shift(&d.input_slack),
                input_dual: shift(&d.input_dual),
            }
        });
    Guess {
        states,
        inputs,
        duals,
    }
}

/// Replays `inputs` from `initial` and returns the largest component-wise
/// deviation from `states`.
pub fn replay_error(problem: &PlanningProblem, sol: &TrajectorySolution) -> Result<f64> {
    let replayed = problem.rollout(&sol.inputs)?;
    Ok(replayed
        .iter()
        .zip(&sol.states)
        .map(|(a, b)| (a.to_vector() - b.to_vector()).amax())
        .fold(0.0, f64::max))
}

/// Largest disagreement between the analytic first derivatives of stage `k`
/// (cost, transition, knot `k + 1` constraint rows, input rows) and central
/// differences, measured as `|g − g_fd| / max(1, |g|, |g_fd|)`.
pub fn derivative_error(
    problem: &PlanningProblem,
    k: usize,
    x: &StateVec,
    u: &InputVec,
) -> Result<f64> {
    let i = k + 1;
    let err = |g: f64, fd: f64| (g - fd).abs() / 1f64.max(g.abs()).max(fd.abs());
    let mut worst = 0f64;
    let (gx_cost, _) = problem.state_cost_derivatives(i, x);
    let (gu_cost, _) = problem.input_cost_derivatives(k, u);
    let (_, fx, fu) = problem.step_jacobian(k, x, u)?;
    let jc = problem.state_constraint_jacobian(i, x);
    let ju = problem.input_constraint_jacobian(k, u);
    for j in 0..NX {
        let eps = 1e-6 * x[j].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += eps;
        xm[j] -= eps;
        let h = 2.0 * eps;
        let dc = (problem.state_cost(i, &xp) - problem.state_cost(i, &xm)) / h;
        worst = worst.max(err(gx_cost[j], dc));
        let df = (problem.step(k, &xp, u)? - problem.step(k, &xm, u)?) / h;
        for r in 0..NX {
            worst = worst.max(err(fx[(r, j)], df[r]));
        }
        let dg = (problem.state_constraints(i, &xp) - problem.state_constraints(i, &xm)) / h;
        for r in 0..dg.len() {
            worst = worst.max(err(jc[(r, j)], dg[r]));
        }
    }
    for j in 0..NU {
        let eps = 1e-6 * u[j].abs().max(1.0);
        let mut up = *u;
        let mut um = *u;
        up[j] += eps;
        um[j] -= eps;
        let h = 2.0 * eps;
        let dc = (problem.input_cost(k, &up) - problem.input_cost(k, &um)) / h;
        worst = worst.max(err(gu_cost[j], dc));
        let df = (problem.step(k, x, &up)? - problem.step(k, x, &um)?) / h;
        for r in 0..NX {
            worst = worst.max(err(fu[(r, j)], df[r]));
        }
        let dg = (problem.input_constraints(k, &up) - problem.input_constraints(k, &um)) / h;
        for r in 0..dg.len() {
            worst = worst.max(err(ju[(r, j)], dg[r]));
        }
    }
    Ok(worst)
}

/// Mixed absolute/relative difference `|a − b| / max(1, |b|)`.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::{predict, ObstacleState, PredictionConfig};
    use approx::assert_relative_eq;

    fn road() -> RoadBounds {
        RoadBounds {
            y_min: 0.0,
            y_max: 8.0,
        }
    }

    fn obstacles(m: usize) -> Vec<PredictedObstacle> {
        (0..m)
            .map(|j| {
                predict(
                    j,
                    &ObstacleState::new(
                        60.0 + 40.0 * j as f64,
                        if j % 2 == 0 { 2.0 } else { 6.0 },
                        20.0,
                        0.0,
                    ),
                    20,
                    &[0.5; 20],
                    &PredictionConfig::default(),
                )
                .unwrap()
            })
            .collect()
    }

    fn problem(m: usize, v_pre: f64) -> PlanningProblem {
        build_problem(
            &VehicleState::cruising(0.0, 2.0, 25.0),
            &[v_pre; 20],
            &[0.5; 20],
            &obstacles(m),
            road(),
            &VehicleParams::default(),
            &OptimizerConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn cost_examples() {
        let w = Weights::default();
        let s = [VehicleState::cruising(0.0, 0.0, 22.0)];
        assert_eq!(
            cost(&s, &[ControlInput::new(0.0, 0.0)], &[22.0], &w).unwrap(),
            0.0
        );
        assert_relative_eq!(
            cost(&s, &[ControlInput::new(0.0, 1.0)], &[20.0], &w).unwrap(),
            90.0
        );
        let u = [ControlInput::new(0.1, -0.5)];
        let base = cost(&s, &u, &[21.0], &w).unwrap();
        assert_relative_eq!(cost(&s, &u, &[21.0], &w.scaled(3.0)).unwrap(), 3.0 * base);
        assert!(cost(&s, &u, &[21.0, 1.0], &w).is_err());
    }

    #[test]
    fn problem_dimensions() {
        let p = problem(3, 25.0);
        assert_eq!(p.decision_variables(), 180);
        assert_eq!(p.dynamics_rows(), 140);
        assert_eq!(p.collisions.len(), 240);
        assert_eq!(p.safety_rows(), 120);
        let rows: usize = (1..=20).map(|i| p.state_rows(i)).sum();
        assert_eq!(rows, 240 + 20 * FIXED_STATE_ROWS);
        let free = problem(0, 25.0);
        assert!(free.collisions.is_empty());
        assert_eq!(free.decision_variables(), 180);
        assert_relative_eq!(free.dt_schedule.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn build_rejects_bad_input() {
        let x0 = VehicleState::cruising(0.0, 2.0, 25.0);
        let params = VehicleParams::default();
        let cfg = OptimizerConfig::default();
        assert!(build_problem(&x0, &[25.0; 20], &[0.5; 19], &[], road(), &params, &cfg).is_err());
        assert!(build_problem(&x0, &[25.0], &[0.5], &[], road(), &params, &cfg).is_err());
        let bad_road = RoadBounds {
            y_min: 4.0,
            y_max: 4.0,
        };
        assert!(build_problem(&x0, &[25.0; 20], &[0.5; 20], &[], bad_road, &params, &cfg).is_err());
        let slow = VehicleState::cruising(0.0, 2.0, 0.5);
        assert!(build_problem(&slow, &[25.0; 20], &[0.5; 20], &[], road(), &params, &cfg).is_err());
    }

    #[test]
    fn start_outside_bounds_relaxes_first_knot() {
        let x0 = VehicleState::cruising(0.0, 0.8, 25.0);
        let p = build_problem(
            &x0,
            &[25.0; 20],
            &[0.5; 20],
            &[],
            road(),
            &VehicleParams::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(p.relaxed_start);
        assert_relative_eq!(p.state_bounds[0].y.0, 0.8);
        assert_relative_eq!(p.state_bounds[1].y.0, 1.3);
    }

    #[test]
    fn analytic_hessians_match_differences() {
        let p = VehicleParams::default();
        let s = StateVec::from([0.0, 0.0, 0.1, 0.02, 22.0, 0.3, 0.05]);
        let h = lateral_acceleration_hessian(&s, &p);
        let (hf, hr) = slip_angle_hessians(&s, &p);
        for c in 0..NX {
            let eps = 1e-6 * s[c].abs().max(1.0);
            let mut sp = s;
            let mut sm = s;
            sp[c] += eps;
            sm[c] -= eps;
            let d = (lateral_acceleration_grad(&sp, &p) - lateral_acceleration_grad(&sm, &p))
                / (2.0 * eps);
            let (fp, rp) = slip_angles_grad(&sp, &p);
            let (fm, rm) = slip_angles_grad(&sm, &p);
            let df = (fp - fm) / (2.0 * eps);
            let dr = (rp - rm) / (2.0 * eps);
            for r in 0..NX {
                assert!((h[(r, c)] - d[r]).abs() < 1e-5 * d[r].abs().max(1.0));
                assert!((hf[(r, c)] - df[r]).abs() < 1e-6);
                assert!((hr[(r, c)] - dr[r]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn free_road_at_target_speed_is_stationary() {
        let p = problem(0, 25.0);
        let sol = solve(&p, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.objective < 1e-3, "{:?}", sol.stats());
        for u in &sol.inputs {
            assert!(u.a.abs() < 1e-3 && u.gamma.abs() < 1e-3);
        }
    }

    #[test]
    fn free_road_acceleration() {
        let p = problem(0, 30.0);
        let sol = solve(&p, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        for w in sol.states.windows(2) {
            assert!(w[1].vx >= w[0].vx - 1e-6);
        }
        for u in &sol.inputs {
            assert!(u.a <= 2.0 + 1e-6);
        }
        assert!((sol.states.last().unwrap().vx - 30.0).abs() <= 0.5);
        assert!(replay_error(&p, &sol).unwrap() < 1e-6);
    }

    #[test]
    fn weight_scaling_leaves_solution_unchanged() {
        let base = problem(2, 28.0);
        let mut scaled = base.clone();
        scaled.weights = base.weights.scaled(4.0);
        let a = solve(&base, None).unwrap();
        let b = solve(&scaled, None).unwrap();
        assert_eq!(a.status, SolveStatus::Converged);
        assert_eq!(b.status, SolveStatus::Converged);
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!((x.to_vector() - y.to_vector()).amax() < 1e-2);
        }
    }

    #[test]
    fn shifted_guess_has_full_length() {
        let p = problem(0, 25.0);
        let sol = solve(&p, None).unwrap();
        let g = shift_warm_start(&sol, &p);
        assert_eq!(g.states.len(), 20);
        assert_eq!(g.inputs.len(), 20);
        assert_eq!(g.inputs[19], g.inputs[18]);
        let d = g.duals.unwrap();
        assert_eq!(d.lambda.len(), 20);
        assert_eq!(d.state_slack.len(), 21);
    }

    #[test]
    fn stats_serialize_as_one_line() {
        let p = problem(0, 25.0);
        let line = solve(&p, None).unwrap().stats().to_json_line();
        assert!(!line.contains('\n'));
        assert!(line.contains("\"status\":\"converged\""));
    }
}
