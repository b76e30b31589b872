//! Dynamic bicycle model with linear tire forces.
//!
//! State `[x, y, θ, δ, vx, vy, r]`, input `[γ, a]` (steering rate and
//! longitudinal acceleration). Positions and heading are global; `vx`, `vy`
//! and `r` are body-frame quantities at the center of gravity.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gravitational acceleration (m/s²).
pub const GRAVITY: f64 = 9.81;

pub const NX: usize = 7;
pub const NU: usize = 2;

pub type StateVec = SVector<f64, NX>;
pub type InputVec = SVector<f64, NU>;
pub type StateJacobian = SMatrix<f64, NX, NX>;
pub type InputJacobian = SMatrix<f64, NX, NU>;

/// Ego vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub delta: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, theta: f64, delta: f64, vx: f64, vy: f64, r: f64) -> Self {
        Self {
            x,
            y,
            theta,
            delta,
            vx,
            vy,
            r,
        }
    }

    /// Straight driving at `vx` along the x axis.
    pub fn cruising(x: f64, y: f64, vx: f64) -> Self {
        Self::new(x, y, 0.0, 0.0, vx, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> StateVec {
        StateVec::from([
            self.x, self.y, self.theta, self.delta, self.vx, self.vy, self.r,
        ])
    }

    pub fn from_vector(v: &StateVec) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    pub fn pose(&self) -> (f64, f64, f64) {
        (self.x, self.y, self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Steering-angle rate (rad/s) and longitudinal acceleration (m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub gamma: f64,
    pub a: f64,
}

impl ControlInput {
    pub fn new(gamma: f64, a: f64) -> Self {
        Self { gamma, a }
    }

    pub fn to_vector(&self) -> InputVec {
        InputVec::new(self.gamma, self.a)
    }

    pub fn from_vector(v: &InputVec) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Time derivative of a [`VehicleState`], component by component.
pub type StateDerivative = VehicleState;

/// Physical vehicle parameters. Lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Front cornering stiffness (N/rad).
    pub c_alpha_f: f64,
    /// Rear cornering stiffness (N/rad).
    pub c_alpha_r: f64,
    /// CG to front axle (m).
    pub l1: f64,
    /// CG to rear axle (m).
    pub l2: f64,
    /// Mass (kg).
    pub mass: f64,
    /// Yaw inertia (kg·m²).
    pub iz: f64,
    /// CG height (m).
    pub h_g: f64,
    /// Track width (m).
    pub track_width: f64,
    /// Rollover safety factor, in (0, 1].
    pub eta: f64,
    /// Collision circle radius (m).
    pub radius: f64,
    /// Minimum longitudinal speed accepted by the tire model (m/s).
    pub vx_floor: f64,
    /// Adds the longitudinal component of the front tire force,
    /// `-F_yf·sin δ / m`, to `v̇x`. Off by default: without it, steering
    /// under slip can raise speed at no acceleration cost.
    pub front_tire_drag: bool,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            c_alpha_f: 250_000.0,
            c_alpha_r: 250_000.0,
            l1: 1.180,
            l2: 1.770,
            mass: 1590.0,
            iz: 2687.0,
            h_g: 0.720,
            track_width: 1.875,
            eta: 0.5,
            radius: 1.3,
            vx_floor: 1.0,
            front_tire_drag: false,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_alpha_f", self.c_alpha_f),
            ("c_alpha_r", self.c_alpha_r),
            ("l1", self.l1),
            ("l2", self.l2),
            ("mass", self.mass),
            ("iz", self.iz),
            ("h_g", self.h_g),
            ("track_width", self.track_width),
            ("radius", self.radius),
            ("vx_floor", self.vx_floor),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Lateral acceleration bound `W·g/(2·h_g)·η` for rollover safety.
    pub fn rollover_limit(&self) -> f64 {
        self.track_width * GRAVITY / (2.0 * self.h_g) * self.eta
    }

    /// Wheelbase `l1 + l2`.
    pub fn wheelbase(&self) -> f64 {
        self.l1 + self.l2
    }

    fn check_speed(&self, vx: f64) -> Result<()> {
        if vx >= self.vx_floor {
            Ok(())
        } else {
            Err(Error::SpeedBelowFloor {
                vx,
                floor: self.vx_floor,
            })
        }
    }
}

/// Actuator and safety limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub gamma_max: f64,
    pub a_max: f64,
    pub delta_max: f64,
    pub alpha_f_max: f64,
    pub alpha_r_max: f64,
    pub v_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            gamma_max: std::f64::consts::FRAC_PI_2,
            a_max: 2.0,
            delta_max: 0.5,
            alpha_f_max: 0.052,
            alpha_r_max: 0.052,
            v_max: 33.3,
        }
    }
}

// Continuous-time dynamics on raw vectors. Callers check the speed floor.
fn derivative_vec(s: &StateVec, u: &InputVec, p: &VehicleParams) -> StateVec {
    let (theta, delta, vx, vy, r) = (s[2], s[3], s[4], s[5], s[6]);
    let (sin, cos) = theta.sin_cos();
    let cf2 = 2.0 * p.c_alpha_f;
    let cr2 = 2.0 * p.c_alpha_r;
    let vy_dot = -(cf2 + cr2) / (p.mass * vx) * vy
        + ((cr2 * p.l2 - cf2 * p.l1) / (p.mass * vx) - vx) * r
        + cf2 / p.mass * delta;
    let r_dot = cf2 * p.l1 / p.iz * delta
        - (cf2 * p.l1 - cr2 * p.l2) / (p.iz * vx) * vy
        - (cf2 * p.l1 * p.l1 + cr2 * p.l2 * p.l2) / (p.iz * vx) * r;
    let mut vx_dot = u[1] + r * vy;
    if p.front_tire_drag {
        vx_dot -= cf2 * (delta - (vy + p.l1 * r) / vx) * delta.sin() / p.mass;
    }
    StateVec::from([
        vx * cos - vy * sin,
        vx * sin + vy * cos,
        r,
        u[0],
        vx_dot,
        vy_dot,
        r_dot,
    ])
}

fn state_jacobian(s: &StateVec, p: &VehicleParams) -> StateJacobian {
    let (theta, vx, vy, r) = (s[2], s[4], s[5], s[6]);
    let (sin, cos) = theta.sin_cos();
    let cf2 = 2.0 * p.c_alpha_f;
    let cr2 = 2.0 * p.c_alpha_r;
    let c1 = -(cf2 + cr2) / p.mass;
    let c2 = (cr2 * p.l2 - cf2 * p.l1) / p.mass;
    let d2 = -(cf2 * p.l1 - cr2 * p.l2) / p.iz;
    let d3 = -(cf2 * p.l1 * p.l1 + cr2 * p.l2 * p.l2) / p.iz;
    let vx2 = vx * vx;

    let mut j = StateJacobian::zeros();
    j[(0, 2)] = -vx * sin - vy * cos;
    j[(0, 4)] = cos;
    j[(0, 5)] = -sin;
    j[(1, 2)] = vx * cos - vy * sin;
    j[(1, 4)] = sin;
    j[(1, 5)] = cos;
    j[(2, 6)] = 1.0;
    j[(4, 5)] = r;
    j[(4, 6)] = vy;
    if p.front_tire_drag {
        let (sd, cd) = s[3].sin_cos();
        let force = cf2 * (s[3] - (vy + p.l1 * r) / vx);
        j[(4, 3)] = -(cf2 * sd + force * cd) / p.mass;
        j[(4, 4)] = -cf2 * (vy + p.l1 * r) / vx2 * sd / p.mass;
        j[(4, 5)] += cf2 / (p.mass * vx) * sd;
        j[(4, 6)] += cf2 * p.l1 / (p.mass * vx) * sd;
    }
    j[(5, 3)] = cf2 / p.mass;
    j[(5, 4)] = -(c1 * vy + c2 * r) / vx2 - r;
    j[(5, 5)] = c1 / vx;
    j[(5, 6)] = c2 / vx - vx;
    j[(6, 3)] = cf2 * p.l1 / p.iz;
    j[(6, 4)] = -(d2 * vy + d3 * r) / vx2;
    j[(6, 5)] = d2 / vx;
    j[(6, 6)] = d3 / vx;
    j
}

fn input_jacobian() -> InputJacobian {
    let mut b = InputJacobian::zeros();
    b[(3, 0)] = 1.0;
    b[(4, 1)] = 1.0;
    b
}

/// Continuous-time state derivative.
pub fn derivative(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> Result<StateDerivative> {
    params.check_speed(state.vx)?;
    Ok(VehicleState::from_vector(&derivative_vec(
        &state.to_vector(),
        &input.to_vector(),
        params,
    )))
}

/// Jacobians `(∂f/∂X, ∂f/∂U)` of the continuous dynamics.
pub fn derivative_jacobians(
    state: &VehicleState,
    params: &VehicleParams,
) -> Result<(StateJacobian, InputJacobian)> {
    params.check_speed(state.vx)?;
    Ok((state_jacobian(&state.to_vector(), params), input_jacobian()))
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )))
    }
}

/// Forward Euler step.
pub fn step_euler(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    check_dt(dt)?;
    params.check_speed(state.vx)?;
    let s = state.to_vector();
    let next = s + derivative_vec(&s, &input.to_vector(), params) * dt;
    Ok(VehicleState::from_vector(&next))
}

fn rk4_vec(s: &StateVec, u: &InputVec, p: &VehicleParams, dt: f64) -> Result<StateVec> {
    let stage = |k: usize, x: &StateVec| -> Result<StateVec> {
        if x[4] >= p.vx_floor {
            Ok(derivative_vec(x, u, p))
        } else {
            Err(Error::StageBelowFloor {
                stage: k,
                vx: x[4],
                floor: p.vx_floor,
            })
        }
    };
    let k1 = stage(1, s)?;
    let k2 = stage(2, &(s + k1 * (dt / 2.0)))?;
    let k3 = stage(3, &(s + k2 * (dt / 2.0)))?;
    let k4 = stage(4, &(s + k3 * dt))?;
    Ok(s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// One classical fourth-order Runge–Kutta step with the input held constant.
pub fn step_rk4(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    check_dt(dt)?;
    let next = rk4_vec(&state.to_vector(), &input.to_vector(), params, dt)?;
    Ok(VehicleState::from_vector(&next))
}

/// RK4 step together with its Jacobians with respect to state and input.
fn rk4_with_jacobian(
    s: &StateVec,
    u: &InputVec,
    p: &VehicleParams,
    dt: f64,
) -> Result<(StateVec, StateJacobian, InputJacobian)> {
    let b = input_jacobian();
    let check = |k: usize, x: &StateVec| -> Result<()> {
        if x[4] >= p.vx_floor {
            Ok(())
        } else {
            Err(Error::StageBelowFloor {
                stage: k,
                vx: x[4],
                floor: p.vx_floor,
            })
        }
    };
    let eye = StateJacobian::identity();
    let h2 = dt / 2.0;

    check(1, s)?;
    let k1 = derivative_vec(s, u, p);
    let a1 = state_jacobian(s, p);
    let (k1x, k1u) = (a1, b);

    let s2 = s + k1 * h2;
    check(2, &s2)?;
    let k2 = derivative_vec(&s2, u, p);
    let a2 = state_jacobian(&s2, p);
    let k2x = a2 * (eye + k1x * h2);
    let k2u = a2 * (k1u * h2) + b;

    let s3 = s + k2 * h2;
    check(3, &s3)?;
    let k3 = derivative_vec(&s3, u, p);
    let a3 = state_jacobian(&s3, p);
    let k3x = a3 * (eye + k2x * h2);
    let k3u = a3 * (k2u * h2) + b;

    let s4 = s + k3 * dt;
    check(4, &s4)?;
    let k4 = derivative_vec(&s4, u, p);
    let a4 = state_jacobian(&s4, p);
    let k4x = a4 * (eye + k3x * dt);
    let k4u = a4 * (k3u * dt) + b;

    let w = dt / 6.0;
    let next = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * w;
    let jx = eye + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * w;
    let ju = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * w;
    Ok((next, jx, ju))
}

/// Discrete transition over one planning interval: `substeps` RK4 steps of
/// length `dt / substeps` under a zero-order-hold input.
///
/// With linear tires at highway speeds the lateral modes have time constants
/// of a few hundredths of a second, so a single RK4 step over a 0.5 s knot
/// interval is unstable. Sub-stepping keeps `h·|λ|` inside the RK4 stability
/// region while leaving the knot spacing untouched. The lateral modes stiffen
/// as `1/vx`, so below roughly 19 m/s more sub-steps than `substeps` are taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub params: VehicleParams,
    pub substeps: usize,
}

impl Transition {
    pub fn new(params: VehicleParams, substeps: usize) -> Self {
        Self {
            params,
            substeps: substeps.max(1),
        }
    }

    /// Sub-steps used for an interval of length `dt` starting at `s`: at least
    /// `substeps`, and enough that `h·ρ ≤ 2.5`, with `ρ` the largest absolute
    /// row sum of the lateral `(vy, r)` block.
    pub fn substeps_for(&self, s: &StateVec, dt: f64) -> usize {
        let p = &self.params;
        let vx = s[4].abs().max(p.vx_floor);
        let cf2 = 2.0 * p.c_alpha_f;
        let cr2 = 2.0 * p.c_alpha_r;
        let row_vy = (cf2 + cr2) / (p.mass * vx)
            + ((cr2 * p.l2 - cf2 * p.l1) / (p.mass * vx) - vx).abs();
        let row_r = ((cf2 * p.l1 - cr2 * p.l2) / (p.iz * vx)).abs()
            + (cf2 * p.l1 * p.l1 + cr2 * p.l2 * p.l2) / (p.iz * vx);
        let rho = row_vy.max(row_r);
        let needed = (dt * rho / 2.5).ceil();
        if needed.is_finite() {
            self.substeps.max(needed as usize)
        } else {
            self.substeps
        }
    }

    pub fn step(
        &self,
        state: &VehicleState,
        input: &ControlInput,
        dt: f64,
    ) -> Result<VehicleState> {
        let next = self.step_vec(&state.to_vector(), &input.to_vector(), dt)?;
        Ok(VehicleState::from_vector(&next))
    }

    pub fn step_vec(&self, s: &StateVec, u: &InputVec, dt: f64) -> Result<StateVec> {
        check_dt(dt)?;
        let m = self.substeps_for(s, dt);
        let h = dt / m as f64;
        let mut x = *s;
        for _ in 0..m {
            x = rk4_vec(&x, u, &self.params, h)?;
        }
        Ok(x)
    }

    /// Next state and Jacobians `(∂X⁺/∂X, ∂X⁺/∂U)`.
    pub fn step_with_jacobian(
        &self,
        s: &StateVec,
        u: &InputVec,
        dt: f64,
    ) -> Result<(StateVec, StateJacobian, InputJacobian)> {
        check_dt(dt)?;
        let m = self.substeps_for(s, dt);
        let h = dt / m as f64;
        let mut x = *s;
        let mut jx = StateJacobian::identity();
        let mut ju = InputJacobian::zeros();
        for _ in 0..m {
            let (next, ax, au) = rk4_with_jacobian(&x, u, &self.params, h)?;
            ju = ax * ju + au;
            jx = ax * jx;
            x = next;
        }
        Ok((x, jx, ju))
    }

    /// Vector-Jacobian product `wᵀ·∂X⁺/∂(X, U)` by a reverse sweep over the
    /// sub-steps. Returns `(wᵀ∂X⁺/∂X, wᵀ∂X⁺/∂U)`.
    pub fn adjoint(
        &self,
        s: &StateVec,
        u: &InputVec,
        dt: f64,
        w: &StateVec,
    ) -> Result<(StateVec, InputVec)> {
        check_dt(dt)?;
        let m = self.substeps_for(s, dt);
        let h = dt / m as f64;
        let mut traj = Vec::with_capacity(m);
        let mut x = *s;
        for _ in 0..m {
            traj.push(x);
            x = rk4_vec(&x, u, &self.params, h)?;
        }
        let mut lam = *w;
        let mut gu = InputVec::zeros();
        for xk in traj.iter().rev() {
            let (lx, lu) = rk4_adjoint(xk, u, &self.params, h, &lam)?;
            lam = lx;
            gu += lu;
        }
        Ok((lam, gu))
    }
}

// Reverse-mode derivative of a single RK4 step.
fn rk4_adjoint(
    s: &StateVec,
    u: &InputVec,
    p: &VehicleParams,
    dt: f64,
    w: &StateVec,
) -> Result<(StateVec, InputVec)> {
    let b = input_jacobian();
    let h2 = dt / 2.0;
    let s1 = *s;
    if s1[4] < p.vx_floor {
        return Err(Error::StageBelowFloor {
            stage: 1,
            vx: s1[4],
            floor: p.vx_floor,
        });
    }
    let k1 = derivative_vec(&s1, u, p);
    let s2 = s + k1 * h2;
    let k2 = derivative_vec(&s2, u, p);
    let s3 = s + k2 * h2;
    let k3 = derivative_vec(&s3, u, p);
    let s4 = s + k3 * dt;
    for (stage, st) in [(2, &s2), (3, &s3), (4, &s4)] {
        if st[4] < p.vx_floor {
            return Err(Error::StageBelowFloor {
                stage,
                vx: st[4],
                floor: p.vx_floor,
            });
        }
    }
    let wk = dt / 6.0;
    // adjoints of k1..k4
    let bar_k4 = w * wk;
    let bar_s4 = state_jacobian(&s4, p).transpose() * bar_k4;
    let bar_k3 = w * (2.0 * wk) + bar_s4 * dt;
    let bar_s3 = state_jacobian(&s3, p).transpose() * bar_k3;
    let bar_k2 = w * (2.0 * wk) + bar_s3 * h2;
    let bar_s2 = state_jacobian(&s2, p).transpose() * bar_k2;
    let bar_k1 = w * wk + bar_s2 * h2;
    let bar_s1 = state_jacobian(&s1, p).transpose() * bar_k1;
    let gx = w + bar_s1 + bar_s2 + bar_s3 + bar_s4;
    let gu = b.transpose() * (bar_k1 + bar_k2 + bar_k3 + bar_k4);
    Ok((gx, gu))
}

/// Lateral acceleration used by the rollover constraint:
/// `ÿ = −vx·r + 2[(Cαf/m)(δ − (vy + l1·r)/vx) + Cαr(l2·r − vy)/(m·vx)]`.
pub fn lateral_acceleration(state: &VehicleState, params: &VehicleParams) -> Result<f64> {
    params.check_speed(state.vx)?;
    Ok(lateral_acceleration_vec(&state.to_vector(), params))
}

pub(crate) fn lateral_acceleration_vec(s: &StateVec, p: &VehicleParams) -> f64 {
    let (delta, vx, vy, r) = (s[3], s[4], s[5], s[6]);
    -vx * r
        + 2.0
            * (p.c_alpha_f / p.mass * (delta - (vy + p.l1 * r) / vx)
                + p.c_alpha_r * (p.l2 * r - vy) / (p.mass * vx))
}

/// Gradient of [`lateral_acceleration`] with respect to the state vector.
pub(crate) fn lateral_acceleration_grad(s: &StateVec, p: &VehicleParams) -> StateVec {
    let (vx, vy, r) = (s[4], s[5], s[6]);
    let cf2 = 2.0 * p.c_alpha_f;
    let cr2 = 2.0 * p.c_alpha_r;
    let cv = -(cf2 + cr2) / p.mass;
    let cr = (cr2 * p.l2 - cf2 * p.l1) / p.mass;
    let mut g = StateVec::zeros();
    g[3] = cf2 / p.mass;
    g[4] = -r - (cv * vy + cr * r) / (vx * vx);
    g[5] = cv / vx;
    g[6] = -vx + cr / vx;
    g
}

/// Signed front and rear slip angles `(α_f, α_r)`.
pub fn slip_angles(state: &VehicleState, params: &VehicleParams) -> Result<(f64, f64)> {
    params.check_speed(state.vx)?;
    Ok(slip_angles_vec(&state.to_vector(), params))
}

pub(crate) fn slip_angles_vec(s: &StateVec, p: &VehicleParams) -> (f64, f64) {
    let (delta, vx, vy, r) = (s[3], s[4], s[5], s[6]);
    ((vy + p.l1 * r) / vx - delta, (vy - p.l2 * r) / vx)
}

pub(crate) fn slip_angles_grad(s: &StateVec, p: &VehicleParams) -> (StateVec, StateVec) {
    let (vx, vy, r) = (s[4], s[5], s[6]);
    let mut gf = StateVec::zeros();
    gf[3] = -1.0;
    gf[4] = -(vy + p.l1 * r) / (vx * vx);
    gf[5] = 1.0 / vx;
    gf[6] = p.l1 / vx;
    let mut gr = StateVec::zeros();
    gr[4] = -(vy - p.l2 * r) / (vx * vx);
    gr[5] = 1.0 / vx;
    gr[6] = -p.l2 / vx;
    (gf, gr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn coasting_derivative_only_moves_x() {
        let d = derivative(
            &VehicleState::cruising(0.0, 0.0, 20.0),
            &ControlInput::default(),
            &params(),
        )
        .unwrap();
        assert_eq!(d.x, 20.0);
        for v in [d.y, d.theta, d.delta, d.vx, d.vy, d.r] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn steered_derivative_matches_hand_values() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.01, 20.0, 0.0, 0.0);
        let d = derivative(&s, &ControlInput::default(), &params()).unwrap();
        // 2·250000·0.01/1590 and 2·250000·1.18·0.01/2687
        assert_relative_eq!(d.vy, 3.144_654_088, epsilon = 1e-6);
        assert_relative_eq!(d.r, 2.195_757_350, epsilon = 1e-6);
    }

    #[test]
    fn input_bounds_enter_additively() {
        let lim = Limits::default();
        let s = VehicleState::new(1.0, 2.0, 0.3, 0.02, 22.0, 0.4, 0.05);
        let zero = derivative(&s, &ControlInput::default(), &params()).unwrap();
        let full = derivative(&s, &ControlInput::new(lim.gamma_max, lim.a_max), &params()).unwrap();
        assert_relative_eq!(full.delta, std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(full.vx - zero.vx, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn speed_floor_is_rejected() {
        let s = VehicleState::cruising(0.0, 0.0, 0.5);
        let err = derivative(&s, &ControlInput::default(), &params()).unwrap_err();
        assert!(matches!(err, Error::SpeedBelowFloor { .. }));
        assert!(lateral_acceleration(&s, &params()).is_err());
        assert!(slip_angles(&s, &params()).is_err());
    }

    #[test]
    fn rk4_stage_failure_names_the_stage() {
        // vx just above the floor, braking hard: stage 2 drops below.
        let s = VehicleState::cruising(0.0, 0.0, 1.05);
        let err = step_rk4(&s, &ControlInput::new(0.0, -2.0), &params(), 0.5).unwrap_err();
        assert_eq!(
            err,
            Error::StageBelowFloor {
                stage: 2,
                vx: 0.55,
                floor: 1.0
            }
        );
    }

    #[test]
    fn euler_examples() {
        let s = VehicleState::cruising(0.0, 0.0, 20.0);
        let n = step_euler(&s, &ControlInput::default(), &params(), 0.5).unwrap();
        assert_eq!(n, VehicleState::cruising(10.0, 0.0, 20.0));
        let n = step_euler(&s, &ControlInput::new(0.0, 2.0), &params(), 0.5).unwrap();
        assert_eq!(n.x, 10.0);
        assert_eq!(n.vx, 21.0);
        assert!(step_euler(&s, &ControlInput::default(), &params(), 0.0).is_err());
    }

    #[test]
    fn euler_on_curved_state_adds_one_derivative() {
        let s = VehicleState::new(3.0, -1.0, 0.2, 0.03, 24.0, 0.3, 0.08);
        let u = ControlInput::new(0.1, -0.5);
        let d = derivative(&s, &u, &params()).unwrap().to_vector();
        let n = step_euler(&s, &u, &params(), 0.1).unwrap().to_vector();
        assert_relative_eq!(n, s.to_vector() + d * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn rk4_straight_matches_euler_and_closed_form() {
        let s = VehicleState::cruising(0.0, 0.0, 20.0);
        let u = ControlInput::default();
        let a = step_rk4(&s, &u, &params(), 0.5).unwrap();
        let b = step_euler(&s, &u, &params(), 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x, 10.0);

        let n = step_rk4(&s, &ControlInput::new(0.0, 2.0), &params(), 0.5).unwrap();
        assert_relative_eq!(n.vx, 21.0, epsilon = 1e-12);
        assert_relative_eq!(n.x, 20.0 * 0.5 + 0.5 * 2.0 * 0.25, epsilon = 1e-12);
    }

    #[test]
    fn lateral_acceleration_examples() {
        let p = params();
        assert_eq!(
            lateral_acceleration(&VehicleState::cruising(0.0, 0.0, 20.0), &p).unwrap(),
            0.0
        );
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.01, 20.0, 0.0, 0.0);
        assert_relative_eq!(
            lateral_acceleration(&s, &p).unwrap(),
            3.144_654_088,
            epsilon = 1e-6
        );
        assert_relative_eq!(p.rollover_limit(), 6.386_718_75, epsilon = 1e-6);
    }

    #[test]
    fn slip_angle_examples() {
        let p = params();
        assert_eq!(
            slip_angles(&VehicleState::cruising(0.0, 0.0, 20.0), &p).unwrap(),
            (0.0, 0.0)
        );
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0, 25.0, 0.5, 0.1);
        let (af, ar) = slip_angles(&s, &p).unwrap();
        assert_relative_eq!(af, 0.02472, epsilon = 1e-12);
        assert_relative_eq!(ar, 0.01292, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        for drag in [false, true] {
            let p = VehicleParams {
                front_tire_drag: drag,
                ..params()
            };
            check_jacobian(&p);
        }
    }

    fn check_jacobian(p: &VehicleParams) {
        let p = *p;
        let s = StateVec::from([1.0, 2.0, 0.3, 0.02, 21.0, 0.4, -0.07]);
        let u = InputVec::new(0.2, 0.7);
        let j = state_jacobian(&s, &p);
        for k in 0..NX {
            let h = 1e-6;
            let mut sp = s;
            let mut sm = s;
            sp[k] += h;
            sm[k] -= h;
            let col = (derivative_vec(&sp, &u, &p) - derivative_vec(&sm, &u, &p)) / (2.0 * h);
            for row in 0..NX {
                assert_relative_eq!(j[(row, k)], col[row], epsilon = 1e-5, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn transition_jacobian_and_adjoint_agree_with_differences() {
        let tr = Transition::new(params(), 10);
        let s = StateVec::from([0.0, 2.0, 0.05, 0.01, 25.0, 0.1, 0.02]);
        let u = InputVec::new(0.05, -0.4);
        let (x, jx, ju) = tr.step_with_jacobian(&s, &u, 0.5).unwrap();
        assert_relative_eq!(x, tr.step_vec(&s, &u, 0.5).unwrap(), epsilon = 1e-12);
        for k in 0..NX + NU {
            let h = 1e-6;
            let (mut sp, mut sm, mut up, mut um) = (s, s, u, u);
            if k < NX {
                sp[k] += h;
                sm[k] -= h;
            } else {
                up[k - NX] += h;
                um[k - NX] -= h;
            }
            let col = (tr.step_vec(&sp, &up, 0.5).unwrap() - tr.step_vec(&sm, &um, 0.5).unwrap())
                / (2.0 * h);
            for row in 0..NX {
                let a = if k < NX {
                    jx[(row, k)]
                } else {
                    ju[(row, k - NX)]
                };
                assert_relative_eq!(a, col[row], epsilon = 1e-5, max_relative = 1e-5);
            }
        }
        let w = StateVec::from([0.3, -1.0, 2.0, 0.5, -0.2, 0.7, 1.1]);
        let (gx, gu) = tr.adjoint(&s, &u, 0.5, &w).unwrap();
        assert_relative_eq!(gx, jx.transpose() * w, epsilon = 1e-9, max_relative = 1e-9);
        assert_relative_eq!(gu, ju.transpose() * w, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn front_tire_drag_never_adds_speed() {
        let p = VehicleParams {
            front_tire_drag: true,
            ..params()
        };
        // Steering into a slip: without drag vx holds, with drag it drops.
        let s = StateVec::from([0.0, 0.0, 0.0, 0.05, 25.0, 0.0, 0.0]);
        let u = InputVec::zeros();
        assert_eq!(derivative_vec(&s, &u, &params())[4], 0.0);
        assert!(derivative_vec(&s, &u, &p)[4] < 0.0);
    }

    #[test]
    fn default_params_validate() {
        assert!(params().validate().is_ok());
        let bad = VehicleParams {
            eta: 1.5,
            ..params()
        };
        assert!(bad.validate().is_err());
    }

    fn mirror(s: &VehicleState) -> VehicleState {
        VehicleState::new(s.x, -s.y, -s.theta, -s.delta, s.vx, -s.vy, -s.r)
    }

    proptest! {
        #[test]
        fn safety_quantities_are_odd_under_mirroring(
            y in -5.0..5.0f64, theta in -0.5..0.5f64, delta in -0.3..0.3f64,
            vx in 2.0..40.0f64, vy in -2.0..2.0f64, r in -1.0..1.0f64,
        ) {
            let p = params();
            let s = VehicleState::new(0.0, y, theta, delta, vx, vy, r);
            let m = mirror(&s);
            let (af, ar) = slip_angles(&s, &p).unwrap();
            let (maf, mar) = slip_angles(&m, &p).unwrap();
            prop_assert!((af + maf).abs() < 1e-12);
            prop_assert!((ar + mar).abs() < 1e-12);
            let ay = lateral_acceleration(&s, &p).unwrap();
            let may = lateral_acceleration(&m, &p).unwrap();
            prop_assert!((ay + may).abs() < 1e-9 * (1.0 + ay.abs()));
        }

        #[test]
        fn derivative_is_mirror_equivariant(
            theta in -0.5..0.5f64, delta in -0.3..0.3f64, vx in 2.0..40.0f64,
            vy in -2.0..2.0f64, r in -1.0..1.0f64, gamma in -1.5..1.5f64, a in -2.0..2.0f64,
        ) {
            let p = params();
            let s = VehicleState::new(0.0, 1.0, theta, delta, vx, vy, r);
            let d = derivative(&s, &ControlInput::new(gamma, a), &p).unwrap();
            let dm = derivative(&mirror(&s), &ControlInput::new(-gamma, a), &p).unwrap();
            prop_assert!((d.x - dm.x).abs() < 1e-9);
            prop_assert!((d.y + dm.y).abs() < 1e-9);
            prop_assert!((d.vx - dm.vx).abs() < 1e-9);
            prop_assert!((d.vy + dm.vy).abs() < 1e-9 * (1.0 + d.vy.abs()));
            prop_assert!((d.r + dm.r).abs() < 1e-9 * (1.0 + d.r.abs()));
        }
    }

    #[test]
    fn low_speed_transition_stays_stable() {
        let t = Transition::new(VehicleParams::default(), 10);
        let cruise = VehicleState::cruising(0.0, 2.0, 25.0).to_vector();
        assert_eq!(t.substeps_for(&cruise, 0.5), 10);
        for vx in [12.0, 5.0, 2.0] {
            let mut x = VehicleState::cruising(0.0, 2.0, vx);
            x.vy = 0.05;
            assert!(t.substeps_for(&x.to_vector(), 0.5) > 10);
            for _ in 0..10 {
                x = t.step(&x, &ControlInput::default(), 0.5).unwrap();
            }
            assert!(x.vy.abs() < 1e-3 && x.r.abs() < 1e-3, "vx {vx}: {x:?}");
        }
    }
}
