//! Primal-dual interior-point method for stage-wise optimal control problems.
//!
//! The problem has states `x_1..x_N`, inputs `u_0..u_{N−1}`, a fixed initial
//! state `x_0`, dynamics `x_{k+1} = f_k(x_k, u_k)`, separable costs and
//! inequalities `c ≤ 0` that touch a single state or a single input. Each
//! inequality gets a slack `s > 0`; the barrier subproblems are solved with
//! Newton steps whose linear system is condensed onto the dynamics and solved
//! by a Riccati recursion. Step acceptance uses a filter line search.

pub mod riccati;

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::dynamics::{InputJacobian, InputVec, StateJacobian, StateVec, NU, NX};
use crate::error::Result;
use riccati::{solve_riccati, InputHessian, StageQp, TerminalQp};

/// Hessian over the stacked `(x, u)` of one stage.
pub type StageHessian = SMatrix<f64, { NX + NU }, { NX + NU }>;

/// Stage-wise nonlinear program. Knots `i` run over `1..=N`, stages `k`
/// over `0..N`. Input inequalities must be affine in `u`.
pub trait StagedNlp {
    fn horizon(&self) -> usize;
    fn initial_state(&self) -> StateVec;

    fn step(&self, k: usize, x: &StateVec, u: &InputVec) -> Result<StateVec>;
    fn step_jacobian(
        &self,
        k: usize,
        x: &StateVec,
        u: &InputVec,
    ) -> Result<(StateVec, StateJacobian, InputJacobian)>;
    /// Hessian of `wᵀf_k(x, u)` with respect to `(x, u)`.
    fn step_curvature(
        &self,
        k: usize,
        x: &StateVec,
        u: &InputVec,
        w: &StateVec,
    ) -> Result<StageHessian>;

    fn state_cost(&self, i: usize, x: &StateVec) -> f64;
    fn state_cost_derivatives(&self, i: usize, x: &StateVec) -> (StateVec, StateJacobian);
    fn input_cost(&self, k: usize, u: &InputVec) -> f64;
    fn input_cost_derivatives(&self, k: usize, u: &InputVec) -> (InputVec, InputHessian);

    fn state_rows(&self, i: usize) -> usize;
    fn state_constraints(&self, i: usize, x: &StateVec) -> DVector<f64>;
    /// `rows × NX` Jacobian.
    fn state_constraint_jacobian(&self, i: usize, x: &StateVec) -> DMatrix<f64>;
    /// `Σⱼ νⱼ ∇²cⱼ(x)`.
    fn state_constraint_curvature(
        &self,
        i: usize,
        x: &StateVec,
        nu: &DVector<f64>,
    ) -> StateJacobian;

    fn input_rows(&self, k: usize) -> usize;
    fn input_constraints(&self, k: usize, u: &InputVec) -> DVector<f64>;
    /// `rows × NU` Jacobian.
    fn input_constraint_jacobian(&self, k: usize, u: &InputVec) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol_stationarity: f64,
    pub tol_feasibility: f64,
    pub tol_complementarity: f64,
    pub max_iterations: usize,
    pub mu_init: f64,
    /// Initial barrier parameter when duals from a previous solve are supplied.
    pub mu_warm: f64,
    pub slack_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_stationarity: 1e-4,
            tol_feasibility: 1e-6,
            tol_complementarity: 1e-4,
            max_iterations: 200,
            mu_init: 0.1,
            mu_warm: 1e-3,
            slack_floor: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

/// Multipliers and slacks carried between solves.
#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    /// `λ_1..λ_N`.
    pub lambda: Vec<StateVec>,
    /// Per knot `1..=N` (index 0 unused).
    pub state_slack: Vec<DVector<f64>>,
    pub state_dual: Vec<DVector<f64>>,
    /// Per stage `0..N`.
    pub input_slack: Vec<DVector<f64>>,
    pub input_dual: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Guess {
    /// `x_1..x_N`.
    pub states: Vec<StateVec>,
    /// `u_0..u_{N−1}`.
    pub inputs: Vec<InputVec>,
    pub duals: Option<Duals>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Dynamics,
    State,
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: RowKind,
    /// Knot for state and dynamics rows, stage for input rows.
    pub index: usize,
    pub row: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmResult {
    pub states: Vec<StateVec>,
    pub inputs: Vec<InputVec>,
    pub duals: Duals,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub stationarity: f64,
    /// Largest violations, most severe first (empty when feasible).
    pub most_violated: Vec<Violation>,
    pub wall_time: f64,
}

#[derive(Clone)]
struct Point {
    x: Vec<StateVec>,
    u: Vec<InputVec>,
    s_x: Vec<DVector<f64>>,
    s_u: Vec<DVector<f64>>,
}

struct Eval {
    objective: f64,
    defects: Vec<StateVec>,
    c_x: Vec<DVector<f64>>,
    c_u: Vec<DVector<f64>>,
}

fn evaluate<P: StagedNlp>(p: &P, pt: &Point) -> Result<Eval> {
    let n = p.horizon();
    let mut objective = 0.0;
    let mut defects = Vec::with_capacity(n);
    let mut c_x = vec![DVector::zeros(0)];
    let mut c_u = Vec::with_capacity(n);
    for k in 0..n {
        defects.push(p.step(k, &pt.x[k], &pt.u[k])? - pt.x[k + 1]);
        objective += p.input_cost(k, &pt.u[k]) + p.state_cost(k + 1, &pt.x[k + 1]);
        c_u.push(p.input_constraints(k, &pt.u[k]));
        c_x.push(p.state_constraints(k + 1, &pt.x[k + 1]));
    }
    Ok(Eval {
        objective,
        defects,
        c_x,
        c_u,
    })
}

impl Eval {
    // ‖h‖₁ + ‖c + s‖₁
    fn infeasibility(&self, pt: &Point) -> f64 {
        let dyn_part: f64 = self.defects.iter().map(|d| d.lp_norm(1)).sum();
        let sx: f64 = (1..self.c_x.len())
            .map(|i| (&self.c_x[i] + &pt.s_x[i]).lp_norm(1))
            .sum();
        let su: f64 = (0..self.c_u.len())
            .map(|k| (&self.c_u[k] + &pt.s_u[k]).lp_norm(1))
            .sum();
        dyn_part + sx + su
    }

    fn barrier(&self, pt: &Point, mu: f64) -> f64 {
        let logs: f64 = pt
            .s_x
            .iter()
            .chain(pt.s_u.iter())
            .flat_map(|s| s.iter())
            .map(|v| v.ln())
            .sum();
        self.objective - mu * logs
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (k, d) in self.defects.iter().enumerate() {
            for (row, v) in d.iter().enumerate() {
                out.push(Violation {
                    kind: RowKind::Dynamics,
                    index: k + 1,
                    row,
                    amount: v.abs(),
                });
            }
        }
        for (i, c) in self.c_x.iter().enumerate() {
            for (row, v) in c.iter().enumerate() {
                out.push(Violation {
                    kind: RowKind::State,
                    index: i,
                    row,
                    amount: v.max(0.0),
                });
            }
        }
        for (k, c) in self.c_u.iter().enumerate() {
            for (row, v) in c.iter().enumerate() {
                out.push(Violation {
                    kind: RowKind::Input,
                    index: k,
                    row,
                    amount: v.max(0.0),
                });
            }
        }
        out
    }

    fn max_violation(&self) -> f64 {
        self.violations()
            .iter()
            .map(|v| v.amount)
            .fold(0.0, f64::max)
    }
}

/// Smallest `α ∈ (0, 1]` keeping `v + α·dv ≥ (1 − τ)·v` component-wise.
fn fraction_to_boundary(v: &[DVector<f64>], dv: &[DVector<f64>], tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for (a, b) in v.iter().zip(dv) {
        for (x, dx) in a.iter().zip(b.iter()) {
            if *dx < 0.0 {
                alpha = alpha.min(-tau * x / dx);
            }
        }
    }
    alpha
}

struct Residuals {
    stationarity: f64,
    feasibility: f64,
    complementarity: f64,
}

struct Linearization {
    a: Vec<StateJacobian>,
    b: Vec<InputJacobian>,
    jac_x: Vec<DMatrix<f64>>,
    jac_u: Vec<DMatrix<f64>>,
    grad_x: Vec<StateVec>,
    hess_x: Vec<StateJacobian>,
    grad_u: Vec<InputVec>,
    hess_u: Vec<InputHessian>,
}

fn linearize<P: StagedNlp>(p: &P, pt: &Point) -> Result<Linearization> {
    let n = p.horizon();
    let mut lin = Linearization {
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        jac_x: vec![DMatrix::zeros(0, NX)],
        jac_u: Vec::with_capacity(n),
        grad_x: vec![StateVec::zeros()],
        hess_x: vec![StateJacobian::zeros()],
        grad_u: Vec::with_capacity(n),
        hess_u: Vec::with_capacity(n),
    };
    for k in 0..n {
        let (_, a, b) = p.step_jacobian(k, &pt.x[k], &pt.u[k])?;
        lin.a.push(a);
        lin.b.push(b);
        lin.jac_u.push(p.input_constraint_jacobian(k, &pt.u[k]));
        let (gu, hu) = p.input_cost_derivatives(k, &pt.u[k]);
        lin.grad_u.push(gu);
        lin.hess_u.push(hu);
        let i = k + 1;
        lin.jac_x.push(p.state_constraint_jacobian(i, &pt.x[i]));
        let (gx, hx) = p.state_cost_derivatives(i, &pt.x[i]);
        lin.grad_x.push(gx);
        lin.hess_x.push(hx);
    }
    Ok(lin)
}

struct DualVars {
    lambda: Vec<StateVec>,
    nu_x: Vec<DVector<f64>>,
    nu_u: Vec<DVector<f64>>,
}

fn residuals(lin: &Linearization, eval: &Eval, pt: &Point, d: &DualVars, mu: f64) -> Residuals {
    const S_MAX: f64 = 100.0;
    let n = lin.a.len();
    let mut stat: f64 = 0.0;
    for i in 1..=n {
        let mut g =
            lin.grad_x[i] + lin.jac_x[i].tr_mul(&d.nu_x[i]).fixed_rows::<NX>(0) - d.lambda[i - 1];
        if i < n {
            g += lin.a[i].transpose() * d.lambda[i];
        }
        stat = stat.max(g.amax());
    }
    for k in 0..n {
        let g = lin.grad_u[k]
            + lin.jac_u[k].tr_mul(&d.nu_u[k]).fixed_rows::<NU>(0)
            + lin.b[k].transpose() * d.lambda[k];
        stat = stat.max(g.amax());
    }
    let mut feas: f64 = eval.defects.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let mut comp: f64 = 0.0;
    let mut nu_sum = 0.0;
    let mut nu_count = 0usize;
    for (c, s, nu) in eval
        .c_x
        .iter()
        .zip(&pt.s_x)
        .zip(&d.nu_x)
        .map(|((c, s), nu)| (c, s, nu))
        .chain(
            eval.c_u
                .iter()
                .zip(&pt.s_u)
                .zip(&d.nu_u)
                .map(|((c, s), nu)| (c, s, nu)),
        )
    {
        for j in 0..c.len() {
            feas = feas.max((c[j] + s[j]).abs());
            comp = comp.max((s[j] * nu[j] - mu).abs());
            nu_sum += nu[j];
        }
        nu_count += c.len();
    }
    let lam_sum: f64 = d.lambda.iter().map(|l| l.lp_norm(1)).sum();
    let total = (nu_count + n * NX).max(1) as f64;
    let s_d = (S_MAX.max((lam_sum + nu_sum) / total)) / S_MAX;
    let s_c = (S_MAX.max(nu_sum / nu_count.max(1) as f64)) / S_MAX;
    Residuals {
        stationarity: stat / s_d,
        feasibility: feas,
        complementarity: comp / s_c,
    }
}

/// Solves the problem from `guess`. Deterministic for a given problem and guess.
pub fn solve_ipm<P: StagedNlp>(p: &P, guess: &Guess, opts: &SolverOptions) -> Result<IpmResult> {
    let started = Instant::now();
    let n = p.horizon();
    let mut x = Vec::with_capacity(n + 1);
    x.push(p.initial_state());
    x.extend(guess.states.iter().copied());
    let mut pt = Point {
        x,
        u: guess.inputs.clone(),
        s_x: vec![DVector::zeros(0); n + 1],
        s_u: vec![DVector::zeros(0); n],
    };
    let mut eval = evaluate(p, &pt)?;

    let warm = guess.duals.as_ref();
    let mut mu = if warm.is_some() {
        opts.mu_warm
    } else {
        opts.mu_init
    };
    let mu_min = opts.tol_complementarity.min(opts.tol_stationarity) / 11.0;
    let floor = if warm.is_some() {
        mu.sqrt().min(opts.slack_floor)
    } else {
        opts.slack_floor
    };
    let init_slack = |c: &DVector<f64>, prev: Option<&DVector<f64>>| -> DVector<f64> {
        DVector::from_fn(c.len(), |j, _| {
            let base = (-c[j]).max(floor);
            match prev {
                Some(s) if s.len() == c.len() => base.max(s[j].min(-c[j]).max(floor)),
                _ => base,
            }
        })
    };
    for i in 1..=n {
        pt.s_x[i] = init_slack(&eval.c_x[i], warm.map(|w| &w.state_slack[i]));
    }
    for k in 0..n {
        pt.s_u[k] = init_slack(&eval.c_u[k], warm.map(|w| &w.input_slack[k]));
    }
    let init_dual = |s: &DVector<f64>, prev: Option<&DVector<f64>>| -> DVector<f64> {
        DVector::from_fn(s.len(), |j, _| match prev {
            Some(v) if v.len() == s.len() => v[j].clamp(1e-3 * mu / s[j], 1e3 * mu / s[j]),
            _ => mu / s[j],
        })
    };
    let mut duals = DualVars {
        lambda: warm
            .filter(|w| w.lambda.len() == n)
            .map_or_else(|| vec![StateVec::zeros(); n], |w| w.lambda.clone()),
        nu_x: (0..=n)
            .map(|i| init_dual(&pt.s_x[i], warm.map(|w| &w.state_dual[i])))
            .collect(),
        nu_u: (0..n)
            .map(|k| init_dual(&pt.s_u[k], warm.map(|w| &w.input_dual[k])))
            .collect(),
    };

    let theta0 = eval.infeasibility(&pt);
    let theta_max = 1e4 * theta0.max(1.0);
    let theta_min = 1e-4 * theta0.max(1.0);
    let mut filter: Vec<(f64, f64)> = Vec::new();
    let mut delta_last = 0.0;
    let mut stalls = 0;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut best: Option<(f64, Point, Eval)> = None;
    let mut last_stationarity = f64::INFINITY;

    for iter in 0..=opts.max_iterations {
        iterations = iter;
        let lin = linearize(p, &pt)?;
        let res0 = residuals(&lin, &eval, &pt, &duals, 0.0);
        last_stationarity = res0.stationarity;
        if res0.feasibility <= opts.tol_feasibility {
            let obj = eval.objective;
            if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
                best = Some((
                    obj,
                    pt.clone(),
                    Eval {
                        objective: eval.objective,
                        defects: eval.defects.clone(),
                        c_x: eval.c_x.clone(),
                        c_u: eval.c_u.clone(),
                    },
                ));
            }
        }
        if res0.stationarity <= opts.tol_stationarity
            && res0.feasibility <= opts.tol_feasibility
            && res0.complementarity <= opts.tol_complementarity
        {
            status = SolveStatus::Converged;
            break;
        }
        if iter == opts.max_iterations || stalls >= 8 {
            break;
        }
        loop {
            let r = residuals(&lin, &eval, &pt, &duals, mu);
            let e_mu = r.stationarity.max(r.feasibility).max(r.complementarity);
            if e_mu > 10.0 * mu || mu <= mu_min {
                break;
            }
            mu = (0.2 * mu).min(mu.powf(1.5)).max(mu_min);
            filter.clear();
        }

        // Condensed Newton system.
        let mut stages = Vec::with_capacity(n);
        let mut nu_eff_x = vec![DVector::zeros(0); n + 1];
        let mut nu_eff_u = Vec::with_capacity(n);
        let mut sigma_x = vec![DVector::zeros(0); n + 1];
        let mut sigma_u = Vec::with_capacity(n);
        for i in 1..=n {
            let s = &pt.s_x[i];
            let nu = &duals.nu_x[i];
            let sig = nu.component_div(s);
            let r = &eval.c_x[i] + s;
            nu_eff_x[i] = DVector::from_fn(s.len(), |j, _| mu / s[j] + sig[j] * r[j]);
            sigma_x[i] = sig;
        }
        for k in 0..n {
            let s = &pt.s_u[k];
            let nu = &duals.nu_u[k];
            let sig = nu.component_div(s);
            let r = &eval.c_u[k] + s;
            nu_eff_u.push(DVector::from_fn(s.len(), |j, _| mu / s[j] + sig[j] * r[j]));
            sigma_u.push(sig);
        }
        let state_block = |i: usize| -> Result<(StateJacobian, StateVec)> {
            let jx = &lin.jac_x[i];
            let weighted = DMatrix::from_fn(jx.nrows(), NX, |r, c| jx[(r, c)] * sigma_x[i][r]);
            let jtsj = jx.tr_mul(&weighted);
            let h = lin.hess_x[i]
                + p.state_constraint_curvature(i, &pt.x[i], &duals.nu_x[i])
                + StateJacobian::from_fn(|r, c| jtsj[(r, c)]);
            let g = lin.grad_x[i] + jx.tr_mul(&nu_eff_x[i]).fixed_rows::<NX>(0);
            Ok((h, g))
        };
        let mut base_stages = Vec::with_capacity(n);
        for k in 0..n {
            let curv = p.step_curvature(k, &pt.x[k], &pt.u[k], &duals.lambda[k])?;
            let ju = &lin.jac_u[k];
            let weighted = DMatrix::from_fn(ju.nrows(), NU, |r, c| ju[(r, c)] * sigma_u[k][r]);
            let jtsj = ju.tr_mul(&weighted);
            let mut st = StageQp::zeros();
            st.q_uu = lin.hess_u[k]
                + InputHessian::from_fn(|r, c| jtsj[(r, c)])
                + curv.fixed_view::<NU, NU>(NX, NX);
            st.q_u = lin.grad_u[k] + ju.tr_mul(&nu_eff_u[k]).fixed_rows::<NU>(0);
            if k > 0 {
                let (h, g) = state_block(k)?;
                st.q_xx = h + curv.fixed_view::<NX, NX>(0, 0);
                st.q_x = g;
                st.q_ux = curv.fixed_view::<NU, NX>(NX, 0).into_owned();
            }
            st.a = lin.a[k];
            st.b = lin.b[k];
            st.defect = eval.defects[k];
            base_stages.push(st);
        }
        let (h_n, g_n) = state_block(n)?;
        let base_terminal = TerminalQp {
            q_xx: h_n,
            q_x: g_n,
        };

        let mut delta = 0.0;
        let step = loop {
            stages.clear();
            for (k, st) in base_stages.iter().enumerate() {
                let mut st = st.clone();
                st.q_uu += InputHessian::identity() * delta;
                if k > 0 {
                    st.q_xx += StateJacobian::identity() * delta;
                }
                stages.push(st);
            }
            let terminal = TerminalQp {
                q_xx: base_terminal.q_xx + StateJacobian::identity() * delta,
                q_x: base_terminal.q_x,
            };
            if let Some(step) = solve_riccati(&stages, &terminal) {
                if delta > 0.0 {
                    delta_last = delta;
                }
                break Some(step);
            }
            delta = if delta == 0.0 {
                if delta_last == 0.0 {
                    1e-4
                } else {
                    (delta_last / 3.0).max(1e-20)
                }
            } else {
                delta * 8.0
            };
            if delta > 1e40 {
                break None;
            }
        };
        let Some(step) = step else {
            status = SolveStatus::Infeasible;
            break;
        };

        // Slack and inequality-dual directions.
        let mut ds_x = vec![DVector::zeros(0); n + 1];
        let mut dnu_x = vec![DVector::zeros(0); n + 1];
        let mut ds_u = Vec::with_capacity(n);
        let mut dnu_u = Vec::with_capacity(n);
        for i in 1..=n {
            let jdx = &lin.jac_x[i] * DVector::from_column_slice(step.dx[i].as_slice());
            let r = &eval.c_x[i] + &pt.s_x[i];
            ds_x[i] = -&r - &jdx;
            dnu_x[i] = DVector::from_fn(r.len(), |j, _| {
                nu_eff_x[i][j] + sigma_x[i][j] * jdx[j] - duals.nu_x[i][j]
            });
        }
        for k in 0..n {
            let jdu = &lin.jac_u[k] * DVector::from_column_slice(step.du[k].as_slice());
            let r = &eval.c_u[k] + &pt.s_u[k];
            ds_u.push(-&r - &jdu);
            dnu_u.push(DVector::from_fn(r.len(), |j, _| {
                nu_eff_u[k][j] + sigma_u[k][j] * jdu[j] - duals.nu_u[k][j]
            }));
        }
        let tau = (1.0 - mu).max(0.99);
        let alpha_p_max = fraction_to_boundary(&pt.s_x, &ds_x, tau)
            .min(fraction_to_boundary(&pt.s_u, &ds_u, tau));
        let alpha_d = fraction_to_boundary(&duals.nu_x, &dnu_x, tau).min(fraction_to_boundary(
            &duals.nu_u,
            &dnu_u,
            tau,
        ));

        // Directional derivative of the barrier objective.
        let mut d_phi = 0.0;
        for i in 1..=n {
            d_phi += lin.grad_x[i].dot(&step.dx[i]);
            d_phi -= mu * ds_x[i].component_div(&pt.s_x[i]).sum();
        }
        for k in 0..n {
            d_phi += lin.grad_u[k].dot(&step.du[k]);
            d_phi -= mu * ds_u[k].component_div(&pt.s_u[k]).sum();
        }

        let theta = eval.infeasibility(&pt);
        let phi = eval.barrier(&pt, mu);
        let mut alpha = alpha_p_max;
        let mut accepted: Option<(Point, Eval, f64)> = None;
        let mut f_type = false;
        for _ in 0..40 {
            let trial = Point {
                x: pt
                    .x
                    .iter()
                    .zip(&step.dx)
                    .map(|(a, b)| a + b * alpha)
                    .collect(),
                u: pt
                    .u
                    .iter()
                    .zip(&step.du)
                    .map(|(a, b)| a + b * alpha)
                    .collect(),
                s_x: pt
                    .s_x
                    .iter()
                    .zip(&ds_x)
                    .map(|(a, b)| a + b * alpha)
                    .collect(),
                s_u: pt
                    .s_u
                    .iter()
                    .zip(&ds_u)
                    .map(|(a, b)| a + b * alpha)
                    .collect(),
            };
            if let Ok(te) = evaluate(p, &trial) {
                let th = te.infeasibility(&trial);
                let ph = te.barrier(&trial, mu);
                let in_filter = filter.iter().any(|&(ft, fp)| th >= ft && ph >= fp);
                if th.is_finite() && ph.is_finite() && th <= theta_max && !in_filter {
                    let switching = d_phi < 0.0 && alpha * (-d_phi).powf(2.3) > theta.powf(1.1);
                    if theta <= theta_min && switching {
                        if ph <= phi + 1e-4 * alpha * d_phi {
                            f_type = true;
                            accepted = Some((trial, te, alpha));
                            break;
                        }
                    } else if th <= (1.0 - 1e-5) * theta || ph <= phi - 1e-5 * theta {
                        accepted = Some((trial, te, alpha));
                        break;
                    }
                }
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                break;
            }
        }
        let (new_pt, new_eval, alpha) = match accepted {
            Some(a) => {
                stalls = 0;
                a
            }
            None => {
                // No acceptable trial point: take a short step and forget the
                // filter history so the iteration can leave the region.
                stalls += 1;
                filter.clear();
                let mut alpha = alpha_p_max;
                let mut fallback = None;
                for _ in 0..40 {
                    let trial = Point {
                        x: pt
                            .x
                            .iter()
                            .zip(&step.dx)
                            .map(|(a, b)| a + b * alpha)
                            .collect(),
                        u: pt
                            .u
                            .iter()
                            .zip(&step.du)
                            .map(|(a, b)| a + b * alpha)
                            .collect(),
                        s_x: pt
                            .s_x
                            .iter()
                            .zip(&ds_x)
                            .map(|(a, b)| a + b * alpha)
                            .collect(),
                        s_u: pt
                            .s_u
                            .iter()
                            .zip(&ds_u)
                            .map(|(a, b)| a + b * alpha)
                            .collect(),
                    };
                    if let Ok(te) = evaluate(p, &trial) {
                        if te.infeasibility(&trial).is_finite() {
                            fallback = Some((trial, te, alpha));
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                match fallback {
                    Some(f) => f,
                    None => {
                        status = SolveStatus::Infeasible;
                        break;
                    }
                }
            }
        };
        if !f_type {
            filter.push(((1.0 - 1e-5) * theta, phi - 1e-5 * theta));
        }
        for (l, lp) in duals.lambda.iter_mut().zip(&step.lambda) {
            *l += (lp - *l) * alpha;
        }
        for i in 1..=n {
            duals.nu_x[i] += &dnu_x[i] * alpha_d;
            clamp_duals(&mut duals.nu_x[i], &new_pt.s_x[i], mu);
        }
        for k in 0..n {
            duals.nu_u[k] += &dnu_u[k] * alpha_d;
            clamp_duals(&mut duals.nu_u[k], &new_pt.s_u[k], mu);
        }
        pt = new_pt;
        eval = new_eval;
    }

    if status != SolveStatus::Converged {
        if let Some((_, bp, be)) = best {
            pt = bp;
            eval = be;
            status = SolveStatus::MaxIterations;
        } else if eval.max_violation() > opts.tol_feasibility {
            status = SolveStatus::Infeasible;
        }
    }
    let max_violation = eval.max_violation();
    let mut most_violated: Vec<Violation> = eval
        .violations()
        .into_iter()
        .filter(|v| v.amount > opts.tol_feasibility)
        .collect();
    most_violated.sort_by(|a, b| b.amount.total_cmp(&a.amount));
    most_violated.truncate(5);
    Ok(IpmResult {
        states: pt.x[1..].to_vec(),
        inputs: pt.u.clone(),
        duals: Duals {
            lambda: duals.lambda,
            state_slack: pt.s_x,
            state_dual: duals.nu_x,
            input_slack: pt.s_u,
            input_dual: duals.nu_u,
        },
        status,
        iterations,
        objective: eval.objective,
        max_violation,
        stationarity: last_stationarity,
        most_violated,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

// Keeps ν within a bounded ratio of the primal-dual central path value μ/s.
fn clamp_duals(nu: &mut DVector<f64>, s: &DVector<f64>, mu: f64) {
    const KAPPA: f64 = 1e10;
    for j in 0..nu.len() {
        let c = mu / s[j];
        nu[j] = nu[j].clamp(c / KAPPA, c * KAPPA);
    }
}
