//! Riccati recursion for equality-constrained, stage-wise quadratic programs
//!
//! ```text
//! min  Σₖ ½[dx;du]ᵀ[Q Sᵀ; S R][dx;du] + qᵀdx + rᵀdu  +  ½dx_Nᵀ Q_N dx_N + q_Nᵀdx_N
//! s.t. dx_{k+1} = A dx_k + B du_k + b_k,   dx_0 = 0
//! ```

use nalgebra::{Cholesky, SMatrix};

use crate::dynamics::{InputJacobian, InputVec, StateJacobian, StateVec, NU, NX};

pub type InputHessian = SMatrix<f64, NU, NU>;
pub type CrossHessian = SMatrix<f64, NU, NX>;

#[derive(Debug, Clone, PartialEq)]
pub struct StageQp {
    pub q_xx: StateJacobian,
    pub q_uu: InputHessian,
    pub q_ux: CrossHessian,
    pub q_x: StateVec,
    pub q_u: InputVec,
    pub a: StateJacobian,
    pub b: InputJacobian,
    /// Linearization residual `f(x_k, u_k) − x_{k+1}`.
    pub defect: StateVec,
}

impl StageQp {
    pub fn zeros() -> Self {
        Self {
            q_xx: StateJacobian::zeros(),
            q_uu: InputHessian::zeros(),
            q_ux: CrossHessian::zeros(),
            q_x: StateVec::zeros(),
            q_u: InputVec::zeros(),
            a: StateJacobian::zeros(),
            b: InputJacobian::zeros(),
            defect: StateVec::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalQp {
    pub q_xx: StateJacobian,
    pub q_x: StateVec,
}

/// Primal step and the multipliers of the linearized dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct QpStep {
    /// `dx_0..dx_N`, with `dx_0 = 0`.
    pub dx: Vec<StateVec>,
    /// `du_0..du_{N−1}`.
    pub du: Vec<InputVec>,
    /// `λ_1..λ_N`; `λ_{k+1}` belongs to the row `dx_{k+1} = A dx_k + B du_k + b_k`.
    pub lambda: Vec<StateVec>,
}

/// Solves the QP. Returns `None` when some `R + BᵀPB` is not positive
/// definite, i.e. the reduced Hessian has the wrong inertia.
pub fn solve_riccati(stages: &[StageQp], terminal: &TerminalQp) -> Option<QpStep> {
    let n = stages.len();
    let mut p_mat = vec![StateJacobian::zeros(); n + 1];
    let mut p_vec = vec![StateVec::zeros(); n + 1];
    let mut gains = Vec::with_capacity(n);
    p_mat[n] = terminal.q_xx;
    p_vec[n] = terminal.q_x;
    for k in (0..n).rev() {
        let st = &stages[k];
        let p = &p_mat[k + 1];
        let pb = p * st.defect + p_vec[k + 1];
        let pa = p * st.a;
        let q_xx = st.q_xx + st.a.transpose() * pa;
        let q_uu = st.q_uu + st.b.transpose() * p * st.b;
        let q_ux = st.q_ux + st.b.transpose() * pa;
        let q_x = st.q_x + st.a.transpose() * pb;
        let q_u = st.q_u + st.b.transpose() * pb;
        let chol = Cholesky::new(0.5 * (q_uu + q_uu.transpose()))?;
        let k_fb = -chol.solve(&q_ux);
        let k_ff = -chol.solve(&q_u);
        let pk = q_xx + q_ux.transpose() * k_fb;
        p_mat[k] = 0.5 * (pk + pk.transpose());
        p_vec[k] = q_x + q_ux.transpose() * k_ff;
        gains.push((k_fb, k_ff));
    }
    gains.reverse();
    let mut dx = Vec::with_capacity(n + 1);
    let mut du = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    dx.push(StateVec::zeros());
    for k in 0..n {
        let (k_fb, k_ff) = &gains[k];
        let u = k_fb * dx[k] + k_ff;
        let st = &stages[k];
        let next = st.a * dx[k] + st.b * u + st.defect;
        lambda.push(p_mat[k + 1] * next + p_vec[k + 1]);
        du.push(u);
        dx.push(next);
    }
    Some(QpStep { dx, du, lambda })
}
