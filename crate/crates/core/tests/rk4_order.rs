//! Convergence order of the knot transition on a steady turn, against a
//! 1000-step RK4 reference.

use stplan::dynamics::{step_rk4, ControlInput, Transition, VehicleParams, VehicleState};

fn reference(s0: &VehicleState, u: &ControlInput, p: &VehicleParams, t: f64) -> VehicleState {
    let h = t / 1000.0;
    (0..1000).fold(*s0, |s, _| step_rk4(&s, u, p, h).unwrap())
}

#[test]
fn knot_transition_is_fourth_order() {
    let p = VehicleParams::default();
    let tr = Transition::new(p, 10);
    let s0 = VehicleState::new(0.0, 0.0, 0.0, 0.05, 25.0, 0.0, 0.0);
    let u = ControlInput::new(0.0, 0.0);
    let fine = reference(&s0, &u, &p, 1.0);
    let errs: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| {
            let n = (1.0 / dt as f64).round() as usize;
            let s = (0..n).fold(s0, |s, _| tr.step(&s, &u, dt).unwrap());
            (s.to_vector() - fine.to_vector()).norm()
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((3.8..=4.2).contains(&order), "order {order}, errors {errs:?}");
    }
}

#[test]
fn single_step_error_shrinks_with_dt() {
    let p = VehicleParams::default();
    let s0 = VehicleState::new(0.0, 0.0, 0.0, 0.05, 25.0, 0.0, 0.0);
    let u = ControlInput::new(0.1, 0.5);
    let err = |dt: f64| {
        let fine = reference(&s0, &u, &p, dt);
        (step_rk4(&s0, &u, &p, dt).unwrap().to_vector() - fine.to_vector()).norm()
    };
    assert!(err(0.005) < err(0.01) && err(0.01) < err(0.02));
}
