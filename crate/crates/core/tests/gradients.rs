//! Analytic derivatives against central differences at random feasible points.

use proptest::prelude::*;
use stplan::dynamics::{InputVec, StateVec};
use stplan::optimizer::{build_problem, derivative_error};
use stplan::prediction::{predict, ObstacleState, PredictionConfig};
use stplan::solver::StagedNlp;
use stplan::{CollisionConfig, OptimizerConfig, PlanningProblem, RoadBounds, VehicleParams, VehicleState};

fn problem(inflation_k: f64) -> PlanningProblem {
    let dt = [0.5; 20];
    let obstacles: Vec<_> = [(30.0, 2.0, 22.0), (45.0, 6.0, 26.0), (5.0, 6.0, 28.0)]
        .iter()
        .enumerate()
        .map(|(j, &(x, y, v))| {
            predict(j, &ObstacleState::new(x, y, v, 0.0), 20, &dt, &PredictionConfig::default())
                .unwrap()
        })
        .collect();
    let config = OptimizerConfig {
        collision: CollisionConfig {
            inflation_k,
            ..CollisionConfig::default()
        },
        ..OptimizerConfig::default()
    };
    build_problem(
        &VehicleState::cruising(0.0, 2.0, 25.0),
        &[27.0; 20],
        &dt,
        &obstacles,
        RoadBounds { y_min: 0.0, y_max: 8.0 },
        &VehicleParams::default(),
        &config,
    )
    .unwrap()
}

fn feasible(p: &PlanningProblem, k: usize, x: &StateVec, u: &InputVec) -> bool {
    p.state_constraints(k + 1, x).iter().all(|&c| c <= 0.0)
        && p.input_constraints(k, u).iter().all(|&c| c <= 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivatives_match_central_differences(
        k in 0usize..20,
        inflation in prop_oneof![Just(0.0), Just(2.0)],
        x in 0.0..300.0f64,
        y in 1.3..6.7f64,
        theta in -0.1..0.1f64,
        delta in -0.04..0.04f64,
        vx in 20.0..32.0f64,
        vy in -0.3..0.3f64,
        r in -0.1..0.1f64,
        gamma in -0.3..0.3f64,
        a in -2.0..2.0f64,
    ) {
        let p = problem(inflation);
        let xs = StateVec::from([x, y, theta, delta, vx, vy, r]);
        let u = InputVec::new(gamma, a);
        prop_assume!(feasible(&p, k, &xs, &u));
        let e = derivative_error(&p, k, &xs, &u).unwrap();
        prop_assert!(e <= 1e-4, "relative error {e}");
    }
}
