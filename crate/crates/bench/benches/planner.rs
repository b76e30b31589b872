use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use stplan::planner::plan;
use stplan::sim::SimConfig;
use stplan::{ControlInput, Transition, VehicleParams, VehicleState};
use stplan_cli::bench::bench_scenario;
use stplan_cli::plan::snapshot_of;

fn transition(c: &mut Criterion) {
    let tr = Transition::new(VehicleParams::default(), 10);
    let mut x = VehicleState::cruising(0.0, 6.0, 25.0);
    x.delta = 0.02;
    let u = ControlInput::new(0.01, 0.5);
    c.bench_function("transition_step", |b| {
        b.iter(|| tr.step(black_box(&x), black_box(&u), 0.5).unwrap())
    });
}

fn plan_cold(c: &mut Criterion) {
    let cfg = SimConfig::default();
    let mut group = c.benchmark_group("plan_cold");
    group.sample_size(20);
    for m in [0, 3, 6, 12] {
        let snap = snapshot_of(&bench_scenario(m, 6, &cfg));
        group.bench_with_input(BenchmarkId::from_parameter(m), &snap, |b, s| {
            b.iter(|| plan(black_box(s), None, &cfg.planner).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, transition, plan_cold);
criterion_main!(benches);
