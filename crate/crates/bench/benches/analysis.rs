use criterion::{black_box, criterion_group, criterion_main, Criterion};

use afdplan_core::imbalance::{lambda_grid, DEFAULT_PENALTY_NF, DEFAULT_PENALTY_SIGMA};
use afdplan_core::{
    hardware_preset, hfu_sweep, jitter_sensitivity, model_preset, penalty_sweep, simulate,
    BoMode, JitterKind, ScenarioConfig, SimSpec, StageTiming,
};

fn hfu(c: &mut Criterion) {
    let model = model_preset("deepseek-v3").unwrap();
    let hw = hardware_preset("h800").unwrap();
    let s = ScenarioConfig::new(0.050, 1.7, 0.015);
    c.bench_function("hfu_sweep 1..=64", |b| {
        b.iter(|| hfu_sweep(black_box(&model), &hw, &s, 1..=64).unwrap())
    });
}

fn penalty(c: &mut Criterion) {
    let lambdas = lambda_grid(1.0, 5.0, 0.05).unwrap();
    c.bench_function("penalty_sweep default grid", |b| {
        b.iter(|| penalty_sweep(&DEFAULT_PENALTY_NF, &DEFAULT_PENALTY_SIGMA, black_box(&lambdas)).unwrap())
    });
}

fn sim(c: &mut Criterion) {
    let t = StageTiming::new(400e-6, 150e-6, 400e-6, 150e-6);
    let ideal = SimSpec::new(BoMode::ThreeBo, 58, t);
    c.bench_function("simulate 3bo x58", |b| b.iter(|| simulate(black_box(&ideal)).unwrap()));
    let jittered = ideal.with_jitter(JitterKind::LogNormal, 0.1, 0);
    c.bench_function("jitter_sensitivity 100 trials", |b| {
        b.iter(|| jitter_sensitivity(black_box(&jittered), 100).unwrap())
    });
}

criterion_group!(benches, hfu, penalty, sim);
criterion_main!(benches);
