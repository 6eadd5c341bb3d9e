use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use helevel::arch::build;
use helevel::corpus::{random_dags, DagSpec};
use helevel::cost::{price, reference_calibration};
use helevel::graph::{emit_graph, parse_graph};
use helevel::levels::propagate;
use helevel::mock::{execute, random_inputs, random_weights, ExecOptions};
use helevel::planner::{plan, PlannerConfig};
use helevel::{ArchConfig, CostWeights, LevelRules, Variant};

fn resnet(c: &mut Criterion) {
    let rules = LevelRules::default();
    let cfg = PlannerConfig::default();
    let g = build(&ArchConfig::resnet50(Variant::Reference, 8)).unwrap();
    let p = plan(&g, &rules, &cfg).unwrap();
    let text = emit_graph(&g);

    let mut group = c.benchmark_group("resnet50");
    group.bench_function("build", |b| {
        b.iter(|| build(&ArchConfig::resnet50(Variant::Reference, 8)))
    });
    group.bench_function("propagate", |b| b.iter(|| propagate(black_box(&g), &rules)));
    group.bench_function("plan", |b| b.iter(|| plan(black_box(&g), &rules, &cfg)));
    group.bench_function("price", |b| {
        b.iter(|| price(black_box(&p), &CostWeights::calibrated()))
    });
    group.bench_function("parse", |b| b.iter(|| parse_graph(black_box(&text))));
    group.finish();
}

fn small(c: &mut Criterion) {
    let rules = LevelRules::default();
    let dags = random_dags(0, 100, &DagSpec::default());
    c.bench_function("random_dags/plan_100", |b| {
        b.iter(|| {
            for g in &dags {
                plan(g, &rules, &PlannerConfig::with_max_level(6)).unwrap();
            }
        })
    });

    let g = build(&ArchConfig::toy(Variant::SharedSourceDirac, 8)).unwrap();
    let p = plan(&g, &rules, &PlannerConfig::default()).unwrap();
    let inputs = random_inputs(&g, 0);
    let weights = random_weights(&g, 1).unwrap();
    let opts = ExecOptions::default();
    c.bench_function("toy_ssd/mock_execute", |b| {
        b.iter(|| execute(&p, &inputs, &weights, &opts))
    });
    c.bench_function("calibrate/reference", |b| b.iter(reference_calibration));
}

criterion_group!(benches, resnet, small);
criterion_main!(benches);
