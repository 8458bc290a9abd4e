use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use somarl_core::{assets, compile_tree, solve, KnowledgeTree, PlannerConfig, RewardLedger};

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for (name, text) in [("findtreasure", assets::FINDTREASURE_TREE), ("movebox", assets::MOVEBOX_TREE)] {
        let problem = compile_tree(&KnowledgeTree::parse(text).unwrap()).unwrap();
        let ledger = RewardLedger::for_problem(&problem);
        group.bench_with_input(BenchmarkId::from_parameter(name), &problem, |b, p| {
            b.iter(|| solve(black_box(p), black_box(&ledger), &PlannerConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_compile(c: &mut Criterion) {
    c.bench_function("parse_and_compile/findtreasure", |b| {
        b.iter(|| compile_tree(&KnowledgeTree::parse(black_box(assets::FINDTREASURE_TREE)).unwrap()).unwrap())
    });
}

criterion_group!(benches, bench_solve, bench_compile);
criterion_main!(benches);
