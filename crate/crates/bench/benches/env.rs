use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use somarl_core::grid_env::{GridEnv, GridMap, JointAction, TaskVariant};
use somarl_core::harness::{run_seed, Ablation, ExperimentConfig, Setup};
use somarl_core::assets;

fn bench_step(c: &mut Criterion) {
    let map = Arc::new(GridMap::parse(assets::MOVEBOX_KEYS_MAP).unwrap());
    let env = GridEnv::new(map, TaskVariant::MoveBox(3), 300).unwrap();
    let (s0, _) = env.reset(0);
    c.bench_function("env_step/movebox_100", |b| {
        b.iter(|| {
            let mut s = s0;
            for i in 0..100 {
                if s.terminated() {
                    s = s0;
                }
                s = env.step(&s, JointAction::from_index((i * 7) % 25)).unwrap().0;
            }
            black_box(s)
        })
    });
}

fn bench_episodes(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::new(TaskVariant::FindTreasure);
    cfg.episodes = 200;
    cfg.window = 100;
    cfg.ablation = Ablation::Full;
    let setup = Setup::load(&cfg).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("findtreasure_200_episodes", |b| b.iter(|| run_seed(&cfg, &setup, 1).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_step, bench_episodes);
criterion_main!(benches);
