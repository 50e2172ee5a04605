use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand_distr::StandardNormal;

use tdm::datasets::checkerboard_torus;
use tdm::dynamics::{fosi_step, DiffusionConfig, PhaseState};
use tdm::lie::{haar_sample, AlgebraVector, GroupKind};
use tdm::losses::{dsm_loss_and_grad, make_dsm_batch};
use tdm::net::{NetConfig, ScoreModel};
use tdm::par;
use tdm::rng::stream;
use tdm::score::{BatchBuf, Score};

fn model(kind: &GroupKind, hidden: usize, sequential: bool) -> ScoreModel {
    let cfg = NetConfig { hidden, ..NetConfig::for_kind(kind) };
    let mut m = ScoreModel::new(kind.clone(), cfg, &mut stream(0, 0, 0)).unwrap();
    m.set_sequential(sequential);
    m
}

fn score_batch(c: &mut Criterion) {
    let kind: GroupKind = "so:3".parse().unwrap();
    let mut rng = stream(1, 0, 0);
    let mut buf = BatchBuf::default();
    for _ in 0..2048 {
        let xi: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        buf.push(&haar_sample(&kind, &mut rng), &xi, rng.random_range(0.0..10.0));
    }
    let mut group = c.benchmark_group("score_eval_2048");
    for (label, seq) in [("parallel", false), ("sequential", true)] {
        let m = model(&kind, 128, seq);
        group.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(|| black_box(m.eval_batch(&buf.view()).unwrap())));
    }
    group.finish();
}

fn dsm_grad(c: &mut Criterion) {
    let kind = GroupKind::TorusPower(2);
    let data = checkerboard_torus(4, 4096, 2).unwrap();
    let cfg = DiffusionConfig::new(kind.clone());
    let batch = make_dsm_batch(&data, &cfg, 1024, &mut stream(2, 0, 0)).unwrap();
    let mut group = c.benchmark_group("dsm_grad_1024");
    group.sample_size(20);
    for (label, seq) in [("parallel", false), ("sequential", true)] {
        let m = model(&kind, 128, seq);
        group.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(|| black_box(dsm_loss_and_grad(&m, &batch).unwrap())));
    }
    group.finish();
}

fn fosi_chains(c: &mut Criterion) {
    let kind: GroupKind = "u:4".parse().unwrap();
    let cfg = DiffusionConfig::new(kind.clone());
    let states: Vec<PhaseState> = (0..512)
        .map(|i| {
            let mut rng = stream(3, 0, i);
            let xi = AlgebraVector::new(kind.clone(), (0..16).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
            PhaseState::new(haar_sample(&kind, &mut rng), xi).unwrap()
        })
        .collect();
    let step = |i: usize| fosi_step(&states[i], &cfg, cfg.h(), &mut stream(3, 1, i as u64)).unwrap();
    let mut group = c.benchmark_group("fosi_step_512_u4");
    group.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(|| black_box(par::map_indexed(states.len(), step))));
    group.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(|| black_box(par::map_indexed_seq(states.len(), step))));
    group.finish();
}

criterion_group!(benches, score_batch, dsm_grad, fosi_chains);
criterion_main!(benches);
