use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use grip_core::dynamics::Terrain;
use grip_core::fixture::{generate, FixtureKind, FixtureSpec};
use grip_core::io::PipelineConfig;
use grip_core::kinnet::{batch_loss_and_grad, Estimator, TrainingSequence};
use grip_core::metrics::{self, MotionSequence};
use grip_core::par::Exec;
use grip_core::Vec3;

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn walking(frames: usize) -> grip_core::io::SequenceFile {
    let spec = FixtureSpec { frames, ..FixtureSpec::new(FixtureKind::Walking, 3) };
    generate(&spec).unwrap().sequence
}

fn bench_metrics(c: &mut Criterion) {
    let gt = walking(1200).motion().unwrap().unwrap();
    let pred = MotionSequence {
        joint_pos: gt
            .joint_pos
            .iter()
            .enumerate()
            .map(|(t, f)| f.iter().map(|p| p + Vec3::new(0.01, -0.02, 0.005) * (t as f64 * 0.1).sin()).collect())
            .collect(),
        ..gt.clone()
    };
    let terrain = Terrain::flat();
    let mut group = c.benchmark_group("evaluate_1200_frames");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| metrics::evaluate(&pred, &gt, &terrain, 100, true, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let seq = walking(400);
    let cfg = PipelineConfig::default();
    let sensors = cfg.sensor_config().unwrap();
    let obs: Vec<Vec<f64>> = seq.sensor_observations(&sensors).unwrap().iter().map(|o| o.flatten()).collect();
    let truth = seq.truth().unwrap();
    let batch: Vec<TrainingSequence> = (0..8)
        .map(|k| TrainingSequence { obs: obs[50 * k..50 * k + 50].to_vec(), truth: truth[50 * k..50 * k + 50].to_vec() })
        .collect();
    let mut est = Estimator::new(sensors.width(), 64, 1);
    est.fit_normalization(&obs);
    let mut group = c.benchmark_group("kin_loss_grad_8x50");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| batch_loss_and_grad(&est, &batch, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_metrics, bench_training);
criterion_main!(benches);
