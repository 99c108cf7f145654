use std::sync::Arc;

use anonpipe_backend::{BackendClient, MockTransport};
use anonpipe_core::PipelineConfig;
use anonpipe_pipeline::fixtures::{write_fixture, SceneSpec, THREE_SCENES};
use anonpipe_pipeline::{run_pipeline, RunOptions};
use anonpipe_video::Transcoder;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_workers(c: &mut Criterion) {
    let dir = tempfile::TempDir::new().unwrap();
    let input = dir.path().join("in.mkv");
    let scenes: Vec<SceneSpec> = THREE_SCENES.iter().cycle().take(6).copied().collect();
    write_fixture(&Transcoder::discover(None), &scenes, &input).unwrap();
    let client = BackendClient::new(Arc::new(MockTransport));
    let cfg = PipelineConfig::default();
    let out = dir.path().join("out.mkv");

    let mut group = c.benchmark_group("mock_pipeline");
    group.sample_size(10);
    for workers in [1usize, 4] {
        group.bench_with_input(BenchmarkId::new("workers", workers), &workers, |b, &workers| {
            b.iter(|| run_pipeline(&input, &out, None, &cfg, &client, RunOptions { run_seed: 1, workers }).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_workers);
criterion_main!(benches);
