use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deepsv::datagen::{generate_clips, SyntheticSpec};
use deepsv::dvector::{build_dvector_net, ConvStage, DVectorConfig, TdStage};
use deepsv::e2e::{build_e2e_net, pair_step, E2EConfig, NinBlockSpec, TdNinStage};
use deepsv::frontend::{compute_fbank, FrontendConfig};
use deepsv::pipeline::extract_dvectors;
use deepsv::Exec;
use ndarray::Array2;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        num_speakers: 8,
        utterances_per_speaker: 2,
        min_secs: 2.0,
        max_secs: 2.0,
        ..SyntheticSpec::default()
    }
}

fn featurize(c: &mut Criterion) {
    let clips = generate_clips(&spec(), Exec::Sequential).unwrap();
    let fe = FrontendConfig::default();
    let mut g = c.benchmark_group("featurize");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&clips, |clip| compute_fbank(clip, &fe).unwrap()))
        });
    }
    g.finish();
}

fn extraction(c: &mut Criterion) {
    let clips = generate_clips(&spec(), Exec::Sequential).unwrap();
    let fe = FrontendConfig::default();
    let feats: Vec<_> = clips.iter().map(|clip| compute_fbank(clip, &fe).unwrap()).collect();
    let ids: Vec<String> = (0..feats.len()).map(|i| format!("u{i}")).collect();
    let cfg = DVectorConfig {
        conv: vec![ConvStage { kernel: 2, channels: 64 }, ConvStage { kernel: 1, channels: 64 }],
        bottleneck_dim: 32,
        td: vec![TdStage { offsets: vec![-3, 0, 3], dim: 64 }, TdStage { offsets: vec![-2, 0, 2], dim: 64 }],
        feature_dim: 64,
        num_speakers: 8,
        ..DVectorConfig::default()
    };
    let model = build_dvector_net(&cfg, 1).unwrap();
    let mut g = c.benchmark_group("dvector_extraction");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| extract_dvectors(&model, &ids, &feats, exec).unwrap())
        });
    }
    g.finish();
}

fn pair_gradients(c: &mut Criterion) {
    let block = NinBlockSpec { d_hidden: 64, d_out: 32 };
    let cfg = E2EConfig {
        lift_dim: 32,
        stages: [vec![-3, 0, 3], vec![-2, 0, 2], vec![-2, 0, 2]]
            .into_iter()
            .map(|offsets| TdNinStage { offsets, block: block.clone() })
            .collect(),
        pool_dim: 32,
        post_pool: block,
        embedding_dim: 32,
        ..E2EConfig::default()
    };
    let model = build_e2e_net(&cfg, 2).unwrap();
    let n = 8;
    let chunks: Vec<Array2<f64>> = (0..2 * n)
        .map(|i| Array2::from_shape_fn((150, cfg.input_dim), |(t, j)| ((i * 31 + t * 7 + j) % 13) as f64 / 13.0 - 0.5))
        .collect();
    let same: Vec<(usize, usize)> = (0..n).map(|i| (2 * i, 2 * i + 1)).collect();
    let diff: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (2 * i, 2 * j + 1)))
        .collect();
    let mut g = c.benchmark_group("e2e_pair_step");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pair_step(&model, &chunks, &same, &diff, 1.0 / (n - 1) as f64, true, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, featurize, extraction, pair_gradients);
criterion_main!(benches);
