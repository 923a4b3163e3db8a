use deepsv::corpus::LabeledFeatures;
use deepsv::dvector::{train_dvector, ConvStage, DVectorConfig, TdStage};
use deepsv::frontend::{FeatureKind, FeatureMatrix};
use deepsv::nn::TrainerConfig;
use deepsv::Exec;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const DIM: usize = 40;

fn small_cfg() -> DVectorConfig {
    DVectorConfig {
        conv: vec![
            ConvStage { kernel: 2, channels: 32 },
            ConvStage { kernel: 1, channels: 32 },
        ],
        bottleneck_dim: 16,
        td: vec![
            TdStage { offsets: vec![-3, 0, 3], dim: 32 },
            TdStage { offsets: vec![-2, 0, 2], dim: 32 },
        ],
        feature_dim: 32,
        num_speakers: 2,
        ..DVectorConfig::default()
    }
}

/// Speaker 0 has energy in the low half of the bins, speaker 1 in the high
/// half; 30 s (3,000 frames) each, split into 5 s utterances.
fn disjoint_speakers(seed: u64) -> LabeledFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for s in 0..2 {
        for _ in 0..6 {
            let x = Array2::from_shape_fn((500, DIM), |(_, j)| {
                let on = (j < DIM / 2) == (s == 0);
                let noise: f64 = StandardNormal.sample(&mut rng);
                (if on { 1.0 } else { -1.0 }) + 0.5 * noise
            });
            feats.push(FeatureMatrix::new(x, 0.01, FeatureKind::Fbank).unwrap());
            labels.push(s);
        }
    }
    LabeledFeatures::new(feats, labels).unwrap()
}

fn trainer(epochs: usize) -> TrainerConfig {
    TrainerConfig {
        learning_rate: 0.02,
        lr_decay: 0.5,
        decay_interval: 10,
        momentum: 0.9,
        max_epochs: epochs,
        batch_size: 8,
        clip_norm: 5.0,
        seed: 3,
    }
}

#[test]
fn two_disjoint_speakers_are_learned_within_five_epochs() {
    let data = disjoint_speakers(1);
    let (model, logs) = train_dvector(&data, &small_cfg(), &trainer(5), Exec::Parallel, |_| {}).unwrap();
    let acc = logs.last().unwrap().frame_accuracy;
    assert!(acc > 0.95, "training frame accuracy {acc}");
    assert_eq!(model.epochs_trained, 5);

    // d-vectors of the two speakers point in clearly different directions
    let d: Vec<_> = data.feats.iter().map(|f| model.dvector(f, "u").unwrap().vector).collect();
    let cos = |a: &ndarray::Array1<f64>, b: &ndarray::Array1<f64>| a.dot(b) / (a.dot(a) * b.dot(b)).sqrt();
    assert!(cos(&d[0], &d[1]) > cos(&d[0], &d[7]));
}

#[test]
fn identical_runs_give_identical_parameters() {
    let data = disjoint_speakers(2);
    let run = |exec| train_dvector(&data, &small_cfg(), &trainer(2), exec, |_| {}).unwrap();
    let (a, la) = run(Exec::Parallel);
    let (b, lb) = run(Exec::Parallel);
    let (c, lc) = run(Exec::Sequential);
    assert_eq!(la, lb);
    assert_eq!(la, lc);
    assert_eq!(a.to_archive().encode(), b.to_archive().encode());
    assert_eq!(a.to_archive().encode(), c.to_archive().encode());
}

#[test]
fn too_many_speakers_for_the_output_layer_is_rejected() {
    let data = disjoint_speakers(3);
    let cfg = DVectorConfig {
        num_speakers: 1,
        ..small_cfg()
    };
    assert!(train_dvector(&data, &cfg, &trainer(1), Exec::Sequential, |_| {}).is_err());
}
