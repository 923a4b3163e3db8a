//! Feature-learning system: a frame-level speaker classifier (spliced input,
//! convolution over time, bottleneck, two time-delay layers, feature layer,
//! softmax over training speakers). After training, the softmax is dropped
//! and the feature-layer activations are averaged into d-vectors.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Archive;
pub use crate::corpus::LabeledFeatures;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frontend::{FeatureKind, FeatureMatrix};
use crate::nn::{
    softmax_xent_frames, Grads, LayerSpec, Network, Objective, Parameterized, Sgd, TrainerConfig,
};

/// Receptive field of the reference architecture, in frames.
pub const REFERENCE_CONTEXT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    /// Kernel width along time, in frames.
    pub kernel: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdStage {
    pub offsets: Vec<i32>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DVectorConfig {
    pub input_dim: usize,
    pub splice_context: usize,
    pub conv: Vec<ConvStage>,
    pub bottleneck_dim: usize,
    pub td: Vec<TdStage>,
    pub feature_dim: usize,
    pub num_speakers: usize,
    /// Frames per training chunk (loss is taken on every frame of a chunk).
    pub chunk_frames: usize,
}

impl Default for DVectorConfig {
    fn default() -> Self {
        Self {
            input_dim: 40,
            splice_context: 4,
            conv: vec![
                ConvStage { kernel: 2, channels: 512 },
                ConvStage { kernel: 1, channels: 512 },
            ],
            bottleneck_dim: 256,
            td: vec![
                TdStage { offsets: vec![-3, 0, 3], dim: 512 },
                TdStage { offsets: vec![-2, 0, 2], dim: 512 },
            ],
            feature_dim: 400,
            num_speakers: 5000,
            chunk_frames: 100,
        }
    }
}

impl DVectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < 2 {
            return Err(Error::config("dvector: num_speakers must be at least 2"));
        }
        if self.input_dim == 0 || self.bottleneck_dim == 0 || self.feature_dim == 0 || self.chunk_frames == 0 {
            return Err(Error::config("dvector: dimensions and chunk_frames must be positive"));
        }
        if self.conv.iter().any(|c| c.kernel == 0 || c.channels == 0) {
            return Err(Error::config("dvector: conv kernels and channels must be positive"));
        }
        if self.td.iter().any(|t| t.dim == 0) {
            return Err(Error::config("dvector: time-delay dims must be positive"));
        }
        Ok(())
    }

    /// Receptive field computed from the configuration alone.
    pub fn effective_context(&self) -> usize {
        let conv: usize = self.conv.iter().map(|c| c.kernel - 1).sum();
        let td: i64 = self
            .td
            .iter()
            .map(|t| (*t.offsets.last().unwrap_or(&0) - *t.offsets.first().unwrap_or(&0)) as i64)
            .sum();
        1 + 2 * self.splice_context + conv + td as usize
    }

    fn layer_specs(&self) -> (Vec<(String, LayerSpec)>, usize) {
        let mut layers = Vec::new();
        let k = self.splice_context as i32;
        layers.push((
            "splice".to_string(),
            LayerSpec::TimeDelay { offsets: (-k..=k).collect() },
        ));
        let mut d = self.input_dim * (2 * self.splice_context + 1);
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernel > 1 {
                layers.push((format!("conv{i}.time"), LayerSpec::TimeDelay { offsets: (0..c.kernel as i32).collect() }));
                d *= c.kernel;
            }
            layers.push((format!("conv{i}"), LayerSpec::Affine { d_in: d, d_out: c.channels }));
            layers.push((format!("conv{i}.relu"), LayerSpec::Relu));
            d = c.channels;
        }
        layers.push(("bottleneck".into(), LayerSpec::Affine { d_in: d, d_out: self.bottleneck_dim }));
        d = self.bottleneck_dim;
        for (i, t) in self.td.iter().enumerate() {
            layers.push((format!("td{i}.time"), LayerSpec::TimeDelay { offsets: t.offsets.clone() }));
            layers.push((format!("td{i}"), LayerSpec::Affine { d_in: d * t.offsets.len(), d_out: t.dim }));
            layers.push((format!("td{i}.relu"), LayerSpec::Relu));
            d = t.dim;
        }
        layers.push(("feature".into(), LayerSpec::Affine { d_in: d, d_out: self.feature_dim }));
        let feature_depth = layers.len();
        layers.push(("feature.relu".into(), LayerSpec::Relu));
        layers.push(("output".into(), LayerSpec::Affine { d_in: self.feature_dim, d_out: self.num_speakers }));
        (layers, feature_depth)
    }
}

/// Trained (or freshly initialized) speaker classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DVectorModel {
    pub config: DVectorConfig,
    pub net: Network,
    /// Number of layers up to and including the feature-layer affine map.
    pub feature_depth: usize,
    /// Set when the receptive field differs from [`REFERENCE_CONTEXT`].
    pub nonstandard_context: bool,
    pub epochs_trained: usize,
}

/// Builds the classifier. A receptive field other than
/// [`REFERENCE_CONTEXT`] is allowed but logged and flagged.
pub fn build_dvector_net(cfg: &DVectorConfig, seed: u64) -> Result<DVectorModel> {
    cfg.validate()?;
    let (specs, feature_depth) = cfg.layer_specs();
    let net = Network::new(cfg.input_dim, &specs, seed)?;
    let nonstandard_context = net.effective_context() != REFERENCE_CONTEXT;
    if nonstandard_context {
        log::warn!(
            "d-vector receptive field is {} frames, reference architecture uses {}",
            net.effective_context(),
            REFERENCE_CONTEXT
        );
    }
    Ok(DVectorModel {
        config: cfg.clone(),
        net,
        feature_depth,
        nonstandard_context,
        epochs_trained: 0,
    })
}

/// Feature-layer activations of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSeq {
    pub utt_id: String,
    pub frames: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DVector {
    pub utt_id: String,
    pub speaker_id: Option<String>,
    pub vector: Array1<f64>,
}

impl DVectorModel {
    fn check_features(&self, feat: &FeatureMatrix) -> Result<()> {
        if feat.kind() != FeatureKind::Fbank || feat.dim() != self.config.input_dim {
            return Err(Error::usage(format!(
                "d-vector model expects {}-d fbank features, got {}-d {}",
                self.config.input_dim,
                feat.dim(),
                feat.kind().tag()
            )));
        }
        Ok(())
    }

    pub fn effective_context(&self) -> usize {
        self.net.effective_context()
    }

    /// Feature-layer activations (softmax and the rectifier after the
    /// feature layer are bypassed). Frame count is preserved.
    pub fn extract_frame_features(&self, feat: &FeatureMatrix, utt_id: &str) -> Result<FrameFeatureSeq> {
        self.check_features(feat)?;
        let frames = self.net.infer_prefix(feat.frames(), self.feature_depth)?;
        Ok(FrameFeatureSeq {
            utt_id: utt_id.to_string(),
            frames,
        })
    }

    pub fn dvector(&self, feat: &FeatureMatrix, utt_id: &str) -> Result<DVector> {
        pool_dvector(&self.extract_frame_features(feat, utt_id)?)
    }

    /// Softmax logits for every frame.
    pub fn logits(&self, feat: &FeatureMatrix) -> Result<Array2<f64>> {
        self.check_features(feat)?;
        self.net.infer(feat.frames())
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("dvector-net");
        a.push_text("config", toml::to_string(&self.config).expect("config serializes"));
        a.push_text(
            "meta",
            format!(
                "feature_depth={}\nnonstandard_context={}\nepochs_trained={}\ninput_kind=fbank",
                self.feature_depth, self.nonstandard_context, self.epochs_trained
            ),
        );
        self.net.to_archive(&mut a, "net/");
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        a.expect_kind("dvector-net")?;
        let config: DVectorConfig =
            toml::from_str(a.text("config")?).map_err(|e| Error::format(e.to_string()))?;
        let meta = parse_meta(a.text("meta")?);
        let get = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let feature_depth = get("feature_depth")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("d-vector archive lacks feature_depth"))?;
        let net = Network::from_archive(a, "net/")?;
        if feature_depth > net.num_layers() {
            return Err(Error::format("feature_depth beyond network depth"));
        }
        Ok(Self {
            config,
            net,
            feature_depth,
            nonstandard_context: get("nonstandard_context") == Some("true"),
            epochs_trained: get("epochs_trained").and_then(|v| v.parse().ok()).unwrap_or(0),
        })
    }
}

pub(crate) fn parse_meta(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Mean of the frame-level features.
pub fn pool_dvector(frames: &FrameFeatureSeq) -> Result<DVector> {
    let vector = frames
        .frames
        .mean_axis(ndarray::Axis(0))
        .ok_or_else(|| Error::usage("cannot pool an empty frame sequence"))?;
    Ok(DVector {
        utt_id: frames.utt_id.clone(),
        speaker_id: None,
        vector,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy per frame.
    pub loss: f64,
    pub frame_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy)]
struct Chunk {
    utt: usize,
    start: usize,
    len: usize,
}

struct ChunkResult {
    loss: f64,
    correct: usize,
    frames: usize,
    grads: Grads,
}

/// Loss and gradient of one chunk. The network sees the chunk plus the
/// surrounding context frames it needs, so chunk edges behave like interior
/// frames of the full utterance; the loss covers only the chunk frames.
fn chunk_gradient(model: &DVectorModel, data: &LabeledFeatures, c: Chunk) -> Result<ChunkResult> {
    let feat = data.feats[c.utt].frames();
    let (lo, hi) = model.net.context_extent();
    let from = c.start.saturating_sub((-lo) as usize);
    let to = (c.start + c.len + hi as usize).min(feat.nrows());
    let x = feat.slice(ndarray::s![from..to, ..]).to_owned();
    let trace = model.net.forward(&x)?;
    let offset = c.start - from;
    let logits = trace.output().slice(ndarray::s![offset..offset + c.len, ..]).to_owned();
    let fl = softmax_xent_frames(&logits, data.labels[c.utt])?;
    let mut d_out = Array2::zeros(trace.output().dim());
    d_out
        .slice_mut(ndarray::s![offset..offset + c.len, ..])
        .assign(&fl.grad);
    let (grads, _) = model.net.backward(&trace, &d_out)?;
    Ok(ChunkResult {
        loss: fl.loss,
        correct: fl.correct,
        frames: c.len,
        grads,
    })
}

/// Per-frame speaker classification training with momentum SGD. Chunks are
/// reshuffled every epoch; minibatch gradients are summed in chunk order so
/// the result does not depend on `exec`.
pub fn train_dvector(
    data: &LabeledFeatures,
    cfg: &DVectorConfig,
    trainer: &TrainerConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(DVectorModel, Vec<EpochLog>)> {
    if data.num_classes > cfg.num_speakers {
        return Err(Error::usage(format!(
            "{} training speakers but the output layer has {}",
            data.num_classes, cfg.num_speakers
        )));
    }
    for f in &data.feats {
        if f.kind() != FeatureKind::Fbank || f.dim() != cfg.input_dim {
            return Err(Error::usage("training features must be fbank of the configured width"));
        }
    }
    let mut model = build_dvector_net(cfg, trainer.seed)?;
    let mut sgd = Sgd::new(trainer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(trainer.seed ^ 0x5eed_d7ec);

    let mut chunks = Vec::new();
    for (utt, f) in data.feats.iter().enumerate() {
        let t = f.num_frames();
        let mut start = 0;
        while start < t {
            let len = cfg.chunk_frames.min(t - start);
            chunks.push(Chunk { utt, start, len });
            start += len;
        }
    }

    let mut logs = Vec::with_capacity(trainer.max_epochs);
    for epoch in 0..trainer.max_epochs {
        chunks.shuffle(&mut rng);
        let (mut loss, mut correct, mut frames) = (0.0, 0usize, 0usize);
        let lr = trainer.learning_rate_at(epoch);
        for batch in chunks.chunks(trainer.batch_size) {
            let results = exec.map(batch, |&c| chunk_gradient(&model, data, c));
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;
            let batch_frames: usize = results.iter().map(|r| r.frames).sum();
            let batch_loss: f64 = results.iter().map(|r| r.loss).sum();
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    stage: "epoch",
                    index: epoch,
                    what: "loss".into(),
                });
            }
            loss += batch_loss;
            correct += results.iter().map(|r| r.correct).sum::<usize>();
            frames += batch_frames;
            let mut grads = Grads::sum(results.into_iter().map(|r| r.grads)).expect("non-empty batch");
            grads.scale(1.0 / batch_frames as f64);
            sgd.step(&mut model.net, &grads, epoch)?;
        }
        model.epochs_trained = epoch + 1;
        let log = EpochLog {
            epoch,
            loss: loss / frames.max(1) as f64,
            frame_accuracy: correct as f64 / frames.max(1) as f64,
            learning_rate: lr,
        };
        log::info!(
            "d-vector epoch {epoch}: loss {:.4} frame accuracy {:.3}",
            log.loss,
            log.frame_accuracy
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

/// Mean frame cross-entropy of one labeled sequence; the gradient-check
/// objective for the full classifier.
pub struct FrameClassification {
    pub input: Array2<f64>,
    pub label: usize,
}

impl Objective<Network> for FrameClassification {
    fn loss(&self, net: &Network) -> Result<(f64, u64)> {
        let trace = net.forward(&self.input)?;
        let fl = softmax_xent_frames(trace.output(), self.label)?;
        Ok((fl.loss / self.input.nrows() as f64, trace.relu_pattern(net)))
    }

    fn loss_and_grad(&self, net: &Network) -> Result<(f64, Grads)> {
        let trace = net.forward(&self.input)?;
        let t = self.input.nrows() as f64;
        let fl = softmax_xent_frames(trace.output(), self.label)?;
        let (grads, _) = net.backward(&trace, &(fl.grad / t))?;
        Ok((fl.loss / t, grads))
    }
}

impl Parameterized for DVectorModel {
    fn param_names(&self) -> Vec<String> {
        self.net.param_names()
    }
    fn param_slices(&self) -> Vec<&[f64]> {
        self.net.param_slices()
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.param_slices_mut()
    }
    fn after_update(&mut self) {
        self.net.after_update()
    }
}
