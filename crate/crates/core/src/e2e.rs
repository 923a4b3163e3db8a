//! End-to-end system: time-delay network-in-network embedding, temporal mean
//! pooling and a bilinear same/different scorer trained on pairs.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Archive;
use crate::corpus::LabeledFeatures;
use crate::dvector::parse_meta;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frontend::{FeatureKind, FeatureMatrix};
use crate::nn::{sigmoid, softplus, Grads, LayerSpec, Network, Objective, Parameterized, Sgd, TrainerConfig};

/// Receptive field of the reference architecture, in frames.
pub const REFERENCE_CONTEXT: usize = 17;

/// Three affine maps, each followed by a rectifier: `d_in -> d_hidden ->
/// d_hidden -> d_out`. The input width comes from the preceding layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NinBlockSpec {
    pub d_hidden: usize,
    pub d_out: usize,
}

impl Default for NinBlockSpec {
    fn default() -> Self {
        Self {
            d_hidden: 1000,
            d_out: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdNinStage {
    pub offsets: Vec<i32>,
    #[serde(flatten)]
    pub block: NinBlockSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2EConfig {
    pub input_dim: usize,
    pub splice_context: usize,
    /// Width of the linear map applied to the spliced input before the first
    /// NIN stage; 0 feeds the spliced frames directly.
    pub lift_dim: usize,
    pub stages: Vec<TdNinStage>,
    /// Width of the linear projection feeding the mean pool.
    pub pool_dim: usize,
    pub post_pool: NinBlockSpec,
    pub embedding_dim: usize,
    /// Accept a receptive field other than [`REFERENCE_CONTEXT`].
    pub allow_nonstandard_context: bool,
}

impl Default for E2EConfig {
    fn default() -> Self {
        let stage = |offsets: Vec<i32>| TdNinStage {
            offsets,
            block: NinBlockSpec::default(),
        };
        Self {
            input_dim: 40,
            splice_context: 1,
            lift_dim: 150,
            stages: vec![stage(vec![-3, 0, 3]), stage(vec![-2, 0, 2]), stage(vec![-2, 0, 2])],
            pool_dim: 150,
            post_pool: NinBlockSpec::default(),
            embedding_dim: 200,
            allow_nonstandard_context: false,
        }
    }
}

impl E2EConfig {
    pub fn validate(&self) -> Result<()> {
        let blocks = self.stages.iter().map(|s| &s.block).chain([&self.post_pool]);
        if blocks.into_iter().any(|b| b.d_hidden == 0 || b.d_out == 0) {
            return Err(Error::config("e2e: NIN dimensions must be positive"));
        }
        if self.input_dim == 0 || self.pool_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::config("e2e: dimensions must be positive"));
        }
        let ctx = self.effective_context();
        if ctx != REFERENCE_CONTEXT && !self.allow_nonstandard_context {
            return Err(Error::config(format!(
                "e2e: receptive field is {ctx} frames, expected {REFERENCE_CONTEXT} \
                 (set allow_nonstandard_context to override)"
            )));
        }
        Ok(())
    }

    pub fn effective_context(&self) -> usize {
        let td: i64 = self
            .stages
            .iter()
            .map(|s| (*s.offsets.last().unwrap_or(&0) - *s.offsets.first().unwrap_or(&0)) as i64)
            .sum();
        1 + 2 * self.splice_context + td as usize
    }

    fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        fn nin(layers: &mut Vec<(String, LayerSpec)>, name: &str, d_in: usize, b: &NinBlockSpec) {
            let dims = [(d_in, b.d_hidden), (b.d_hidden, b.d_hidden), (b.d_hidden, b.d_out)];
            for (j, (d_in, d_out)) in dims.into_iter().enumerate() {
                layers.push((format!("{name}.a{j}"), LayerSpec::Affine { d_in, d_out }));
                layers.push((format!("{name}.r{j}"), LayerSpec::Relu));
            }
        }
        let mut layers = Vec::new();
        let k = self.splice_context as i32;
        layers.push(("splice".into(), LayerSpec::TimeDelay { offsets: (-k..=k).collect() }));
        let mut d = self.input_dim * (2 * self.splice_context + 1);
        if self.lift_dim > 0 {
            layers.push(("lift".into(), LayerSpec::Affine { d_in: d, d_out: self.lift_dim }));
            d = self.lift_dim;
        }
        for (i, s) in self.stages.iter().enumerate() {
            layers.push((format!("nin{i}.time"), LayerSpec::TimeDelay { offsets: s.offsets.clone() }));
            nin(&mut layers, &format!("nin{i}"), d * s.offsets.len(), &s.block);
            d = s.block.d_out;
        }
        layers.push(("proj".into(), LayerSpec::Affine { d_in: d, d_out: self.pool_dim }));
        layers.push(("pool".into(), LayerSpec::MeanPool));
        nin(&mut layers, "post", self.pool_dim, &self.post_pool);
        layers.push((
            "embed".into(),
            LayerSpec::Affine {
                d_in: self.post_pool.d_out,
                d_out: self.embedding_dim,
            },
        ));
        layers
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub vector: Array1<f64>,
}

/// `L(x, y) = x'y - x'Sx - y'Sy + b`, with `S` kept symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearScorer {
    pub s: Array2<f64>,
    pub b: f64,
}

impl BilinearScorer {
    pub fn new(dim: usize) -> Self {
        Self {
            s: Array2::zeros((dim, dim)),
            b: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn symmetrize(&mut self) {
        let t = self.s.t().to_owned();
        self.s = (&self.s + &t) * 0.5;
    }

    fn quad(&self, x: &Array1<f64>) -> f64 {
        x.dot(&self.s.dot(x))
    }

    pub fn score_pair(&self, x: &Array1<f64>, y: &Array1<f64>) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::usage(format!(
                "scorer expects {}-d embeddings, got {} and {}",
                self.dim(),
                x.len(),
                y.len()
            )));
        }
        Ok(x.dot(y) - self.quad(x) - self.quad(y) + self.b)
    }
}

/// Logistic link from pair logit to same-speaker probability.
pub fn pair_probability(logit: f64) -> f64 {
    sigmoid(logit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    /// `E_same + K E_diff`.
    pub loss: f64,
    pub same_loss: f64,
    pub diff_loss: f64,
    /// `dE/dL` for every same pair, then every different pair.
    pub d_same: Vec<f64>,
    pub d_diff: Vec<f64>,
}

/// Weighted binary cross-entropy over pair logits, evaluated through
/// softplus so saturated probabilities stay finite.
pub fn pair_loss(same_logits: &[f64], diff_logits: &[f64], k: f64) -> PairLoss {
    let same_loss = same_logits.iter().map(|&l| softplus(-l)).sum::<f64>();
    let diff_loss = diff_logits.iter().map(|&l| softplus(l)).sum::<f64>();
    PairLoss {
        loss: same_loss + k * diff_loss,
        same_loss,
        diff_loss,
        d_same: same_logits.iter().map(|&l| -sigmoid(-l)).collect(),
        d_diff: diff_logits.iter().map(|&l| k * sigmoid(l)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2ELossConfig {
    /// Weight of the different-speaker term; unset means `1 / (N - 1)`.
    pub k: Option<f64>,
}

impl Default for E2ELossConfig {
    fn default() -> Self {
        Self { k: None }
    }
}

impl E2ELossConfig {
    pub fn resolve(&self, n: usize) -> Result<f64> {
        let k = self.k.unwrap_or(1.0 / (n.max(2) - 1) as f64);
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::config("e2e loss: K must be positive"));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSamplingConfig {
    /// Same-speaker pairs per minibatch.
    pub pairs_per_batch: usize,
    pub min_chunk: usize,
    pub max_chunk: usize,
}

impl Default for PairSamplingConfig {
    fn default() -> Self {
        Self {
            pairs_per_batch: 64,
            min_chunk: 50,
            max_chunk: 300,
        }
    }
}

impl PairSamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_batch < 2 {
            return Err(Error::config("pair sampling: pairs_per_batch must be at least 2"));
        }
        if self.min_chunk == 0 || self.min_chunk > self.max_chunk {
            return Err(Error::config("pair sampling: need 0 < min_chunk <= max_chunk"));
        }
        Ok(())
    }
}

/// Log-uniform chunk length: `floor(exp(U(ln min, ln(max + 1))))`.
pub fn sample_chunk_length<R: Rng + ?Sized>(rng: &mut R, min: usize, max: usize) -> usize {
    let lo = (min as f64).ln();
    let hi = ((max + 1) as f64).ln();
    let v = rng.random_range(lo..hi).exp().floor() as usize;
    v.clamp(min, max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRef {
    pub utt: usize,
    pub speaker: usize,
    pub start: usize,
    pub len: usize,
}

/// `N` same-speaker pairs plus every ordered pair of distinct first chunks.
/// Pairs index into `chunks`; chunk `2i` and `2i + 1` belong to speaker `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub chunks: Vec<ChunkRef>,
    pub same_pairs: Vec<(usize, usize)>,
    pub diff_pairs: Vec<(usize, usize)>,
}

impl PairBatch {
    pub fn n(&self) -> usize {
        self.same_pairs.len()
    }

    pub fn from_chunks(chunks: Vec<ChunkRef>) -> Self {
        let n = chunks.len() / 2;
        let same_pairs = (0..n).map(|i| (2 * i, 2 * i + 1)).collect();
        let mut diff_pairs = Vec::with_capacity(n * n.saturating_sub(1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    diff_pairs.push((2 * i, 2 * j));
                }
            }
        }
        Self {
            chunks,
            same_pairs,
            diff_pairs,
        }
    }
}

fn speaker_utterances(data: &LabeledFeatures) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (u, &s) in data.labels.iter().enumerate() {
        map.entry(s).or_default().push(u);
    }
    map
}

pub fn sample_pair_batch<R: Rng + ?Sized>(
    data: &LabeledFeatures,
    cfg: &PairSamplingConfig,
    rng: &mut R,
) -> Result<PairBatch> {
    cfg.validate()?;
    let n = cfg.pairs_per_batch;
    let by_speaker: Vec<(usize, Vec<usize>)> = speaker_utterances(data).into_iter().collect();
    if by_speaker.len() < n {
        return Err(Error::Sampling(format!(
            "{} speakers available, {n} needed per batch",
            by_speaker.len()
        )));
    }
    let mut chunks = Vec::with_capacity(2 * n);
    for si in rand::seq::index::sample(rng, by_speaker.len(), n) {
        let (speaker, utts) = &by_speaker[si];
        let (ua, ub) = if utts.len() >= 2 {
            let pick = rand::seq::index::sample(rng, utts.len(), 2);
            (utts[pick.index(0)], utts[pick.index(1)])
        } else {
            (utts[0], utts[0])
        };
        for utt in [ua, ub] {
            let frames = data.feats[utt].num_frames();
            let len = sample_chunk_length(rng, cfg.min_chunk, cfg.max_chunk).min(frames);
            let start = rng.random_range(0..=frames - len);
            chunks.push(ChunkRef {
                utt,
                speaker: *speaker,
                start,
                len,
            });
        }
    }
    Ok(PairBatch::from_chunks(chunks))
}

/// Embedding network plus scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct E2EModel {
    pub config: E2EConfig,
    pub net: Network,
    pub scorer: BilinearScorer,
    pub iterations_trained: usize,
}

pub fn build_e2e_net(cfg: &E2EConfig, seed: u64) -> Result<E2EModel> {
    cfg.validate()?;
    let net = Network::new(cfg.input_dim, &cfg.layer_specs(), seed)?;
    Ok(E2EModel {
        config: cfg.clone(),
        net,
        scorer: BilinearScorer::new(cfg.embedding_dim),
        iterations_trained: 0,
    })
}

impl E2EModel {
    pub fn effective_context(&self) -> usize {
        self.net.effective_context()
    }

    /// Embedding of a raw frame block (no kind check).
    pub fn embed_frames(&self, frames: &Array2<f64>) -> Result<Array1<f64>> {
        if frames.nrows() == 0 {
            return Err(Error::usage("cannot embed an empty chunk"));
        }
        Ok(self.net.infer(frames)?.row(0).to_owned())
    }

    pub fn embed(&self, feat: &FeatureMatrix, id: &str) -> Result<Embedding> {
        if feat.kind() != FeatureKind::Fbank || feat.dim() != self.config.input_dim {
            return Err(Error::usage(format!(
                "e2e model expects {}-d fbank features, got {}-d {}",
                self.config.input_dim,
                feat.dim(),
                feat.kind().tag()
            )));
        }
        Ok(Embedding {
            id: id.to_string(),
            vector: self.embed_frames(feat.frames())?,
        })
    }

    /// Pair logit of an enrollment and a test segment.
    pub fn verify_pair(&self, enroll: &FeatureMatrix, test: &FeatureMatrix) -> Result<f64> {
        let x = self.embed(enroll, "enroll")?;
        let y = self.embed(test, "test")?;
        self.scorer.score_pair(&x.vector, &y.vector)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("e2e-net");
        a.push_text("config", toml::to_string(&self.config).expect("config serializes"));
        a.push_text(
            "meta",
            format!("iterations_trained={}\ninput_kind=fbank", self.iterations_trained),
        );
        self.net.to_archive(&mut a, "net/");
        let d = self.scorer.dim();
        a.push_real("scorer.S", vec![d, d], self.scorer.s.iter().copied().collect());
        a.push_real("scorer.b", vec![1], vec![self.scorer.b]);
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        a.expect_kind("e2e-net")?;
        let config: E2EConfig = toml::from_str(a.text("config")?).map_err(|e| Error::format(e.to_string()))?;
        let meta = parse_meta(a.text("meta")?);
        let net = Network::from_archive(a, "net/")?;
        let (shape, s) = a.real("scorer.S")?;
        let d = net.output_dim();
        if shape != [d, d] {
            return Err(Error::format("scorer matrix does not match the embedding width"));
        }
        let s = Array2::from_shape_vec((d, d), s.to_vec()).map_err(|e| Error::format(e.to_string()))?;
        let (_, b) = a.real("scorer.b")?;
        let b = *b.first().ok_or_else(|| Error::format("empty scorer bias"))?;
        Ok(Self {
            config,
            net,
            scorer: BilinearScorer { s, b },
            iterations_trained: meta
                .iter()
                .find(|(k, _)| k == "iterations_trained")
                .and_then(|(_, v)| v.parse().ok())
                .unwrap_or(0),
        })
    }
}

impl Parameterized for E2EModel {
    fn param_names(&self) -> Vec<String> {
        let mut names = self.net.param_names();
        names.push("scorer.S".into());
        names.push("scorer.b".into());
        names
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut s = self.net.param_slices();
        s.push(self.scorer.s.as_slice().expect("standard layout"));
        s.push(std::slice::from_ref(&self.scorer.b));
        s
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.net.param_slices_mut();
        s.push(self.scorer.s.as_slice_mut().expect("standard layout"));
        s.push(std::slice::from_mut(&mut self.scorer.b));
        s
    }

    fn after_update(&mut self) {
        self.net.after_update();
        self.scorer.symmetrize();
    }
}

/// Result of scoring one minibatch of pairs.
#[derive(Debug, Clone)]
pub struct PairStep {
    pub loss: PairLoss,
    pub same_logits: Vec<f64>,
    pub diff_logits: Vec<f64>,
    /// Unnormalized gradient of `loss.loss`.
    pub grads: Grads,
    /// Combined rectifier pattern of every chunk.
    pub pattern: u64,
}

fn pair_logits(
    scorer: &BilinearScorer,
    emb: &[Array1<f64>],
    pairs: &[(usize, usize)],
) -> Vec<f64> {
    let quad: Vec<f64> = emb.iter().map(|e| scorer.quad(e)).collect();
    pairs
        .iter()
        .map(|&(a, b)| emb[a].dot(&emb[b]) - quad[a] - quad[b] + scorer.b)
        .collect()
}

/// Forward pass over all chunks, pair loss, and (optionally) the gradient.
/// Chunks are embedded once, then re-run one at a time for backpropagation
/// so only a single chunk's activations are held per work item.
pub fn pair_step(
    model: &E2EModel,
    chunks: &[Array2<f64>],
    same: &[(usize, usize)],
    diff: &[(usize, usize)],
    k: f64,
    with_grad: bool,
    exec: Exec,
) -> Result<PairStep> {
    let net = &model.net;
    let fwd = exec.map(chunks, |c| -> Result<(Array1<f64>, u64)> {
        if c.nrows() == 0 {
            return Err(Error::usage("cannot embed an empty chunk"));
        }
        let tr = net.forward(c)?;
        Ok((tr.output().row(0).to_owned(), tr.relu_pattern(net)))
    });
    let fwd = fwd.into_iter().collect::<Result<Vec<_>>>()?;
    let mut pattern = 0xcbf2_9ce4_8422_2325u64;
    for (_, p) in &fwd {
        pattern = (pattern ^ p).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let emb: Vec<Array1<f64>> = fwd.into_iter().map(|(e, _)| e).collect();
    let same_logits = pair_logits(&model.scorer, &emb, same);
    let diff_logits = pair_logits(&model.scorer, &emb, diff);
    let loss = pair_loss(&same_logits, &diff_logits, k);
    if !with_grad {
        return Ok(PairStep {
            loss,
            same_logits,
            diff_logits,
            grads: Grads(Vec::new()),
            pattern,
        });
    }

    // dL/dx = y - (S + S')x, dL/dS = -(xx' + yy'), dL/db = 1
    let dim = model.scorer.dim();
    let s_sym = &model.scorer.s + &model.scorer.s.t();
    let mut d_emb: Vec<Array1<f64>> = vec![Array1::zeros(dim); chunks.len()];
    let mut weight = vec![0.0; chunks.len()];
    let mut db = 0.0;
    for (pairs, d) in [(same, &loss.d_same), (diff, &loss.d_diff)] {
        for (&(a, b), &g) in pairs.iter().zip(d.iter()) {
            d_emb[a].scaled_add(g, &emb[b]);
            d_emb[b].scaled_add(g, &emb[a]);
            weight[a] += g;
            weight[b] += g;
            db += g;
        }
    }
    let mut ds = Array2::<f64>::zeros((dim, dim));
    for (c, e) in emb.iter().enumerate() {
        let w = weight[c];
        d_emb[c].scaled_add(-w, &s_sym.dot(e));
        let col = e.view().insert_axis(Axis(1));
        let row = e.view().insert_axis(Axis(0));
        ds.scaled_add(-w, &col.dot(&row));
    }

    let idx: Vec<usize> = (0..chunks.len()).collect();
    let per_chunk = exec.map(&idx, |&c| -> Result<Grads> {
        let tr = net.forward(&chunks[c])?;
        let d_out = d_emb[c].view().insert_axis(Axis(0)).to_owned();
        Ok(net.backward(&tr, &d_out)?.0)
    });
    let per_chunk = per_chunk.into_iter().collect::<Result<Vec<_>>>()?;
    let mut grads = Grads::sum(per_chunk).unwrap_or_else(|| Grads::zeros_like(net));
    grads.0.push(ds.iter().copied().collect());
    grads.0.push(vec![db]);
    Ok(PairStep {
        loss,
        same_logits,
        diff_logits,
        grads,
        pattern,
    })
}

fn batch_frames(data: &LabeledFeatures, batch: &PairBatch) -> Vec<Array2<f64>> {
    batch
        .chunks
        .iter()
        .map(|c| {
            data.feats[c.utt]
                .frames()
                .slice(ndarray::s![c.start..c.start + c.len, ..])
                .to_owned()
        })
        .collect()
}

/// Scores a sampled batch without computing gradients.
pub fn score_batch(model: &E2EModel, data: &LabeledFeatures, batch: &PairBatch, exec: Exec) -> Result<PairStep> {
    let frames = batch_frames(data, batch);
    pair_step(model, &frames, &batch.same_pairs, &batch.diff_pairs, 1.0, false, exec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// `E_same + K E_diff` over the batch.
    pub loss: f64,
    /// Loss divided by the total pair weight `N + K N (N - 1)`.
    pub normalized_loss: f64,
    /// Fraction of pairs on the correct side of logit 0.
    pub same_accuracy: f64,
    pub diff_accuracy: f64,
    pub learning_rate: f64,
    pub grad_norm: f64,
}

pub fn train_e2e(
    data: &LabeledFeatures,
    cfg: &E2EConfig,
    sampling: &PairSamplingConfig,
    loss_cfg: &E2ELossConfig,
    trainer: &TrainerConfig,
    exec: Exec,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<(E2EModel, Vec<IterationLog>)> {
    sampling.validate()?;
    for f in &data.feats {
        if f.kind() != FeatureKind::Fbank || f.dim() != cfg.input_dim {
            return Err(Error::usage("training features must be fbank of the configured width"));
        }
    }
    let speakers = speaker_utterances(data).len();
    if speakers < sampling.pairs_per_batch {
        return Err(Error::Sampling(format!(
            "{speakers} training speakers, {} needed per batch",
            sampling.pairs_per_batch
        )));
    }
    let n = sampling.pairs_per_batch;
    let k = loss_cfg.resolve(n)?;
    let total_weight = n as f64 + k * (n * (n - 1)) as f64;

    let mut model = build_e2e_net(cfg, trainer.seed)?;
    let mut sgd = Sgd::new(trainer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(trainer.seed ^ 0x9a12_b47c);
    let mut logs = Vec::with_capacity(trainer.max_epochs);
    for it in 0..trainer.max_epochs {
        let batch = sample_pair_batch(data, sampling, &mut rng)?;
        let frames = batch_frames(data, &batch);
        let mut step = pair_step(&model, &frames, &batch.same_pairs, &batch.diff_pairs, k, true, exec)?;
        if !step.loss.loss.is_finite() {
            return Err(Error::TrainingDiverged {
                stage: "iteration",
                index: it,
                what: "loss".into(),
            });
        }
        step.grads.scale(1.0 / total_weight);
        let info = sgd.step(&mut model, &step.grads, it).map_err(|e| match e {
            Error::TrainingDiverged { what, .. } => Error::TrainingDiverged {
                stage: "iteration",
                index: it,
                what,
            },
            other => other,
        })?;
        model.iterations_trained = it + 1;
        let frac = |v: &[f64], same: bool| {
            v.iter().filter(|&&l| (l > 0.0) == same).count() as f64 / v.len().max(1) as f64
        };
        let log = IterationLog {
            iteration: it,
            loss: step.loss.loss,
            normalized_loss: step.loss.loss / total_weight,
            same_accuracy: frac(&step.same_logits, true),
            diff_accuracy: frac(&step.diff_logits, false),
            learning_rate: info.learning_rate,
            grad_norm: info.grad_norm,
        };
        log::debug!(
            "e2e iteration {it}: loss {:.4} (normalized {:.4})",
            log.loss,
            log.normalized_loss
        );
        on_iteration(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

/// Pair loss over a fixed set of chunks; the gradient-check objective for
/// the full embedding-plus-scorer graph.
pub struct PairObjective {
    pub chunks: Vec<Array2<f64>>,
    pub same: Vec<(usize, usize)>,
    pub diff: Vec<(usize, usize)>,
    pub k: f64,
}

impl Objective<E2EModel> for PairObjective {
    fn loss(&self, model: &E2EModel) -> Result<(f64, u64)> {
        let s = pair_step(model, &self.chunks, &self.same, &self.diff, self.k, false, Exec::Sequential)?;
        Ok((s.loss.loss, s.pattern))
    }

    fn loss_and_grad(&self, model: &E2EModel) -> Result<(f64, Grads)> {
        let s = pair_step(model, &self.chunks, &self.same, &self.diff, self.k, true, Exec::Sequential)?;
        Ok((s.loss.loss, s.grads))
    }
}
