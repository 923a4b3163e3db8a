//! Experiment driver: corpus, features, both systems, back-ends, trials,
//! scores and the EER report. Each stage is a standalone function so the
//! CLI can run them one at a time; [`run_pipeline`] chains them.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{fit_backend, Backend, BackendConfig};
use crate::container::{read_features, write_atomic, write_features, Archive, VectorSet};
use crate::corpus::{LabeledFeatures, Manifest};
use crate::datagen::{generate_corpus, split_train_eval, SyntheticSpec};
use crate::dvector::{build_dvector_net, train_dvector, ConvStage, FrameClassification, DVectorConfig, DVectorModel, EpochLog, TdStage};
use crate::e2e::{build_e2e_net, sample_chunk_length, train_e2e, ChunkRef, E2EConfig, PairBatch, PairObjective, E2ELossConfig, E2EModel, IterationLog, NinBlockSpec, PairSamplingConfig, TdNinStage};
use crate::error::{Error, Result};
use crate::eval::{
    build_conditions, compute_eer, emit_report, write_scores, write_segments, write_table, write_trials, ConditionSpec,
    Eer, Framing, ReportCell, ScoreRecord, ScoreSet, Segment, TrialList, UttInfo,
};
use crate::exec::Exec;
use crate::frontend::{read_wav, FeatureMatrix, FrontendConfig};
use crate::nn::{grad_check, GradCheckReport, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_speakers: usize,
    pub eval_speakers: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_speakers: 50,
            eval_speakers: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub dvector: TrainerConfig,
    pub e2e: TrainerConfig,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            dvector: TrainerConfig {
                learning_rate: 0.02,
                lr_decay: 0.5,
                decay_interval: 4,
                momentum: 0.9,
                max_epochs: 10,
                batch_size: 16,
                clip_norm: 5.0,
                seed: 0,
            },
            e2e: TrainerConfig {
                learning_rate: 0.02,
                lr_decay: 0.5,
                decay_interval: 1000,
                momentum: 0.9,
                max_epochs: 3000,
                batch_size: 1,
                clip_norm: 5.0,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub conditions: Vec<ConditionSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            conditions: vec![
                ConditionSpec {
                    enrollments_per_speaker: 10,
                    ..ConditionSpec::new(4.0, 4.0)
                },
                ConditionSpec::new(40.0, 4.0),
            ],
        }
    }
}

/// Everything one experiment needs. The defaults describe the desk-scale
/// run: 70 synthetic speakers and networks narrow enough to train on a
/// laptop core in minutes. Component seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub datagen: SyntheticSpec,
    pub split: SplitConfig,
    pub frontend: FrontendConfig,
    pub dvector: DVectorConfig,
    pub e2e: E2EConfig,
    pub e2e_pairs: PairSamplingConfig,
    pub e2e_loss: E2ELossConfig,
    pub trainer: TrainerSection,
    pub backends: BackendConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let nin = |offsets: Vec<i32>| TdNinStage {
            offsets,
            block: NinBlockSpec { d_hidden: 96, d_out: 64 },
        };
        Self {
            seed: 1,
            datagen: SyntheticSpec::default(),
            split: SplitConfig::default(),
            frontend: FrontendConfig::default(),
            dvector: DVectorConfig {
                conv: vec![
                    ConvStage { kernel: 2, channels: 128 },
                    ConvStage { kernel: 1, channels: 128 },
                ],
                bottleneck_dim: 64,
                td: vec![
                    TdStage { offsets: vec![-3, 0, 3], dim: 128 },
                    TdStage { offsets: vec![-2, 0, 2], dim: 128 },
                ],
                feature_dim: 128,
                num_speakers: 50,
                ..DVectorConfig::default()
            },
            e2e: E2EConfig {
                lift_dim: 64,
                stages: vec![nin(vec![-3, 0, 3]), nin(vec![-2, 0, 2]), nin(vec![-2, 0, 2])],
                pool_dim: 64,
                post_pool: NinBlockSpec { d_hidden: 96, d_out: 64 },
                embedding_dim: 64,
                ..E2EConfig::default()
            },
            e2e_pairs: PairSamplingConfig {
                pairs_per_batch: 16,
                ..PairSamplingConfig::default()
            },
            e2e_loss: E2ELossConfig::default(),
            trainer: TrainerSection::default(),
            backends: BackendConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RunConfig {
    /// Parses a configuration file. Tables are merged key by key onto the
    /// defaults, so a partial `[dvector]` section keeps the desk-scale
    /// values for the keys it omits; arrays are replaced whole.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let mut base = toml::Table::try_from(Self::default()).expect("config serializes");
        merge_tables(&mut base, user);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Overwrites component seeds with values derived from `seed`.
    pub fn resolve_seeds(&mut self) {
        self.datagen.seed = self.seed;
        self.trainer.dvector.seed = derive_seed(self.seed, 1);
        self.trainer.e2e.seed = derive_seed(self.seed, 2);
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    pub fn control_seed(&self) -> u64 {
        derive_seed(self.seed, 4)
    }

    pub fn validate(&self) -> Result<()> {
        self.datagen.validate()?;
        self.frontend.validate()?;
        self.dvector.validate()?;
        self.e2e.validate()?;
        self.e2e_pairs.validate()?;
        self.e2e_loss.resolve(self.e2e_pairs.pairs_per_batch)?;
        self.trainer.dvector.validate()?;
        self.trainer.e2e.validate()?;
        if self.split.train_speakers + self.split.eval_speakers > self.datagen.num_speakers {
            return Err(Error::config("split: more speakers requested than generated"));
        }
        if self.split.train_speakers > self.dvector.num_speakers {
            return Err(Error::config("dvector: num_speakers is below the number of training speakers"));
        }
        if self.split.train_speakers < self.e2e_pairs.pairs_per_batch {
            return Err(Error::config("e2e_pairs: pairs_per_batch exceeds the number of training speakers"));
        }
        if self.dvector.input_dim != self.frontend.num_mel_bins || self.e2e.input_dim != self.frontend.num_mel_bins {
            return Err(Error::config("model input_dim must equal frontend num_mel_bins"));
        }
        if self.eval.conditions.is_empty() {
            return Err(Error::config("eval: at least one condition is required"));
        }
        Ok(())
    }

    pub fn framing(&self) -> Framing {
        framing(&self.frontend, self.datagen.sample_rate)
    }
}

pub fn framing(frontend: &FrontendConfig, sample_rate: u32) -> Framing {
    Framing {
        sample_rate,
        frame_len: frontend.frame_length_samples(sample_rate),
        frame_shift: frontend.frame_shift_samples(sample_rate),
    }
}

// ---- features ----

/// Model features for every manifest entry, in manifest order.
pub fn featurize(manifest: &Manifest, frontend: &FrontendConfig, exec: Exec) -> Result<Vec<FeatureMatrix>> {
    frontend.validate()?;
    exec.map(&manifest.entries, |e| {
        let clip = read_wav(&manifest.audio_path(e))?;
        frontend.model_features(&clip)
    })
    .into_iter()
    .collect()
}

pub fn feature_path(dir: &Path, utt_id: &str) -> PathBuf {
    dir.join(format!("{utt_id}.feat"))
}

pub fn write_feature_dir(dir: &Path, manifest: &Manifest, feats: &[FeatureMatrix]) -> Result<()> {
    for (e, f) in manifest.entries.iter().zip(feats) {
        write_features(&feature_path(dir, &e.utt_id), f)?;
    }
    Ok(())
}

pub fn read_feature_dir(dir: &Path, manifest: &Manifest) -> Result<Vec<FeatureMatrix>> {
    manifest
        .entries
        .iter()
        .map(|e| read_features(&feature_path(dir, &e.utt_id)))
        .collect()
}

pub fn labeled(manifest: &Manifest, feats: Vec<FeatureMatrix>) -> Result<LabeledFeatures> {
    LabeledFeatures::new(feats, manifest.speaker_labels())
}

pub fn utt_infos(manifest: &Manifest, feats: &[FeatureMatrix]) -> Vec<UttInfo> {
    manifest
        .entries
        .iter()
        .zip(feats)
        .map(|(e, f)| UttInfo {
            id: e.utt_id.clone(),
            speaker: e.speaker_id.clone(),
            gender: e.gender,
            num_frames: f.num_frames(),
        })
        .collect()
}

/// Concatenated features of a segment's parts.
pub fn segment_features(seg: &Segment, feats: &HashMap<&str, &FeatureMatrix>) -> Result<FeatureMatrix> {
    let parts = seg
        .parts
        .iter()
        .map(|p| {
            feats
                .get(p.utt_id.as_str())
                .ok_or_else(|| Error::usage(format!("no features for utterance {}", p.utt_id)))?
                .slice_frames(p.start, p.frames)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::concat(&parts.iter().collect::<Vec<_>>())
}

/// Segment features for every enrollment entry and test segment of a list.
pub fn trial_list_features(
    list: &TrialList,
    manifest: &Manifest,
    feats: &[FeatureMatrix],
) -> Result<(Vec<String>, Vec<FeatureMatrix>)> {
    let lookup: HashMap<&str, &FeatureMatrix> =
        manifest.entries.iter().map(|e| e.utt_id.as_str()).zip(feats).collect();
    let segs: Vec<&Segment> = list.enrollments.iter().chain(&list.tests).collect();
    let ids = segs.iter().map(|s| s.id.clone()).collect();
    let mats = segs
        .iter()
        .map(|s| segment_features(s, &lookup))
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, mats))
}

// ---- training logs ----

pub fn write_dvector_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let rows: Vec<Vec<String>> = logs
        .iter()
        .map(|l| {
            vec![
                l.epoch.to_string(),
                format!("{:?}", l.loss),
                format!("{:?}", l.frame_accuracy),
                format!("{:?}", l.learning_rate),
            ]
        })
        .collect();
    write_table(
        path,
        "train-log",
        &[("system", "dvector".into())],
        &["epoch", "loss", "frame_accuracy", "learning_rate"],
        &rows,
    )
}

pub fn write_e2e_log(path: &Path, logs: &[IterationLog]) -> Result<()> {
    let rows: Vec<Vec<String>> = logs
        .iter()
        .map(|l| {
            vec![
                l.iteration.to_string(),
                format!("{:?}", l.loss),
                format!("{:?}", l.normalized_loss),
                format!("{:?}", l.same_accuracy),
                format!("{:?}", l.diff_accuracy),
                format!("{:?}", l.learning_rate),
                format!("{:?}", l.grad_norm),
            ]
        })
        .collect();
    write_table(
        path,
        "train-log",
        &[("system", "e2e".into())],
        &[
            "iteration",
            "loss",
            "normalized_loss",
            "same_accuracy",
            "diff_accuracy",
            "learning_rate",
            "grad_norm",
        ],
        &rows,
    )
}

// ---- extraction and scoring ----

pub fn extract_dvectors(model: &DVectorModel, ids: &[String], feats: &[FeatureMatrix], exec: Exec) -> Result<VectorSet> {
    let idx: Vec<usize> = (0..ids.len()).collect();
    let rows = exec
        .map(&idx, |&i| model.dvector(&feats[i], &ids[i]).map(|d| d.vector))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(VectorSet {
        kind: "dvector".into(),
        ids: ids.to_vec(),
        vectors: stack(&rows, model.config.feature_dim),
    })
}

pub fn extract_embeddings(model: &E2EModel, ids: &[String], feats: &[FeatureMatrix], exec: Exec) -> Result<VectorSet> {
    let idx: Vec<usize> = (0..ids.len()).collect();
    let rows = exec
        .map(&idx, |&i| model.embed(&feats[i], &ids[i]).map(|e| e.vector))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(VectorSet {
        kind: "e2e-embedding".into(),
        ids: ids.to_vec(),
        vectors: stack(&rows, model.config.embedding_dim),
    })
}

fn stack(rows: &[ndarray::Array1<f64>], dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut r, v) in out.rows_mut().into_iter().zip(rows) {
        r.assign(v);
    }
    out
}

/// Labels for utterance-level vectors, looked up by id in a manifest.
pub fn vector_labels(set: &VectorSet, manifest: &Manifest) -> Result<Vec<usize>> {
    let speakers = manifest.speakers();
    let by_utt: HashMap<&str, &str> = manifest
        .entries
        .iter()
        .map(|e| (e.utt_id.as_str(), e.speaker_id.as_str()))
        .collect();
    set.ids
        .iter()
        .map(|id| {
            let spk = by_utt
                .get(id.as_str())
                .ok_or_else(|| Error::usage(format!("vector {id} is not in the manifest")))?;
            Ok(speakers.iter().position(|s| s == spk).expect("listed speaker"))
        })
        .collect()
}

/// How trials are scored.
pub enum Scorer<'a> {
    Backend(&'a Backend),
    Bilinear(&'a E2EModel),
    /// Uniform random scores; the chance-level control.
    Random(u64),
}

/// Scores every trial of `list` from per-segment vectors.
pub fn score_trials(
    list: &TrialList,
    vectors: Option<&VectorSet>,
    scorer: &Scorer,
    system: &str,
    exec: Exec,
) -> Result<ScoreSet> {
    let records = match scorer {
        Scorer::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            list.trials
                .iter()
                .map(|t| ScoreRecord {
                    enroll_id: t.enroll_id.clone(),
                    test_id: t.test_id.clone(),
                    score: rng.random::<f64>(),
                    target: t.target,
                })
                .collect()
        }
        Scorer::Backend(_) | Scorer::Bilinear(_) => {
            let set = vectors.ok_or_else(|| Error::usage("this scorer needs segment vectors"))?;
            let rows: Vec<usize> = (0..set.ids.len()).collect();
            let prepared = match scorer {
                Scorer::Backend(b) => exec
                    .map(&rows, |&i| b.prepare(&set.vectors.row(i).to_owned()))
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?,
                _ => rows.iter().map(|&i| set.vectors.row(i).to_owned()).collect(),
            };
            let index: HashMap<&str, usize> = set.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            let find = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::usage(format!("no vector for segment {id}")))
            };
            exec.map(&list.trials, |t| {
                let a = &prepared[find(&t.enroll_id)?];
                let b = &prepared[find(&t.test_id)?];
                let score = match scorer {
                    Scorer::Backend(be) => be.score_prepared(a, b)?,
                    Scorer::Bilinear(m) => m.scorer.score_pair(a, b)?,
                    Scorer::Random(_) => unreachable!(),
                };
                Ok(ScoreRecord {
                    enroll_id: t.enroll_id.clone(),
                    test_id: t.test_id.clone(),
                    score,
                    target: t.target,
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?
        }
    };
    let set = ScoreSet {
        system: system.to_string(),
        condition: list.condition.name.clone(),
        records,
    };
    set.validate()?;
    Ok(set)
}

// ---- full run ----

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub cells: Vec<ReportCell>,
    /// Random-score control EER per condition.
    pub controls: Vec<(String, Eer)>,
    pub table: String,
    pub tsv: String,
    pub dvector_log: Vec<EpochLog>,
    pub e2e_log: Vec<IterationLog>,
    pub trial_lists: Vec<TrialList>,
}

/// File-system-safe tag for a condition name, e.g. `C(4-4)` -> `c4-4`.
pub fn condition_tag(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric() || *c == '-' || *c == '.')
        .collect::<String>()
        .to_ascii_lowercase()
}

/// Runs every stage under `out_dir`: `corpus/`, `features/`, `models/`,
/// `logs/`, `vectors/`, `trials/`, `scores/`, plus `config.toml` (the
/// resolved configuration), `report.txt` and `report.tsv`.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path, exec: Exec) -> Result<PipelineOutcome> {
    let mut cfg = cfg.clone();
    cfg.resolve_seeds();
    cfg.validate()?;
    write_atomic(&out_dir.join("config.toml"), cfg.to_toml().as_bytes())?;

    log::info!("generating {} speakers", cfg.datagen.num_speakers);
    let corpus_dir = out_dir.join("corpus");
    let manifest = generate_corpus(&cfg.datagen, &corpus_dir, exec)?;
    let (train, eval) = split_train_eval(
        &manifest,
        cfg.split.train_speakers,
        cfg.split.eval_speakers,
        cfg.split_seed(),
    )?;
    train.write(&corpus_dir.join("train.tsv"))?;
    eval.write(&corpus_dir.join("eval.tsv"))?;

    log::info!("featurizing {} utterances", train.entries.len() + eval.entries.len());
    let feat_dir = out_dir.join("features");
    let train_feats = featurize(&train, &cfg.frontend, exec)?;
    let eval_feats = featurize(&eval, &cfg.frontend, exec)?;
    write_feature_dir(&feat_dir, &train, &train_feats)?;
    write_feature_dir(&feat_dir, &eval, &eval_feats)?;
    let train_data = labeled(&train, train_feats)?;

    log::info!("training d-vector network");
    let (dvec, dvector_log) = train_dvector(&train_data, &cfg.dvector, &cfg.trainer.dvector, exec, |_| {})?;
    dvec.to_archive().write(&out_dir.join("models/dvector.dsva"))?;
    write_dvector_log(&out_dir.join("logs/dvector.tsv"), &dvector_log)?;

    log::info!("training end-to-end network");
    let (e2e, e2e_log) = train_e2e(
        &train_data,
        &cfg.e2e,
        &cfg.e2e_pairs,
        &cfg.e2e_loss,
        &cfg.trainer.e2e,
        exec,
        |_| {},
    )?;
    e2e.to_archive().write(&out_dir.join("models/e2e.dsva"))?;
    write_e2e_log(&out_dir.join("logs/e2e.tsv"), &e2e_log)?;

    log::info!("fitting back-ends");
    let train_ids: Vec<String> = train.entries.iter().map(|e| e.utt_id.clone()).collect();
    let train_vecs = extract_dvectors(&dvec, &train_ids, &train_data.feats, exec)?;
    train_vecs.write(&out_dir.join("vectors/train-dvector.vec"))?;
    let mut backends = Vec::new();
    for kind in ["cosine", "lda", "plda"] {
        let b = fit_backend(kind, &train_vecs.vectors, &train_data.labels, &cfg.backends)?;
        b.to_archive().write(&out_dir.join(format!("models/backend-{kind}.dsva")))?;
        backends.push((kind, b));
    }

    let framing = cfg.framing();
    let infos = utt_infos(&eval, &eval_feats);
    let mut cells = Vec::new();
    let mut controls = Vec::new();
    let mut trial_lists = Vec::new();
    for cond in &cfg.eval.conditions {
        let tag = condition_tag(&cond.name);
        log::info!("scoring {}", cond.name);
        let list = build_conditions(&infos, cond, framing)?;
        write_trials(&out_dir.join(format!("trials/{tag}.trials.tsv")), &list)?;
        write_segments(&out_dir.join(format!("trials/{tag}.segments.tsv")), &list)?;
        let (ids, seg_feats) = trial_list_features(&list, &eval, &eval_feats)?;
        let dv = extract_dvectors(&dvec, &ids, &seg_feats, exec)?;
        dv.write(&out_dir.join(format!("vectors/{tag}-dvector.vec")))?;
        let emb = extract_embeddings(&e2e, &ids, &seg_feats, exec)?;
        emb.write(&out_dir.join(format!("vectors/{tag}-e2e.vec")))?;

        let score = |vectors: Option<&VectorSet>, scorer: Scorer, system: &str, scoring: &str| -> Result<Eer> {
            let set = score_trials(&list, vectors, &scorer, &format!("{system}/{scoring}"), exec)?;
            write_scores(&out_dir.join(format!("scores/{tag}/{system}-{scoring}.tsv")), &set)?;
            compute_eer(&set.labeled_scores())
        };
        for (kind, b) in &backends {
            let eer = score(Some(&dv), Scorer::Backend(b), "dvector", kind)?;
            cells.push(ReportCell {
                system: "d-vector".into(),
                scoring: backend_label(kind).into(),
                condition: cond.name.clone(),
                eer,
            });
        }
        let eer = score(Some(&emb), Scorer::Bilinear(&e2e), "e2e", "bilinear")?;
        cells.push(ReportCell {
            system: "end-to-end".into(),
            scoring: "Bilinear".into(),
            condition: cond.name.clone(),
            eer,
        });
        let control = score(None, Scorer::Random(cfg.control_seed()), "control", "random")?;
        controls.push((cond.name.clone(), control));
        trial_lists.push(list);
    }

    let (table, tsv) = emit_report(&cells);
    write_atomic(&out_dir.join("report.txt"), table.as_bytes())?;
    write_atomic(&out_dir.join("report.tsv"), tsv.as_bytes())?;
    Ok(PipelineOutcome {
        cells,
        controls,
        table,
        tsv,
        dvector_log,
        e2e_log,
        trial_lists,
    })
}

pub fn backend_label(kind: &str) -> &str {
    match kind {
        "cosine" => "Cosine",
        "lda" => "LDA",
        "plda" => "PLDA",
        other => other,
    }
}

/// Reads a model archive and tells the two systems apart by kind.
pub enum AnyModel {
    DVector(DVectorModel),
    E2E(E2EModel),
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let a = Archive::read(path)?;
    match a.kind.as_str() {
        "dvector-net" => Ok(AnyModel::DVector(DVectorModel::from_archive(&a)?)),
        "e2e-net" => Ok(AnyModel::E2E(E2EModel::from_archive(&a)?)),
        other => Err(Error::format(format!(
            "{}: expected a d-vector or end-to-end model, found `{other}`",
            path.display()
        ))),
    }
}

/// Finite-difference check of both architectures at reduced widths (8-d
/// input, hidden layers of at most 32 units, 16-d embedding): the full
/// end-to-end graph under the pair loss, and the d-vector classifier under
/// frame cross-entropy.
pub fn reduced_gradcheck(step: f64, seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = 8;
    let block = NinBlockSpec { d_hidden: 32, d_out: 16 };
    let cfg = E2EConfig {
        input_dim: input,
        lift_dim: 16,
        stages: [vec![-3, 0, 3], vec![-2, 0, 2], vec![-2, 0, 2]]
            .into_iter()
            .map(|offsets| TdNinStage {
                offsets,
                block: block.clone(),
            })
            .collect(),
        pool_dim: 16,
        post_pool: block,
        embedding_dim: 16,
        ..E2EConfig::default()
    };
    let mut e2e = build_e2e_net(&cfg, seed ^ 0x11)?;
    let n = 3;
    let chunks: Vec<_> = (0..2 * n)
        .map(|_| {
            let t = sample_chunk_length(&mut rng, 20, 40);
            Array2::from_shape_fn((t, input), |_| rng.random_range(-1.0..1.0))
        })
        .collect();
    let batch = PairBatch::from_chunks(
        (0..2 * n)
            .map(|i| ChunkRef {
                utt: i,
                speaker: i / 2,
                start: 0,
                len: chunks[i].nrows(),
            })
            .collect(),
    );
    let obj = PairObjective {
        chunks,
        same: batch.same_pairs,
        diff: batch.diff_pairs,
        k: 1.0 / (n - 1) as f64,
    };
    let e2e_report = grad_check(&mut e2e, &obj, step)?;

    let dcfg = DVectorConfig {
        input_dim: input,
        conv: vec![
            ConvStage { kernel: 2, channels: 32 },
            ConvStage { kernel: 1, channels: 32 },
        ],
        bottleneck_dim: 16,
        td: vec![
            TdStage { offsets: vec![-3, 0, 3], dim: 32 },
            TdStage { offsets: vec![-2, 0, 2], dim: 32 },
        ],
        feature_dim: 16,
        num_speakers: 4,
        ..DVectorConfig::default()
    };
    let mut dvec = build_dvector_net(&dcfg, seed ^ 0x5)?;
    let obj = FrameClassification {
        input: Array2::from_shape_fn((30, input), |_| rng.random_range(-1.0..1.0)),
        label: 2,
    };
    let dvec_report = grad_check(&mut dvec.net, &obj, step)?;
    Ok(vec![("end-to-end", e2e_report), ("d-vector", dvec_report)])
}
