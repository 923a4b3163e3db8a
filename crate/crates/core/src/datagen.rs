//! Synthetic speaker corpus: a source-filter voice per speaker (glottal
//! pulse train plus noise through parallel formant resonators), with
//! segment-wise formant and pitch wobble standing in for phonetic content.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frontend::{write_wav, AudioClip, Gender};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_secs: f64,
    pub max_secs: f64,
    pub sample_rate: u32,
    /// Scales every per-speaker deviation from the shared base voice; in
    /// (0, 1].
    pub separability: f64,
    /// Standard deviation of the aspiration noise relative to the pulses.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_speakers: 70,
            utterances_per_speaker: 20,
            min_secs: 4.0,
            max_secs: 6.0,
            sample_rate: 8000,
            separability: 0.8,
            noise_level: 0.05,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < 2 || self.utterances_per_speaker == 0 {
            return Err(Error::config("datagen: need at least 2 speakers and 1 utterance each"));
        }
        if !(self.separability > 0.0 && self.separability <= 1.0) {
            return Err(Error::config("datagen: separability must lie in (0, 1]"));
        }
        if !(self.min_secs > 0.0 && self.min_secs <= self.max_secs) {
            return Err(Error::config("datagen: need 0 < min_secs <= max_secs"));
        }
        if self.sample_rate < 4000 || self.noise_level < 0.0 {
            return Err(Error::config("datagen: sample_rate >= 4000 and noise_level >= 0 required"));
        }
        Ok(())
    }
}

const BASE_FORMANTS: [f64; 4] = [500.0, 1400.0, 2300.0, 3200.0];
const BASE_BANDWIDTHS: [f64; 4] = [80.0, 110.0, 150.0, 200.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVoiceModel {
    pub gender: Gender,
    pub formants: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub gains: Vec<f64>,
    /// Mean fundamental frequency in Hz.
    pub f0: f64,
    /// Fractional pitch excursion during an utterance.
    pub f0_spread: f64,
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, speaker: usize, utt: Option<usize>) -> ChaCha8Rng {
    let u = utt.map_or(u64::MAX, |u| u as u64);
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ speaker as u64) ^ u))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z.clamp(-3.0, 3.0)
}

/// Genders alternate with speaker index, so any even count splits evenly.
pub fn speaker_gender(index: usize) -> Gender {
    if index % 2 == 0 {
        Gender::Female
    } else {
        Gender::Male
    }
}

pub fn voice_model(spec: &SyntheticSpec, speaker: usize) -> SpeakerVoiceModel {
    let mut rng = rng_for(spec.seed, speaker, None);
    let sep = spec.separability;
    let gender = speaker_gender(speaker);
    let (tract, pitch) = match gender {
        Gender::Female => (1.12, 210.0),
        Gender::Male => (1.0, 120.0),
    };
    let nyquist = spec.sample_rate as f64 / 2.0;
    let formants = BASE_FORMANTS
        .iter()
        .map(|f| (f * tract * (sep * 0.22 * normal(&mut rng)).exp()).clamp(150.0, 0.92 * nyquist))
        .collect();
    let bandwidths = BASE_BANDWIDTHS
        .iter()
        .map(|b| b * (sep * 0.3 * normal(&mut rng)).exp())
        .collect();
    let gains = (0..BASE_FORMANTS.len())
        .map(|k| (-0.35 * k as f64 + sep * 0.5 * normal(&mut rng)).exp())
        .collect();
    let f0 = pitch * (sep * 0.15 * normal(&mut rng)).exp();
    let f0_spread = 0.08 * (sep * 0.3 * normal(&mut rng)).exp();
    SpeakerVoiceModel {
        gender,
        formants,
        bandwidths,
        gains,
        f0,
        f0_spread,
    }
}

struct Resonator {
    y1: f64,
    y2: f64,
}

/// Synthesizes one utterance.
pub fn synthesize(spec: &SyntheticSpec, voice: &SpeakerVoiceModel, speaker: usize, utt: usize) -> Vec<f64> {
    let mut rng = rng_for(spec.seed, speaker, Some(utt));
    let sr = spec.sample_rate as f64;
    let secs = rng.random_range(spec.min_secs..=spec.max_secs);
    let n = (secs * sr).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut res: Vec<Resonator> = voice.formants.iter().map(|_| Resonator { y1: 0.0, y2: 0.0 }).collect();
    let mut phase = 0.0f64;
    let mut t = 0;
    while t < n {
        // one content segment: fixed formant and pitch perturbation
        let seg = ((rng.random_range(0.08..0.2) * sr) as usize).min(n - t);
        let voiced = rng.random_bool(0.85);
        let f0 = voice.f0 * (voice.f0_spread * normal(&mut rng)).exp();
        let coeffs: Vec<(f64, f64, f64)> = voice
            .formants
            .iter()
            .zip(&voice.bandwidths)
            .zip(&voice.gains)
            .map(|((&f, &bw), &g)| {
                let f = (f * (0.06 * normal(&mut rng)).exp()).min(0.95 * sr / 2.0);
                let r = (-std::f64::consts::PI * bw / sr).exp();
                let theta = 2.0 * std::f64::consts::PI * f / sr;
                (2.0 * r * theta.cos(), -r * r, g * (1.0 - r))
            })
            .collect();
        for _ in 0..seg {
            phase += f0 / sr;
            let pulse = if voiced && phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                phase = phase.fract();
                0.0
            };
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_level;
            let x = pulse + noise;
            let mut y = 0.0;
            for (r, &(a1, a2, g)) in res.iter_mut().zip(&coeffs) {
                let v = x + a1 * r.y1 + a2 * r.y2;
                r.y2 = r.y1;
                r.y1 = v;
                y += g * v;
            }
            out.push(y);
        }
        t += seg;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    out
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:04}")
}

pub fn utterance_id(speaker: usize, utt: usize) -> String {
    format!("spk{speaker:04}-utt{utt:03}")
}

/// Synthesizes the corpus in memory.
pub fn generate_clips(spec: &SyntheticSpec, exec: Exec) -> Result<Vec<AudioClip>> {
    spec.validate()?;
    let voices: Vec<SpeakerVoiceModel> = (0..spec.num_speakers).map(|s| voice_model(spec, s)).collect();
    let per = spec.utterances_per_speaker;
    Ok(exec.map_range(spec.num_speakers * per, |i| {
        let (s, u) = (i / per, i % per);
        AudioClip {
            samples: synthesize(spec, &voices[s], s, u),
            sample_rate: spec.sample_rate,
            id: utterance_id(s, u),
            speaker_id: speaker_id(s),
            gender: voices[s].gender,
        }
    }))
}

/// Writes `wav/<speaker>/<utt>.wav` under `out_dir` plus `manifest.tsv`.
pub fn generate_corpus(spec: &SyntheticSpec, out_dir: &Path, exec: Exec) -> Result<Manifest> {
    let clips = generate_clips(spec, exec)?;
    let written = exec.map(&clips, |c| -> Result<ManifestEntry> {
        let rel = format!("wav/{}/{}.wav", c.speaker_id, c.id);
        write_wav(&out_dir.join(&rel), &c.samples, c.sample_rate)?;
        Ok(ManifestEntry {
            utt_id: c.id.clone(),
            speaker_id: c.speaker_id.clone(),
            gender: c.gender,
            path: rel,
            duration_secs: c.duration_secs(),
        })
    });
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries: written.into_iter().collect::<Result<_>>()?,
    };
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Speaker-disjoint split: speakers are shuffled with `seed`, the first
/// `train` go to training and the next `eval` to evaluation.
pub fn split_train_eval(manifest: &Manifest, train: usize, eval: usize, seed: u64) -> Result<(Manifest, Manifest)> {
    let mut speakers = manifest.speakers();
    if train + eval > speakers.len() {
        return Err(Error::usage(format!(
            "{train} + {eval} speakers requested, corpus has {}",
            speakers.len()
        )));
    }
    speakers.sort();
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5711_7000)));
    let (a, rest) = speakers.split_at(train);
    Ok((manifest.subset(a), manifest.subset(&rest[..eval])))
}
