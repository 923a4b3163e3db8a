//! Acoustic front-end: WAV input, log-mel filterbanks, MFCC + log energy,
//! delta features, frame splicing and per-utterance CMVN.

mod spectral;
mod transform;
mod wav;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use spectral::{compute_fbank, compute_mfcc_e, mel_center_frequencies, num_frames};
pub use transform::{add_deltas, cmvn, splice};
pub use wav::{read_wav, write_wav};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "f",
            Gender::Male => "m",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            other => Err(Error::format(format!("unknown gender tag `{other}`"))),
        }
    }
}

/// A mono recording with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub id: String,
    pub speaker_id: String,
    pub gender: Gender,
}

impl AudioClip {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Layout of the columns of a [`FeatureMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Log mel filterbank energies.
    Fbank,
    /// Cepstra C1..Cn followed by log energy.
    MfccE,
    /// [`FeatureKind::MfccE`] with first- and second-order deltas appended.
    MfccEDeltas,
    /// Frames concatenated with `context` neighbours on each side.
    Spliced { context: usize },
}

impl FeatureKind {
    pub fn tag(&self) -> String {
        match self {
            FeatureKind::Fbank => "fbank".into(),
            FeatureKind::MfccE => "mfcc_e".into(),
            FeatureKind::MfccEDeltas => "mfcc_e_dd".into(),
            FeatureKind::Spliced { context } => format!("spliced:{context}"),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "fbank" => Ok(FeatureKind::Fbank),
            "mfcc_e" => Ok(FeatureKind::MfccE),
            "mfcc_e_dd" => Ok(FeatureKind::MfccEDeltas),
            t => match t.strip_prefix("spliced:").map(str::parse) {
                Some(Ok(context)) => Ok(FeatureKind::Spliced { context }),
                _ => Err(Error::format(format!("unknown feature kind `{tag}`"))),
            },
        }
    }

    fn accepts_dim(&self, dim: usize) -> bool {
        match self {
            FeatureKind::Fbank => dim >= 1,
            FeatureKind::MfccE => dim >= 2,
            FeatureKind::MfccEDeltas => dim >= 6 && dim % 3 == 0,
            FeatureKind::Spliced { context } => dim >= 1 && dim % (2 * context + 1) == 0,
        }
    }
}

/// Time-major feature frames (`T x D`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: Array2<f64>,
    frame_period: f64,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(frames: Array2<f64>, frame_period: f64, kind: FeatureKind) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(Error::usage("feature matrix needs at least one frame"));
        }
        if !kind.accepts_dim(frames.ncols()) {
            return Err(Error::usage(format!(
                "dimension {} does not fit feature kind {}",
                frames.ncols(),
                kind.tag()
            )));
        }
        if !(frame_period.is_finite() && frame_period >= 0.0) {
            return Err(Error::usage("frame period must be finite and non-negative"));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("feature matrix contains non-finite entries"));
        }
        Ok(Self {
            frames,
            frame_period,
            kind,
        })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_period
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    /// Rows `start..start+len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.num_frames() {
            return Err(Error::usage(format!(
                "frame range {start}..{} out of bounds for {} frames",
                start + len,
                self.num_frames()
            )));
        }
        Ok(Self {
            frames: self.frames.slice(ndarray::s![start..start + len, ..]).to_owned(),
            frame_period: self.frame_period,
            kind: self.kind,
        })
    }

    /// Stacks matrices of the same kind along time.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("cannot concatenate zero feature matrices"))?;
        if parts
            .iter()
            .any(|p| p.kind != first.kind || p.dim() != first.dim())
        {
            return Err(Error::usage("concatenated features differ in kind or dimension"));
        }
        let views: Vec<_> = parts.iter().map(|p| p.frames.view()).collect();
        let frames = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::usage(e.to_string()))?;
        Ok(Self {
            frames,
            frame_period: first.frame_period,
            kind: first.kind,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmvnMode {
    PerUtterance,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub num_mel_bins: usize,
    pub num_cepstra: usize,
    pub pre_emphasis: f64,
    /// Lower edge of the mel filterbank in Hz.
    pub low_freq: f64,
    /// Upper edge in Hz; non-positive values are taken relative to Nyquist.
    pub high_freq: f64,
    /// Uniform dither amplitude, in units of the [-1, 1] sample scale. 0 disables.
    pub dither: f64,
    pub dither_seed: u64,
    pub cmvn_mode: CmvnMode,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            num_mel_bins: 40,
            num_cepstra: 19,
            pre_emphasis: 0.97,
            low_freq: 20.0,
            high_freq: 0.0,
            dither: 0.0,
            dither_seed: 0,
            cmvn_mode: CmvnMode::PerUtterance,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_shift_ms > 0.0 && self.frame_length_ms >= self.frame_shift_ms) {
            return Err(Error::config(
                "frontend: need frame_length_ms >= frame_shift_ms > 0",
            ));
        }
        if self.num_mel_bins < self.num_cepstra || self.num_cepstra == 0 {
            return Err(Error::config(
                "frontend: need num_mel_bins >= num_cepstra >= 1",
            ));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::config("frontend: pre_emphasis must lie in [0, 1)"));
        }
        if self.dither < 0.0 {
            return Err(Error::config("frontend: dither must be non-negative"));
        }
        Ok(())
    }

    pub fn frame_length_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn frame_shift_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn frame_period_secs(&self) -> f64 {
        self.frame_shift_ms / 1000.0
    }

    /// Fbank followed by the configured normalization; the input both models consume.
    pub fn model_features(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let fbank = compute_fbank(clip, self)?;
        match self.cmvn_mode {
            CmvnMode::PerUtterance if fbank.num_frames() >= 2 => cmvn(&fbank),
            _ => Ok(fbank),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_tags_round_trip() {
        for kind in [
            FeatureKind::Fbank,
            FeatureKind::MfccE,
            FeatureKind::MfccEDeltas,
            FeatureKind::Spliced { context: 4 },
        ] {
            assert_eq!(FeatureKind::from_tag(&kind.tag()).unwrap(), kind);
        }
        assert!(FeatureKind::from_tag("spliced:x").is_err());
    }

    #[test]
    fn rejects_non_finite_and_bad_dims() {
        let bad = Array2::from_elem((2, 3), f64::NAN);
        assert!(FeatureMatrix::new(bad, 0.01, FeatureKind::Fbank).is_err());
        let wrong = Array2::zeros((2, 10));
        assert!(FeatureMatrix::new(wrong, 0.01, FeatureKind::Spliced { context: 1 }).is_err());
        assert!(FeatureMatrix::new(Array2::zeros((0, 4)), 0.01, FeatureKind::Fbank).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FrontendConfig::default().validate().is_ok());
        let cfg = FrontendConfig {
            frame_length_ms: 5.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = FrontendConfig {
            num_cepstra: 41,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
