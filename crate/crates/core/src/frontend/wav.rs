use std::path::Path;

use super::{AudioClip, Gender};
use crate::error::{Error, Result};

const I16_SCALE: f64 = 32768.0;

/// Reads a mono 16-bit PCM WAV file. Labels are left for the caller to fill
/// in; the id defaults to the file stem.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?} samples, only 16-bit PCM is supported",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate == 0 {
        return Err(Error::format(format!("{}: zero sample rate", path.display())));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / I16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        id,
        speaker_id: String::new(),
        gender: Gender::Female,
    })
}

/// Writes mono 16-bit PCM. Samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(other.to_string()),
    };
    let mut buf = std::io::Cursor::new(Vec::with_capacity(44 + 2 * samples.len()));
    {
        let mut writer = hound::WavWriter::new(&mut buf, spec).map_err(to_err)?;
        for &s in samples {
            let v = (s.clamp(-1.0, 1.0) * I16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(to_err)?;
        }
        writer.finalize().map_err(to_err)?;
    }
    crate::container::write_atomic(path, &buf.into_inner())
}
