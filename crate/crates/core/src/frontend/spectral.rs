use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex64, FftPlanner};

use super::{AudioClip, FeatureKind, FeatureMatrix, FrontendConfig};
use crate::error::{Error, Result};

/// Smallest energy passed to a logarithm. Keeps silence finite.
const ENERGY_FLOOR: f64 = 1e-10;

/// `1 + floor((num_samples - frame_len) / shift)`, or 0 when the clip is
/// shorter than one frame.
pub fn num_frames(num_samples: usize, frame_len: usize, shift: usize) -> usize {
    if num_samples < frame_len || frame_len == 0 || shift == 0 {
        0
    } else {
        1 + (num_samples - frame_len) / shift
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

fn band_edges(cfg: &FrontendConfig, sample_rate: u32) -> (f64, f64) {
    let nyquist = sample_rate as f64 / 2.0;
    let high = if cfg.high_freq > 0.0 {
        cfg.high_freq.min(nyquist)
    } else {
        nyquist + cfg.high_freq
    };
    (cfg.low_freq, high)
}

/// Center frequency (Hz) of each triangular mel filter.
pub fn mel_center_frequencies(cfg: &FrontendConfig, sample_rate: u32) -> Vec<f64> {
    let (low, high) = band_edges(cfg, sample_rate);
    let (mel_low, mel_high) = (hz_to_mel(low), hz_to_mel(high));
    let step = (mel_high - mel_low) / (cfg.num_mel_bins + 1) as f64;
    (1..=cfg.num_mel_bins)
        .map(|i| mel_to_hz(mel_low + step * i as f64))
        .collect()
}

/// Triangular filters, defined on the mel axis, sampled at FFT bin frequencies.
fn mel_filterbank(cfg: &FrontendConfig, sample_rate: u32, fft_len: usize) -> Vec<Vec<f64>> {
    let (low, high) = band_edges(cfg, sample_rate);
    let (mel_low, mel_high) = (hz_to_mel(low), hz_to_mel(high));
    let step = (mel_high - mel_low) / (cfg.num_mel_bins + 1) as f64;
    let num_bins = fft_len / 2 + 1;
    let bin_mels: Vec<f64> = (0..num_bins)
        .map(|k| hz_to_mel(k as f64 * sample_rate as f64 / fft_len as f64))
        .collect();
    (0..cfg.num_mel_bins)
        .map(|m| {
            let left = mel_low + step * m as f64;
            let center = left + step;
            let right = center + step;
            bin_mels
                .iter()
                .map(|&mel| {
                    if mel <= left || mel >= right {
                        0.0
                    } else if mel <= center {
                        (mel - left) / (center - left)
                    } else {
                        (right - mel) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

fn id_hash(id: &str) -> u64 {
    // FNV-1a
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

struct Spectra {
    power: Vec<Vec<f64>>,
    log_energy: Vec<f64>,
    fft_len: usize,
}

fn power_spectra(clip: &AudioClip, cfg: &FrontendConfig) -> Result<Spectra> {
    cfg.validate()?;
    if clip.sample_rate == 0 {
        return Err(Error::usage("sample rate must be positive"));
    }
    let frame_len = cfg.frame_length_samples(clip.sample_rate).max(1);
    let shift = cfg.frame_shift_samples(clip.sample_rate).max(1);
    let t = num_frames(clip.samples.len(), frame_len, shift);
    if t == 0 {
        return Err(Error::TooShort {
            samples: clip.samples.len(),
            needed: frame_len,
        });
    }
    let fft_len = frame_len.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_len);
    let window = hamming(frame_len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.dither_seed ^ id_hash(&clip.id));

    let mut power = Vec::with_capacity(t);
    let mut log_energy = Vec::with_capacity(t);
    let mut frame = vec![0.0; frame_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    for f in 0..t {
        frame.copy_from_slice(&clip.samples[f * shift..f * shift + frame_len]);
        if cfg.dither > 0.0 {
            for s in frame.iter_mut() {
                *s += cfg.dither * rng.random_range(-1.0..1.0);
            }
        }
        let mean = frame.iter().sum::<f64>() / frame_len as f64;
        frame.iter_mut().for_each(|s| *s -= mean);
        let energy: f64 = frame.iter().map(|s| s * s).sum();
        log_energy.push(energy.max(ENERGY_FLOOR).ln());

        for i in (1..frame_len).rev() {
            frame[i] -= cfg.pre_emphasis * frame[i - 1];
        }
        frame[0] -= cfg.pre_emphasis * frame[0];

        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < frame_len {
                Complex64::new(frame[i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        power.push(buf[..fft_len / 2 + 1].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(Spectra {
        power,
        log_energy,
        fft_len,
    })
}

fn log_mel(spectra: &Spectra, cfg: &FrontendConfig, sample_rate: u32) -> Array2<f64> {
    let bank = mel_filterbank(cfg, sample_rate, spectra.fft_len);
    let mut out = Array2::zeros((spectra.power.len(), cfg.num_mel_bins));
    for (t, p) in spectra.power.iter().enumerate() {
        for (m, filt) in bank.iter().enumerate() {
            let e: f64 = filt.iter().zip(p).map(|(w, x)| w * x).sum();
            out[[t, m]] = e.max(ENERGY_FLOOR).ln();
        }
    }
    out
}

/// Log mel filterbank energies, one row per frame.
pub fn compute_fbank(clip: &AudioClip, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    let spectra = power_spectra(clip, cfg)?;
    let frames = log_mel(&spectra, cfg, clip.sample_rate);
    FeatureMatrix::new(frames, cfg.frame_period_secs(), FeatureKind::Fbank)
}

/// Cepstra C1..C`num_cepstra` (orthonormal DCT-II of the log mel energies)
/// with the frame log energy appended as the last column.
pub fn compute_mfcc_e(clip: &AudioClip, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    let spectra = power_spectra(clip, cfg)?;
    let mel = log_mel(&spectra, cfg, clip.sample_rate);
    let bins = cfg.num_mel_bins;
    let nc = cfg.num_cepstra;
    let scale = (2.0 / bins as f64).sqrt();
    let dct: Vec<Vec<f64>> = (1..=nc)
        .map(|k| {
            (0..bins)
                .map(|m| scale * (PI * k as f64 * (m as f64 + 0.5) / bins as f64).cos())
                .collect()
        })
        .collect();
    let t = mel.nrows();
    let mut out = Array2::zeros((t, nc + 1));
    for f in 0..t {
        let row = mel.row(f);
        for (k, basis) in dct.iter().enumerate() {
            out[[f, k]] = basis.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        }
        out[[f, nc]] = spectra.log_energy[f];
    }
    FeatureMatrix::new(out, cfg.frame_period_secs(), FeatureKind::MfccE)
}
