use ndarray::Array2;

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

/// Regression half-width for delta computation.
const DELTA_WINDOW: usize = 2;

/// Variance below which a column is only mean-normalized.
const CMVN_VAR_EPS: f64 = 1e-10;

fn clamp_index(t: isize, len: usize) -> usize {
    t.clamp(0, len as isize - 1) as usize
}

fn regression_deltas(x: &Array2<f64>) -> Array2<f64> {
    let (t_len, d) = x.dim();
    let norm: f64 = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros((t_len, d));
    for t in 0..t_len {
        for n in 1..=DELTA_WINDOW {
            let fwd = clamp_index(t as isize + n as isize, t_len);
            let back = clamp_index(t as isize - n as isize, t_len);
            for j in 0..d {
                out[[t, j]] += n as f64 * (x[[fwd, j]] - x[[back, j]]);
            }
        }
    }
    out /= norm;
    out
}

/// Appends first- and second-order regression deltas (window 2, edge frames
/// replicated). Only `order == 2` on MFCC+energy input is supported.
pub fn add_deltas(feat: &FeatureMatrix, order: usize) -> Result<FeatureMatrix> {
    if order != 2 {
        return Err(Error::usage(format!("delta order {order} unsupported, only 2")));
    }
    if feat.kind() != FeatureKind::MfccE {
        return Err(Error::usage(format!(
            "deltas expect mfcc_e input, got {}",
            feat.kind().tag()
        )));
    }
    let statics = feat.frames();
    let d1 = regression_deltas(statics);
    let d2 = regression_deltas(&d1);
    let frames = ndarray::concatenate(ndarray::Axis(1), &[statics.view(), d1.view(), d2.view()])
        .map_err(|e| Error::usage(e.to_string()))?;
    FeatureMatrix::new(frames, feat.frame_period(), FeatureKind::MfccEDeltas)
}

/// Row `t` of the result is rows `t-k ..= t+k` of the input, concatenated,
/// with edge frames replicated.
pub fn splice(feat: &FeatureMatrix, context: usize) -> Result<FeatureMatrix> {
    if context == 0 {
        return Ok(feat.clone());
    }
    let x = feat.frames();
    let (t_len, d) = x.dim();
    let width = 2 * context + 1;
    let mut out = Array2::zeros((t_len, d * width));
    for t in 0..t_len {
        for (slot, off) in (-(context as isize)..=context as isize).enumerate() {
            let src = clamp_index(t as isize + off, t_len);
            out.slice_mut(ndarray::s![t, slot * d..(slot + 1) * d])
                .assign(&x.row(src));
        }
    }
    FeatureMatrix::new(out, feat.frame_period(), FeatureKind::Spliced { context })
}

/// Per-utterance mean and variance normalization. Columns with (near) zero
/// variance are only mean-normalized.
pub fn cmvn(feat: &FeatureMatrix) -> Result<FeatureMatrix> {
    let x = feat.frames();
    let t_len = x.nrows();
    if t_len < 2 {
        return Err(Error::usage("cmvn needs at least two frames"));
    }
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let mean = col.sum() / t_len as f64;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / t_len as f64;
        if var > CMVN_VAR_EPS {
            let inv = 1.0 / var.sqrt();
            col.mapv_inplace(|v| v * inv);
        }
    }
    FeatureMatrix::new(out, feat.frame_period(), feat.kind())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn mfcc(frames: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(frames, 0.01, FeatureKind::MfccE).unwrap()
    }

    fn random(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, d), |_| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn constant_input_has_zero_deltas() {
        let f = mfcc(Array2::from_elem((12, 20), 1.5));
        let out = add_deltas(&f, 2).unwrap();
        assert_eq!(out.dim(), 60);
        assert!(out.frames().slice(ndarray::s![.., 20..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_has_constant_delta_and_zero_acceleration_inside() {
        let t_len = 20;
        let frames = Array2::from_shape_fn((t_len, 20), |(t, j)| (j as f64 + 1.0) * t as f64);
        let out = add_deltas(&mfcc(frames), 2).unwrap();
        let x = out.frames();
        for t in 2..t_len - 2 {
            for j in 0..20 {
                assert!((x[[t, 20 + j]] - (j as f64 + 1.0)).abs() < 1e-12);
            }
        }
        for t in 4..t_len - 4 {
            for j in 0..20 {
                assert!(x[[t, 40 + j]].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deltas_match_direct_formula() {
        let frames = random(10, 20, 3);
        let out = add_deltas(&mfcc(frames.clone()), 2).unwrap();
        // direct evaluation: d[t] = sum_n n (c[t+n] - c[t-n]) / (2 sum n^2), clamped indices
        let at = |m: &Vec<Vec<f64>>, t: i64, j: usize| m[t.clamp(0, 9) as usize][j];
        let c: Vec<Vec<f64>> = frames.rows().into_iter().map(|r| r.to_vec()).collect();
        let delta = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..10i64)
                .map(|t| {
                    (0..20)
                        .map(|j| {
                            (at(m, t + 1, j) - at(m, t - 1, j)) / 10.0
                                + (2.0 * (at(m, t + 2, j) - at(m, t - 2, j))) / 10.0
                        })
                        .collect()
                })
                .collect()
        };
        let d1 = delta(&c);
        let d2 = delta(&d1);
        for t in 0..10 {
            for j in 0..20 {
                assert!((out.frames()[[t, 20 + j]] - d1[t][j]).abs() < 1e-12);
                assert!((out.frames()[[t, 40 + j]] - d2[t][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_order_and_kind_are_checked() {
        let f = mfcc(random(5, 4, 1));
        assert!(add_deltas(&f, 1).is_err());
        let fb = FeatureMatrix::new(random(5, 4, 1), 0.01, FeatureKind::Fbank).unwrap();
        assert!(add_deltas(&fb, 2).is_err());
    }

    #[test]
    fn splice_widths() {
        let f = FeatureMatrix::new(random(7, 40, 2), 0.01, FeatureKind::Fbank).unwrap();
        assert_eq!(splice(&f, 4).unwrap().dim(), 360);
        assert_eq!(splice(&f, 1).unwrap().dim(), 120);
        assert_eq!(splice(&f, 0).unwrap(), f);
        assert_eq!(splice(&f, 4).unwrap().num_frames(), 7);
    }

    #[test]
    fn cmvn_zeroes_means_and_constant_columns() {
        let mut frames = random(50, 6, 4);
        frames.column_mut(2).fill(7.0);
        let f = FeatureMatrix::new(frames, 0.01, FeatureKind::Fbank).unwrap();
        let once = cmvn(&f).unwrap();
        for (j, col) in once.frames().columns().into_iter().enumerate() {
            assert!(col.mean().unwrap().abs() < 1e-9);
            if j == 2 {
                assert!(col.iter().all(|&v| v == 0.0));
            } else {
                let var = col.iter().map(|v| v * v).sum::<f64>() / 50.0;
                assert!((var - 1.0).abs() < 1e-9);
            }
        }
        let twice = cmvn(&once).unwrap();
        for (a, b) in once.frames().iter().zip(twice.frames().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let single = FeatureMatrix::new(random(1, 3, 1), 0.01, FeatureKind::Fbank).unwrap();
        assert!(cmvn(&single).is_err());
    }

    proptest! {
        #[test]
        fn splice_center_block_is_identity(t in 1usize..15, d in 1usize..6, k in 0usize..5, seed in 0u64..1000) {
            let f = FeatureMatrix::new(random(t, d, seed), 0.01, FeatureKind::Fbank).unwrap();
            let s = splice(&f, k).unwrap();
            let center = s.frames().slice(ndarray::s![.., k * d..(k + 1) * d]).to_owned();
            prop_assert_eq!(&center, f.frames());
        }

        #[test]
        fn deltas_ignore_constant_offsets(offset in -10.0f64..10.0, seed in 0u64..1000) {
            let base = random(9, 4, seed);
            let a = add_deltas(&mfcc(base.clone()), 2).unwrap();
            let b = add_deltas(&mfcc(base + offset), 2).unwrap();
            let da = a.frames().slice(ndarray::s![.., 4..]).to_owned();
            let db = b.frames().slice(ndarray::s![.., 4..]).to_owned();
            for (x, y) in da.iter().zip(db.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
