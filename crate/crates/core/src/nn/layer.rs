use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Affine { d_in: usize, d_out: usize },
    Relu,
    /// Output frame `t` concatenates input frames `t + o` for each offset `o`,
    /// clamped to the sequence.
    TimeDelay { offsets: Vec<i32> },
    /// Mean over time; the output has a single row.
    MeanPool,
}

impl LayerSpec {
    pub fn output_dim(&self, d_in: usize) -> Result<usize> {
        match self {
            LayerSpec::Affine { d_in: din, d_out } => {
                if *din != d_in {
                    return Err(Error::config(format!(
                        "affine layer expects {din} inputs, previous layer gives {d_in}"
                    )));
                }
                if *din == 0 || *d_out == 0 {
                    return Err(Error::config("affine dimensions must be positive"));
                }
                Ok(*d_out)
            }
            LayerSpec::Relu | LayerSpec::MeanPool => Ok(d_in),
            LayerSpec::TimeDelay { offsets } => {
                if offsets.is_empty() || offsets.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config(format!(
                        "time-delay offsets must be non-empty and strictly increasing: {offsets:?}"
                    )));
                }
                Ok(d_in * offsets.len())
            }
        }
    }

    pub(crate) fn describe(&self) -> String {
        match self {
            LayerSpec::Affine { d_in, d_out } => format!("affine {d_in} {d_out}"),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::TimeDelay { offsets } => {
                let o: Vec<String> = offsets.iter().map(i32::to_string).collect();
                format!("time_delay {}", o.join(" "))
            }
            LayerSpec::MeanPool => "mean_pool".into(),
        }
    }

    pub(crate) fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        let bad = || Error::format(format!("bad layer line `{line}`"));
        let spec = match parts.next().ok_or_else(bad)? {
            "affine" => {
                let mut n = || -> Result<usize> { parts.next().ok_or_else(bad)?.parse().map_err(|_| bad()) };
                LayerSpec::Affine {
                    d_in: n()?,
                    d_out: n()?,
                }
            }
            "relu" => LayerSpec::Relu,
            "mean_pool" => LayerSpec::MeanPool,
            "time_delay" => LayerSpec::TimeDelay {
                offsets: parts
                    .by_ref()
                    .map(|p| p.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Affine {
    pub name: String,
    /// `d_in x d_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Affine(Affine),
    Relu,
    TimeDelay(Vec<i32>),
    MeanPool,
}

impl Layer {
    /// Affine weights drawn uniformly with zero bias: ±sqrt(6 / fan_in) when
    /// a rectifier follows, ±sqrt(6 / (fan_in + fan_out)) otherwise.
    pub fn init<R: Rng>(name: &str, spec: &LayerSpec, rectified: bool, rng: &mut R) -> Self {
        match spec {
            LayerSpec::Affine { d_in, d_out } => {
                let fan = if rectified { *d_in } else { *d_in + *d_out };
                let limit = (6.0 / fan as f64).sqrt();
                let weight = Array2::from_shape_fn((*d_in, *d_out), |_| rng.random_range(-limit..limit));
                Layer::Affine(Affine {
                    name: name.to_string(),
                    weight,
                    bias: Array1::zeros(*d_out),
                })
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::TimeDelay { offsets } => Layer::TimeDelay(offsets.clone()),
            LayerSpec::MeanPool => Layer::MeanPool,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Affine(a) => LayerSpec::Affine {
                d_in: a.weight.nrows(),
                d_out: a.weight.ncols(),
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::TimeDelay(o) => LayerSpec::TimeDelay { offsets: o.clone() },
            Layer::MeanPool => LayerSpec::MeanPool,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Affine(a) => {
                let mut y = x.dot(&a.weight);
                y += &a.bias;
                y
            }
            Layer::Relu => x.mapv(|v| v.max(0.0)),
            Layer::TimeDelay(offsets) => time_delay_forward(x, offsets),
            Layer::MeanPool => x.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0)),
        }
    }

    /// Returns parameter gradients (weight, bias) for affine layers and the
    /// gradient with respect to the layer input.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Option<(Array2<f64>, Array1<f64>)>, Array2<f64>) {
        match self {
            Layer::Affine(a) => {
                let dw = x.t().dot(dy);
                let db = dy.sum_axis(Axis(0));
                let dx = dy.dot(&a.weight.t());
                (Some((dw, db)), dx)
            }
            Layer::Relu => {
                let mut dx = dy.clone();
                ndarray::Zip::from(&mut dx).and(x).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                (None, dx)
            }
            Layer::TimeDelay(offsets) => (None, time_delay_backward(x.dim(), dy, offsets)),
            Layer::MeanPool => {
                let t = x.nrows();
                let row = dy.row(0).mapv(|g| g / t as f64);
                let dx = row.broadcast((t, row.len())).unwrap().to_owned();
                (None, dx)
            }
        }
    }
}

fn clamp(t: isize, len: usize) -> usize {
    t.clamp(0, len as isize - 1) as usize
}

fn time_delay_forward(x: &Array2<f64>, offsets: &[i32]) -> Array2<f64> {
    let (t_len, d) = x.dim();
    let mut out = Array2::zeros((t_len, d * offsets.len()));
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        let dst = row.as_slice_mut().unwrap();
        for (k, &o) in offsets.iter().enumerate() {
            let src = clamp(t as isize + o as isize, t_len);
            dst[k * d..(k + 1) * d].copy_from_slice(x.row(src).as_slice().unwrap());
        }
    }
    out
}

fn time_delay_backward(x_dim: (usize, usize), dy: &Array2<f64>, offsets: &[i32]) -> Array2<f64> {
    let (t_len, d) = x_dim;
    let mut dx = Array2::zeros((t_len, d));
    for t in 0..t_len {
        let g = dy.row(t);
        let g = g.as_slice().unwrap();
        for (k, &o) in offsets.iter().enumerate() {
            let src = clamp(t as isize + o as isize, t_len);
            let mut row = dx.row_mut(src);
            row.as_slice_mut()
                .unwrap()
                .iter_mut()
                .zip(&g[k * d..(k + 1) * d])
                .for_each(|(a, b)| *a += b);
        }
    }
    dx
}
