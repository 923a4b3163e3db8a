use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, LayerSpec};
use super::{Grads, Parameterized};
use crate::container::Archive;
use crate::error::{Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// An ordered stack of layers over frame sequences.
#[derive(Debug, Clone)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
    seed: u64,
    /// Changes whenever parameters change; ties a [`Trace`] to the weights
    /// that produced it.
    generation: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.layers == other.layers && self.seed == other.seed
    }
}

/// Cached activations from a forward pass: `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Array2<f64>>,
    generation: u64,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("trace holds at least the input")
    }

    pub fn depth(&self) -> usize {
        self.acts.len() - 1
    }

    /// Hash of the sign pattern at every rectifier input; two passes with the
    /// same pattern lie on the same linear piece of the network.
    pub fn relu_pattern(&self, net: &Network) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (i, layer) in net.layers.iter().take(self.depth()).enumerate() {
            if matches!(layer, Layer::Relu) {
                for &v in self.acts[i].iter() {
                    h = (h ^ (v > 0.0) as u64).wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

impl Network {
    /// Builds and initializes a network. Each entry pairs a layer name (used
    /// for parameter names of affine layers) with its spec.
    pub fn new(input_dim: usize, layers: &[(String, LayerSpec)], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("network input dimension must be positive"));
        }
        let mut names = std::collections::BTreeSet::new();
        let mut d = input_dim;
        let mut pooled = false;
        for (name, spec) in layers {
            if let LayerSpec::Affine { .. } = spec {
                if !names.insert(name.clone()) {
                    return Err(Error::config(format!("duplicate layer name `{name}`")));
                }
            }
            if pooled && matches!(spec, LayerSpec::TimeDelay { .. } | LayerSpec::MeanPool) {
                return Err(Error::config("time-delay or pooling layer after temporal pooling"));
            }
            pooled |= matches!(spec, LayerSpec::MeanPool);
            d = spec.output_dim(d)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layers
            .iter()
            .enumerate()
            .map(|(i, (name, spec))| {
                let rectified = matches!(layers.get(i + 1), Some((_, LayerSpec::Relu)));
                Layer::init(name, spec, rectified, &mut rng)
            })
            .collect();
        Ok(Self {
            input_dim,
            layers,
            seed,
            generation: next_generation(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.dim_after(self.layers.len())
    }

    /// Width of the activations after the first `depth` layers.
    pub fn dim_after(&self, depth: usize) -> usize {
        self.layers[..depth]
            .iter()
            .fold(self.input_dim, |d, l| l.spec().output_dim(d).expect("validated at build"))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Span of input frames that can influence one output frame, as
    /// `(earliest offset, latest offset)` relative to that frame.
    pub fn context_extent(&self) -> (i64, i64) {
        let mut lo = 0i64;
        let mut hi = 0i64;
        for layer in &self.layers {
            match layer {
                Layer::TimeDelay(o) => {
                    lo += *o.first().unwrap() as i64;
                    hi += *o.last().unwrap() as i64;
                }
                Layer::MeanPool => break,
                _ => {}
            }
        }
        (lo, hi)
    }

    /// Number of input frames in the receptive field of one output frame.
    pub fn effective_context(&self) -> usize {
        let (lo, hi) = self.context_extent();
        (hi - lo + 1) as usize
    }

    fn check_input(&self, x: &Array2<f64>, depth: usize) -> Result<()> {
        if depth > self.layers.len() {
            return Err(Error::usage(format!(
                "depth {depth} exceeds {} layers",
                self.layers.len()
            )));
        }
        if x.ncols() != self.input_dim {
            return Err(Error::config(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::usage("input sequence is empty"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Trace> {
        self.forward_prefix(x, self.layers.len())
    }

    /// Runs only the first `depth` layers, keeping activations for backward.
    pub fn forward_prefix(&self, x: &Array2<f64>, depth: usize) -> Result<Trace> {
        self.check_input(x, depth)?;
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(x.as_standard_layout().into_owned());
        for layer in &self.layers[..depth] {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        Ok(Trace {
            acts,
            generation: self.generation,
        })
    }

    /// Forward pass without keeping intermediate activations.
    pub fn infer(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.infer_prefix(x, self.layers.len())
    }

    pub fn infer_prefix(&self, x: &Array2<f64>, depth: usize) -> Result<Array2<f64>> {
        self.check_input(x, depth)?;
        let mut cur = x.as_standard_layout().into_owned();
        for layer in &self.layers[..depth] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    /// Backpropagates `d_out` (gradient of the loss with respect to the trace
    /// output). Layers beyond the trace depth get zero gradients.
    pub fn backward(&self, trace: &Trace, d_out: &Array2<f64>) -> Result<(Grads, Array2<f64>)> {
        if trace.generation != self.generation {
            return Err(Error::usage(
                "stale forward cache: parameters changed since the forward pass",
            ));
        }
        if d_out.dim() != trace.output().dim() {
            return Err(Error::usage(format!(
                "output gradient shape {:?} does not match forward output {:?}",
                d_out.dim(),
                trace.output().dim()
            )));
        }
        let mut grads = Grads::zeros_like(self);
        let mut slot_of_layer = Vec::with_capacity(self.layers.len());
        let mut slot = 0;
        for layer in &self.layers {
            slot_of_layer.push(slot);
            if matches!(layer, Layer::Affine(_)) {
                slot += 2;
            }
        }
        let mut g = d_out.clone();
        for i in (0..trace.depth()).rev() {
            let (pg, dx) = self.layers[i].backward(&trace.acts[i], &g);
            if let Some((dw, db)) = pg {
                let s = slot_of_layer[i];
                grads.0[s] = dw.iter().copied().collect();
                grads.0[s + 1] = db.to_vec();
            }
            g = dx;
        }
        Ok((grads, g))
    }

    pub fn to_archive(&self, archive: &mut Archive, prefix: &str) {
        let mut lines = vec![format!("input {}", self.input_dim), format!("seed {}", self.seed)];
        for layer in &self.layers {
            let mut line = layer.spec().describe();
            if let Layer::Affine(a) = layer {
                line = format!("{line} {}", a.name);
            }
            lines.push(line);
        }
        archive.push_text(format!("{prefix}layers"), lines.join("\n"));
        for layer in &self.layers {
            if let Layer::Affine(a) = layer {
                archive.push_real(
                    format!("{prefix}{}.weight", a.name),
                    vec![a.weight.nrows(), a.weight.ncols()],
                    a.weight.iter().copied().collect(),
                );
                archive.push_real(format!("{prefix}{}.bias", a.name), vec![a.bias.len()], a.bias.to_vec());
            }
        }
    }

    pub fn from_archive(archive: &Archive, prefix: &str) -> Result<Self> {
        let text = archive.text(&format!("{prefix}layers"))?;
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<u64> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(key))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::format(format!("network description lacks `{key}`")))
        };
        let input_dim = header("input")? as usize;
        let seed = header("seed")?;
        let mut specs = Vec::new();
        for line in lines {
            let (spec, name) = if line.starts_with("affine") {
                let (head, name) = line
                    .rsplit_once(' ')
                    .ok_or_else(|| Error::format(format!("bad layer line `{line}`")))?;
                (LayerSpec::parse(head)?, name.to_string())
            } else {
                (LayerSpec::parse(line)?, String::new())
            };
            specs.push((name, spec));
        }
        let mut net = Network::new(input_dim, &specs, seed).map_err(|e| Error::format(e.to_string()))?;
        for layer in net.layers.iter_mut() {
            if let Layer::Affine(a) = layer {
                let (shape, w) = archive.real(&format!("{prefix}{}.weight", a.name))?;
                if shape != [a.weight.nrows(), a.weight.ncols()] {
                    return Err(Error::format(format!("weight shape mismatch for `{}`", a.name)));
                }
                a.weight = Array2::from_shape_vec(a.weight.dim(), w.to_vec())
                    .map_err(|e| Error::format(e.to_string()))?;
                let (_, b) = archive.real(&format!("{prefix}{}.bias", a.name))?;
                if b.len() != a.bias.len() {
                    return Err(Error::format(format!("bias length mismatch for `{}`", a.name)));
                }
                a.bias = Array1::from_vec(b.to_vec());
            }
        }
        Ok(net)
    }
}

impl Parameterized for Network {
    fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Affine(a) => Some([format!("{}.weight", a.name), format!("{}.bias", a.name)]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Affine(a) => Some([a.weight.as_slice().unwrap(), a.bias.as_slice().unwrap()]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Affine(a) => Some([a.weight.as_slice_mut().unwrap(), a.bias.as_slice_mut().unwrap()]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    fn after_update(&mut self) {
        self.generation = next_generation();
    }
}
