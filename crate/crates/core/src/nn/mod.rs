//! A small differentiable-layer engine: affine, rectifier, time-delay
//! (frame splicing at fixed offsets) and temporal mean pooling, with manual
//! backpropagation, momentum SGD and finite-difference gradient checking.
//!
//! Networks map a `T x D` sequence of frames to a `T x D'` sequence, or to a
//! single row once a mean-pooling layer has been applied. Loss heads
//! (softmax cross-entropy here, the bilinear pair scorer in [`crate::e2e`])
//! sit outside the layer stack and hand a gradient back to
//! [`Network::backward`].

mod gradcheck;
mod layer;
mod loss;
mod network;
mod sgd;

pub use gradcheck::{grad_check, GradCheckReport, Objective, ParamCheck};
pub use layer::LayerSpec;
pub use loss::{log_sigmoid, sigmoid, softmax_xent, softmax_xent_frames, softplus, FrameLoss};
pub use network::{Network, Trace};
pub use sgd::{Sgd, StepInfo, TrainerConfig};

/// Gradient tensors (flattened, row-major), aligned with
/// [`Parameterized::param_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like<P: Parameterized + ?Sized>(model: &P) -> Self {
        Grads(model.param_slices().iter().map(|s| vec![0.0; s.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &Grads) {
        assert_eq!(self.0.len(), other.0.len(), "gradient sets differ in length");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Sums a sequence of gradient sets in order.
    pub fn sum<I: IntoIterator<Item = Grads>>(iter: I) -> Option<Grads> {
        let mut it = iter.into_iter();
        let mut acc = it.next()?;
        for g in it {
            acc.add_assign(&g);
        }
        Some(acc)
    }

    pub fn named<'a, P: Parameterized + ?Sized>(
        &'a self,
        model: &P,
    ) -> std::collections::BTreeMap<String, &'a [f64]> {
        model
            .param_names()
            .into_iter()
            .zip(self.0.iter().map(Vec::as_slice))
            .collect()
    }
}

/// Anything with named trainable tensors.
pub trait Parameterized {
    fn param_names(&self) -> Vec<String>;
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;
    /// Called after parameters were modified in place.
    fn after_update(&mut self) {}
}
