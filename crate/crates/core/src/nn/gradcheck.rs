use super::{Grads, Parameterized};
use crate::error::{Error, Result};

/// Loss surface for gradient checking.
pub trait Objective<P: ?Sized> {
    /// Loss value plus a fingerprint of the piecewise-linear region the
    /// evaluation fell in (see [`super::Trace::relu_pattern`]).
    fn loss(&self, model: &P) -> Result<(f64, u64)>;
    fn loss_and_grad(&self, model: &P) -> Result<(f64, Grads)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Entries where the default step crossed a rectifier kink and a smaller
    /// or one-sided step was used instead.
    pub kink_adjusted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

/// Denominator floor for relative errors; entries with gradients below it
/// are judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn perturbed<P, O>(model: &mut P, obj: &O, tensor: usize, index: usize, delta: f64) -> Result<(f64, u64)>
where
    P: Parameterized + ?Sized,
    O: Objective<P> + ?Sized,
{
    // after_update may couple entries (e.g. symmetrization), so the whole
    // tensor is restored rather than the single entry.
    let snapshot = model.param_slices()[tensor].to_vec();
    model.param_slices_mut()[tensor][index] += delta;
    model.after_update();
    let out = obj.loss(model);
    model.param_slices_mut()[tensor].copy_from_slice(&snapshot);
    model.after_update();
    out
}

/// Compares analytic gradients with central finite differences for every
/// parameter entry. When `+step` or `-step` lands in a different rectifier
/// pattern than the base point, the step is shrunk tenfold (up to three
/// times), then a one-sided difference on the matching side is used.
pub fn grad_check<P, O>(model: &mut P, obj: &O, step: f64) -> Result<GradCheckReport>
where
    P: Parameterized + ?Sized,
    O: Objective<P> + ?Sized,
{
    if !(step > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let (base_loss, grads) = obj.loss_and_grad(model)?;
    let (_, base_pattern) = obj.loss(model)?;
    let names = model.param_names();
    if grads.0.len() != names.len() {
        return Err(Error::usage("objective returned gradients for the wrong parameter set"));
    }
    let mut params = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let len = grads.0[ti].len();
        let mut max_rel = 0.0f64;
        let mut kinked = 0;
        for i in 0..len {
            let analytic = grads.0[ti][i];
            let mut h = step;
            let mut numeric = None;
            let mut adjusted = false;
            for _ in 0..4 {
                let (lp, pp) = perturbed(model, obj, ti, i, h)?;
                let (lm, pm) = perturbed(model, obj, ti, i, -h)?;
                if pp == base_pattern && pm == base_pattern {
                    numeric = Some((lp - lm) / (2.0 * h));
                    break;
                }
                adjusted = true;
                if h < step * 1e-3 {
                    numeric = Some(if pp == base_pattern {
                        (lp - base_loss) / h
                    } else {
                        (base_loss - lm) / h
                    });
                    break;
                }
                h /= 10.0;
            }
            kinked += adjusted as usize;
            let numeric = numeric.expect("loop always resolves");
            max_rel = max_rel.max(rel_error(analytic, numeric));
        }
        params.push(ParamCheck {
            name,
            entries: len,
            max_rel_error: max_rel,
            kink_adjusted: kinked,
        });
    }
    Ok(GradCheckReport { step, params })
}
