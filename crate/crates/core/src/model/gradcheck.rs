use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::forward::Inputs;
use super::params::ModelParams;
use crate::error::Result;
use crate::ndtensor::{relative_error, Tape};
use crate::scalar::Scalar;

/// Largest relative error found in one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    /// Coordinates compared.
    pub coordinates: usize,
    /// Coordinates skipped because a probe crossed a ReLU or clamp kink.
    pub kinks: usize,
    pub max_rel_error: f64,
}

/// Finite-difference check of the joint-loss gradient of a whole model.
///
/// For every tensor, random coordinates are probed with central
/// differences of step `eps` until `coords_per_tensor` of them have been
/// compared. A probe whose two evaluations put some ReLU or clamp on a
/// different side of its kink than the unperturbed pass straddles a point
/// where the loss is not differentiable; it is counted in `kinks` and
/// replaced by another coordinate. Dropout runs in training mode with its
/// mask stream re-seeded from `dropout_seed` for every evaluation, so all
/// passes share one mask.
pub fn model_grad_check<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &Inputs<T>,
    coords_per_tensor: usize,
    eps: f64,
    seed: u64,
    dropout_seed: u64,
) -> Result<Vec<TensorCheck>> {
    let loss_of = |p: &ModelParams<T>, want_grad: bool| -> Result<(f64, Vec<bool>, Vec<Vec<T>>)> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let fwd = p.forward(&mut tape, &bound, inputs, true, &mut rng)?;
        let loss = p.loss(&mut tape, &bound, &fwd, inputs)?;
        let value = tape.value(loss).item()?.to_f64_lossy();
        let pattern = tape.activation_pattern();
        if !want_grad {
            return Ok((value, pattern, vec![]));
        }
        let grads = tape.backward(loss)?;
        Ok((value, pattern, bound.ids().iter().map(|&id| grads.get_or_zeros(id)).collect()))
    };
    let (_, base_pattern, analytic) = loss_of(params, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = Vec::new();
    for (t, spec) in params.specs().iter().enumerate() {
        let mut order: Vec<usize> = (0..params.tensors()[t].numel()).collect();
        order.shuffle(&mut rng);
        let (mut checked, mut kinks, mut worst) = (0, 0, 0.0f64);
        for &i in &order {
            if checked == coords_per_tensor {
                break;
            }
            let original = params.tensors()[t].data()[i];
            let h = T::from_f64_lossy(eps);
            let (up, down) = (original + h, original - h);
            work.tensors_mut()[t].data_mut()[i] = up;
            let (plus, plus_pattern, _) = loss_of(&work, false)?;
            work.tensors_mut()[t].data_mut()[i] = down;
            let (minus, minus_pattern, _) = loss_of(&work, false)?;
            work.tensors_mut()[t].data_mut()[i] = original;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                kinks += 1;
                continue;
            }
            // divide by the step actually taken, not the nominal 2 * eps
            let numeric = (plus - minus) / (up - down).to_f64_lossy();
            worst = worst.max(relative_error(analytic[t][i].to_f64_lossy(), numeric));
            checked += 1;
        }
        report.push(TensorCheck { name: spec.name.clone(), coordinates: checked, kinks, max_rel_error: worst });
    }
    Ok(report)
}
