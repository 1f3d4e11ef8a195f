use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hyper::Hyperparams;
use super::optim::OptimizerState;
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::model::{Inputs, ModelParams};
use crate::ndtensor::Tape;
use crate::scalar::Scalar;

/// ChaCha stream for the per-epoch shuffles.
const SHUFFLE_STREAM: u64 = 1;
/// ChaCha stream for dropout masks.
const DROPOUT_STREAM: u64 = 2;

/// A trained network with its loss history.
#[derive(Clone, Debug)]
pub struct Trained<T: Scalar> {
    pub params: ModelParams<T>,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss over the epoch's training samples.
    pub loss: f64,
}

/// Train on the participants at `train` with the indicators in `selection`.
pub fn train<T: Scalar>(cohort: &Cohort, train: &[usize], selection: &[String], hyper: &Hyperparams) -> Result<Trained<T>> {
    train_observed(cohort, train, selection, hyper, &|_| {})
}

/// [`train`] with a hook that receives the indices the standardization
/// statistics are fitted on.
pub fn train_observed<T: Scalar>(
    cohort: &Cohort,
    train: &[usize],
    selection: &[String],
    hyper: &Hyperparams,
    on_fit: &dyn Fn(&[usize]),
) -> Result<Trained<T>> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::Parameter("empty training split".into()));
    }
    if hyper.batch_size > train.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the training split of {}",
            hyper.batch_size,
            train.len()
        )));
    }
    let config = hyper.model_config(cohort, selection)?;
    let mut params = ModelParams::<T>::init(&config, hyper.seed)?;
    on_fit(train);
    params.fit_standardization(cohort, train)?;
    fit_params(&mut params, cohort, train, hyper).map(|history| Trained { params, history })
}

/// Mini-batch training of `params` in place. Statistics must already be set.
pub fn fit_params<T: Scalar>(
    params: &mut ModelParams<T>,
    cohort: &Cohort,
    train: &[usize],
    hyper: &Hyperparams,
) -> Result<Vec<EpochRecord>> {
    let mut shuffle = ChaCha8Rng::seed_from_u64(hyper.seed);
    shuffle.set_stream(SHUFFLE_STREAM);
    let mut dropout = ChaCha8Rng::seed_from_u64(hyper.seed);
    dropout.set_stream(DROPOUT_STREAM);
    let mut opt = OptimizerState::new(hyper.optimizer, params);
    let mut order = train.to_vec();
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            let numerical = |e: Error| match e {
                Error::NonFinite(detail) => Error::Numerical { epoch, batch: b, detail },
                other => other,
            };
            let inputs = Inputs::<T>::from_cohort(cohort, batch, params.config(), true)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let fwd = params.forward(&mut tape, &bound, &inputs, true, &mut dropout).map_err(numerical)?;
            let loss_id = params.loss(&mut tape, &bound, &fwd, &inputs).map_err(numerical)?;
            let loss = tape.value(loss_id).item()?.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Numerical { epoch, batch: b, detail: format!("loss is {loss}") });
            }
            let mut grads = tape.backward(loss_id).map_err(numerical)?;
            let grads: Vec<Option<Vec<T>>> = bound.ids().iter().map(|&id| grads.take(id)).collect();
            for (spec, g) in params.specs().iter().zip(&grads) {
                if let Some(g) = g {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numerical {
                            epoch,
                            batch: b,
                            detail: format!("non-finite gradient for {}", spec.name),
                        });
                    }
                }
            }
            opt.step(params, &grads);
            total += loss * batch.len() as f64;
        }
        history.push(EpochRecord { epoch, loss: total / order.len() as f64 });
    }
    Ok(history)
}
