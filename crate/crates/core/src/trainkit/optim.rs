use super::hyper::Optimizer;
use crate::model::ModelParams;
use crate::scalar::Scalar;

/// Optimizer state for the trainable tensors of one network. Frozen tensors
/// (standardization statistics) are never touched.
pub struct OptimizerState<T> {
    rule: Optimizer,
    step: i32,
    /// First moment (Adam) or velocity (SGD), one per tensor.
    first: Vec<Vec<T>>,
    /// Second moment (Adam only).
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(rule: Optimizer, params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        let second = if matches!(rule, Optimizer::Adam { .. }) { zeros.clone() } else { Vec::new() };
        OptimizerState { rule, step: 0, first: zeros, second }
    }

    /// Apply one update. `grads[i]` belongs to tensor `i`; `None` means a
    /// zero gradient.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &[Option<Vec<T>>]) {
        self.step += 1;
        let trainable: Vec<bool> = params.specs().iter().map(|s| s.trainable).collect();
        let c = |v: f64| T::from_f64_lossy(v);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            let Some(g) = &grads[i] else { continue };
            let data = tensor.data_mut();
            match self.rule {
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.step);
                    let bc2 = 1.0 - beta2.powi(self.step);
                    let (b1, b2, lr_t, eps) = (c(beta1), c(beta2), c(lr * bc2.sqrt() / bc1), c(eps * bc2.sqrt()));
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..data.len() {
                        m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                        v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                        data[j] -= lr_t * m[j] / (v[j].sqrt() + eps);
                    }
                }
                Optimizer::Sgd { lr, momentum } => {
                    let (lr, mu) = (c(lr), c(momentum));
                    let vel = &mut self.first[i];
                    for j in 0..data.len() {
                        vel[j] = mu * vel[j] + g[j];
                        data[j] -= lr * vel[j];
                    }
                }
            }
        }
    }
}
