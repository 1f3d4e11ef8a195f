use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor on the denominator of [`relative_error`].
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let floor = T::from_f64_lossy(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compare the tape gradient of a scalar function against central
/// differences, returning the largest relative error over all coordinates.
///
/// `f` receives a fresh tape and the node holding `x`, and must return a
/// one-element node.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, NodeId) -> Result<NodeId>,
{
    if eps <= T::zero() {
        return Err(Error::Parameter("grad_check: eps must be positive".into()));
    }
    let mut tape = Tape::new();
    let input = tape.param(x.clone());
    let out = f(&mut tape, input)?;
    let analytic = tape.backward(out)?.get_or_zeros(input);

    let eval = |shifted: Tensor<T>| -> Result<T> {
        let mut tape = Tape::new();
        let input = tape.constant(shifted);
        let out = f(&mut tape, input)?;
        tape.value(out).item()
    };
    let two = T::one() + T::one();
    let mut worst = T::zero();
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (two * eps);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}
