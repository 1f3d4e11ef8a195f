//! Dense tensors with eager, tape-based reverse-mode differentiation.
//!
//! The op set is exactly what the fusion network needs: matrix products,
//! strided/padded 2-D cross-correlation, bias broadcast along the last axis,
//! pointwise activations, pooling, dropout and a few reductions. There is no
//! general broadcasting. Convolution and pooling take an optional leading
//! batch axis; everything else treats the leading axes as rows.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, REL_ERROR_FLOOR};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
