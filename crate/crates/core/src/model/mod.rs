//! The fusion network.
//!
//! The feature extraction module turns a face image into a face coding
//! (stride-2 conv blocks, global average pooling, linear projection) and the
//! indicator vector into a metadata coding (z-scores with statistics frozen
//! from the training split). The prediction head maps the concatenated
//! codings to a probability; the auxiliary head regresses standardized
//! Gender, BMI and Weight from the face coding alone and only shapes
//! training through the joint loss.

mod checkpoint;
mod config;
mod forward;
mod gradcheck;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Mode, ModelConfig, Widths, AUX_TARGETS};
pub use forward::{
    chunk_inputs, fem_image, fem_metadata, flm_aux, flm_predict, joint_loss, Bound, Forward, Inputs, ModelOutput,
    LOG_EPS, PREDICT_BATCH, SD_FLOOR,
};
pub use gradcheck::{model_grad_check, TensorCheck};
pub use params::{
    conv_bias, conv_kernel, layout, mlp_bias, mlp_weight, Init, ModelParams, ParamSpec, AUX_MEAN, AUX_SD, META_MEAN,
    META_SD, PROJ_BIAS, PROJ_WEIGHT,
};
