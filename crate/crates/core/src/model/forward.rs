use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, AUX_TARGETS};
use super::params::{self, ModelParams};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::ndtensor::{NodeId, Tape, Tensor};
use crate::scalar::Scalar;

/// Clamp applied inside the logarithms of the cross-entropy and to the
/// sigmoid output.
pub const LOG_EPS: f64 = 1e-12;
/// Floor on standardization sds.
pub const SD_FLOOR: f64 = 1e-8;
/// Rows per forward pass in [`ModelParams::predict`].
pub const PREDICT_BATCH: usize = 64;

/// Model inputs for a batch of participants.
#[derive(Clone, Debug)]
pub struct Inputs<T: Scalar> {
    /// `B x H x W x 3`, present when the mode uses images.
    pub images: Option<Tensor<T>>,
    /// Raw indicator values, `B x c_mc`, present when the mode uses metadata.
    pub metadata: Option<Tensor<T>>,
    pub labels: Vec<u8>,
    /// Raw auxiliary targets, `B x 3`.
    pub aux_targets: Option<Tensor<T>>,
}

impl<T: Scalar> Inputs<T> {
    /// Gather the participants at `indices`. Auxiliary targets are read
    /// only when `with_aux_targets` is set and the config has the head.
    pub fn from_cohort(cohort: &Cohort, indices: &[usize], config: &ModelConfig, with_aux_targets: bool) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        let b = indices.len();
        let images = if config.mode.uses_image() {
            let (h, w) = (config.image_height, config.image_width);
            let mut data = Vec::with_capacity(b * h * w * 3);
            for &i in indices {
                let p = cohort.participant(i);
                let img = p
                    .image()
                    .ok_or_else(|| Error::Data(format!("participant {} has no image", p.id())))?;
                if img.height() != h || img.width() != w {
                    return Err(Error::Dimension(format!(
                        "participant {}: image is {}x{}, model expects {h}x{w}",
                        p.id(),
                        img.height(),
                        img.width()
                    )));
                }
                data.extend(img.pixels().iter().map(|&v| T::from_f64_lossy(v)));
            }
            Some(Tensor::new(&[b, h, w, 3], data)?)
        } else {
            None
        };
        let gather = |names: &[String]| -> Result<Tensor<T>> {
            let cols = cohort.indices_of(names)?;
            let mut data = Vec::with_capacity(b * cols.len());
            for &i in indices {
                let m = cohort.participant(i).metadata();
                data.extend(cols.iter().map(|&j| T::from_f64_lossy(m[j])));
            }
            Tensor::new(&[b, cols.len()], data)
        };
        let metadata = if config.mode.uses_metadata() { Some(gather(&config.indicators)?) } else { None };
        let aux_targets = if with_aux_targets && config.has_aux() {
            Some(gather(&AUX_TARGETS.map(String::from))?)
        } else {
            None
        };
        let labels = indices.iter().map(|&i| cohort.participant(i).label()).collect();
        Ok(Inputs { images, metadata, labels, aux_targets })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Parameter nodes of one network on a tape, in canonical order.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Node ids of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Face coding `Z_image`, `B x face_dim`.
    pub face: Option<NodeId>,
    /// Metadata coding `Z_metadata`, `B x c_mc`.
    pub metadata: Option<NodeId>,
    /// Input of the prediction head.
    pub fusion: NodeId,
    /// Clamped sigmoid output, `B x 1`.
    pub y_fat: NodeId,
    /// Auxiliary regression output, `B x 3`.
    pub y_aux: Option<NodeId>,
}

/// Eval-mode outputs for one participant.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T> {
    pub y_fat: T,
    pub y_aux: Option<[T; 3]>,
    pub face_coding: Option<Vec<T>>,
    pub metadata_coding: Option<Vec<T>>,
    pub fusion: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Put every tensor on `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound { ids: self.tensors().iter().map(|t| tape.param(t.clone())).collect() }
    }

    fn node(&self, bound: &Bound, name: &str) -> NodeId {
        bound.ids[self.position(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }

    /// Full forward pass. Dropout is active only when `training` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        inputs: &Inputs<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        let config = self.config();
        let face = match (&inputs.images, config.mode.uses_image()) {
            (Some(images), true) => {
                let x = tape.constant(images.clone());
                Some(fem_image(tape, self, bound, x)?)
            }
            (None, true) => return Err(Error::Data("model needs images".into())),
            _ => None,
        };
        let metadata = match (&inputs.metadata, config.mode.uses_metadata()) {
            (Some(meta), true) => {
                let x = tape.constant(meta.clone());
                Some(fem_metadata(tape, self, bound, x)?)
            }
            (None, true) => return Err(Error::Data("model needs metadata".into())),
            _ => None,
        };
        let (fusion, y_fat) = flm_predict(tape, self, bound, face, metadata, training, rng)?;
        let y_aux = match face {
            Some(f) if config.has_aux() => Some(flm_aux(tape, self, bound, f, training, rng)?),
            _ => None,
        };
        Ok(Forward { face, metadata, fusion, y_fat, y_aux })
    }

    /// Joint loss of a forward pass: `alpha * BCE + (1 - alpha) * aux MSE`
    /// with the aux head, plain BCE without it.
    pub fn loss(&self, tape: &mut Tape<T>, bound: &Bound, fwd: &Forward, inputs: &Inputs<T>) -> Result<NodeId> {
        let aux = match (fwd.y_aux, &inputs.aux_targets) {
            (Some(y_aux), Some(raw)) => {
                let raw = tape.constant(raw.clone());
                let mean = self.node(bound, params::AUX_MEAN);
                let sd = self.node(bound, params::AUX_SD);
                let target = tape.standardize(raw, mean, sd, T::from_f64_lossy(SD_FLOOR))?;
                Some((y_aux, target))
            }
            (Some(_), None) => return Err(Error::Data("auxiliary head needs aux targets".into())),
            (None, _) => None,
        };
        let alpha = if aux.is_some() { self.config().alpha } else { 1.0 };
        joint_loss(tape, fwd.y_fat, &inputs.labels, aux, alpha)
    }

    /// Eval-mode probabilities for a batch of any size. Dropout is off, so the
    /// RNG handed to the forward pass is never drawn from.
    pub fn predict(&self, inputs: &Inputs<T>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in chunk_inputs(inputs, PREDICT_BATCH)? {
            let mut tape = Tape::new();
            let bound = self.bind_constant(&mut tape);
            let fwd = self.forward(&mut tape, &bound, &chunk, false, &mut ChaCha8Rng::seed_from_u64(0))?;
            out.extend(tape.value(fwd.y_fat).to_f64_vec());
        }
        Ok(out)
    }

    /// Eval-mode outputs, codings included, one entry per row.
    pub fn outputs(&self, inputs: &Inputs<T>) -> Result<Vec<ModelOutput<T>>> {
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape);
        let fwd = self.forward(&mut tape, &bound, inputs, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        let rows = |id: Option<NodeId>| -> Option<Vec<Vec<T>>> {
            id.map(|id| {
                let v = tape.value(id);
                let width = v.numel() / inputs.len();
                v.data().chunks_exact(width).map(<[T]>::to_vec).collect()
            })
        };
        let face = rows(fwd.face);
        let meta = rows(fwd.metadata);
        let fusion = rows(Some(fwd.fusion)).expect("fusion present");
        let aux = rows(fwd.y_aux);
        let y = tape.value(fwd.y_fat).data();
        Ok((0..inputs.len())
            .map(|i| ModelOutput {
                y_fat: y[i],
                y_aux: aux.as_ref().map(|a| [a[i][0], a[i][1], a[i][2]]),
                face_coding: face.as_ref().map(|f| f[i].clone()),
                metadata_coding: meta.as_ref().map(|m| m[i].clone()),
                fusion: fusion[i].clone(),
            })
            .collect())
    }

    /// Parameters as constants: an inference pass records no gradients.
    fn bind_constant(&self, tape: &mut Tape<T>) -> Bound {
        Bound { ids: self.tensors().iter().map(|t| tape.constant(t.clone())).collect() }
    }
}

/// Split a batch into consecutive chunks of at most `size` rows.
pub fn chunk_inputs<T: Scalar>(inputs: &Inputs<T>, size: usize) -> Result<Vec<Inputs<T>>> {
    let n = inputs.len();
    let slice = |t: &Option<Tensor<T>>, lo: usize, hi: usize| -> Result<Option<Tensor<T>>> {
        t.as_ref()
            .map(|t| {
                let row = t.numel() / n;
                let mut shape = t.shape().to_vec();
                shape[0] = hi - lo;
                Tensor::new(&shape, t.data()[lo * row..hi * row].to_vec())
            })
            .transpose()
    };
    (0..n)
        .step_by(size.max(1))
        .map(|lo| {
            let hi = (lo + size).min(n);
            Ok(Inputs {
                images: slice(&inputs.images, lo, hi)?,
                metadata: slice(&inputs.metadata, lo, hi)?,
                labels: inputs.labels[lo..hi].to_vec(),
                aux_targets: slice(&inputs.aux_targets, lo, hi)?,
            })
        })
        .collect()
}

/// Face coding: stride-2 3x3 conv blocks with ReLU, global average pooling
/// and a linear projection to `face_dim`. `images` is `B x H x W x 3`.
pub fn fem_image<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>, bound: &Bound, images: NodeId) -> Result<NodeId> {
    let config = params.config();
    let shape = tape.value(images).shape().to_vec();
    if shape.len() != 4 || shape[1] != config.image_height || shape[2] != config.image_width || shape[3] != 3 {
        return Err(Error::Dimension(format!(
            "images must be B x {} x {} x 3, got {shape:?}",
            config.image_height, config.image_width
        )));
    }
    let mut x = images;
    for i in 0..config.widths.conv_channels.len() {
        let k = params.node(bound, &params::conv_kernel(i));
        let b = params.node(bound, &params::conv_bias(i));
        x = tape.conv2d(x, k, 2, 1)?;
        x = tape.add_bias(x, b)?;
        x = tape.relu(x)?;
    }
    let pooled = tape.global_avg_pool(x)?;
    let w = params.node(bound, params::PROJ_WEIGHT);
    let b = params.node(bound, params::PROJ_BIAS);
    let z = tape.matmul(pooled, w)?;
    tape.add_bias(z, b)
}

/// Metadata coding: per-indicator z-scores with the frozen training
/// statistics. `meta` is `B x c_mc` in the config's indicator order.
pub fn fem_metadata<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>, bound: &Bound, meta: NodeId) -> Result<NodeId> {
    let c_mc = params.config().c_mc();
    match tape.value(meta).shape() {
        &[_, c] if c == c_mc => {}
        s => return Err(Error::Dimension(format!("metadata must be B x {c_mc}, got {s:?}"))),
    }
    let mean = params.node(bound, params::META_MEAN);
    let sd = params.node(bound, params::META_SD);
    tape.standardize(meta, mean, sd, T::from_f64_lossy(SD_FLOOR))
}

#[allow(clippy::too_many_arguments)]
fn mlp<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &Bound,
    head: usize,
    layers: usize,
    mut x: NodeId,
    training: bool,
    rng: &mut R,
) -> Result<NodeId> {
    let rate = params.config().dropout;
    for i in 0..layers {
        let w = params.node(bound, &params::mlp_weight(head, i));
        let b = params.node(bound, &params::mlp_bias(head, i));
        x = tape.matmul(x, w)?;
        x = tape.add_bias(x, b)?;
        if i + 1 < layers {
            x = tape.relu(x)?;
            x = tape.dropout(x, rate, rng, training)?;
        }
    }
    Ok(x)
}

/// Prediction head on the fusion `[face | metadata]` (either part may be
/// absent). Returns the fusion node and the clamped sigmoid output `B x 1`.
pub fn flm_predict<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &Bound,
    face: Option<NodeId>,
    metadata: Option<NodeId>,
    training: bool,
    rng: &mut R,
) -> Result<(NodeId, NodeId)> {
    let fusion = match (face, metadata) {
        (Some(f), Some(m)) => tape.concat_cols(f, m)?,
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => return Err(Error::Contract("prediction head needs an input".into())),
    };
    let width = tape.value(fusion).shape().last().copied().unwrap_or(0);
    let expected = params.config().mlp1_input();
    if tape.value(fusion).rank() != 2 || width != expected {
        return Err(Error::Dimension(format!("fusion width {width} does not match mlp1 input {expected}")));
    }
    let layers = params.config().widths.mlp1_hidden.len() + 1;
    let logit = mlp(tape, params, bound, 1, layers, fusion, training, rng)?;
    let y = tape.sigmoid(logit)?;
    let eps = T::from_f64_lossy(LOG_EPS);
    let y = tape.clamp(y, eps, T::one() - eps)?;
    Ok((fusion, y))
}

/// Auxiliary head: regression of the standardized Gender, BMI and Weight
/// from the face coding alone. Returns `B x 3`.
pub fn flm_aux<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &Bound,
    face: NodeId,
    training: bool,
    rng: &mut R,
) -> Result<NodeId> {
    let config = params.config();
    if !config.has_aux() {
        return Err(Error::Contract("this model has no auxiliary head".into()));
    }
    let width = tape.value(face).shape().last().copied().unwrap_or(0);
    if width != config.widths.face_dim {
        return Err(Error::Dimension(format!("face coding width {width}, aux head expects {}", config.widths.face_dim)));
    }
    mlp(tape, params, bound, 2, config.widths.mlp2_hidden.len() + 1, face, training, rng)
}

/// `alpha * L_bce + (1 - alpha) * L_aux`.
///
/// `L_bce` is the mean binary cross-entropy of `y_fat` (`B x 1`) against
/// `labels`, with both logarithm arguments clamped at 1e-12. `aux` pairs
/// the auxiliary output with its standardized targets; `L_aux` is their
/// mean squared error. Without `aux` the loss is `alpha * L_bce`.
pub fn joint_loss<T: Scalar>(
    tape: &mut Tape<T>,
    y_fat: NodeId,
    labels: &[u8],
    aux: Option<(NodeId, NodeId)>,
    alpha: f64,
) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("label {bad} is not 0/1")));
    }
    if tape.value(y_fat).numel() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            tape.value(y_fat).numel(),
            labels.len()
        )));
    }
    let shape = tape.value(y_fat).shape().to_vec();
    let pos = tape.constant(Tensor::new(&shape, labels.iter().map(|&l| T::from_u8(l).expect("0/1")).collect())?);
    let neg = tape.constant(Tensor::new(&shape, labels.iter().map(|&l| T::from_u8(1 - l).expect("0/1")).collect())?);
    let eps = T::from_f64_lossy(LOG_EPS);
    let ln_p = tape.ln_clamped(y_fat, eps)?;
    let q = tape.affine(y_fat, -T::one(), T::one())?;
    let ln_q = tape.ln_clamped(q, eps)?;
    let a = tape.mul(pos, ln_p)?;
    let b = tape.mul(neg, ln_q)?;
    let ll = tape.add(a, b)?;
    let mean_ll = tape.mean(ll)?;
    let alpha_t = T::from_f64_lossy(alpha);
    let bce = tape.scale(mean_ll, -alpha_t)?;
    match aux {
        None => Ok(bce),
        Some((y_aux, target)) => {
            let diff = tape.sub(y_aux, target)?;
            let sq = tape.square(diff)?;
            let mse = tape.mean(sq)?;
            let aux_term = tape.scale(mse, T::one() - alpha_t)?;
            tape.add(bce, aux_term)
        }
    }
}
