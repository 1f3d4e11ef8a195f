use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, AUX_TARGETS};
use crate::cohort::Cohort;
use crate::analysis::mean_sd;
use crate::error::{Error, Result};
use crate::ndtensor::Tensor;
use crate::scalar::Scalar;

/// How a parameter tensor starts out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`, for layers followed by ReLU.
    He,
    /// `N(0, 1 / fan_in)`, for linear outputs.
    Lecun,
    Zeros,
    Ones,
}

/// One entry of the canonical parameter layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Frozen statistics are carried as parameters (so they are saved and
    /// differentiable) but never updated by the optimizer.
    pub trainable: bool,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, init: Init) -> Self {
        ParamSpec { name, shape, init, trainable: true }
    }

    fn frozen(name: &str, shape: Vec<usize>, init: Init) -> Self {
        ParamSpec { name: name.to_string(), shape, init, trainable: false }
    }
}

pub const META_MEAN: &str = "fem.meta_mean";
pub const META_SD: &str = "fem.meta_sd";
pub const AUX_MEAN: &str = "aux.target_mean";
pub const AUX_SD: &str = "aux.target_sd";
pub const PROJ_WEIGHT: &str = "fem.proj.weight";
pub const PROJ_BIAS: &str = "fem.proj.bias";

pub fn conv_kernel(i: usize) -> String {
    format!("fem.conv{i}.kernel")
}

pub fn conv_bias(i: usize) -> String {
    format!("fem.conv{i}.bias")
}

pub fn mlp_weight(head: usize, i: usize) -> String {
    format!("flm.mlp{head}.{i}.weight")
}

pub fn mlp_bias(head: usize, i: usize) -> String {
    format!("flm.mlp{head}.{i}.bias")
}

fn push_mlp(out: &mut Vec<ParamSpec>, head: usize, dims: &[usize]) {
    let last = dims.len() - 2;
    for (i, pair) in dims.windows(2).enumerate() {
        let init = if i == last { Init::Lecun } else { Init::He };
        out.push(ParamSpec::new(mlp_weight(head, i), vec![pair[0], pair[1]], init));
        out.push(ParamSpec::new(mlp_bias(head, i), vec![pair[1]], Init::Zeros));
    }
}

/// Parameter names, shapes and initializers in canonical order.
pub fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let w = &config.widths;
    let mut out = Vec::new();
    if config.mode.uses_image() {
        let mut cin = 3;
        for (i, &cout) in w.conv_channels.iter().enumerate() {
            out.push(ParamSpec::new(conv_kernel(i), vec![3, 3, cin, cout], Init::He));
            out.push(ParamSpec::new(conv_bias(i), vec![cout], Init::Zeros));
            cin = cout;
        }
        out.push(ParamSpec::new(PROJ_WEIGHT.into(), vec![cin, w.face_dim], Init::Lecun));
        out.push(ParamSpec::new(PROJ_BIAS.into(), vec![w.face_dim], Init::Zeros));
    }
    if config.mode.uses_metadata() {
        out.push(ParamSpec::frozen(META_MEAN, vec![config.c_mc()], Init::Zeros));
        out.push(ParamSpec::frozen(META_SD, vec![config.c_mc()], Init::Ones));
    }
    let mut dims = vec![config.mlp1_input()];
    dims.extend(&w.mlp1_hidden);
    dims.push(1);
    push_mlp(&mut out, 1, &dims);
    if config.has_aux() {
        let mut dims = vec![w.face_dim];
        dims.extend(&w.mlp2_hidden);
        dims.push(AUX_TARGETS.len());
        push_mlp(&mut out, 2, &dims);
        out.push(ParamSpec::frozen(AUX_MEAN, vec![AUX_TARGETS.len()], Init::Zeros));
        out.push(ParamSpec::frozen(AUX_SD, vec![AUX_TARGETS.len()], Init::Ones));
    }
    out
}

/// All tensors of one network, in the canonical order of [`layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Random initialization: weights from the spec'd normal, biases zero,
    /// standardization statistics at (0, 1).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let fan_in: usize = spec.shape[..spec.shape.len() - 1].iter().product();
                let data: Vec<T> = match spec.init {
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                    Init::He | Init::Lecun => {
                        let gain = if spec.init == Init::He { 2.0 } else { 1.0 };
                        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive sd");
                        (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect()
                    }
                };
                Tensor::new(&spec.shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams { config: config.clone(), specs, tensors })
    }

    /// Assemble from tensors in canonical order, checking every shape.
    /// Mismatches are reported together; a mismatch of the prediction head's
    /// first layer is described as an `mlp1 input` width error.
    pub fn from_tensors(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let specs = layout(config);
        if named.len() != specs.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors for this config, got {}",
                specs.len(),
                named.len()
            )));
        }
        let mut problems = Vec::new();
        for (spec, (name, tensor)) in specs.iter().zip(&named) {
            if *name != spec.name {
                problems.push(format!("expected tensor {} in this position, found {name}", spec.name));
            } else if tensor.shape() != spec.shape.as_slice() {
                let msg = format!("{name}: shape {:?}, config expects {:?}", tensor.shape(), spec.shape);
                if *name == mlp_weight(1, 0) {
                    problems.insert(
                        0,
                        format!("mlp1 input width {} does not match config width {} ({msg})", tensor.shape()[0], spec.shape[0]),
                    );
                } else {
                    problems.push(msg);
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Dimension(problems.join("; ")));
        }
        Ok(ModelParams { config: config.clone(), specs, tensors: named.into_iter().map(|(_, t)| t).collect() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    /// Total scalar parameter count, frozen statistics included.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Freeze the metadata standardization and auxiliary-target statistics
    /// from the participants at `train` (training split only).
    pub fn fit_standardization(&mut self, cohort: &Cohort, train: &[usize]) -> Result<()> {
        if train.len() < 2 {
            return Err(Error::Degenerate("standardization needs at least two training samples".into()));
        }
        if self.config.mode.uses_metadata() {
            let names = self.config.indicators.clone();
            self.set_stats(cohort, train, &names, META_MEAN, META_SD)?;
        }
        if self.config.has_aux() {
            let names: Vec<String> = AUX_TARGETS.iter().map(|s| s.to_string()).collect();
            self.set_stats(cohort, train, &names, AUX_MEAN, AUX_SD)?;
        }
        Ok(())
    }

    fn set_stats(&mut self, cohort: &Cohort, train: &[usize], names: &[String], mean: &str, sd: &str) -> Result<()> {
        let cols = cohort.indices_of(names)?;
        let mut means = Vec::with_capacity(cols.len());
        let mut sds = Vec::with_capacity(cols.len());
        for &j in &cols {
            let values: Vec<f64> = train.iter().map(|&i| cohort.participant(i).metadata()[j]).collect();
            let (m, s) = mean_sd(&values)?;
            means.push(T::from_f64_lossy(m));
            sds.push(T::from_f64_lossy(s));
        }
        *self.get_mut(mean).expect("layout has stats") = Tensor::new(&[cols.len()], means)?;
        *self.get_mut(sd).expect("layout has stats") = Tensor::new(&[cols.len()], sds)?;
        Ok(())
    }
}
