use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig, Widths};

/// Parameter update rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr, .. } => lr,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

/// Training settings. Together with an indicator list and the cohort's image
/// size they fix the [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the classification loss in the joint loss.
    pub alpha: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Train the auxiliary head (image modes only).
    pub aux: bool,
    pub widths: Widths,
    pub dropout: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            optimizer: Optimizer::default(),
            batch_size: 16,
            epochs: 40,
            alpha: 0.7,
            seed: 0,
            mode: Mode::Multimodal,
            aux: true,
            widths: Widths::paper(),
            dropout: 0.3,
        }
    }
}

impl Hyperparams {
    /// Narrow network and 20 epochs: the whole experiment suite fits in
    /// minutes on one core. Longer runs overfit at this width.
    pub fn desk() -> Self {
        Hyperparams { widths: Widths::desk(), epochs: 20, ..Hyperparams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, eps, .. } => {
                let bad_eps = eps <= 0.0 || eps.is_nan();
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || bad_eps {
                    return Err(Error::Config("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
                }
            }
            Optimizer::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
                }
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Model configuration for `selection` on `cohort`. The selection is
    /// ignored in image mode.
    pub fn model_config(&self, cohort: &Cohort, selection: &[String]) -> Result<ModelConfig> {
        let names: Vec<&str> = selection.iter().map(String::as_str).collect();
        let mut config = ModelConfig::new(self.mode, &names, self.widths.clone());
        if self.mode.uses_image() {
            let render = cohort
                .config()
                .images
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{} mode needs a cohort with images", self.mode)))?;
            config.image_height = render.height;
            config.image_width = render.width;
        }
        config.alpha = self.alpha;
        config.aux = self.aux;
        config.dropout = self.dropout;
        config.validate()?;
        Ok(config)
    }
}
