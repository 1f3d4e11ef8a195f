use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which inputs feed the prediction head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Face coding and metadata coding, concatenated.
    Multimodal,
    /// Face coding only.
    Image,
    /// Metadata coding only; no image path and no auxiliary head.
    Metadata,
}

impl Mode {
    pub fn uses_image(self) -> bool {
        self != Mode::Metadata
    }

    pub fn uses_metadata(self) -> bool {
        self != Mode::Image
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multimodal" => Ok(Mode::Multimodal),
            "image" | "image-only" => Ok(Mode::Image),
            "metadata" | "metadata-only" => Ok(Mode::Metadata),
            _ => Err(Error::Config(format!("unknown mode {s:?} (multimodal, image, metadata)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Multimodal => "multimodal",
            Mode::Image => "image",
            Mode::Metadata => "metadata",
        })
    }
}

/// Layer plan of the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    /// Output channels of the stride-2 3x3 conv blocks.
    pub conv_channels: Vec<usize>,
    /// Width of the face coding produced by the 1x1 projection.
    pub face_dim: usize,
    /// Hidden widths of the prediction head; a 1-wide output layer follows.
    pub mlp1_hidden: Vec<usize>,
    /// Hidden widths of the auxiliary head; a 3-wide output layer follows.
    pub mlp2_hidden: Vec<usize>,
}

impl Widths {
    /// Reference architecture: 2048-wide face coding and a 2056-wide first
    /// fusion layer.
    pub fn paper() -> Self {
        Widths {
            conv_channels: vec![16, 32, 64, 128, 128],
            face_dim: 2048,
            mlp1_hidden: vec![2056, 1024, 1024, 512, 256, 128],
            mlp2_hidden: vec![1024, 1024],
        }
    }

    /// The same topology scaled down about sixteenfold, trainable on one CPU
    /// core in minutes.
    pub fn desk() -> Self {
        Widths {
            conv_channels: vec![8, 16, 32, 32, 32],
            face_dim: 128,
            mlp1_hidden: vec![136, 64, 64, 32, 16, 8],
            mlp2_hidden: vec![64, 64],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown width preset {name:?} (paper, desk)"))),
        }
    }
}

impl Default for Widths {
    fn default() -> Self {
        Self::paper()
    }
}

/// Names of the auxiliary regression targets, in output order.
pub const AUX_TARGETS: [&str; 3] = ["MALE", "BMI", "WEIGHT"];

fn default_dropout() -> f64 {
    0.3
}

fn default_alpha() -> f64 {
    0.7
}

fn default_true() -> bool {
    true
}

/// Everything that fixes the parameter shapes and the loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    /// Metadata indicators, in input order. Empty in image mode.
    pub indicators: Vec<String>,
    pub image_height: usize,
    pub image_width: usize,
    pub widths: Widths,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Weight of the classification loss in the joint loss.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Train the auxiliary head. Ignored in metadata mode.
    #[serde(default = "default_true")]
    pub aux: bool,
}

impl ModelConfig {
    pub fn new(mode: Mode, indicators: &[&str], widths: Widths) -> Self {
        ModelConfig {
            mode,
            indicators: if mode.uses_metadata() { indicators.iter().map(|s| s.to_string()).collect() } else { vec![] },
            image_height: 64,
            image_width: 64,
            widths,
            dropout: default_dropout(),
            alpha: default_alpha(),
            aux: true,
        }
    }

    /// Metadata coding width `c_mc` (0 in image mode).
    pub fn c_mc(&self) -> usize {
        if self.mode.uses_metadata() { self.indicators.len() } else { 0 }
    }

    /// Whether the auxiliary head exists and is trained.
    pub fn has_aux(&self) -> bool {
        self.aux && self.mode.uses_image()
    }

    /// Input width of the prediction head.
    pub fn mlp1_input(&self) -> usize {
        let face = if self.mode.uses_image() { self.widths.face_dim } else { 0 };
        face + self.c_mc()
    }

    /// Spatial size after each conv block.
    pub fn conv_sizes(&self) -> Vec<(usize, usize)> {
        let mut hw = (self.image_height, self.image_width);
        self.widths
            .conv_channels
            .iter()
            .map(|_| {
                hw = ((hw.0 + 2 - 3) / 2 + 1, (hw.1 + 2 - 3) / 2 + 1);
                hw
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if self.mode.uses_image() {
            if self.image_height < 2 || self.image_width < 2 {
                return Err(Error::Config("image sides must be at least 2".into()));
            }
            if w.conv_channels.is_empty() || w.conv_channels.contains(&0) || w.face_dim == 0 {
                return Err(Error::Config("conv channels and face_dim must be positive".into()));
            }
        }
        if self.mode.uses_metadata() && self.indicators.is_empty() {
            return Err(Error::Config(format!("{} mode needs at least one indicator", self.mode)));
        }
        if !self.mode.uses_metadata() && !self.indicators.is_empty() {
            return Err(Error::Config("image mode takes no indicators".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.indicators.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Config(format!("indicator {dup} listed twice")));
        }
        if w.mlp1_hidden.contains(&0) || w.mlp2_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}
