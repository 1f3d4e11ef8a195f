//! Participants, cohorts and the synthetic cohort generator.
//!
//! Every participant carries a latent severity `z ~ N(0, 1)`. The binary label
//! is `1[z + e > t]` with `e ~ N(0, label_noise_sd)`, each indicator is
//! `loading * z + N(0, noise_sd)` (optionally thresholded to 0/1), and the
//! face image is rendered from `z` and the participant's BMI value. Severity
//! stays inside the generator: it is not written to disk and the training
//! code never reads it.

mod generate;
mod image;
mod io;
mod render;
mod shift;
mod split;

pub use generate::{
    generate_cohort, loading_for_correlation, table_indicators, GenerationConfig, DISTRACTOR_COUNT, PLANTED_SEVEN,
    TABLE_INDICATORS,
};
pub use image::Image;
pub use io::{read_cohort, read_ppm, write_cohort, write_ppm, CONFIG_FILE, METADATA_FILE};
pub use render::{face_geometry, melasma_rate, render_face, FaceGeometry, RenderConfig};
pub use shift::{apply_cohort_shift, CohortShift, ShiftPreset};
pub use split::{split_kfold, stratified_folds, Fold};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorKind {
    Continuous,
    Binary,
}

/// One generated indicator: `loading * z + N(0, noise_sd)`, thresholded to
/// 0/1 for binary indicators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub name: String,
    pub kind: IndicatorKind,
    pub loading: f64,
    pub noise_sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binarize_threshold: Option<f64>,
}

impl IndicatorSpec {
    pub fn continuous(name: &str, loading: f64, noise_sd: f64) -> Self {
        IndicatorSpec {
            name: name.to_string(),
            kind: IndicatorKind::Continuous,
            loading,
            noise_sd,
            binarize_threshold: None,
        }
    }

    pub fn binary(name: &str, loading: f64, noise_sd: f64, threshold: f64) -> Self {
        IndicatorSpec {
            name: name.to_string(),
            kind: IndicatorKind::Binary,
            loading,
            noise_sd,
            binarize_threshold: Some(threshold),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', '"', '\n']) {
            return Err(Error::Config(format!("invalid indicator name {:?}", self.name)));
        }
        if !(self.noise_sd >= 0.0) || !self.loading.is_finite() {
            return Err(Error::Config(format!("indicator {}: bad loading/noise_sd", self.name)));
        }
        match (self.kind, self.binarize_threshold) {
            (IndicatorKind::Binary, None) => {
                Err(Error::Config(format!("binary indicator {} needs a binarize_threshold", self.name)))
            }
            (IndicatorKind::Continuous, Some(_)) => {
                Err(Error::Config(format!("continuous indicator {} cannot have a binarize_threshold", self.name)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Participant {
    id: String,
    label: u8,
    metadata: Vec<f64>,
    image: Option<Image>,
    severity: Option<f64>,
}

impl Participant {
    pub fn new(id: impl Into<String>, label: u8, metadata: Vec<f64>, image: Option<Image>) -> Result<Self> {
        let id = id.into();
        if label > 1 {
            return Err(Error::Data(format!("participant {id}: label {label} is not 0/1")));
        }
        if id.is_empty() || id.contains(['/', '\\', ',', '"', '\n']) {
            return Err(Error::Data(format!("invalid participant id {id:?}")));
        }
        Ok(Participant { id, label, metadata, image, severity: None })
    }

    pub(crate) fn with_severity(mut self, severity: f64) -> Self {
        self.severity = Some(severity);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    /// Indicator values in the cohort's declared indicator order.
    pub fn metadata(&self) -> &[f64] {
        &self.metadata
    }

    pub fn image(&self) -> Option<&Image> {
        self.image.as_ref()
    }

    /// Generator ground truth, for diagnostics and tests only. Absent for
    /// cohorts read back from disk.
    pub fn latent_severity(&self) -> Option<f64> {
        self.severity
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    participants: Vec<Participant>,
    config: GenerationConfig,
}

impl Cohort {
    /// Assemble a cohort, checking id uniqueness and metadata widths against
    /// `config.indicators`.
    pub fn new(participants: Vec<Participant>, config: GenerationConfig) -> Result<Self> {
        let width = config.indicators.len();
        let mut seen = std::collections::HashSet::new();
        for p in &participants {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Data(format!("duplicate participant id {}", p.id)));
            }
            if p.metadata.len() != width {
                return Err(Error::Data(format!(
                    "participant {} has {} indicator values, cohort declares {width}",
                    p.id,
                    p.metadata.len()
                )));
            }
        }
        Ok(Cohort { participants, config })
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn participant(&self, index: usize) -> &Participant {
        &self.participants[index]
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.participants.iter().position(|p| p.id == id)
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn indicators(&self) -> &[IndicatorSpec] {
        &self.config.indicators
    }

    pub fn indicator_names(&self) -> Vec<&str> {
        self.config.indicators.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn year_tag(&self) -> &str {
        &self.config.year_tag
    }

    pub fn has_images(&self) -> bool {
        !self.participants.is_empty() && self.participants.iter().all(|p| p.image.is_some())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.config
            .indicators
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::Data(format!("indicator {name} not present in cohort {}", self.year_tag())))
    }

    /// Column positions of `names`, failing on the first missing indicator.
    pub fn indices_of<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.index_of(n.as_ref())).collect()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index_of(name)?;
        Ok(self.participants.iter().map(|p| p.metadata[j]).collect())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.participants.iter().map(|p| p.label).collect()
    }

    pub fn prevalence(&self) -> f64 {
        let pos = self.participants.iter().filter(|p| p.label == 1).count();
        pos as f64 / self.len().max(1) as f64
    }

    /// The same participants with `shift` applied to every image.
    pub fn shifted(&self, shift: &CohortShift, year_tag: &str) -> Result<Cohort> {
        shift.validate()?;
        if !self.config.shift.is_identity() {
            return Err(Error::Config(format!("cohort {} already carries a shift", self.year_tag())));
        }
        let mut config = self.config.clone();
        config.year_tag = year_tag.to_string();
        config.shift = *shift;
        let participants = self
            .participants
            .iter()
            .map(|p| Participant { image: p.image.as_ref().map(|im| apply_cohort_shift(im, shift)), ..p.clone() })
            .collect();
        Ok(Cohort { participants, config })
    }
}
