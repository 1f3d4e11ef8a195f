use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StatNormal};

use super::render::{render_face, RenderConfig};
use super::shift::CohortShift;
use super::{Cohort, IndicatorKind, IndicatorSpec, Participant};
use crate::error::{Error, Result};

/// Clinical indicators of the default generator as `(name, loading,
/// binarize threshold)`, with `noise_sd = 1`. Loadings are calibrated so the
/// point-biserial correlation with the label, at `label_noise_sd = 0.4` and
/// 50% prevalence, hits the target magnitudes of the reference cohort
/// (BMI about 0.60 down to SMOKE about 0.12). Binary thresholds also match the
/// target indicator prevalences.
pub const TABLE_INDICATORS: [(&str, f64, Option<f64>); 23] = [
    ("BMI", 1.3973, None),
    ("WEIGHT", 1.0966, None),
    ("HLP", 0.8025, Some(0.1191)),
    ("UA", 0.6003, None),
    ("TG", 0.5606, None),
    ("OBE", 1.0736, Some(1.4957)),
    ("DBP", 0.5018, None),
    ("SBP", 0.4961, None),
    ("APOB", 0.4942, None),
    ("HGB", 0.4868, None),
    ("RBC", 0.4812, None),
    ("MALE", 0.5793, Some(-0.029)),
    ("AST", 0.4504, None),
    ("HUA", 0.5516, Some(0.6656)),
    ("HPT", 0.5401, Some(0.8397)),
    ("HDL", -0.3620, None),
    ("WBC", 0.3459, None),
    ("LDL", 0.3395, None),
    ("APOA", -0.3159, None),
    ("ALP", 0.3097, None),
    ("FBG", 0.3066, None),
    ("SMOKE", 0.2302, Some(0.6921)),
    ("DRINK", 0.2775, Some(0.5442)),
];

/// Pure-noise indicators appended to the default configuration.
pub const DISTRACTOR_COUNT: usize = 8;

/// Indicators of the planted selection-recovery generator: only these carry
/// signal, every other table indicator has loading 0.
pub const PLANTED_SEVEN: [(&str, f64); 7] =
    [("BMI", 1.2), ("TG", 0.9), ("HPT", 0.8), ("HLP", 0.8), ("HDL", -0.9), ("WEIGHT", 1.0), ("DRINK", 0.6)];

fn default_label_noise() -> f64 {
    0.4
}

fn default_prevalence() -> f64 {
    0.5
}

fn default_year() -> String {
    "2021".to_string()
}

/// Everything needed to regenerate a cohort bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n: usize,
    /// Seed the cohort was generated with; overwritten by [`generate_cohort`].
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_year")]
    pub year_tag: String,
    #[serde(default = "default_prevalence")]
    pub prevalence: f64,
    #[serde(default = "default_label_noise")]
    pub label_noise_sd: f64,
    pub indicators: Vec<IndicatorSpec>,
    /// Face rendering settings; `None` generates a metadata-only cohort.
    #[serde(default)]
    pub images: Option<RenderConfig>,
    /// Acquisition shift applied to every image after rendering.
    #[serde(default)]
    pub shift: CohortShift,
}

impl Default for GenerationConfig {
    /// 676 participants with 64x64 faces, the 23 table indicators and
    /// [`DISTRACTOR_COUNT`] noise indicators.
    fn default() -> Self {
        let mut indicators = table_indicators();
        indicators.extend((1..=DISTRACTOR_COUNT).map(|i| IndicatorSpec::continuous(&format!("X{i:02}"), 0.0, 1.0)));
        GenerationConfig {
            n: 676,
            seed: 0,
            year_tag: default_year(),
            prevalence: default_prevalence(),
            label_noise_sd: default_label_noise(),
            indicators,
            images: Some(RenderConfig::default()),
            shift: CohortShift::default(),
        }
    }
}

impl GenerationConfig {
    /// The default indicators without images, for correlation work.
    pub fn metadata_only(n: usize) -> Self {
        GenerationConfig { n, images: None, ..Self::default() }
    }

    /// 23 table indicators of which only [`PLANTED_SEVEN`] carry signal.
    pub fn planted_seven(n: usize) -> Self {
        let indicators = table_indicators()
            .into_iter()
            .map(|mut spec| {
                spec.loading = PLANTED_SEVEN.iter().find(|(name, _)| *name == spec.name).map_or(0.0, |(_, l)| *l);
                spec
            })
            .collect();
        GenerationConfig { n, indicators, images: None, ..Self::default() }
    }

    /// Default cohort with a weaker facial signal.
    pub fn reduced_image_signal() -> Self {
        GenerationConfig { images: Some(RenderConfig::reduced_signal()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("cohort size must be at least 2, got {}", self.n)));
        }
        if self.indicators.is_empty() {
            return Err(Error::Config("indicator list is empty".into()));
        }
        if !self.indicators.iter().any(|s| s.loading != 0.0) {
            return Err(Error::Config("at least one indicator needs a nonzero loading".into()));
        }
        let mut names = std::collections::HashSet::new();
        for spec in &self.indicators {
            spec.validate()?;
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Config(format!("duplicate indicator {}", spec.name)));
            }
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::Config(format!("prevalence must lie in (0, 1), got {}", self.prevalence)));
        }
        if !(self.label_noise_sd >= 0.0) || !self.label_noise_sd.is_finite() {
            return Err(Error::Config(format!("label_noise_sd must be nonnegative, got {}", self.label_noise_sd)));
        }
        if let Some(img) = &self.images {
            if img.height < 8 || img.width < 8 {
                return Err(Error::Config("images must be at least 8x8".into()));
            }
        }
        self.shift.validate()
    }

    /// Cut-off on `z + e` giving the configured prevalence.
    pub fn label_threshold(&self) -> f64 {
        let sd = (1.0 + self.label_noise_sd * self.label_noise_sd).sqrt();
        StatNormal::standard().inverse_cdf(1.0 - self.prevalence) * sd
    }
}

/// The 23 table indicators with their calibrated loadings.
pub fn table_indicators() -> Vec<IndicatorSpec> {
    TABLE_INDICATORS
        .iter()
        .map(|&(name, loading, threshold)| match threshold {
            Some(t) => IndicatorSpec::binary(name, loading, 1.0, t),
            None => IndicatorSpec::continuous(name, loading, 1.0),
        })
        .collect()
}

/// Loading of a continuous indicator with unit noise whose population
/// correlation with the label is `target`. Fails when `target` exceeds the
/// correlation between the latent severity and the label itself.
pub fn loading_for_correlation(target: f64, label_noise_sd: f64, prevalence: f64) -> Result<f64> {
    let s = (1.0 + label_noise_sd * label_noise_sd).sqrt();
    let std = StatNormal::standard();
    let tau = std.inverse_cdf(1.0 - prevalence);
    let max_rho = std.pdf(tau) / (s * (prevalence * (1.0 - prevalence)).sqrt());
    let r = target / max_rho;
    if !(r.abs() < 1.0) {
        return Err(Error::Config(format!("correlation {target} unreachable, maximum is {max_rho:.4}")));
    }
    Ok(r / (1.0 - r * r).sqrt())
}

/// Draw a cohort. Participant `i` gets id `p{i:05}`.
pub fn generate_cohort(config: &GenerationConfig, seed: u64) -> Result<Cohort> {
    config.validate()?;
    let mut config = config.clone();
    config.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = config.label_threshold();
    let label_noise = Normal::new(0.0, config.label_noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let bmi_col = config.indicators.iter().position(|s| s.name == "BMI");

    let mut participants = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let z: f64 = rng.sample(StandardNormal);
        let label = u8::from(z + label_noise.sample(&mut rng) > tau);
        let metadata: Vec<f64> = config
            .indicators
            .iter()
            .map(|spec| {
                let e: f64 = rng.sample(StandardNormal);
                let x = spec.loading * z + spec.noise_sd * e;
                match (spec.kind, spec.binarize_threshold) {
                    (IndicatorKind::Binary, Some(t)) => f64::from(u8::from(x > t)),
                    _ => x,
                }
            })
            .collect();
        let style_seed = rng.next_u64();
        let image = config.images.as_ref().map(|rc| {
            let bmi = bmi_col.map_or(0.0, |j| metadata[j]);
            let face = render_face(z, bmi, style_seed, rc);
            super::shift::apply_cohort_shift(&face, &config.shift)
        });
        participants.push(Participant::new(format!("p{i:05}"), label, metadata, image)?.with_severity(z));
    }
    Cohort::new(participants, config)
}
