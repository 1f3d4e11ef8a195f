use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

/// Acquisition drift between collection years:
/// `pixel' = clamp((gain * pixel + offset[c]) ^ gamma, 0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortShift {
    pub brightness_gain: f64,
    pub tone_offset: [f64; 3],
    pub exposure_gamma: f64,
}

impl Default for CohortShift {
    fn default() -> Self {
        Self::identity()
    }
}

impl CohortShift {
    pub fn identity() -> Self {
        CohortShift { brightness_gain: 1.0, tone_offset: [0.0; 3], exposure_gamma: 1.0 }
    }

    /// Mild drift: darker, slightly warmer, a touch more contrast.
    pub fn year2020() -> Self {
        CohortShift { brightness_gain: 0.85, tone_offset: [0.03, 0.02, -0.02], exposure_gamma: 1.1 }
    }

    /// Blown-out exposure: contrast cut to a tenth and lifted until every
    /// pixel saturates, so no image content survives. A contrast cut alone
    /// keeps the ordering of pixel values, which a ReLU network largely
    /// preserves.
    pub fn severe() -> Self {
        CohortShift { brightness_gain: 0.1, tone_offset: [1.0; 3], exposure_gamma: 1.0 }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.brightness_gain > 0.0) || !(self.exposure_gamma > 0.0) {
            return Err(Error::Config("shift gain and gamma must be positive".into()));
        }
        if self.tone_offset.iter().any(|v| !v.is_finite()) || !self.brightness_gain.is_finite() || !self.exposure_gamma.is_finite() {
            return Err(Error::Config("shift fields must be finite".into()));
        }
        Ok(())
    }

    pub fn apply_pixel(&self, value: f64, channel: usize) -> f64 {
        let base = (self.brightness_gain * value + self.tone_offset[channel]).clamp(0.0, 1.0);
        base.powf(self.exposure_gamma).clamp(0.0, 1.0)
    }
}

pub fn apply_cohort_shift(image: &Image, shift: &CohortShift) -> Image {
    if shift.is_identity() {
        return image.clone();
    }
    let pixels = image.pixels().iter().enumerate().map(|(i, &v)| shift.apply_pixel(v, i % 3)).collect();
    Image::from_raw(image.height(), image.width(), pixels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftPreset {
    None,
    Year2020,
    Severe,
}

impl ShiftPreset {
    pub fn shift(self) -> CohortShift {
        match self {
            ShiftPreset::None => CohortShift::identity(),
            ShiftPreset::Year2020 => CohortShift::year2020(),
            ShiftPreset::Severe => CohortShift::severe(),
        }
    }
}

impl FromStr for ShiftPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ShiftPreset::None),
            "year2020" => Ok(ShiftPreset::Year2020),
            "severe" => Ok(ShiftPreset::Severe),
            other => Err(Error::Config(format!("unknown shift preset {other:?} (none, year2020, severe)"))),
        }
    }
}

impl fmt::Display for ShiftPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftPreset::None => "none",
            ShiftPreset::Year2020 => "year2020",
            ShiftPreset::Severe => "severe",
        })
    }
}
