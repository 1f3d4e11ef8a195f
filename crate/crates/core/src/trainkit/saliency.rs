use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{write_ppm, Image};
use crate::error::{Error, Result};
use crate::model::{Inputs, ModelParams};
use crate::ndtensor::Tensor;
use crate::scalar::Scalar;

/// Gray level of the occluding patch.
pub const OCCLUSION_GRAY: f64 = 0.5;

/// Prediction drop per patch position, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub stride: usize,
    /// Prediction on the unoccluded image.
    pub baseline: f64,
    /// `baseline - prediction with the patch at (row, col)`.
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Cell with the largest prediction drop (first on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// Pixel centre `(y, x)` of the patch behind a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.patch as f64 - 1.0) / 2.0;
        ((row * self.stride) as f64 + half, (col * self.stride) as f64 + half)
    }

    /// Grayscale image scaled to [0, 1] by min and max; all zeros when flat.
    pub fn to_image(&self) -> Result<Image> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let pixels = self
            .values
            .iter()
            .flat_map(|&v| {
                let g = if span > 0.0 { (v - lo) / span } else { 0.0 };
                [g; 3]
            })
            .collect();
        Image::new(self.rows, self.cols, pixels)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        write_ppm(path, &self.to_image()?)
    }

    /// Raw values as `row,col,center_y,center_x,delta` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("row,col,center_y,center_x,delta\n");
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (y, x) = self.cell_center(r, c);
                out.push_str(&format!("{r},{c},{y},{x},{}\n", self.get(r, c)));
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Occlusion saliency: slide a gray `patch x patch` square over `image` with
/// `stride` and record how much the predicted probability drops. `metadata`
/// holds the raw indicator values in the model's order and is required
/// exactly when the model uses metadata.
pub fn occlusion_saliency<T: Scalar>(
    model: &ModelParams<T>,
    image: &Image,
    metadata: Option<&[f64]>,
    patch: usize,
    stride: usize,
) -> Result<Heatmap> {
    let config = model.config();
    if !config.mode.uses_image() {
        return Err(Error::Config("occlusion saliency needs an image model".into()));
    }
    let (h, w) = (image.height(), image.width());
    if (h, w) != (config.image_height, config.image_width) {
        return Err(Error::Dimension(format!(
            "image is {h}x{w}, model expects {}x{}",
            config.image_height, config.image_width
        )));
    }
    if patch == 0 || patch > h.min(w) {
        return Err(Error::Parameter(format!("patch {patch} must lie in 1..={}", h.min(w))));
    }
    if stride == 0 {
        return Err(Error::Parameter("stride must be positive".into()));
    }
    let meta: Option<Vec<T>> = match (config.mode.uses_metadata(), metadata) {
        (true, Some(m)) if m.len() == config.c_mc() => Some(m.iter().map(|&v| T::from_f64_lossy(v)).collect()),
        (true, Some(m)) => {
            return Err(Error::Dimension(format!("{} indicator values, model takes {}", m.len(), config.c_mc())))
        }
        (true, None) => return Err(Error::Data("model needs indicator values".into())),
        (false, _) => None,
    };
    let rows = (h - patch) / stride + 1;
    let cols = (w - patch) / stride + 1;

    // the unoccluded image first, then every patch position
    let mut images: Vec<T> = Vec::with_capacity((rows * cols + 1) * h * w * 3);
    let original: Vec<T> = image.pixels().iter().map(|&v| T::from_f64_lossy(v)).collect();
    images.extend_from_slice(&original);
    let gray = T::from_f64_lossy(OCCLUSION_GRAY);
    for r in 0..rows {
        for c in 0..cols {
            let start = images.len();
            images.extend_from_slice(&original);
            for y in r * stride..r * stride + patch {
                let row = start + (y * w + c * stride) * 3;
                images[row..row + patch * 3].fill(gray);
            }
        }
    }
    let b = rows * cols + 1;
    let inputs = Inputs {
        images: Some(Tensor::new(&[b, h, w, 3], images)?),
        metadata: match meta {
            Some(m) => Some(Tensor::new(&[b, m.len()], m.repeat(b))?),
            None => None,
        },
        labels: vec![0; b],
        aux_targets: None,
    };
    let y = model.predict(&inputs)?;
    Ok(Heatmap { rows, cols, patch, stride, baseline: y[0], values: y[1..].iter().map(|v| y[0] - v).collect() })
}
