use crate::error::{Error, Result};
use crate::ndtensor::Tensor;
use crate::scalar::Scalar;

/// Three-channel image with pixels in `[0, 1]`, stored row-major as
/// `height x width x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension("image sides must be positive".into()));
        }
        if pixels.len() != height * width * Self::CHANNELS {
            return Err(Error::Dimension(format!(
                "{height}x{width}x3 image needs {} pixels, got {}",
                height * width * Self::CHANNELS,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Image { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels)
    }

    pub(crate) fn from_raw(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Image { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * 3 + c] = v.clamp(0.0, 1.0);
    }

    /// Mean Rec. 601 luma over all pixels.
    pub fn mean_luminance(&self) -> f64 {
        let sum: f64 = self.pixels.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).sum();
        sum / (self.height * self.width) as f64
    }

    /// Mean of `(R + G) / 2 - B`: positive for yellow tones.
    pub fn mean_yellowness(&self) -> f64 {
        let sum: f64 = self.pixels.chunks_exact(3).map(|p| 0.5 * (p[0] + p[1]) - p[2]).sum();
        sum / (self.height * self.width) as f64
    }

    pub fn l2_distance(&self, other: &Image) -> f64 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.height, self.width, 3], &self.pixels).expect("image shape is consistent")
    }
}
