use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::image::Image;

/// Parameters of the procedural face renderer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    /// Yellow shift of the skin per unit of positive severity.
    pub tone_gain: f64,
    /// Fractional luminance loss per unit of positive severity.
    pub luminance_gain: f64,
    /// Poisson rate of melasma blobs per unit of positive severity.
    pub melasma_rate: f64,
    /// Relative face-width change per unit of BMI.
    pub bmi_width_gain: f64,
    pub pixel_noise_sd: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            height: 64,
            width: 64,
            tone_gain: 0.06,
            luminance_gain: 0.06,
            melasma_rate: 1.5,
            bmi_width_gain: 0.07,
            pixel_noise_sd: 0.02,
        }
    }
}

impl RenderConfig {
    /// Same geometry, a quarter of the severity-driven skin signal.
    pub fn reduced_signal() -> Self {
        let base = Self::default();
        RenderConfig {
            tone_gain: base.tone_gain * 0.25,
            luminance_gain: base.luminance_gain * 0.25,
            melasma_rate: base.melasma_rate * 0.25,
            ..base
        }
    }
}

/// Position and radii of the face ellipse, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceGeometry {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl FaceGeometry {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    /// Inclusive pixel bounding box `(y0, x0, y1, x1)`.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        (self.cy - self.ry, self.cx - self.rx, self.cy + self.ry, self.cx + self.rx)
    }
}

const GEOMETRY_STREAM: u64 = 0;
const STYLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

fn stream(style_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(style_seed);
    rng.set_stream(stream);
    rng
}

/// Face ellipse for a participant: jittered around the image centre, width
/// affine in `bmi`.
pub fn face_geometry(bmi: f64, style_seed: u64, cfg: &RenderConfig) -> FaceGeometry {
    let mut rng = stream(style_seed, GEOMETRY_STREAM);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let cx = w / 2.0 + rng.random_range(-0.04..0.04) * w;
    let cy = h / 2.0 + rng.random_range(-0.04..0.04) * h;
    let ry = h * rng.random_range(0.36..0.40);
    let width_factor = (1.0 + cfg.bmi_width_gain * bmi).clamp(0.6, 1.6);
    let rx = (w * 0.27 * width_factor).clamp(0.12 * w, 0.46 * w);
    FaceGeometry { cx, cy, rx, ry }
}

/// Render a synthetic face.
///
/// Positive severity darkens and yellows the skin and seeds melasma blobs;
/// severity at or below zero leaves the skin at its style colour. Style
/// (skin tone, jitter, blob placement, pixel noise) is a pure function of
/// `style_seed`.
pub fn render_face(severity: f64, bmi: f64, style_seed: u64, cfg: &RenderConfig) -> Image {
    let (h, w) = (cfg.height, cfg.width);
    let geom = face_geometry(bmi, style_seed, cfg);
    let mut style = stream(style_seed, STYLE_STREAM);

    let r0 = style.random_range(0.72..0.92);
    let skin = [r0, r0 * style.random_range(0.74..0.82), r0 * style.random_range(0.60..0.70)];
    let s = severity.max(0.0);
    let dim = (1.0 - cfg.luminance_gain * s).max(0.3);
    let skin = [
        skin[0] * dim + 0.4 * cfg.tone_gain * s,
        skin[1] * dim + 0.25 * cfg.tone_gain * s,
        skin[2] * dim - cfg.tone_gain * s,
    ];
    let background = [0.55, 0.58, 0.62];

    let mut pixels = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let inside = geom.contains(y as f64 + 0.5, x as f64 + 0.5);
            let c = if inside { skin } else { background };
            pixels[(y * w + x) * 3..][..3].copy_from_slice(&c);
        }
    }

    let paint_disc = |pixels: &mut [f64], cy: f64, cx: f64, r: f64, f: &dyn Fn([f64; 3]) -> [f64; 3]| {
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h));
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= r * r {
                    let px = &mut pixels[(y * w + x) * 3..][..3];
                    let out = f([px[0], px[1], px[2]]);
                    px.copy_from_slice(&out);
                }
            }
        }
    };

    // eyes and mouth
    let eye_r = (geom.rx * 0.14).max(1.0);
    for side in [-1.0, 1.0] {
        paint_disc(&mut pixels, geom.cy - 0.2 * geom.ry, geom.cx + side * 0.4 * geom.rx, eye_r, &|_| [0.15, 0.12, 0.1]);
    }
    let mouth_y = geom.cy + 0.45 * geom.ry;
    let mouth_half = 0.35 * geom.rx;
    let mut mx = geom.cx - mouth_half;
    while mx <= geom.cx + mouth_half {
        paint_disc(&mut pixels, mouth_y, mx, 1.0, &|_| [0.55, 0.2, 0.2]);
        mx += 1.0;
    }

    let rate = melasma_rate(severity, cfg);
    let blobs = if rate > 0.0 { Poisson::new(rate).map(|d| d.sample(&mut style) as usize).unwrap_or(0) } else { 0 };
    for _ in 0..blobs {
        // rejection-sample a centre inside the inner face
        let (cy, cx) = loop {
            let u: f64 = style.random_range(-1.0..1.0);
            let v: f64 = style.random_range(-1.0..1.0);
            if u * u + v * v <= 0.55 {
                break (geom.cy + v * geom.ry, geom.cx + u * geom.rx);
            }
        };
        let r = style.random_range(1.5..3.5);
        paint_disc(&mut pixels, cy, cx, r, &|p| [p[0] * 0.72, p[1] * 0.66, p[2] * 0.6]);
    }

    if cfg.pixel_noise_sd > 0.0 {
        let mut noise_rng = stream(style_seed, NOISE_STREAM);
        let noise = Normal::new(0.0, cfg.pixel_noise_sd).expect("positive sd");
        for v in pixels.iter_mut() {
            *v += noise.sample(&mut noise_rng);
        }
    }
    for v in pixels.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Image::from_raw(h, w, pixels)
}

/// Poisson rate of melasma blobs; zero for nonpositive severity.
pub fn melasma_rate(severity: f64, cfg: &RenderConfig) -> f64 {
    cfg.melasma_rate * severity.max(0.0)
}
