//! Deterministic synthetic tomogram slices with one drawn shape family per structure.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, MrcMode, MrcVolume, Structure};

/// Shape family drawn for a structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Band,
    Tube,
    Ring,
    Blob,
    Arc,
}

impl ShapeClass {
    pub fn for_structure(s: Structure) -> Self {
        match s {
            Structure::Synapse => ShapeClass::Band,
            Structure::Mts => ShapeClass::Tube,
            Structure::Centriole => ShapeClass::Ring,
            Structure::Granules => ShapeClass::Blob,
            Structure::Golgi => ShapeClass::Arc,
        }
    }

    /// Intensity offset painted over the background.
    fn contrast(self) -> f64 {
        match self {
            ShapeClass::Band => -0.25,
            ShapeClass::Tube => 0.3,
            ShapeClass::Ring => -0.3,
            ShapeClass::Blob => 0.3,
            ShapeClass::Arc => 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of additive Gaussian noise on the [0, 1] intensity scale.
    pub noise: f64,
    pub structures: Vec<Structure>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            slices: 8,
            height: 128,
            width: 128,
            noise: 0.08,
            structures: Structure::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// Mode-0 volume.
    pub volume: MrcVolume,
    /// One binary mode-0 mask volume per requested structure.
    pub masks: Vec<(Structure, MrcVolume)>,
}

struct Canvas {
    h: usize,
    w: usize,
}

impl Canvas {
    fn paint(&self, image: &mut [f64], mask: &mut [u8], contrast: f64, inside: impl Fn(f64, f64) -> bool) {
        for y in 0..self.h {
            for x in 0..self.w {
                if inside(y as f64, x as f64) {
                    let i = y * self.w + x;
                    if mask[i] == 0 {
                        image[i] += contrast;
                    }
                    mask[i] = 1;
                }
            }
        }
    }
}

fn segment_distance(py: f64, px: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((py - a.0) * dy + (px - a.1) * dx) / len2).clamp(0.0, 1.0)
    };
    let (qy, qx) = (a.0 + t * dy, a.1 + t * dx);
    ((py - qy).powi(2) + (px - qx).powi(2)).sqrt()
}

fn draw<R: Rng>(class: ShapeClass, canvas: &Canvas, image: &mut [f64], mask: &mut [u8], rng: &mut R) {
    let (h, w) = (canvas.h as f64, canvas.w as f64);
    let m = h.min(w);
    let c = class.contrast();
    match class {
        ShapeClass::Blob => {
            let n = (canvas.h * canvas.w / 4096).max(2);
            for _ in 0..n {
                let r = rng.random_range(0.04 * m..0.08 * m);
                let cy = rng.random_range(r..h - r);
                let cx = rng.random_range(r..w - r);
                canvas.paint(image, mask, c, |y, x| (y - cy).powi(2) + (x - cx).powi(2) <= r * r);
            }
        }
        ShapeClass::Tube => {
            let n = (canvas.h / 64).max(1);
            for _ in 0..n {
                let len = 0.4 * w;
                let theta = rng.random_range(0.0..PI);
                let (dy, dx) = (0.5 * len * theta.sin(), 0.5 * len * theta.cos());
                let cy = rng.random_range(dy.abs()..h - dy.abs());
                let cx = rng.random_range(dx.abs()..w - dx.abs());
                let (a, b) = ((cy - dy, cx - dx), (cy + dy, cx + dx));
                canvas.paint(image, mask, c, |y, x| segment_distance(y, x, a, b) <= 0.7);
            }
        }
        ShapeClass::Ring => {
            let r = rng.random_range(0.06 * m..0.1 * m);
            let cy = rng.random_range(r + 2.0..h - r - 2.0);
            let cx = rng.random_range(r + 2.0..w - r - 2.0);
            canvas.paint(image, mask, c, |y, x| {
                (((y - cy).powi(2) + (x - cx).powi(2)).sqrt() - r).abs() <= 1.5
            });
        }
        ShapeClass::Band => {
            let half = rng.random_range(0.04 * m..0.06 * m);
            let theta = rng.random_range(0.0..PI);
            let (ny, nx) = (theta.cos(), -theta.sin());
            let cy = rng.random_range(0.3 * h..0.7 * h);
            let cx = rng.random_range(0.3 * w..0.7 * w);
            canvas.paint(image, mask, c, |y, x| ((y - cy) * ny + (x - cx) * nx).abs() <= half);
        }
        ShapeClass::Arc => {
            let r0 = rng.random_range(0.12 * m..0.18 * m);
            let span = 2.0 * PI / 3.0;
            let start = rng.random_range(0.0..2.0 * PI);
            let reach = r0 + 8.0 + 1.0;
            let cy = rng.random_range(reach..h - reach);
            let cx = rng.random_range(reach..w - reach);
            canvas.paint(image, mask, c, |y, x| {
                let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                let a = ((y - cy).atan2(x - cx) - start).rem_euclid(2.0 * PI);
                a <= span && (0..3).any(|k| (d - (r0 + 4.0 * k as f64)).abs() <= 1.0)
            });
        }
    }
}

/// Generates the dataset; extents must be multiples of 16.
pub fn synthesize(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset, DataError> {
    if !cfg.height.is_multiple_of(16) || !cfg.width.is_multiple_of(16) || cfg.height < 32 || cfg.width < 32 {
        return Err(DataError::Shape(format!(
            "synthetic extents {}x{} must be multiples of 16 and at least 32",
            cfg.height, cfg.width
        )));
    }
    if cfg.slices == 0 || cfg.structures.is_empty() {
        return Err(DataError::Shape("need at least one slice and one structure".into()));
    }
    let (h, w) = (cfg.height, cfg.width);
    let canvas = Canvas { h, w };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| DataError::Shape(e.to_string()))?;
    let mut volume = Vec::with_capacity(cfg.slices * h * w);
    let mut masks: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.slices * h * w); cfg.structures.len()];
    for _ in 0..cfg.slices {
        let (fy, fx, phase) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.0..2.0 * PI));
        let mut image: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
                0.45 + 0.08 * (2.0 * PI * (fy * y + fx * x) + phase).sin()
            })
            .collect();
        for (k, &s) in cfg.structures.iter().enumerate() {
            let mut mask = vec![0u8; h * w];
            draw(ShapeClass::for_structure(s), &canvas, &mut image, &mut mask, &mut rng);
            masks[k].extend(mask.iter().map(|&m| m as f64));
        }
        for v in &mut image {
            let noisy = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            volume.push((noisy * 255.0).round() - 128.0);
        }
    }
    Ok(SynthDataset {
        volume: MrcVolume::new(w, h, cfg.slices, MrcMode::Int8, volume)?,
        masks: cfg
            .structures
            .iter()
            .zip(masks)
            .map(|(&s, m)| Ok((s, MrcVolume::new(w, h, cfg.slices, MrcMode::Int8, m)?)))
            .collect::<Result<_, DataError>>()?,
    })
}
