use std::fmt::Write as _;

use crate::loss::{make_weight_matrix, WeightMatrix};
use crate::tensor::{Shape, Tensor};

use super::DataError;

/// Where a patch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Provenance {
    pub slice: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: Tensor,
    pub mask: Tensor,
    pub weights: Option<WeightMatrix>,
    pub origin: Provenance,
}

impl Patch {
    pub fn is_positive(&self) -> bool {
        self.mask.data().iter().any(|&v| v > 0.5)
    }
}

/// Origins of every fully-contained window along one axis.
pub fn window_origins(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    if window > extent || window == 0 || stride == 0 {
        return Vec::new();
    }
    (0..=(extent - window) / stride).map(|i| i * stride).collect()
}

/// Like [`window_origins`] but adds a final window flush with the far edge
/// when the stride does not land on it, so every pixel is covered. The
/// stride is clamped to the window.
pub fn covering_origins(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut o = window_origins(extent, window, stride.min(window));
    if let Some(&last) = o.last() {
        if last + window < extent {
            o.push(extent - window);
        }
    }
    o
}

fn crop(plane: &[f64], width: usize, y: usize, x: usize, window: usize) -> Tensor {
    let mut t = Tensor::zeros(Shape::new(1, 1, window, window));
    for r in 0..window {
        let src = (y + r) * width + x;
        t.data_mut()[r * window..(r + 1) * window].copy_from_slice(&plane[src..src + window]);
    }
    t
}

/// Square windows of `window` pixels over an image/mask pair of `h`×`w`.
pub fn extract_patches(
    slice: usize,
    image: &[f64],
    mask: &[f64],
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> Result<Vec<Patch>, DataError> {
    if image.len() != h * w || mask.len() != h * w {
        return Err(DataError::Shape(format!(
            "image has {} and mask {} samples for a {h}x{w} slice",
            image.len(),
            mask.len()
        )));
    }
    if window > h || window > w || window == 0 {
        return Err(DataError::Window { window, h, w });
    }
    if stride == 0 {
        return Err(DataError::Shape("stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    for &y in &window_origins(h, window, stride) {
        for &x in &window_origins(w, window, stride) {
            out.push(Patch {
                image: crop(image, w, y, x, window),
                mask: crop(mask, w, y, x, window),
                weights: None,
                origin: Provenance { slice, y, x },
            });
        }
    }
    Ok(out)
}

/// Attaches a weight matrix to every patch; without a cap the weights are all ones.
pub fn attach_weights(patches: &mut [Patch], cap: Option<f64>) {
    for p in patches {
        p.weights = Some(match cap {
            Some(c) => make_weight_matrix(&p.mask, c),
            None => WeightMatrix {
                weights: Tensor::full(p.mask.shape(), 1.0),
                foreground_weight: 1.0,
            },
        });
    }
}

/// Each positive item appears `1 + copies` times (consecutively), negatives once.
pub fn oversample_positive<T: Clone>(items: &[T], is_positive: impl Fn(&T) -> bool, copies: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        let n = if is_positive(it) { 1 + copies } else { 1 };
        out.extend(std::iter::repeat_n(it, n).cloned());
    }
    out
}

/// Slice indices for training and validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Slices whose index is `phase` modulo `period` are held out.
pub fn split_train_val(n_slices: usize, period: usize, phase: usize) -> Result<SplitIndices, DataError> {
    if period < 2 || phase >= period {
        return Err(DataError::Shape(format!(
            "holdout period must be >= 2 with phase below it, got period {period} phase {phase}"
        )));
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..n_slices).partition(|i| i % period == phase);
    if val.is_empty() {
        log::warn!("holdout period {period} phase {phase} leaves no validation slices out of {n_slices}");
    }
    Ok(SplitIndices { train, val })
}

/// Accumulates overlapping patch predictions and averages them.
#[derive(Debug, Clone)]
pub struct Stitcher {
    h: usize,
    w: usize,
    sum: Vec<f64>,
    hits: Vec<u32>,
}

impl Stitcher {
    pub fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            sum: vec![0.0; h * w],
            hits: vec![0; h * w],
        }
    }

    pub fn add(&mut self, y: usize, x: usize, ph: usize, pw: usize, values: &[f64]) -> Result<(), DataError> {
        if y + ph > self.h || x + pw > self.w || values.len() != ph * pw {
            return Err(DataError::Shape(format!(
                "patch {ph}x{pw} at ({y}, {x}) does not fit a {}x{} slice",
                self.h, self.w
            )));
        }
        for r in 0..ph {
            for c in 0..pw {
                let i = (y + r) * self.w + x + c;
                self.sum[i] += values[r * pw + c];
                self.hits[i] += 1;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<f64>, DataError> {
        if let Some(i) = self.hits.iter().position(|&h| h == 0) {
            return Err(DataError::Shape(format!(
                "pixel ({}, {}) is covered by no patch",
                i / self.w,
                i % self.w
            )));
        }
        Ok(self.sum.iter().zip(&self.hits).map(|(s, &h)| s / h as f64).collect())
    }
}

/// One line per patch: `slice y x positive weight`.
pub fn render_manifest(patches: &[Patch]) -> String {
    let mut s = String::from("# slice y x positive weight\n");
    for p in patches {
        let w = p.weights.as_ref().map_or(1.0, |w| w.foreground_weight);
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            p.origin.slice,
            p.origin.y,
            p.origin.x,
            p.is_positive() as u8,
            w
        );
    }
    s
}
