use crate::tensor::{Shape, Tensor};

/// Foreground weights for one patch: background 1.0, foreground the patch's
/// background/foreground ratio clamped to `[1, cap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub weights: Tensor,
    pub foreground_weight: f64,
}

/// Background-to-foreground pixel ratio, capped. A patch with no foreground
/// reports the cap.
pub fn bf_ratio(mask: &[f64], cap: f64) -> f64 {
    let fg = mask.iter().filter(|&&v| v > 0.5).count();
    if fg == 0 {
        return cap;
    }
    ((mask.len() - fg) as f64 / fg as f64).min(cap)
}

pub fn make_weight_matrix(mask: &Tensor, cap: f64) -> WeightMatrix {
    let has_fg = mask.data().iter().any(|&v| v > 0.5);
    let fg_weight = if has_fg { bf_ratio(mask.data(), cap).max(1.0) } else { 1.0 };
    WeightMatrix {
        weights: mask.map(|v| if v > 0.5 { fg_weight } else { 1.0 }),
        foreground_weight: fg_weight,
    }
}

/// Per-sample weight matrices for a batch of target masks.
pub fn batch_weights(targets: &Tensor, cap: f64) -> Tensor {
    let s = targets.shape();
    let mut out = Tensor::zeros(s);
    let per = s.c * s.plane();
    for n in 0..s.n {
        let slice = &targets.data()[n * per..(n + 1) * per];
        let mask = Tensor::from_vec(Shape::new(1, s.c, s.h, s.w), slice.to_vec()).expect("slice length");
        out.data_mut()[n * per..(n + 1) * per].copy_from_slice(make_weight_matrix(&mask, cap).weights.data());
    }
    out
}
