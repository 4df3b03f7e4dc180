use super::{Shape, Tensor, TensorError};

/// Source-coordinate convention for bilinear ×2 resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resample {
    /// Output pixel `o` samples source coordinate `(o + 0.5) / 2 - 0.5`.
    #[default]
    HalfPixel,
    /// Corner pixels of input and output coincide.
    AlignCorners,
}

impl Resample {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resample::HalfPixel => "half-pixel",
            Resample::AlignCorners => "align-corners",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "half-pixel" => Some(Resample::HalfPixel),
            "align-corners" => Some(Resample::AlignCorners),
            _ => None,
        }
    }
}

/// One output coordinate's two source taps `(i0, i1)` and weights `(w0, w1)`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn taps(input: usize, mode: Resample) -> Vec<Tap> {
    let output = 2 * input;
    (0..output)
        .map(|o| {
            let src = match mode {
                Resample::HalfPixel => (o as f64 + 0.5) / 2.0 - 0.5,
                Resample::AlignCorners if output > 1 && input > 1 => {
                    o as f64 * (input - 1) as f64 / (output - 1) as f64
                }
                Resample::AlignCorners => 0.0,
            };
            let src = src.clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}

pub fn upsample2x(input: &Tensor, mode: Resample) -> Tensor {
    let s = input.shape();
    let (oh, ow) = (2 * s.h, 2 * s.w);
    let ty = taps(s.h, mode);
    let tx = taps(s.w, mode);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut row = vec![0.0; ow];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c).to_vec();
            let dst = out.plane_mut(n, c);
            for (oy, t) in ty.iter().enumerate() {
                let r0 = &src[t.i0 * s.w..(t.i0 + 1) * s.w];
                let r1 = &src[t.i1 * s.w..(t.i1 + 1) * s.w];
                for (v, tx) in row.iter_mut().zip(&tx) {
                    let a = tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1];
                    let b = tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1];
                    *v = t.w0 * a + t.w1 * b;
                }
                dst[oy * ow..(oy + 1) * ow].copy_from_slice(&row);
            }
        }
    }
    out
}

/// Transpose of [`upsample2x`]: scatters each output gradient onto its source taps.
pub fn upsample2x_backward(
    grad_out: &Tensor,
    input_shape: Shape,
    mode: Resample,
) -> Result<Tensor, TensorError> {
    let s = input_shape;
    grad_out.expect_shape(Shape::new(s.n, s.c, 2 * s.h, 2 * s.w))?;
    let ow = 2 * s.w;
    let ty = taps(s.h, mode);
    let tx = taps(s.w, mode);
    let mut grad_in = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let go = grad_out.plane(n, c).to_vec();
            let gi = grad_in.plane_mut(n, c);
            for (oy, t) in ty.iter().enumerate() {
                for (ox, tx) in tx.iter().enumerate() {
                    let g = go[oy * ow + ox];
                    gi[t.i0 * s.w + tx.i0] += t.w0 * tx.w0 * g;
                    gi[t.i0 * s.w + tx.i1] += t.w0 * tx.w1 * g;
                    gi[t.i1 * s.w + tx.i0] += t.w1 * tx.w0 * g;
                    gi[t.i1 * s.w + tx.i1] += t.w1 * tx.w1 * g;
                }
            }
        }
    }
    Ok(grad_in)
}
