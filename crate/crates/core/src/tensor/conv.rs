use super::{Parameter, Shape, Tensor, TensorError};

/// Square 2-D convolution with "same" zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self, TensorError> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: String| Err(TensorError::InvalidSpec(m));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad(format!(
                "channel counts must be positive (in {}, out {})",
                self.in_channels, self.out_channels
            ));
        }
        if self.kernel != 1 && self.kernel != 3 {
            return bad(format!("kernel must be 1 or 3, got {}", self.kernel));
        }
        if self.stride != 1 && self.stride != 2 {
            return bad(format!("stride must be 1 or 2, got {}", self.stride));
        }
        if self.dilation == 0 {
            return bad("dilation must be positive".into());
        }
        if self.dilation > 1 && self.stride != 1 {
            return bad(format!(
                "dilation {} requires stride 1, got stride {}",
                self.dilation, self.stride
            ));
        }
        Ok(())
    }

    /// Kernel extent once the taps are spread by the dilation rate.
    pub fn effective_kernel(&self) -> usize {
        self.kernel + (self.kernel - 1) * (self.dilation - 1)
    }

    pub fn kernel_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(
            input.n,
            self.out_channels,
            input.h.div_ceil(self.stride),
            input.w.div_ceil(self.stride),
        )
    }

    pub fn param_count(&self, with_bias: bool) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels
            + if with_bias { self.out_channels } else { 0 }
    }
}

/// Output extent and leading pad for "same" padding along one axis.
///
/// Any odd pixel of padding goes on the trailing (bottom/right) side.
pub fn same_padding(extent: usize, spec: &ConvSpec) -> (usize, usize) {
    let out = extent.div_ceil(spec.stride);
    let needed = (out - 1) * spec.stride + spec.effective_kernel();
    let total = needed.saturating_sub(extent);
    (out, total / 2)
}

/// Range of output columns `ox` whose input column `ox*stride + offset` lands in `[0, extent)`.
#[inline]
fn valid_range(out: usize, extent: usize, stride: usize, offset: isize) -> (usize, usize) {
    // ox*stride + offset >= 0
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    // ox*stride + offset <= extent - 1
    let top = extent as isize - 1 - offset;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

struct Geometry {
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

fn check_input(input: Shape, spec: &ConvSpec, kernel: &Parameter) -> Result<Geometry, TensorError> {
    spec.validate()?;
    if input.c != spec.in_channels {
        return Err(TensorError::ChannelMismatch {
            expected: spec.in_channels,
            got: input.c,
        });
    }
    kernel.value.expect_shape(spec.kernel_shape())?;
    let (oh, pad_top) = same_padding(input.h, spec);
    let (ow, pad_left) = same_padding(input.w, spec);
    Ok(Geometry {
        oh,
        ow,
        pad_top,
        pad_left,
    })
}

/// Dilated cross-correlation with "same" padding plus optional bias.
pub fn conv2d_forward(
    input: &Tensor,
    spec: &ConvSpec,
    kernel: &Parameter,
    bias: Option<&Parameter>,
) -> Result<Tensor, TensorError> {
    let ishape = input.shape();
    let g = check_input(ishape, spec, kernel)?;
    if let Some(b) = bias {
        b.value.expect_shape(spec.bias_shape())?;
    }
    let oshape = spec.output_shape(ishape);
    let mut out = Tensor::zeros(oshape);
    let k = spec.kernel;
    let (s, d) = (spec.stride, spec.dilation);
    let (ih, iw) = (ishape.h, ishape.w);
    let kdata = kernel.value.data();

    for n in 0..ishape.n {
        for oc in 0..spec.out_channels {
            let b = bias.map_or(0.0, |b| b.value.data()[oc]);
            let mut acc = vec![b; g.oh * g.ow];
            for ic in 0..spec.in_channels {
                let src = input.plane(n, ic);
                for ky in 0..k {
                    let yoff = (ky * d) as isize - g.pad_top as isize;
                    let (oy_lo, oy_hi) = valid_range(g.oh, ih, s, yoff);
                    for kx in 0..k {
                        let w = kdata[((oc * spec.in_channels + ic) * k + ky) * k + kx];
                        if w == 0.0 {
                            continue;
                        }
                        let xoff = (kx * d) as isize - g.pad_left as isize;
                        let (ox_lo, ox_hi) = valid_range(g.ow, iw, s, xoff);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = (oy * s) as isize + yoff;
                            let row = &src[iy as usize * iw..(iy as usize + 1) * iw];
                            let dst = &mut acc[oy * g.ow + ox_lo..oy * g.ow + ox_hi];
                            let ix0 = (ox_lo * s) as isize + xoff;
                            if s == 1 {
                                let srow = &row[ix0 as usize..ix0 as usize + dst.len()];
                                for (o, &x) in dst.iter_mut().zip(srow) {
                                    *o += w * x;
                                }
                            } else {
                                for (j, o) in dst.iter_mut().enumerate() {
                                    *o += w * row[ix0 as usize + j * s];
                                }
                            }
                        }
                    }
                }
            }
            out.plane_mut(n, oc).copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Gradient of [`conv2d_forward`] with respect to its input.
///
/// Kernel and bias gradients are accumulated into the parameters as a side
/// effect. `saved_input` is the forward input; `None` means the forward cache
/// is missing and is rejected.
pub fn conv2d_backward(
    grad_out: &Tensor,
    saved_input: Option<&Tensor>,
    spec: &ConvSpec,
    kernel: &mut Parameter,
    bias: Option<&mut Parameter>,
) -> Result<Tensor, TensorError> {
    let input = saved_input.ok_or(TensorError::MissingCache("conv2d"))?;
    let ishape = input.shape();
    let g = check_input(ishape, spec, kernel)?;
    grad_out.expect_shape(spec.output_shape(ishape))?;

    let k = spec.kernel;
    let (s, d) = (spec.stride, spec.dilation);
    let (ih, iw) = (ishape.h, ishape.w);
    let mut grad_in = Tensor::zeros(ishape);
    let mut kgrad = vec![0.0; spec.kernel_shape().numel()];
    let kdata = kernel.value.data().to_vec();

    for n in 0..ishape.n {
        for ic in 0..spec.in_channels {
            let src = input.plane(n, ic);
            let mut gin = vec![0.0; ih * iw];
            for oc in 0..spec.out_channels {
                let gout = grad_out.plane(n, oc);
                for ky in 0..k {
                    let yoff = (ky * d) as isize - g.pad_top as isize;
                    let (oy_lo, oy_hi) = valid_range(g.oh, ih, s, yoff);
                    for kx in 0..k {
                        let widx = ((oc * spec.in_channels + ic) * k + ky) * k + kx;
                        let w = kdata[widx];
                        let xoff = (kx * d) as isize - g.pad_left as isize;
                        let (ox_lo, ox_hi) = valid_range(g.ow, iw, s, xoff);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut dot = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * s) as isize + yoff) as usize;
                            let go = &gout[oy * g.ow + ox_lo..oy * g.ow + ox_hi];
                            let ix0 = ((ox_lo * s) as isize + xoff) as usize;
                            let base = iy * iw;
                            if s == 1 {
                                let srow = &src[base + ix0..base + ix0 + go.len()];
                                let grow = &mut gin[base + ix0..base + ix0 + go.len()];
                                for ((gi, &x), &o) in grow.iter_mut().zip(srow).zip(go) {
                                    dot += o * x;
                                    *gi += w * o;
                                }
                            } else {
                                for (j, &o) in go.iter().enumerate() {
                                    let ix = base + ix0 + j * s;
                                    dot += o * src[ix];
                                    gin[ix] += w * o;
                                }
                            }
                        }
                        kgrad[widx] += dot;
                    }
                }
            }
            grad_in.plane_mut(n, ic).copy_from_slice(&gin);
        }
    }

    let kg = Tensor::from_vec(spec.kernel_shape(), kgrad)?;
    kernel.accumulate(&kg)?;
    if let Some(b) = bias {
        let oshape = grad_out.shape();
        let mut bg = vec![0.0; spec.out_channels];
        for n in 0..oshape.n {
            for (oc, acc) in bg.iter_mut().enumerate() {
                *acc += grad_out.plane(n, oc).iter().sum::<f64>();
            }
        }
        b.accumulate(&Tensor::from_vec(spec.bias_shape(), bg)?)?;
    }
    Ok(grad_in)
}
