use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    concat_channels, split_channels, upsample2x, upsample2x_backward, BnMode, ConvSpec, Parameter,
    Shape, Tensor,
};

use super::layers::{ConvBlock, Pass};
use super::{ModelError, NetworkConfig};

fn spec(cin: usize, cout: usize, k: usize, stride: usize, dilation: usize) -> ConvSpec {
    ConvSpec::new(cin, cout, k, stride, dilation).expect("topology produces valid conv specs")
}

/// conv, conv, conv (skip tap, reduced channels), stride-2 conv.
pub struct EncoderBlock {
    pub convs: [ConvBlock; 4],
}

impl EncoderBlock {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<(Tensor, Tensor), ModelError> {
        let a = self.convs[0].forward(x, pass)?;
        let b = self.convs[1].forward(&a, pass)?;
        let skip = self.convs[2].forward(&b, pass)?;
        let down = self.convs[3].forward(&skip, pass)?;
        Ok((skip, down))
    }

    fn backward(&mut self, g_out: &Tensor, g_skip: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = self.convs[3].backward(g_out)?;
        g.add_assign(g_skip)?;
        let g = self.convs[2].backward(&g)?;
        let g = self.convs[1].backward(&g)?;
        Ok(self.convs[0].backward(&g)?)
    }
}

/// Two feature convs, parallel dilated branches, concat, 1×1 reduction.
pub struct Center {
    pub convs: [ConvBlock; 2],
    pub branches: Vec<ConvBlock>,
    pub reduce: ConvBlock,
    include_input: bool,
    split: Vec<usize>,
}

impl Center {
    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor, ModelError> {
        let a = self.convs[0].forward(x, pass)?;
        let b = self.convs[1].forward(&a, pass)?;
        let mut outs = Vec::with_capacity(self.branches.len() + 1);
        for br in &mut self.branches {
            outs.push(br.forward(&b, pass)?);
        }
        if self.include_input {
            outs.push(x.clone());
        }
        self.split = outs.iter().map(|t| t.shape().c).collect();
        let refs: Vec<&Tensor> = outs.iter().collect();
        let cat = concat_channels(&refs)?;
        Ok(self.reduce.forward(&cat, pass)?)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor, ModelError> {
        let g_cat = self.reduce.backward(g)?;
        let mut parts = split_channels(&g_cat, &self.split)?.into_iter();
        let mut g_b: Option<Tensor> = None;
        for br in &mut self.branches {
            let gi = br.backward(&parts.next().expect("one part per branch"))?;
            match &mut g_b {
                Some(acc) => acc.add_assign(&gi)?,
                None => g_b = Some(gi),
            }
        }
        let g_a = self.convs[1].backward(&g_b.expect("at least one branch"))?;
        let mut g_x = self.convs[0].backward(&g_a)?;
        if self.include_input {
            g_x.add_assign(&parts.next().expect("input part"))?;
        }
        Ok(g_x)
    }
}

/// Bilinear ×2, concat with the matching skip, two convs.
pub struct DecoderBlock {
    pub convs: [ConvBlock; 2],
    prev_shape: Option<Shape>,
    skip_channels: usize,
}

impl DecoderBlock {
    fn forward(&mut self, prev: &Tensor, skip: &Tensor, pass: Pass, net: &NetworkConfig) -> Result<Tensor, ModelError> {
        let up = upsample2x(prev, net.resample);
        let cat = concat_channels(&[&up, skip])?;
        self.prev_shape = Some(prev.shape());
        self.skip_channels = skip.shape().c;
        let a = self.convs[0].forward(&cat, pass)?;
        Ok(self.convs[1].forward(&a, pass)?)
    }

    fn backward(&mut self, g: &Tensor, net: &NetworkConfig) -> Result<(Tensor, Tensor), ModelError> {
        let prev = self.prev_shape.ok_or(ModelError::NoForward)?;
        let g = self.convs[1].backward(g)?;
        let g = self.convs[0].backward(&g)?;
        let mut parts = split_channels(&g, &[prev.c, self.skip_channels])?;
        let g_skip = parts.pop().expect("two parts");
        let g_up = parts.pop().expect("two parts");
        Ok((upsample2x_backward(&g_up, prev, net.resample)?, g_skip))
    }
}

/// Progressive fusion of the higher-level decoder outputs into the last one.
pub struct Fusion {
    /// `steps[j - 1]` fuses decoder output `j` with the running feature.
    pub steps: Vec<ConvBlock>,
    pub refine: [ConvBlock; 2],
    /// Shapes of the running feature before each upsample (steps, then the final merge).
    up_shapes: Vec<Shape>,
    split: Vec<[usize; 2]>,
}

impl Fusion {
    fn forward(&mut self, decoded: &[Tensor], pass: Pass, net: &NetworkConfig) -> Result<Tensor, ModelError> {
        self.up_shapes.clear();
        self.split.clear();
        let last = decoded.last().expect("depth >= 1");
        let merged = if decoded.len() == 1 {
            last.clone()
        } else {
            let mut feat = decoded[0].clone();
            for (step, d) in self.steps.iter_mut().zip(&decoded[1..decoded.len() - 1]) {
                let up = upsample2x(&feat, net.resample);
                self.up_shapes.push(feat.shape());
                self.split.push([up.shape().c, d.shape().c]);
                feat = step.forward(&concat_channels(&[&up, d])?, pass)?;
            }
            let up = upsample2x(&feat, net.resample);
            self.up_shapes.push(feat.shape());
            self.split.push([up.shape().c, last.shape().c]);
            concat_channels(&[&up, last])?
        };
        let a = self.refine[0].forward(&merged, pass)?;
        Ok(self.refine[1].forward(&a, pass)?)
    }

    /// Returns the gradient for each decoder output.
    fn backward(&mut self, g: &Tensor, depth: usize, net: &NetworkConfig) -> Result<Vec<Tensor>, ModelError> {
        let g = self.refine[1].backward(g)?;
        let g_merged = self.refine[0].backward(&g)?;
        if depth == 1 {
            return Ok(vec![g_merged]);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; depth];
        let n = self.up_shapes.len();
        let parts = split_channels(&g_merged, &self.split[n - 1])?;
        grads[depth - 1] = Some(parts[1].clone());
        let mut g_feat = upsample2x_backward(&parts[0], self.up_shapes[n - 1], net.resample)?;
        for j in (1..depth - 1).rev() {
            let step = &mut self.steps[j - 1];
            let g_cat = step.backward(&g_feat)?;
            let parts = split_channels(&g_cat, &self.split[j - 1])?;
            grads[j] = Some(parts[1].clone());
            g_feat = upsample2x_backward(&parts[0], self.up_shapes[j - 1], net.resample)?;
        }
        grads[0] = Some(g_feat);
        Ok(grads.into_iter().map(|g| g.expect("every level visited")).collect())
    }
}

/// The assembled encoder–center–decoder network.
pub struct SegEtNetwork {
    config: NetworkConfig,
    pub encoders: Vec<EncoderBlock>,
    pub center: Center,
    pub decoders: Vec<DecoderBlock>,
    pub fusion: Fusion,
    pub head: ConvBlock,
    mode: BnMode,
    forwarded: bool,
}

/// Ablation switches for a forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Replace skip tap `i` with zeros before it reaches its decoder block.
    pub zero_skip: Option<usize>,
}

impl SegEtNetwork {
    /// Builds the topology with weights drawn from a seeded generator.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias = config.conv_bias_with_bn;
        let cbr = |name: String, s: ConvSpec, rng: &mut ChaCha8Rng| ConvBlock::new(name, s, true, bias, true, rng);
        let depth = config.depth;

        let mut encoders = Vec::with_capacity(depth);
        let mut cin = config.input_channels;
        for i in 0..depth {
            let f = config.filters(i);
            let r = config.skip_channels(i);
            encoders.push(EncoderBlock {
                convs: [
                    cbr(format!("enc{i}.conv1"), spec(cin, f, 3, 1, 1), &mut rng),
                    cbr(format!("enc{i}.conv2"), spec(f, f, 3, 1, 1), &mut rng),
                    cbr(format!("enc{i}.conv3"), spec(f, r, 3, 1, 1), &mut rng),
                    cbr(format!("enc{i}.down"), spec(r, f, 3, 2, 1), &mut rng),
                ],
            });
            cin = f;
        }

        let fd = config.filters(depth - 1);
        let cc = config.center_channels();
        let convs = [
            cbr("center.conv1".into(), spec(fd, cc, 3, 1, 1), &mut rng),
            cbr("center.conv2".into(), spec(cc, cc, 3, 1, 1), &mut rng),
        ];
        let branches: Vec<ConvBlock> = config
            .dilation_rates
            .iter()
            .enumerate()
            .map(|(k, &d)| cbr(format!("center.branch{k}_d{d}"), spec(cc, fd, 3, 1, d), &mut rng))
            .collect();
        let stacked = fd * branches.len() + if config.center_includes_input { fd } else { 0 };
        let reduce = cbr("center.reduce".into(), spec(stacked, cc, 1, 1, 1), &mut rng);
        let center = Center {
            convs,
            branches,
            reduce,
            include_input: config.center_includes_input,
            split: Vec::new(),
        };

        let mut decoders = Vec::with_capacity(depth);
        let mut prev = cc;
        for j in 0..depth {
            let e = depth - 1 - j;
            let f = config.filters(e);
            let cat = prev + config.skip_channels(e);
            decoders.push(DecoderBlock {
                convs: [
                    cbr(format!("dec{j}.conv1"), spec(cat, f, 3, 1, 1), &mut rng),
                    cbr(format!("dec{j}.conv2"), spec(f, f, 3, 1, 1), &mut rng),
                ],
                prev_shape: None,
                skip_channels: 0,
            });
            prev = f;
        }

        // decoder j outputs filters(depth-1-j) channels
        let dec_ch = |j: usize| config.filters(depth - 1 - j);
        let mut steps = Vec::new();
        let mut feat = dec_ch(0);
        for j in 1..depth.saturating_sub(1) {
            steps.push(cbr(format!("fuse{j}"), spec(feat + dec_ch(j), dec_ch(j), 3, 1, 1), &mut rng));
            feat = dec_ch(j);
        }
        let f0 = config.filters(0);
        let merged = if depth == 1 { f0 } else { feat + f0 };
        let refine = [
            cbr("refine1".into(), spec(merged, f0, 3, 1, 1), &mut rng),
            cbr("refine2".into(), spec(f0, f0, 3, 1, 1), &mut rng),
        ];
        let fusion = Fusion {
            steps,
            refine,
            up_shapes: Vec::new(),
            split: Vec::new(),
        };
        let head = ConvBlock::new("head", spec(f0, 1, 1, 1, 1), false, true, false, &mut rng);

        Ok(Self {
            config: config.clone(),
            encoders,
            center,
            decoders,
            fusion,
            head,
            mode: BnMode::Train,
            forwarded: false,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mode(&self) -> BnMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        self.mode = mode;
    }

    pub fn check_input(&self, shape: Shape) -> Result<(), ModelError> {
        if shape.c != self.config.input_channels {
            return Err(ModelError::InputChannels {
                expected: self.config.input_channels,
                got: shape.c,
            });
        }
        let f = self.config.downsample_factor();
        if !shape.h.is_multiple_of(f) || !shape.w.is_multiple_of(f) {
            return Err(ModelError::Indivisible {
                h: shape.h,
                w: shape.w,
                factor: f,
            });
        }
        Ok(())
    }

    /// Logits (pre-sigmoid), N×1×H×W.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor, ModelError> {
        self.forward_with(batch, ForwardOptions::default())
    }

    pub fn forward_with(&mut self, batch: &Tensor, opts: ForwardOptions) -> Result<Tensor, ModelError> {
        self.check_input(batch.shape())?;
        let pass = Pass {
            mode: self.mode,
            linearized: false,
        };
        let cfg = &self.config;
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut x = batch.clone();
        for enc in &mut self.encoders {
            let (skip, down) = enc.forward(&x, pass)?;
            skips.push(skip);
            x = down;
        }
        if let Some(i) = opts.zero_skip {
            if let Some(s) = skips.get_mut(i) {
                s.fill(0.0);
            }
        }
        let mut y = self.center.forward(&x, pass)?;
        let mut decoded = Vec::with_capacity(cfg.depth);
        for (j, dec) in self.decoders.iter_mut().enumerate() {
            y = dec.forward(&y, &skips[cfg.depth - 1 - j], pass, cfg)?;
            decoded.push(y.clone());
        }
        let fused = self.fusion.forward(&decoded, pass, cfg)?;
        let logits = self.head.forward(&fused, pass)?;
        self.forwarded = true;
        Ok(logits)
    }

    /// Accumulates every parameter gradient for `grad_logits`.
    ///
    /// Uses the caches of the most recent forward pass; calling it twice adds
    /// the same gradients twice.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<(), ModelError> {
        if !self.forwarded || !self.head.has_cache() {
            return Err(ModelError::NoForward);
        }
        let depth = self.config.depth;
        let g = self.head.backward(grad_logits)?;
        let mut g_dec = self.fusion.backward(&g, depth, &self.config)?;
        let mut g_skips: Vec<Option<Tensor>> = vec![None; depth];
        for j in (0..depth).rev() {
            let (g_prev, g_skip) = self.decoders[j].backward(&g_dec[j], &self.config)?;
            g_skips[depth - 1 - j] = Some(g_skip);
            if j > 0 {
                g_dec[j - 1].add_assign(&g_prev)?;
            } else {
                g_dec.push(g_prev);
            }
        }
        let g_center = g_dec.pop().expect("center gradient");
        let mut g = self.center.backward(&g_center)?;
        for i in (0..depth).rev() {
            let g_skip = g_skips[i].take().expect("skip gradient");
            g = self.encoders[i].backward(&g, &g_skip)?;
        }
        Ok(())
    }

    /// Every conv block in registry order.
    pub fn blocks(&self) -> Vec<&ConvBlock> {
        let mut v: Vec<&ConvBlock> = Vec::new();
        for e in &self.encoders {
            v.extend(e.convs.iter());
        }
        v.extend(self.center.convs.iter());
        v.extend(self.center.branches.iter());
        v.push(&self.center.reduce);
        for d in &self.decoders {
            v.extend(d.convs.iter());
        }
        v.extend(self.fusion.steps.iter());
        v.extend(self.fusion.refine.iter());
        v.push(&self.head);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ConvBlock> {
        let mut v: Vec<&mut ConvBlock> = Vec::new();
        for e in &mut self.encoders {
            v.extend(e.convs.iter_mut());
        }
        v.extend(self.center.convs.iter_mut());
        v.extend(self.center.branches.iter_mut());
        v.push(&mut self.center.reduce);
        for d in &mut self.decoders {
            v.extend(d.convs.iter_mut());
        }
        v.extend(self.fusion.steps.iter_mut());
        v.extend(self.fusion.refine.iter_mut());
        v.push(&mut self.head);
        v
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.blocks().into_iter().flat_map(|b| b.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.blocks_mut().into_iter().flat_map(|b| b.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Row/column extent of each center branch's response to a unit impulse,
    /// with batch norm bypassed and ReLU replaced by the identity.
    pub fn branch_receptive_supports(&self, size: usize) -> Result<Vec<(usize, usize)>, ModelError> {
        let pass = Pass {
            mode: BnMode::Infer,
            linearized: true,
        };
        let cc = self.config.center_channels();
        let mut impulse = Tensor::zeros(Shape::new(1, cc, size, size));
        impulse.set(0, 0, size / 2, size / 2, 1.0);
        let mut out = Vec::new();
        for br in &self.center.branches {
            let mut probe = br.clone();
            let y = probe.forward(&impulse, pass)?;
            let s = y.shape();
            let mut rows = vec![false; s.h];
            let mut cols = vec![false; s.w];
            for c in 0..s.c {
                for yy in 0..s.h {
                    for xx in 0..s.w {
                        if y.at(0, c, yy, xx) != 0.0 {
                            rows[yy] = true;
                            cols[xx] = true;
                        }
                    }
                }
            }
            let span = |v: &[bool]| match (v.iter().position(|&b| b), v.iter().rposition(|&b| b)) {
                (Some(a), Some(b)) => b - a + 1,
                _ => 0,
            };
            out.push((span(&rows), span(&cols)));
        }
        Ok(out)
    }
}
