use std::fmt;

use super::layers::ConvBlock;
use super::SegEtNetwork;

/// One row of the layer table; shapes are (channels, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub kind: &'static str,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub params: usize,
    pub dilation: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDescription {
    pub reference: (usize, usize),
    pub rows: Vec<LayerRow>,
    pub total_params: usize,
    pub downsample_factor: usize,
    pub encoder_conv_counts: Vec<usize>,
    pub center_conv_count: usize,
    pub decoder_conv_counts: Vec<usize>,
}

fn conv_row(b: &ConvBlock, input: [usize; 3]) -> LayerRow {
    let s = &b.spec;
    LayerRow {
        name: b.name.clone(),
        kind: if s.kernel == 1 { "conv1x1" } else { "conv3x3" },
        input,
        output: [s.out_channels, input[1].div_ceil(s.stride), input[2].div_ceil(s.stride)],
        params: b.param_count(),
        dilation: s.dilation,
        stride: s.stride,
    }
}

fn plain_row(name: String, kind: &'static str, input: [usize; 3], output: [usize; 3]) -> LayerRow {
    LayerRow {
        name,
        kind,
        input,
        output,
        params: 0,
        dilation: 1,
        stride: 1,
    }
}

fn up(shape: [usize; 3]) -> [usize; 3] {
    [shape[0], 2 * shape[1], 2 * shape[2]]
}

impl SegEtNetwork {
    /// Layer table at a reference input of `h`×`w`, derived from the layer
    /// specs without running the network.
    pub fn describe(&self, h: usize, w: usize) -> NetworkDescription {
        let cfg = self.config();
        let mut rows = Vec::new();
        let mut cur = [cfg.input_channels, h, w];
        let mut skips = Vec::new();
        let mut encoder_conv_counts = Vec::new();
        for enc in &self.encoders {
            for (k, b) in enc.convs.iter().enumerate() {
                let row = conv_row(b, cur);
                cur = row.output;
                if k == 2 {
                    skips.push(cur);
                }
                rows.push(row);
            }
            encoder_conv_counts.push(enc.convs.len());
        }

        let center_in = cur;
        for b in &self.center.convs {
            let row = conv_row(b, cur);
            cur = row.output;
            rows.push(row);
        }
        let mut stacked = 0;
        for b in &self.center.branches {
            let row = conv_row(b, cur);
            stacked += row.output[0];
            rows.push(row);
        }
        if cfg.center_includes_input {
            stacked += center_in[0];
        }
        let cat = [stacked, cur[1], cur[2]];
        rows.push(plain_row("center.concat".into(), "concat", cur, cat));
        let row = conv_row(&self.center.reduce, cat);
        cur = row.output;
        rows.push(row);
        let center_conv_count = self.center.convs.len() + self.center.branches.len() + 1;

        let mut decoded = Vec::new();
        let mut decoder_conv_counts = Vec::new();
        for (j, dec) in self.decoders.iter().enumerate() {
            let u = up(cur);
            rows.push(plain_row(format!("dec{j}.upsample"), "upsample2x", cur, u));
            let skip = skips[cfg.depth - 1 - j];
            let cat = [u[0] + skip[0], u[1], u[2]];
            rows.push(plain_row(format!("dec{j}.concat"), "concat", u, cat));
            cur = cat;
            for b in &dec.convs {
                let row = conv_row(b, cur);
                cur = row.output;
                rows.push(row);
            }
            decoded.push(cur);
            decoder_conv_counts.push(dec.convs.len());
        }

        if decoded.len() > 1 {
            let mut feat = decoded[0];
            for (j, step) in self.fusion.steps.iter().enumerate() {
                let d = decoded[j + 1];
                let u = up(feat);
                rows.push(plain_row(format!("fuse{}.upsample", j + 1), "upsample2x", feat, u));
                let cat = [u[0] + d[0], u[1], u[2]];
                rows.push(plain_row(format!("fuse{}.concat", j + 1), "concat", u, cat));
                let row = conv_row(step, cat);
                feat = row.output;
                rows.push(row);
            }
            let last = *decoded.last().expect("depth >= 1");
            let u = up(feat);
            rows.push(plain_row("merge.upsample".into(), "upsample2x", feat, u));
            cur = [u[0] + last[0], u[1], u[2]];
            rows.push(plain_row("merge.concat".into(), "concat", u, cur));
        }
        for b in &self.fusion.refine {
            let row = conv_row(b, cur);
            cur = row.output;
            rows.push(row);
        }
        rows.push(conv_row(&self.head, cur));

        NetworkDescription {
            reference: (h, w),
            total_params: rows.iter().map(|r| r.params).sum(),
            rows,
            downsample_factor: cfg.downsample_factor(),
            encoder_conv_counts,
            center_conv_count,
            decoder_conv_counts,
        }
    }
}

impl fmt::Display for NetworkDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:<11} {:>16} {:>16} {:>9} {:>4} {:>6}",
            "layer", "kind", "in (c,h,w)", "out (c,h,w)", "params", "dil", "stride"
        )?;
        let shape = |s: [usize; 3]| format!("{}x{}x{}", s[0], s[1], s[2]);
        for r in &self.rows {
            writeln!(
                f,
                "{:<20} {:<11} {:>16} {:>16} {:>9} {:>4} {:>6}",
                r.name,
                r.kind,
                shape(r.input),
                shape(r.output),
                r.params,
                r.dilation,
                r.stride
            )?;
        }
        writeln!(f, "total parameters: {}", self.total_params)?;
        writeln!(f, "downsample factor: {}", self.downsample_factor)?;
        writeln!(f, "encoder convs per block: {:?}", self.encoder_conv_counts)?;
        writeln!(f, "center convs: {}", self.center_conv_count)?;
        write!(f, "decoder convs per block: {:?}", self.decoder_conv_counts)
    }
}
