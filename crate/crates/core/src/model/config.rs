use crate::tensor::Resample;

use super::ModelError;

/// Hyperparameters that fix the network topology.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Filters in the first encoder block; each deeper block doubles it.
    pub base_filters: usize,
    /// Number of encoder blocks (and decoder blocks).
    pub depth: usize,
    /// One parallel center branch per rate.
    pub dilation_rates: Vec<usize>,
    pub input_channels: usize,
    /// Divisor applied to the filter count at each block's skip tap.
    pub skip_reduction: usize,
    /// Stack the center's own input alongside the dilated branches before the 1×1 conv.
    pub center_includes_input: bool,
    /// Give convolutions followed by batch norm their own bias. Train-mode
    /// batch norm subtracts it out again, so it is off by default.
    pub conv_bias_with_bn: bool,
    pub resample: Resample,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_filters: 16,
            depth: 4,
            dilation_rates: vec![1, 2, 4, 8],
            input_channels: 1,
            skip_reduction: 2,
            center_includes_input: true,
            conv_bias_with_bn: false,
            resample: Resample::HalfPixel,
        }
    }
}

impl NetworkConfig {
    pub fn small(base_filters: usize, depth: usize, dilation_rates: Vec<usize>) -> Self {
        Self {
            base_filters,
            depth,
            dilation_rates,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.depth == 0 {
            return bad("depth must be >= 1");
        }
        if self.depth > 16 {
            return bad("depth must be <= 16");
        }
        if self.base_filters == 0 {
            return bad("base_filters must be >= 1");
        }
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1");
        }
        if self.skip_reduction == 0 {
            return bad("skip_reduction must be >= 1");
        }
        if self.dilation_rates.is_empty() {
            return bad("dilation_rates must not be empty");
        }
        if self.dilation_rates.contains(&0) {
            return bad("dilation rates must be >= 1");
        }
        Ok(())
    }

    /// Filters of encoder block `i`.
    pub fn filters(&self, block: usize) -> usize {
        self.base_filters << block
    }

    /// Channels of the skip tap leaving encoder block `i`.
    pub fn skip_channels(&self, block: usize) -> usize {
        (self.filters(block) / self.skip_reduction).max(1)
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.depth
    }

    /// Channels produced by the center module.
    pub fn center_channels(&self) -> usize {
        2 * self.filters(self.depth - 1)
    }

    /// `key = value` rendering, stable field order. Used as the config echo
    /// in checkpoints.
    pub fn to_text(&self) -> String {
        let rates: Vec<String> = self.dilation_rates.iter().map(|r| r.to_string()).collect();
        format!(
            "base_filters = {}\ndepth = {}\ndilation_rates = {}\ninput_channels = {}\n\
             skip_reduction = {}\ncenter_includes_input = {}\nconv_bias_with_bn = {}\nresample = {}\n",
            self.base_filters,
            self.depth,
            rates.join(","),
            self.input_channels,
            self.skip_reduction,
            self.center_includes_input,
            self.conv_bias_with_bn,
            self.resample.as_str()
        )
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut cfg = NetworkConfig::default();
        let bad = |m: String| ModelError::InvalidConfig(m);
        let num = |k: &str, v: &str| v.parse::<usize>().map_err(|_| bad(format!("{k}: not an integer: {v}")));
        let flag = |k: &str, v: &str| v.parse::<bool>().map_err(|_| bad(format!("{k}: not a boolean: {v}")));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("malformed line: {line}")))?;
            match k {
                "base_filters" => cfg.base_filters = num(k, v)?,
                "depth" => cfg.depth = num(k, v)?,
                "dilation_rates" => {
                    cfg.dilation_rates = v
                        .split(',')
                        .map(|r| num(k, r.trim()))
                        .collect::<Result<_, _>>()?
                }
                "input_channels" => cfg.input_channels = num(k, v)?,
                "skip_reduction" => cfg.skip_reduction = num(k, v)?,
                "center_includes_input" => cfg.center_includes_input = flag(k, v)?,
                "conv_bias_with_bn" => cfg.conv_bias_with_bn = flag(k, v)?,
                "resample" => {
                    cfg.resample =
                        Resample::parse(v).ok_or_else(|| bad(format!("unknown resample mode {v}")))?
                }
                other => return Err(bad(format!("unknown key {other}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
