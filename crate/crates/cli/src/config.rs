//! Run configuration: presets, layered resolution and conversion to the core
//! config types.
//!
//! Resolution order, later layers winning: built-in defaults or a structure
//! preset, the `--config` file, `--set section.key=value` overrides, then the
//! dedicated flags (`--seed`, `--threshold`, `--out-dir`).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use seget_core::data::{NormalizeScope, Structure};
use seget_core::loss::LossConfig;
use seget_core::model::NetworkConfig;
use seget_core::tensor::Resample;
use seget_core::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleName {
    HalfPixel,
    AlignCorners,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeName {
    Volume,
    Slice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub base_filters: usize,
    pub depth: usize,
    pub dilation_rates: Vec<usize>,
    pub input_channels: usize,
    pub skip_reduction: usize,
    pub center_includes_input: bool,
    pub conv_bias_with_bn: bool,
    pub resample: ResampleName,
}

/// Patience values of 0 disable the corresponding callback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub early_stop_patience: usize,
    pub reduce_factor: f64,
    pub reduce_patience: usize,
    pub oversample: usize,
    pub weighting: bool,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub jaccard_smooth: f64,
    pub weight_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub structure: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub window: usize,
    pub stride: usize,
    /// Every `val_period`-th slice, starting at `val_phase`, is held out.
    pub val_period: usize,
    pub val_phase: usize,
    pub normalize: ScopeName,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let tr = TrainConfig::default();
        let loss = LossConfig::default();
        Self {
            network: NetworkSection {
                base_filters: net.base_filters,
                depth: net.depth,
                dilation_rates: net.dilation_rates,
                input_channels: net.input_channels,
                skip_reduction: net.skip_reduction,
                center_includes_input: net.center_includes_input,
                conv_bias_with_bn: net.conv_bias_with_bn,
                resample: match net.resample {
                    Resample::HalfPixel => ResampleName::HalfPixel,
                    Resample::AlignCorners => ResampleName::AlignCorners,
                },
            },
            train: TrainSection {
                epochs: tr.epochs,
                batch_size: tr.batch_size,
                lr: tr.lr,
                lr_decay: tr.lr_decay,
                early_stop_patience: tr.early_stop_patience.unwrap_or(0),
                reduce_factor: tr.reduce_factor,
                reduce_patience: tr.reduce_patience.unwrap_or(0),
                oversample: tr.oversample,
                weighting: tr.weighting,
                threshold: tr.threshold,
                seed: tr.seed,
            },
            loss: LossSection {
                lambda: loss.lambda,
                jaccard_smooth: loss.jaccard_smooth,
                weight_cap: loss.weight_cap,
            },
            data: DataSection {
                structure: Structure::Mts.name().to_string(),
                volume: None,
                mask: None,
                window: 512,
                stride: 256,
                val_period: 5,
                val_phase: 4,
                normalize: ScopeName::Volume,
                out_dir: PathBuf::from("out"),
            },
        }
    }
}

/// Per-structure training hyperparameters.
pub fn preset(s: Structure) -> RunConfig {
    let mut c = RunConfig::default();
    c.data.structure = s.name().to_string();
    let t = &mut c.train;
    t.batch_size = 12;
    t.reduce_factor = 0.5;
    match s {
        Structure::Synapse => {
            (t.lr, t.lr_decay, t.epochs) = (1e-4, 1e-6, 38);
            (t.early_stop_patience, t.reduce_patience) = (8, 3);
            t.weighting = false;
        }
        Structure::Mts => {
            (t.lr, t.lr_decay, t.epochs) = (1e-3, 1e-5, 300);
            (t.early_stop_patience, t.reduce_patience) = (8, 3);
            t.weighting = true;
            c.loss.weight_cap = 2000.0;
        }
        Structure::Centriole => {
            (t.lr, t.lr_decay, t.epochs) = (2e-3, 1e-6, 300);
            (t.early_stop_patience, t.reduce_patience) = (10, 3);
            t.weighting = true;
            t.oversample = 4;
            c.loss.weight_cap = 2000.0;
        }
        Structure::Granules => {
            (t.lr, t.lr_decay, t.epochs) = (2e-3, 1e-5, 60);
            (t.early_stop_patience, t.reduce_patience) = (5, 2);
            t.weighting = false;
        }
        Structure::Golgi => {
            (t.lr, t.lr_decay, t.epochs) = (2e-3, 1e-5, 124);
            (t.early_stop_patience, t.reduce_patience) = (5, 2);
            t.weighting = true;
            t.oversample = 2;
            c.loss.weight_cap = 1000.0;
        }
    }
    c
}

/// Values supplied by dedicated flags; applied after everything else.
#[derive(Debug, Default, Clone)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `section.key=value`; the value is read as a TOML literal and falls
/// back to a bare string.
fn parse_set(spec: &str) -> Result<(Vec<String>, Value), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects section.key=value, got {spec:?}")))?;
    let path: Vec<String> = path.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("bad key path in {spec:?}")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = match cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("{p} is not a section"))),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

pub fn resolve(
    preset_name: Option<Structure>,
    file_text: Option<&str>,
    sets: &[String],
    flags: &FlagOverrides,
) -> Result<RunConfig, CliError> {
    let base_cfg = preset_name.map(preset).unwrap_or_default();
    let mut table = Table::try_from(&base_cfg).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(text) = file_text {
        let file: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        merge(&mut table, file);
    }
    for s in sets {
        let (path, value) = parse_set(s)?;
        set_path(&mut table, &path, value)?;
    }
    let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    if let Some(seed) = flags.seed {
        cfg.train.seed = seed;
    }
    if let Some(t) = flags.threshold {
        cfg.train.threshold = t;
    }
    if let Some(d) = &flags.out_dir {
        cfg.data.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn structure(&self) -> Result<Structure, CliError> {
        self.data.structure.parse().map_err(|e| CliError::Config(format!("{e}")))
    }

    pub fn network_config(&self) -> NetworkConfig {
        let n = &self.network;
        NetworkConfig {
            base_filters: n.base_filters,
            depth: n.depth,
            dilation_rates: n.dilation_rates.clone(),
            input_channels: n.input_channels,
            skip_reduction: n.skip_reduction,
            center_includes_input: n.center_includes_input,
            conv_bias_with_bn: n.conv_bias_with_bn,
            resample: match n.resample {
                ResampleName::HalfPixel => Resample::HalfPixel,
                ResampleName::AlignCorners => Resample::AlignCorners,
            },
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.loss.lambda,
            jaccard_smooth: self.loss.jaccard_smooth,
            weight_cap: self.loss.weight_cap,
        }
    }

    pub fn train_config(&self, checkpoint: Option<PathBuf>) -> TrainConfig {
        let t = &self.train;
        let opt = |p: usize| (p > 0).then_some(p);
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_decay: t.lr_decay,
            early_stop_patience: opt(t.early_stop_patience),
            reduce_factor: t.reduce_factor,
            reduce_patience: opt(t.reduce_patience),
            oversample: t.oversample,
            weighting: t.weighting,
            loss: self.loss_config(),
            threshold: t.threshold,
            seed: t.seed,
            checkpoint,
        }
    }

    pub fn scope(&self) -> NormalizeScope {
        match self.data.normalize {
            ScopeName::Volume => NormalizeScope::Volume,
            ScopeName::Slice => NormalizeScope::Slice,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.network_config().validate().map_err(|e| cfg_err(&e))?;
        self.loss_config().validate().map_err(|e| cfg_err(&e))?;
        self.train_config(None).validate().map_err(|e| cfg_err(&e))?;
        self.structure()?;
        let d = &self.data;
        if d.window == 0 || d.stride == 0 {
            return Err(CliError::Config("data.window and data.stride must be positive".into()));
        }
        if !d.window.is_multiple_of(self.network_config().downsample_factor()) {
            return Err(CliError::Config(format!(
                "data.window {} must be divisible by 2^depth = {}",
                d.window,
                self.network_config().downsample_factor()
            )));
        }
        if d.val_period < 2 || d.val_phase >= d.val_period {
            return Err(CliError::Config(format!(
                "data.val_period must be >= 2 and data.val_phase below it (got {} / {})",
                d.val_period, d.val_phase
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips_for_every_preset() {
        let mut all: Vec<Option<Structure>> = Structure::ALL.iter().copied().map(Some).collect();
        all.push(None);
        for p in all {
            let a = resolve(p, None, &[], &FlagOverrides::default()).unwrap();
            let text = a.to_toml();
            let b = resolve(None, Some(&text), &[], &FlagOverrides::default()).unwrap();
            assert_eq!(a, b);
            assert_eq!(text, b.to_toml());
        }
    }

    #[test]
    fn preset_tables() {
        let s = preset(Structure::Synapse).train;
        assert_eq!((s.lr, s.lr_decay, s.batch_size, s.epochs), (1e-4, 1e-6, 12, 38));
        assert_eq!((s.early_stop_patience, s.reduce_factor, s.reduce_patience), (8, 0.5, 3));
        assert!(!s.weighting);
        let c = preset(Structure::Centriole);
        assert_eq!((c.train.oversample, c.loss.weight_cap), (4, 2000.0));
        assert_eq!((c.train.lr, c.train.lr_decay, c.train.early_stop_patience), (2e-3, 1e-6, 10));
        let g = preset(Structure::Golgi);
        assert_eq!((g.train.oversample, g.loss.weight_cap, g.train.epochs), (2, 1000.0, 124));
        assert_eq!((g.train.early_stop_patience, g.train.reduce_patience), (5, 2));
        let m = preset(Structure::Mts);
        assert_eq!((m.train.lr, m.train.lr_decay, m.loss.weight_cap, m.train.epochs), (1e-3, 1e-5, 2000.0, 300));
        let gr = preset(Structure::Granules).train;
        assert_eq!((gr.lr, gr.epochs, gr.early_stop_patience, gr.reduce_patience), (2e-3, 60, 5, 2));
        assert!(!gr.weighting);
    }

    #[test]
    fn layers_apply_in_order() {
        let file = "[train]\nlr = 0.5\nseed = 3\n[data]\nwindow = 64\n";
        let sets = vec!["train.seed=9".to_string(), "data.structure=golgi".to_string()];
        let flags = FlagOverrides {
            seed: Some(11),
            threshold: Some(0.7),
            out_dir: None,
        };
        let c = resolve(Some(Structure::Synapse), Some(file), &sets, &flags).unwrap();
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.train.seed, 11);
        assert_eq!(c.train.threshold, 0.7);
        assert_eq!(c.data.window, 64);
        assert_eq!(c.data.structure, "golgi");
        assert_eq!(c.train.epochs, 38);
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        let f = FlagOverrides::default();
        assert!(matches!(resolve(None, Some("[train]\nlearning_rate = 1.0\n"), &[], &f), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, Some("[extra]\na = 1\n"), &[], &f), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, None, &["train.nope=1".into()], &f), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, None, &["train.lr=-1".into()], &f), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, None, &["data.structure=ribosome".into()], &f), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, None, &["data.window=40".into()], &f), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, Some("not toml ["), &[], &f), Err(CliError::Config(_))));
    }
}
