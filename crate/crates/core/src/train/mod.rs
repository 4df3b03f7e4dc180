//! Adam, end-of-epoch callbacks and the epoch loop.

mod adam;
mod callbacks;

pub use adam::{Adam, ADAM_EPSILON, BETA1, BETA2};
pub use callbacks::{Callbacks, EpochActions};

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::oversample_positive;
use crate::loss::{
    accumulate_confusion, batch_weights, binarize, combined_loss, miou, pixel_accuracy, ConfusionCounts,
    LossConfig, LossError,
};
use crate::model::checkpoint::{self, CheckpointError, CheckpointMeta};
use crate::model::{ModelError, SegEtNetwork};
use crate::tensor::{sigmoid_scalar, BnMode, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameter {0} has no gradient for this step")]
    UnsetGrad(String),
    #[error("parameter list changed shape between optimizer steps")]
    ParamLayout,
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what} in epoch {epoch}")]
    NonFinite { epoch: usize, what: &'static str },
    #[error("checkpoint write failed after epoch {}: {source}", partial.records.len())]
    Checkpoint {
        source: CheckpointError,
        partial: Box<TrainReport>,
    },
}

/// One training example: a single-channel image and its binary mask, each (1, 1, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
}

impl Sample {
    pub fn is_positive(&self) -> bool {
        self.mask.data().iter().any(|&v| v > 0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub early_stop_patience: Option<usize>,
    pub reduce_factor: f64,
    pub reduce_patience: Option<usize>,
    /// Extra copies of each positive sample added to the training set.
    pub oversample: usize,
    /// Per-sample foreground weighting, capped at `loss.weight_cap`.
    pub weighting: bool,
    pub loss: LossConfig,
    pub threshold: f64,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 12,
            lr: 1e-3,
            lr_decay: 1e-5,
            early_stop_patience: Some(8),
            reduce_factor: 0.5,
            reduce_patience: Some(3),
            oversample: 0,
            weighting: true,
            loss: LossConfig::default(),
            threshold: 0.5,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay >= 0.0) {
            return bad(format!("lr must be > 0 and decay >= 0, got {} and {}", self.lr, self.lr_decay));
        }
        if self.early_stop_patience == Some(0) || self.reduce_patience == Some(0) {
            return bad("patience must be >= 1".into());
        }
        if !(self.reduce_factor > 0.0 && self.reduce_factor < 1.0) {
            return bad(format!("reduce factor must lie in (0, 1), got {}", self.reduce_factor));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1), got {}", self.threshold));
        }
        self.loss.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EpochCap,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
    /// Rate in force at the end of the epoch, before any reduction it triggered.
    pub lr: f64,
    pub improved: bool,
    pub lr_reduced: bool,
    pub wall_secs: f64,
}

impl EpochRecord {
    /// Fields: epoch, train loss, validation mIOU, learning rate.
    pub fn log_line(&self) -> String {
        format!(
            "epoch {} loss {:.6} val_miou {:.6} lr {:.6e}",
            self.epoch, self.train_loss, self.val_miou, self.lr
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// Text rendering that excludes wall time, so equal runs render equal bytes.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(
                s,
                "epoch {} loss {:?} val_miou {:?} lr {:?} improved {} lr_reduced {}",
                r.epoch, r.train_loss, r.val_miou, r.lr, r.improved, r.lr_reduced
            );
        }
        let _ = writeln!(
            s,
            "best_epoch {} best_val_miou {:?} stop {:?}",
            self.best_epoch, self.best_val_miou, self.stop_reason
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub counts: ConfusionCounts,
}

/// Infer-mode metrics with foreground where `sigmoid(logit) > threshold`.
pub fn evaluate(net: &mut SegEtNetwork, data: &[Sample], threshold: f64) -> Result<EvalMetrics, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    let prev = net.mode();
    net.set_mode(BnMode::Infer);
    let mut counts = ConfusionCounts::new(2);
    for s in data {
        let logits = net.forward(&s.image)?;
        let probs: Vec<f64> = logits.data().iter().map(|&y| sigmoid_scalar(y)).collect();
        let gt = binarize(s.mask.data(), 0.5);
        accumulate_confusion(&binarize(&probs, threshold), &gt, &mut counts)?;
    }
    net.set_mode(prev);
    Ok(EvalMetrics {
        miou: miou(&counts)?,
        pixel_accuracy: pixel_accuracy(&counts)?,
        counts,
    })
}

/// Trains with validation mIOU as the monitored metric.
pub fn fit(
    net: &mut SegEtNetwork,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if val.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let threshold = cfg.threshold;
    fit_with_monitor(net, train, cfg, &mut |_, net| Ok(evaluate(net, val, threshold)?.miou))
}

/// The epoch loop with a caller-supplied monitor, called after every epoch
/// with the 1-based epoch number.
pub fn fit_with_monitor(
    net: &mut SegEtNetwork,
    train: &[Sample],
    cfg: &TrainConfig,
    monitor: &mut dyn FnMut(usize, &mut SegEtNetwork) -> Result<f64, TrainError>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    let samples = oversample_positive(train, Sample::is_positive, cfg.oversample);
    let weights: Vec<Option<Tensor>> = samples
        .iter()
        .map(|s| cfg.weighting.then(|| batch_weights(&s.mask, cfg.loss.weight_cap)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr, cfg.lr_decay);
    let mut callbacks = Callbacks::new(cfg.early_stop_patience, cfg.reduce_patience);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        records: Vec::new(),
        best_epoch: 0,
        best_val_miou: f64::NAN,
        stop_reason: StopReason::EpochCap,
    };

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        net.set_mode(BnMode::Train);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let images = Tensor::stack(&chunk.iter().map(|&i| samples[i].image.clone()).collect::<Vec<_>>())?;
            let masks = Tensor::stack(&chunk.iter().map(|&i| samples[i].mask.clone()).collect::<Vec<_>>())?;
            let w = if cfg.weighting {
                Some(Tensor::stack(
                    &chunk.iter().map(|&i| weights[i].clone().expect("weighting on")).collect::<Vec<_>>(),
                )?)
            } else {
                None
            };
            net.zero_grad();
            let logits = net.forward(&images)?;
            let out = combined_loss(&logits, &masks, &mut net.params_mut(), &cfg.loss, w.as_ref())?;
            if !out.total.is_finite() {
                return Err(TrainError::NonFinite { epoch, what: "loss" });
            }
            net.backward(&out.grad_logits)?;
            opt.step(&mut net.params_mut())?;
            loss_sum += out.total * chunk.len() as f64;
        }
        let lr = opt.effective_lr();
        let val_miou = monitor(epoch, net)?;
        net.set_mode(BnMode::Train);
        let act = callbacks.on_epoch_end(epoch, val_miou);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / samples.len() as f64,
            val_miou,
            lr,
            improved: act.save_checkpoint,
            lr_reduced: act.reduce_lr,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        log::info!("{}", record.log_line());
        report.records.push(record);
        if let Some((e, m)) = callbacks.best() {
            report.best_epoch = e;
            report.best_val_miou = m;
        }
        if act.save_checkpoint {
            if let Some(path) = &cfg.checkpoint {
                let meta = CheckpointMeta {
                    epoch: epoch as u32,
                    metric: val_miou,
                };
                if let Err(source) = checkpoint::save(path, net, meta) {
                    return Err(TrainError::Checkpoint {
                        source,
                        partial: Box::new(report),
                    });
                }
            }
        }
        if act.reduce_lr {
            opt.reduce(cfg.reduce_factor);
            log::info!("epoch {epoch}: learning rate reduced by {}", cfg.reduce_factor);
        }
        if act.stop {
            log::info!("epoch {epoch}: early stop, best epoch {}", report.best_epoch);
            report.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(report)
}
