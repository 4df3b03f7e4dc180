/// What the end-of-epoch callbacks decided.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochActions {
    pub save_checkpoint: bool,
    pub reduce_lr: bool,
    pub stop: bool,
}

/// Checkpointer, plateau reducer and early stopper over a monitored metric
/// (higher is better). An epoch improves only if it strictly beats the best.
#[derive(Debug, Clone)]
pub struct Callbacks {
    early_stop_patience: Option<usize>,
    reduce_patience: Option<usize>,
    best: Option<f64>,
    best_epoch: usize,
    stop_wait: usize,
    reduce_wait: usize,
}

impl Callbacks {
    pub fn new(early_stop_patience: Option<usize>, reduce_patience: Option<usize>) -> Self {
        Self {
            early_stop_patience,
            reduce_patience,
            best: None,
            best_epoch: 0,
            stop_wait: 0,
            reduce_wait: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }

    /// Runs checkpoint, then LR-reduce, then early-stop for a 1-based epoch.
    pub fn on_epoch_end(&mut self, epoch: usize, metric: f64) -> EpochActions {
        let improved = match self.best {
            None => !metric.is_nan(),
            Some(b) => metric > b,
        };
        let mut act = EpochActions::default();
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            act.save_checkpoint = true;
        }

        if let Some(p) = self.reduce_patience {
            if improved {
                self.reduce_wait = 0;
            } else {
                self.reduce_wait += 1;
                if self.reduce_wait >= p {
                    act.reduce_lr = true;
                    self.reduce_wait = 0;
                }
            }
        }

        if let Some(p) = self.early_stop_patience {
            if improved {
                self.stop_wait = 0;
            } else {
                self.stop_wait += 1;
                act.stop = self.stop_wait >= p;
            }
        }
        act
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cb: &mut Callbacks, seq: &[f64]) -> Vec<EpochActions> {
        let mut out = Vec::new();
        for (i, &m) in seq.iter().enumerate() {
            let a = cb.on_epoch_end(i + 1, m);
            out.push(a);
            if a.stop {
                break;
            }
        }
        out
    }

    #[test]
    fn early_stop_on_ties() {
        let mut cb = Callbacks::new(Some(2), None);
        let acts = run(&mut cb, &[0.5, 0.6, 0.6, 0.6, 0.6]);
        assert_eq!(acts.len(), 4);
        assert!(acts[3].stop);
        assert_eq!(cb.best(), Some((2, 0.6)));
        let saves: Vec<bool> = acts.iter().map(|a| a.save_checkpoint).collect();
        assert_eq!(saves, vec![true, true, false, false]);
    }

    #[test]
    fn reducer_fires_once_per_run() {
        let mut cb = Callbacks::new(None, Some(3));
        let seq = [0.5, 0.4, 0.4, 0.4, 0.45, 0.3, 0.3, 0.3, 0.6, 0.1];
        let fired: Vec<usize> = run(&mut cb, &seq)
            .iter()
            .enumerate()
            .filter(|(_, a)| a.reduce_lr)
            .map(|(i, _)| i + 1)
            .collect();
        assert_eq!(fired, vec![4, 7]);
    }

    #[test]
    fn counters_are_independent() {
        let mut cb = Callbacks::new(Some(4), Some(2));
        let acts = run(&mut cb, &[0.1, 0.1, 0.1, 0.1, 0.1, 0.2]);
        let reduce: Vec<bool> = acts.iter().map(|a| a.reduce_lr).collect();
        assert_eq!(reduce, vec![false, false, true, false, true]);
        assert!(acts[4].stop);
    }
}
