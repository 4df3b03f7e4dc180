use super::LossError;

/// Pixel confusion matrix; entry (a, b) counts pixels of true class a
/// predicted as class b.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        assert!(classes >= 1, "at least one class");
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes).all(|a| (0..self.classes).all(|b| a == b || self.get(a, b) == 0))
    }

    /// Element-wise sum, for merging shards.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.classes, other.classes, "class count mismatch");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// (intersection, union) for one class.
    pub fn class_iou_terms(&self, i: usize) -> (u64, u64) {
        let row: u64 = (0..self.classes).map(|j| self.get(i, j)).sum();
        let col: u64 = (0..self.classes).map(|j| self.get(j, i)).sum();
        let tp = self.get(i, i);
        (tp, row + col - tp)
    }
}

pub fn accumulate_confusion(pred: &[u8], gt: &[u8], counts: &mut ConfusionCounts) -> Result<(), LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::MaskLength {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let k = counts.classes;
    for (index, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        for v in [p, g] {
            if v as usize >= k {
                return Err(LossError::ClassIndex { index, value: v, classes: k });
            }
        }
    }
    for (&p, &g) in pred.iter().zip(gt) {
        counts.counts[g as usize * k + p as usize] += 1;
    }
    Ok(())
}

/// How a class with empty union enters the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MiouConvention {
    #[default]
    Exclude,
    CountAsOne,
    CountAsZero,
}

pub fn miou(counts: &ConfusionCounts) -> Result<f64, LossError> {
    miou_with(counts, MiouConvention::Exclude)
}

pub fn miou_with(counts: &ConfusionCounts, convention: MiouConvention) -> Result<f64, LossError> {
    if counts.total() == 0 {
        return Err(LossError::EmptyCounts);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..counts.classes {
        let (inter, union) = counts.class_iou_terms(i);
        match (union, convention) {
            (0, MiouConvention::Exclude) => continue,
            (0, MiouConvention::CountAsOne) => sum += 1.0,
            (0, MiouConvention::CountAsZero) => {}
            _ => sum += inter as f64 / union as f64,
        }
        n += 1;
    }
    Ok(sum / n as f64)
}

pub fn pixel_accuracy(counts: &ConfusionCounts) -> Result<f64, LossError> {
    match counts.total() {
        0 => Err(LossError::EmptyCounts),
        total => Ok(counts.trace() as f64 / total as f64),
    }
}

/// Class 1 wherever the probability exceeds `threshold`.
pub fn binarize(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| (p > threshold) as u8).collect()
}
