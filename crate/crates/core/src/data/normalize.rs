use super::MrcVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizeScope {
    #[default]
    Volume,
    Slice,
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn rescale(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    if hi == lo {
        return vec![0.5; values.len()];
    }
    values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Min-max maps samples to [0, 1], one `ny·nx` vector per slice. A constant
/// range maps to 0.5.
pub fn normalize(volume: &MrcVolume, scope: NormalizeScope) -> Vec<Vec<f64>> {
    let (vlo, vhi) = min_max(&volume.data);
    (0..volume.nz)
        .map(|s| {
            let slice = volume.slice(s);
            let (lo, hi) = match scope {
                NormalizeScope::Volume => (vlo, vhi),
                NormalizeScope::Slice => min_max(slice),
            };
            rescale(slice, lo, hi)
        })
        .collect()
}
