use std::fmt;
use std::str::FromStr;

use super::DataError;

/// The five cellular structures, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Structure {
    Synapse,
    Mts,
    Centriole,
    Granules,
    Golgi,
}

impl Structure {
    pub const ALL: [Structure; 5] = [
        Structure::Synapse,
        Structure::Mts,
        Structure::Centriole,
        Structure::Granules,
        Structure::Golgi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Structure::Synapse => "synapse",
            Structure::Mts => "mts",
            Structure::Centriole => "centriole",
            Structure::Granules => "granules",
            Structure::Golgi => "golgi",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Display color in the fused output.
    pub fn color(self) -> [u8; 3] {
        match self {
            Structure::Synapse => [255, 255, 255],
            Structure::Mts => [255, 0, 0],
            Structure::Centriole => [255, 255, 0],
            Structure::Granules => [0, 0, 255],
            Structure::Golgi => [0, 255, 0],
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Structure {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Structure::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DataError::UnknownStructure(s.to_string()))
    }
}

/// Class for one pixel: 0 for background, otherwise `1 + index` of the most
/// probable structure among those above `threshold`. Ties go to the earlier structure.
pub fn fuse_pixel(probs: &[f64; 5], threshold: f64) -> u8 {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > threshold && best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map_or(0, |(i, _)| i as u8 + 1)
}

/// Fuses five aligned probability maps, given in [`Structure::ALL`] order.
pub fn fuse_maps(maps: [&[f64]; 5], threshold: f64) -> Result<Vec<u8>, DataError> {
    let n = maps[0].len();
    if let Some((i, m)) = maps.iter().enumerate().find(|(_, m)| m.len() != n) {
        return Err(DataError::Shape(format!(
            "{} map has {} samples, {} map has {n}",
            Structure::ALL[i],
            m.len(),
            Structure::ALL[0]
        )));
    }
    Ok((0..n)
        .map(|j| fuse_pixel(&[maps[0][j], maps[1][j], maps[2][j], maps[3][j], maps[4][j]], threshold))
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn rule_examples() {
        assert_eq!(fuse_pixel(&[0.9, 0.2, 0.1, 0.6, 0.3], 0.5), 1);
        assert_eq!(fuse_pixel(&[0.5, 0.2, 0.1, 0.4, 0.3], 0.5), 0);
        assert_eq!(fuse_pixel(&[0.1, 0.8, 0.1, 0.1, 0.8], 0.5), 2);
        assert_eq!(fuse_pixel(&[0.1, 0.6, 0.1, 0.7, 0.8], 0.5), 5);
    }

    #[test]
    fn names_and_colors() {
        assert_eq!("MTs".parse::<Structure>().unwrap(), Structure::Mts);
        assert_eq!(Structure::Mts.color(), [255, 0, 0]);
        assert_eq!(Structure::Synapse.color(), [255, 255, 255]);
        assert!("ribosome".parse::<Structure>().is_err());
    }

    #[test]
    fn misaligned_rejected() {
        let a = [0.0; 4];
        let b = [0.0; 3];
        assert!(fuse_maps([&a, &a, &b, &a, &a], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn winner_keeps_its_support(probs in proptest::array::uniform5(0.0f64..1.0)) {
            let c = fuse_pixel(&probs, 0.5);
            if c == 0 {
                prop_assert!(probs.iter().all(|&p| p <= 0.5));
            } else {
                let k = c as usize - 1;
                prop_assert!(probs[k] > 0.5);
                prop_assert!(probs.iter().all(|&p| p <= probs[k]));
            }
        }
    }
}
