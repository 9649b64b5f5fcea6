use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(arg_err!("unknown split '{other}' (expected train, val or test)")),
        }
    }
}

/// A class-labelled blob with a normalised centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub class: usize,
    pub center: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    /// The blob named by the query.
    pub target: Blob,
    /// The other blob, when known (always for generated data, never for
    /// data read back from a manifest).
    pub distractor: Option<Blob>,
}

/// One training record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major `size × size` grayscale in `[0, 1]`.
    pub image: Vec<f64>,
    pub size: usize,
    pub tokens: Vec<usize>,
    /// `K` normalised `(x, y)` points.
    pub gaze: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Checks the record against the configured `K`, `M` and image side.
    pub fn validate(&self, size: usize, points: usize, tokens: usize) -> Result<()> {
        if self.size != size || self.image.len() != size * size {
            return Err(arg_err!(
                "image is {} values at side {}, expected side {size}",
                self.image.len(),
                self.size
            ));
        }
        if let Some(v) = self.image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(arg_err!("pixel value {v} outside [0, 1]"));
        }
        if self.tokens.len() != tokens {
            return Err(arg_err!("{} tokens, expected {tokens}", self.tokens.len()));
        }
        if self.gaze.len() != points || self.valid.len() != points {
            return Err(arg_err!(
                "{} gaze points / {} validity flags, expected {points}",
                self.gaze.len(),
                self.valid.len()
            ));
        }
        if let Some(p) = self.gaze.iter().find(|p| !p.iter().all(|c| (0.0..=1.0).contains(c))) {
            return Err(arg_err!("gaze point {p:?} outside [0, 1]²"));
        }
        if self.num_valid() == 0 {
            return Err(arg_err!("sample has no valid gaze points"));
        }
        Ok(())
    }
}

/// Fixes a variable-length point list to exactly `k` entries. Longer lists
/// are truncated; shorter ones are padded by cycling through the recorded
/// points, with the padding marked invalid so it never enters the loss or
/// the metrics.
pub fn fit_points(points: &[[f64; 2]], k: usize) -> Result<(Vec<[f64; 2]>, Vec<bool>)> {
    if points.is_empty() {
        return Err(arg_err!("no gaze points recorded"));
    }
    let n = points.len().min(k);
    let gaze = (0..k).map(|i| points[i % points.len()]).collect();
    let valid = (0..k).map(|i| i < n).collect();
    Ok((gaze, valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_truncates_and_pads() {
        let pts = [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]];
        let (g, v) = fit_points(&pts, 2).unwrap();
        assert_eq!(g, pts[..2]);
        assert_eq!(v, [true, true]);
        let (g, v) = fit_points(&pts, 5).unwrap();
        assert_eq!(g[3..], [pts[0], pts[1]]);
        assert_eq!(v, [true, true, true, false, false]);
        assert!(fit_points(&[], 3).is_err());
    }

    #[test]
    fn split_names_roundtrip() {
        for s in Split::ALL {
            assert_eq!(Split::parse(s.name()).unwrap(), s);
        }
        assert!(Split::parse("dev").is_err());
    }
}
