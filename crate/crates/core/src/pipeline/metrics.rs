use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::model::GemModel;
use crate::error::{arg_err, Result};
use crate::tensor::{masked_squared_error, ParamStore};
use crate::Scalar;

pub const PCK_THRESHOLDS: [f64; 3] = [0.2, 0.3, 0.4];

/// Dataset-level regression and keypoint metrics; serialises to the flat
/// object `{mse, mae, pck02, pck03, pck04, n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub pck02: f64,
    pub pck03: f64,
    pub pck04: f64,
    /// Number of samples.
    pub n: usize,
}

/// Running sums over index-paired valid points.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    squared: f64,
    absolute: f64,
    hits: [usize; 3],
    points: usize,
    samples: usize,
}

impl MetricsAccumulator {
    pub fn add(&mut self, pred: &[[f64; 2]], gt: &[[f64; 2]], valid: &[bool]) -> Result<()> {
        if pred.len() != gt.len() || gt.len() != valid.len() {
            return Err(arg_err!(
                "{} predicted points, {} ground-truth points, {} flags",
                pred.len(),
                gt.len(),
                valid.len()
            ));
        }
        let p: Vec<f64> = pred.iter().flatten().copied().collect();
        let g: Vec<f64> = gt.iter().flatten().copied().collect();
        let (sq, count) = masked_squared_error(&p, &g, valid);
        self.squared += sq;
        self.points += count;
        for ((a, b), _) in pred.iter().zip(gt).zip(valid).filter(|(_, &v)| v) {
            let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
            self.absolute += dx.abs() + dy.abs();
            let dist = (dx * dx + dy * dy).sqrt();
            for (hit, tau) in self.hits.iter_mut().zip(PCK_THRESHOLDS) {
                if dist <= tau {
                    *hit += 1;
                }
            }
        }
        self.samples += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.points == 0 {
            return Err(arg_err!("no valid points to evaluate"));
        }
        let coords = (2 * self.points) as f64;
        let pck = |h: usize| 100.0 * h as f64 / self.points as f64;
        Ok(MetricsReport {
            mse: self.squared / coords,
            mae: self.absolute / coords,
            pck02: pck(self.hits[0]),
            pck03: pck(self.hits[1]),
            pck04: pck(self.hits[2]),
            n: self.samples,
        })
    }
}

/// Metrics of the model's predictions on `data`, points paired by index.
pub fn evaluate<T: Scalar>(model: &GemModel, store: &ParamStore<T>, data: &[Sample]) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(arg_err!("cannot evaluate an empty dataset"));
    }
    let mut acc = MetricsAccumulator::default();
    for s in data {
        let pred = model.predict(store, &s.image, &s.tokens)?;
        acc.add(&pred, &s.gaze, &s.valid)?;
    }
    acc.finish()
}

/// Mean matching cross-entropy of the model over `data`.
pub fn mean_correspondence_ce<T: Scalar>(model: &GemModel, store: &ParamStore<T>, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(arg_err!("cannot evaluate an empty dataset"));
    }
    let mut total = 0.0;
    for s in data {
        total += model.correspondence_ce(store, s)?.to_f64().unwrap();
    }
    Ok(total / data.len() as f64)
}
