use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Sample;
use super::model::GemModel;
use super::optim::AdamW;
use crate::error::{arg_err, GemError, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tape};

/// Per-batch means, in the order the batches were visited.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochTrace {
    pub batch_loss: Vec<f64>,
    pub batch_mse: Vec<f64>,
    /// Empty when the matching branch is disabled.
    pub batch_ce: Vec<f64>,
}

impl EpochTrace {
    pub fn mean_loss(&self) -> f64 {
        if self.batch_loss.is_empty() {
            return f64::NAN;
        }
        self.batch_loss.iter().sum::<f64>() / self.batch_loss.len() as f64
    }
}

/// Visiting order of epoch `epoch`: a permutation seeded by the config seed
/// and the epoch number.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// One pass over `data` in mini-batches. Per-sample gradients are averaged
/// in a fixed order before each optimizer step.
pub fn train_epoch<T: Scalar>(
    model: &GemModel,
    store: &mut ParamStore<T>,
    opt: &mut AdamW,
    data: &[Sample],
    epoch: usize,
) -> Result<EpochTrace> {
    if data.is_empty() {
        return Err(arg_err!("training set is empty"));
    }
    let cfg = model.config();
    let order = epoch_order(cfg.seed, epoch, data.len());
    let mut trace = EpochTrace::default();
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        store.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        let tscale = T::lit(scale);
        let (mut loss, mut mse, mut ce) = (0.0, 0.0, 0.0);
        for &i in batch {
            let mut tape = Tape::new();
            let fail = |e: GemError| match e {
                GemError::NonFinite(msg) => GemError::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            };
            let l = model.loss(&mut tape, store, &data[i]).map_err(fail)?;
            let value = tape.item(l.total).to_f64().unwrap();
            if !value.is_finite() {
                return Err(GemError::NonFinite(format!(
                    "epoch {epoch}, batch {b}: loss is {value} on sample {i}"
                )));
            }
            let grads = tape.backward(l.total).map_err(fail)?;
            grads.accumulate_into(&tape, store, tscale)?;
            loss += value * scale;
            mse += l.mse.to_f64().unwrap() * scale;
            ce += l.ce.map_or(0.0, |c| c.to_f64().unwrap()) * scale;
        }
        opt.step(store)?;
        trace.batch_loss.push(loss);
        trace.batch_mse.push(mse);
        if cfg.beta > 0.0 {
            trace.batch_ce.push(ce);
        }
    }
    Ok(trace)
}
