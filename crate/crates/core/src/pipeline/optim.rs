use crate::error::{GemError, Result};
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

/// Adam with decoupled weight decay, updating a store in place from the
/// gradients accumulated on its tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Scalar>(store: &ParamStore<T>, lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect::<Vec<_>>();
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient slot are treated as having
    /// zero gradient (they still decay).
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(GemError::InvalidArgument(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let tensor = store.get_mut(id);
            let grad: Vec<f64> = match tensor.grad() {
                Some(g) => g.iter().map(|v| v.to_f64().unwrap()).collect(),
                None => vec![0.0; tensor.len()],
            };
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for (i, p) in tensor.values_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                let mut x = p.to_f64().unwrap();
                x -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * x);
                *p = T::lit(x);
            }
        }
        Ok(())
    }
}
