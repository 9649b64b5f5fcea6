//! Soft graph matching: bilinear affinity, positive normalisation,
//! Sinkhorn balancing, and the diagonal-target cross-entropy.

use crate::error::{arg_err, shape_err, Result};
use crate::gazegraph::{GazeGraph, Gcn};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Floor added to the affinity before balancing.
pub const SINKHORN_FLOOR: f64 = 1e-9;
/// Variance epsilon of the affinity instance normalisation.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Matcher {
    pub affinity: ParamId,
    pub iters: usize,
}

impl Matcher {
    /// Learnable `d_n × d_n` affinity weight, initialised to the identity.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dim: usize, iters: usize) -> Result<Self> {
        if iters == 0 {
            return Err(arg_err!("sinkhorn needs at least one iteration"));
        }
        let mut eye = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            eye.values_mut()[i * dim + i] = T::one();
        }
        Ok(Self {
            affinity: store.add("match.affinity", eye)?,
            iters,
        })
    }

    /// `M = N_T · A · N_Sᵀ`.
    pub fn affinity_matrix<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, nt: Var, ns: Var) -> Result<Var> {
        if tape.shape(nt) != tape.shape(ns) {
            return Err(shape_err!(
                "graphs must have equal node count and width: {:?} vs {:?}",
                tape.shape(nt),
                tape.shape(ns)
            ));
        }
        let a = tape.param(store, self.affinity);
        let left = tape.matmul(nt, a)?;
        tape.matmul_t(left, false, ns, true)
    }

    /// GCN-embed both graphs with shared weights, then affinity, positive
    /// normalisation and Sinkhorn.
    pub fn correspondence<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        gcn: &Gcn,
        gt: &GazeGraph,
        pred: &GazeGraph,
    ) -> Result<Var> {
        let nt = gcn.forward(tape, store, gt)?;
        let ns = gcn.forward(tape, store, pred)?;
        let m = self.affinity_matrix(tape, store, nt, ns)?;
        let p = positive_normalize(tape, m, T::lit(NORM_EPS))?;
        sinkhorn(tape, p, self.iters)
    }
}

/// Instance normalisation over the whole matrix followed by `exp`.
pub fn positive_normalize<T: Scalar>(tape: &mut Tape<T>, m: Var, eps: T) -> Result<Var> {
    let z = tape.instance_norm(m, eps)?;
    Ok(tape.exp(z))
}

/// `iters` rounds of row then column normalisation, closed by a final row
/// normalisation. Input entries must be strictly positive.
pub fn sinkhorn<T: Scalar>(tape: &mut Tape<T>, m: Var, iters: usize) -> Result<Var> {
    match *tape.shape(m) {
        [r, c] if r == c && r > 0 => {}
        ref s => return Err(shape_err!("sinkhorn needs a non-empty square matrix, got {s:?}")),
    }
    if iters == 0 {
        return Err(arg_err!("sinkhorn needs at least one iteration"));
    }
    if let Some(bad) = tape.values(m).iter().find(|v| !(**v > T::zero())) {
        return Err(arg_err!("sinkhorn input must be strictly positive, found {bad}"));
    }
    let mut x = tape.add_scalar(m, T::lit(SINKHORN_FLOOR));
    for _ in 0..iters {
        x = tape.normalize_rows(x)?;
        x = tape.normalize_cols(x)?;
    }
    tape.normalize_rows(x)
}

/// `−(1/K) Σᵢ log c[i, i]`.
pub fn correspondence_loss<T: Scalar>(tape: &mut Tape<T>, c: Var) -> Result<Var> {
    tape.diag_nll(c)
}
