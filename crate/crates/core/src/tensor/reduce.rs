use super::tape::{GradSink, Op, Tape, Var};
use super::{axis_split, Tensor};
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

/// Sum of squared coordinate errors over the points flagged in `mask`,
/// and the number of flagged points. `pred` and `target` are K×2, row-major.
///
/// Shared by the training loss and the evaluation metrics so both reduce in
/// the same order.
pub fn masked_squared_error<T: Scalar>(pred: &[T], target: &[T], mask: &[bool]) -> (T, usize) {
    let mut sum = T::zero();
    let mut count = 0;
    for (k, &valid) in mask.iter().enumerate() {
        if !valid {
            continue;
        }
        let dx = pred[2 * k] - target[2 * k];
        let dy = pred[2 * k + 1] - target[2 * k + 1];
        sum += dx * dx;
        sum += dy * dy;
        count += 1;
    }
    (sum, count)
}

fn require_matrix<T: Scalar>(tape: &Tape<T>, v: Var, what: &str) -> Result<(usize, usize)> {
    match *tape.shape(v) {
        [r, c] => Ok((r, c)),
        ref s => Err(shape_err!("{what} expects a matrix, got {s:?}")),
    }
}

impl<T: Scalar> Tape<T> {
    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values(x).iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, x: Var) -> Var {
        let vals = self.values(x);
        let s = vals.iter().copied().sum::<T>() / T::from_usize(vals.len().max(1)).unwrap();
        self.push(Tensor::scalar(s), Op::Mean { x }, &[x])
    }

    /// Column means of an N×D matrix (mean over rows), shape D.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = require_matrix(self, x, "mean_rows")?;
        if n == 0 {
            return Err(arg_err!("mean_rows of an empty matrix"));
        }
        let v = self.values(x);
        let nt = T::from_usize(n).unwrap();
        let out: Vec<T> = (0..d)
            .map(|j| (0..n).map(|i| v[i * d + j]).sum::<T>() / nt)
            .collect();
        let t = Tensor::new(&[d], out)?;
        Ok(self.push(t, Op::MeanRows { x }, &[x]))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err!("softmax axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = self.values(x).to_vec();
        let mut buf = vec![T::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                for (a, b) in buf.iter_mut().enumerate() {
                    *b = out[(o * len + a) * inner + i];
                }
                super::linalg::softmax_in_place(&mut buf);
                for (a, &b) in buf.iter().enumerate() {
                    out[(o * len + a) * inner + i] = b;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Softmax { x, axis }, &[x]))
    }

    /// `(x − mean) / sqrt(var + eps)` with statistics over every element.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(arg_err!("instance_norm eps must be positive, got {eps}"));
        }
        let v = self.values(x);
        let n = T::from_usize(v.len().max(1)).unwrap();
        let mean = v.iter().copied().sum::<T>() / n;
        let var = v.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + eps).sqrt();
        let out = v.iter().map(|&a| (a - mean) * inv_std).collect();
        let t = Tensor::new(self.shape(x), out)?;
        Ok(self.push(t, Op::InstanceNorm { x, inv_std }, &[x]))
    }

    /// Per-row normalisation of an N×D matrix with affine `gamma`, `beta` (length D).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (n, d) = require_matrix(self, x, "layer_norm")?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err!(
                "layer_norm affine parameters must have shape [{d}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let v = self.values(x);
        let (gv, bv) = (self.values(gamma), self.values(beta));
        let dt = T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = &v[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / dt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let t = Tensor::new(&[n, d], out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Divides each row of a matrix by its sum.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = require_matrix(self, x, "normalize_rows")?;
        let v = self.values(x);
        let sums: Vec<T> = (0..r).map(|i| v[i * c..(i + 1) * c].iter().copied().sum()).collect();
        let out = (0..r * c).map(|idx| v[idx] / sums[idx / c]).collect();
        let t = Tensor::new(&[r, c], out)?;
        Ok(self.push(t, Op::NormalizeRows { x, sums }, &[x]))
    }

    /// Divides each column of a matrix by its sum.
    pub fn normalize_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = require_matrix(self, x, "normalize_cols")?;
        let v = self.values(x);
        let sums: Vec<T> = (0..c).map(|j| (0..r).map(|i| v[i * c + j]).sum()).collect();
        let out = (0..r * c).map(|idx| v[idx] / sums[idx % c]).collect();
        let t = Tensor::new(&[r, c], out)?;
        Ok(self.push(t, Op::NormalizeCols { x, sums }, &[x]))
    }

    /// Mean squared coordinate error over the valid points of a K×2 prediction.
    pub fn masked_mse(&mut self, pred: Var, target: &[T], mask: &[bool]) -> Result<Var> {
        let (k, two) = require_matrix(self, pred, "masked_mse")?;
        if two != 2 || target.len() != 2 * k || mask.len() != k {
            return Err(shape_err!(
                "masked_mse: prediction {:?}, {} target values, {} mask entries",
                self.shape(pred),
                target.len(),
                mask.len()
            ));
        }
        let (sum, count) = masked_squared_error(self.values(pred), target, mask);
        if count == 0 {
            return Err(arg_err!("masked_mse with zero valid points"));
        }
        let loss = sum / T::from_usize(2 * count).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMse {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            &[pred],
        ))
    }

    /// `−(1/K) Σ log x[i,i]` for a square matrix with a positive diagonal.
    pub fn diag_nll(&mut self, x: Var) -> Result<Var> {
        let (r, c) = require_matrix(self, x, "diag_nll")?;
        if r != c || r == 0 {
            return Err(shape_err!("diag_nll needs a non-empty square matrix, got {r}×{c}"));
        }
        let v = self.values(x);
        let mut acc = T::zero();
        for i in 0..r {
            let p = v[i * c + i];
            if !(p > T::zero()) {
                return Err(arg_err!("diagonal entry {i} is {p}; correspondence must be positive"));
            }
            acc += p.ln();
        }
        let loss = -acc / T::from_usize(r).unwrap();
        Ok(self.push(Tensor::scalar(loss), Op::DiagNll { x }, &[x]))
    }
}

pub(super) fn sum_backward<T: Scalar>(x: Var, factor: T, g: &[T], sink: &mut GradSink<'_, T>) {
    let s = g[0] * factor;
    if let Some(gx) = sink.slot(x) {
        for d in gx.iter_mut() {
            *d += s;
        }
    }
}

pub(super) fn mean_rows_backward<T: Scalar>(tape: &Tape<T>, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let (n, d) = (tape.shape(x)[0], tape.shape(x)[1]);
    let nt = T::from_usize(n).unwrap();
    if let Some(gx) = sink.slot(x) {
        for i in 0..n {
            for j in 0..d {
                gx[i * d + j] += g[j] / nt;
            }
        }
    }
}

pub(super) fn softmax_backward<T: Scalar>(
    tape: &Tape<T>,
    out: Var,
    x: Var,
    axis: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (outer, len, inner) = axis_split(tape.shape(x), axis);
    let y = tape.values(out);
    if let Some(gx) = sink.slot(x) {
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let dot = (0..len).fold(T::zero(), |acc, a| acc + g[at(a)] * y[at(a)]);
                for a in 0..len {
                    gx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                }
            }
        }
    }
}

pub(super) fn instance_norm_backward<T: Scalar>(
    tape: &Tape<T>,
    out: Var,
    x: Var,
    inv_std: T,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let y = tape.values(out);
    let n = T::from_usize(y.len().max(1)).unwrap();
    let mean_g = g.iter().copied().sum::<T>() / n;
    let mean_gy = g.iter().zip(y).fold(T::zero(), |a, (&gi, &yi)| a + gi * yi) / n;
    if let Some(gx) = sink.slot(x) {
        for ((d, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
            *d += inv_std * (gi - mean_g - yi * mean_gy);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn layer_norm_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let d = tape.shape(gamma)[0];
    let n = inv_std.len();
    let gv = tape.values(gamma);
    if let Some(gg) = sink.slot(gamma) {
        for r in 0..n {
            for j in 0..d {
                gg[j] += g[r * d + j] * xhat[r * d + j];
            }
        }
    }
    if let Some(gb) = sink.slot(beta) {
        for r in 0..n {
            for j in 0..d {
                gb[j] += g[r * d + j];
            }
        }
    }
    if let Some(gx) = sink.slot(x) {
        let dt = T::from_usize(d).unwrap();
        let mut dxhat = vec![T::zero(); d];
        for r in 0..n {
            let row = r * d..(r + 1) * d;
            for (j, dh) in dxhat.iter_mut().enumerate() {
                *dh = g[r * d + j] * gv[j];
            }
            let mean_d = dxhat.iter().copied().sum::<T>() / dt;
            let mean_dx = dxhat.iter().zip(&xhat[row.clone()]).fold(T::zero(), |a, (&p, &q)| a + p * q) / dt;
            for j in 0..d {
                gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
            }
        }
    }
}

pub(super) fn normalize_rows_backward<T: Scalar>(
    tape: &Tape<T>,
    out: Var,
    x: Var,
    sums: &[T],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let c = tape.shape(x)[1];
    let y = tape.values(out);
    if let Some(gx) = sink.slot(x) {
        for (i, &s) in sums.iter().enumerate() {
            let row = i * c..(i + 1) * c;
            let dot = g[row.clone()].iter().zip(&y[row.clone()]).fold(T::zero(), |a, (&p, &q)| a + p * q);
            for idx in row {
                gx[idx] += (g[idx] - dot) / s;
            }
        }
    }
}

pub(super) fn normalize_cols_backward<T: Scalar>(
    tape: &Tape<T>,
    out: Var,
    x: Var,
    sums: &[T],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (r, c) = (tape.shape(x)[0], tape.shape(x)[1]);
    let y = tape.values(out);
    if let Some(gx) = sink.slot(x) {
        for (j, &s) in sums.iter().enumerate() {
            let dot = (0..r).fold(T::zero(), |a, i| a + g[i * c + j] * y[i * c + j]);
            for i in 0..r {
                gx[i * c + j] += (g[i * c + j] - dot) / s;
            }
        }
    }
}

pub(super) fn masked_mse_backward<T: Scalar>(
    tape: &Tape<T>,
    pred: Var,
    target: &[T],
    mask: &[bool],
    count: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let p = tape.values(pred);
    let factor = g[0] / T::from_usize(count).unwrap();
    if let Some(gp) = sink.slot(pred) {
        for (k, &valid) in mask.iter().enumerate() {
            if valid {
                for c in 0..2 {
                    gp[2 * k + c] += factor * (p[2 * k + c] - target[2 * k + c]);
                }
            }
        }
    }
}

pub(super) fn diag_nll_backward<T: Scalar>(tape: &Tape<T>, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let k = tape.shape(x)[0];
    let v = tape.values(x);
    let kt = T::from_usize(k).unwrap();
    if let Some(gx) = sink.slot(x) {
        for i in 0..k {
            gx[i * k + i] -= g[0] / (kt * v[i * k + i]);
        }
    }
}
