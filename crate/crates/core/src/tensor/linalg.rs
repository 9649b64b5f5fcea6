use super::tape::{GradSink, Op, Tape, Var};
use super::Tensor;
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

/// Logical (rows, cols, row stride, col stride) of a stored matrix, optionally transposed.
fn view(shape: &[usize], trans: bool) -> (usize, usize, isize, isize) {
    let (r, c) = (shape[0], shape[1]);
    if trans {
        (c, r, 1, c as isize)
    } else {
        (r, c, c as isize, 1)
    }
}

fn require_matrix<T: Scalar>(tape: &Tape<T>, v: Var, what: &str) -> Result<()> {
    if tape.shape(v).len() != 2 {
        return Err(shape_err!("{what} must be a matrix, got shape {:?}", tape.shape(v)));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    /// Matrix product `a @ b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        require_matrix(self, a, "matmul lhs")?;
        require_matrix(self, b, "matmul rhs")?;
        let (m, k, rsa, csa) = view(self.shape(a), ta);
        let (k2, n, rsb, csb) = view(self.shape(b), tb);
        if k != k2 {
            return Err(shape_err!(
                "matmul inner extents differ: {:?}{} @ {:?}{}",
                self.shape(a),
                if ta { "ᵀ" } else { "" },
                self.shape(b),
                if tb { "ᵀ" } else { "" }
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.values(a),
            rsa,
            csa,
            self.values(b),
            rsb,
            csb,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(t, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        require_matrix(self, x, "transpose input")?;
        let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
        let src = self.values(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::new(&[c, r], out)?;
        Ok(self.push(t, Op::Transpose { x }, &[x]))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is Sq×d, `k` and `v` are Sk×d; head `h` uses columns
    /// `h*d/heads..(h+1)*d/heads`. The per-head probabilities are kept on the
    /// node and exposed through [`Tape::attention_weights`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        for (var, what) in [(q, "query"), (k, "key"), (v, "value")] {
            require_matrix(self, var, what)?;
        }
        let (sq, d) = (self.shape(q)[0], self.shape(q)[1]);
        let sk = self.shape(k)[0];
        if self.shape(k)[1] != d || self.shape(v) != [sk, d] {
            return Err(shape_err!(
                "attention shapes disagree: q {:?}, k {:?}, v {:?}",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            ));
        }
        if heads == 0 || d % heads != 0 {
            return Err(arg_err!("width {d} is not divisible by {heads} heads"));
        }
        if sk == 0 {
            return Err(arg_err!("attention over an empty key set"));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut probs = vec![T::zero(); heads * sq * sk];
        let mut out = vec![T::zero(); sq * d];
        let (qv, kv, vv) = (self.values(q), self.values(k), self.values(v));
        let di = d as isize;
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[h * sq * sk..(h + 1) * sq * sk];
            T::gemm(
                sq,
                dh,
                sk,
                scale,
                &qv[off..],
                di,
                1,
                &kv[off..],
                1,
                di,
                T::zero(),
                p,
                sk as isize,
                1,
            );
            for row in p.chunks_mut(sk) {
                softmax_in_place(row);
            }
            T::gemm(
                sq,
                sk,
                dh,
                T::one(),
                p,
                sk as isize,
                1,
                &vv[off..],
                di,
                1,
                T::zero(),
                &mut out[off..],
                di,
                1,
            );
        }
        let t = Tensor::new(&[sq, d], out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Selects rows of a matrix; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        require_matrix(self, x, "gather_rows input")?;
        let (n, d) = (self.shape(x)[0], self.shape(x)[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(arg_err!("row index {bad} out of range for {n} rows"));
        }
        let src = self.values(x);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[idx.len(), d], out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub(super) fn matmul_backward<T: Scalar>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    ta: bool,
    tb: bool,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (m, k, rsa, csa) = view(tape.shape(a), ta);
    let (_, n, rsb, csb) = view(tape.shape(b), tb);
    let (av, bv) = (tape.values(a), tape.values(b));
    let ni = n as isize;
    if let Some(ga) = sink.slot(a) {
        // dA (m×k) = dC · Bᵀ, written through A's storage layout.
        let (rsc, csc) = if ta { (1, m as isize) } else { (k as isize, 1) };
        T::gemm(m, n, k, T::one(), g, ni, 1, bv, csb, rsb, T::one(), ga, rsc, csc);
    }
    if let Some(gb) = sink.slot(b) {
        // dB (k×n) = Aᵀ · dC.
        let (rsc, csc) = if tb { (1, k as isize) } else { (ni, 1) };
        T::gemm(k, m, n, T::one(), av, csa, rsa, g, ni, 1, T::one(), gb, rsc, csc);
    }
}

pub(super) fn transpose_backward<T: Scalar>(tape: &Tape<T>, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let (r, c) = (tape.shape(x)[0], tape.shape(x)[1]);
    if let Some(gx) = sink.slot(x) {
        for i in 0..r {
            for j in 0..c {
                gx[i * c + j] += g[j * r + i];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn attention_backward<T: Scalar>(
    tape: &Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    probs: &[T],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (sq, d) = (tape.shape(q)[0], tape.shape(q)[1]);
    let sk = tape.shape(k)[0];
    let dh = d / heads;
    let di = d as isize;
    let ski = sk as isize;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let (qv, kv, vv) = (tape.values(q), tape.values(k), tape.values(v));
    let mut ds = vec![T::zero(); sq * sk];
    for h in 0..heads {
        let off = h * dh;
        let p = &probs[h * sq * sk..(h + 1) * sq * sk];
        if let Some(gv) = sink.slot(v) {
            T::gemm(sk, sq, dh, T::one(), p, 1, ski, &g[off..], di, 1, T::one(), &mut gv[off..], di, 1);
        }
        // dP = dOut_h · V_hᵀ
        T::gemm(sq, dh, sk, T::one(), &g[off..], di, 1, &vv[off..], 1, di, T::zero(), &mut ds, ski, 1);
        for (drow, prow) in ds.chunks_mut(sk).zip(p.chunks(sk)) {
            let dot = drow.iter().zip(prow).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            for (dv, &pv) in drow.iter_mut().zip(prow) {
                *dv = pv * (*dv - dot) * scale;
            }
        }
        if let Some(gq) = sink.slot(q) {
            T::gemm(sq, sk, dh, T::one(), &ds, ski, 1, &kv[off..], di, 1, T::one(), &mut gq[off..], di, 1);
        }
        if let Some(gk) = sink.slot(k) {
            T::gemm(sk, sq, dh, T::one(), &ds, 1, ski, &qv[off..], di, 1, T::one(), &mut gk[off..], di, 1);
        }
    }
}

pub(super) fn gather_rows_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    idx: &[usize],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let d = tape.shape(x)[1];
    if let Some(gx) = sink.slot(x) {
        for (r, &i) in idx.iter().enumerate() {
            for (dst, &src) in gx[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                *dst += src;
            }
        }
    }
}
