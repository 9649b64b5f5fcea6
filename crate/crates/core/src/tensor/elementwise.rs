use super::tape::{GradSink, Op, Tape, Var};
use super::{axis_split, numel, Tensor};
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tape<T> {
    fn broadcast_len(&self, a: Var, b: Var, what: &str) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err!("{what}: rhs shape {sb:?} is not a trailing shape of {sa:?}"));
        }
        Ok(numel(sb).max(1))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let nb = self.broadcast_len(a, b, what)?;
        let bv = self.values(b);
        let out: Vec<T> = self
            .values(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % nb]))
            .collect();
        Tensor::new(self.shape(a), out)
    }

    /// `a + b`, with `b` broadcast over a matching trailing shape of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a, b }, &[a, b]))
    }

    /// `a - b`, broadcasting like [`Tape::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a, b }, &[a, b]))
    }

    /// Elementwise `a * b`, broadcasting like [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a, b }, &[a, b]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let out = self.values(x).iter().map(|&v| f(v)).collect();
        Tensor::new(self.shape(x), out).expect("same shape")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.unary(x, |v| if v > T::zero() { v } else { T::zero() });
        self.push(t, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.unary(x, |v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(t, Op::Sigmoid { x }, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.unary(x, |v| v.exp());
        self.push(t, Op::Exp { x }, &[x])
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.values(x).iter().find(|v| !(**v > T::zero())) {
            return Err(arg_err!("log of non-positive value {bad}"));
        }
        let t = self.unary(x, |v| v.ln());
        Ok(self.push(t, Op::Log { x }, &[x]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.unary(x, |v| v * c);
        self.push(t, Op::Scale { x, c }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let t = self.unary(x, |v| v + c);
        self.push(t, Op::AddScalar { x }, &[x])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| arg_err!("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err!("concat axis {axis} out of range for rank {}", base.len()));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == base.len();
            if !same_rank || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(shape_err!("concat along axis {axis}: {s:?} incompatible with {base:?}"));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.values(p)[o * len..(o + 1) * len]);
            }
        }
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Row lookup `table[ids]`, giving an ids.len()×D matrix.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(shape_err!("embedding table must be V×D, got {ts:?}"));
        }
        let (vocab, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(arg_err!("token id {bad} out of range for vocabulary of {vocab}"));
        }
        let tv = self.values(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(
            t,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone_values().reshape(shape)?;
        Ok(self.push(t, Op::Reshape { x }, &[x]))
    }
}

pub(super) fn add_backward<T: Scalar>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    sign: T,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if let Some(ga) = sink.slot(a) {
        for (d, &s) in ga.iter_mut().zip(g) {
            *d += s;
        }
    }
    let nb = tape.value(b).len().max(1);
    if let Some(gb) = sink.slot(b) {
        for (i, &s) in g.iter().enumerate() {
            gb[i % nb] += sign * s;
        }
    }
}

pub(super) fn mul_backward<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let (av, bv) = (tape.values(a), tape.values(b));
    let nb = bv.len().max(1);
    if let Some(ga) = sink.slot(a) {
        for (i, (d, &s)) in ga.iter_mut().zip(g).enumerate() {
            *d += s * bv[i % nb];
        }
    }
    if let Some(gb) = sink.slot(b) {
        for (i, &s) in g.iter().enumerate() {
            gb[i % nb] += s * av[i];
        }
    }
}

pub(super) fn relu_backward<T: Scalar>(tape: &Tape<T>, out: Var, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let y = tape.values(out);
    if let Some(gx) = sink.slot(x) {
        for ((d, &s), &yv) in gx.iter_mut().zip(g).zip(y) {
            if yv > T::zero() {
                *d += s;
            }
        }
    }
}

pub(super) fn sigmoid_backward<T: Scalar>(tape: &Tape<T>, out: Var, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let y = tape.values(out);
    if let Some(gx) = sink.slot(x) {
        for ((d, &s), &yv) in gx.iter_mut().zip(g).zip(y) {
            *d += s * yv * (T::one() - yv);
        }
    }
}

pub(super) fn exp_backward<T: Scalar>(tape: &Tape<T>, out: Var, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let y = tape.values(out);
    if let Some(gx) = sink.slot(x) {
        for ((d, &s), &yv) in gx.iter_mut().zip(g).zip(y) {
            *d += s * yv;
        }
    }
}

pub(super) fn log_backward<T: Scalar>(tape: &Tape<T>, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let xv = tape.values(x);
    if let Some(gx) = sink.slot(x) {
        for ((d, &s), &v) in gx.iter_mut().zip(g).zip(xv) {
            *d += s / v;
        }
    }
}

pub(super) fn scale_backward<T: Scalar>(x: Var, c: T, g: &[T], sink: &mut GradSink<'_, T>) {
    if let Some(gx) = sink.slot(x) {
        for (d, &s) in gx.iter_mut().zip(g) {
            *d += s * c;
        }
    }
}

pub(super) fn concat_backward<T: Scalar>(
    tape: &Tape<T>,
    parts: &[Var],
    axis: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let base = tape.shape(parts[0]);
    let (outer, _, inner) = axis_split(base, axis);
    let lens: Vec<usize> = parts.iter().map(|&p| tape.shape(p)[axis] * inner).collect();
    let row: usize = lens.iter().sum();
    let mut start = 0;
    for (&p, &len) in parts.iter().zip(&lens) {
        if let Some(gp) = sink.slot(p) {
            for o in 0..outer {
                let src = &g[o * row + start..o * row + start + len];
                for (d, &s) in gp[o * len..(o + 1) * len].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        start += len;
    }
}

pub(super) fn embed_backward<T: Scalar>(
    tape: &Tape<T>,
    table: Var,
    ids: &[usize],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let d = tape.shape(table)[1];
    if let Some(gt) = sink.slot(table) {
        for (r, &i) in ids.iter().enumerate() {
            for (dst, &s) in gt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                *dst += s;
            }
        }
    }
}
