use super::tape::{GradSink, Op, Tape, Var};
use super::Tensor;
use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn conv_geometry(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<Geometry> {
    if xs.len() != 3 || ws.len() != 4 {
        return Err(shape_err!("conv2d expects C×H×W input and Co×Ci×k×k weights, got {xs:?} and {ws:?}"));
    }
    let (cin, h, w) = (xs[0], xs[1], xs[2]);
    let (cout, wcin, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
    if wcin != cin {
        return Err(shape_err!("conv2d weight expects {wcin} input channels, input has {cin}"));
    }
    if k != k2 || k % 2 == 0 {
        return Err(arg_err!("conv2d kernel must be square and odd, got {k}×{k2}"));
    }
    if stride == 0 {
        return Err(arg_err!("conv2d stride must be positive"));
    }
    let extent = |n: usize| -> Result<usize> {
        let span = n + 2 * pad;
        if span < k {
            return Err(shape_err!(
                "conv2d kernel {k} does not fit extent {n} with padding {pad}"
            ));
        }
        Ok((span - k) / stride + 1)
    };
    Ok(Geometry {
        cin,
        h,
        w,
        cout,
        k,
        ho: extent(h)?,
        wo: extent(w)?,
    })
}

/// Visits every (column-matrix index, input index) pair of the im2col layout.
fn for_each_tap(geo: &Geometry, stride: usize, pad: usize, mut f: impl FnMut(usize, usize)) {
    let p = geo.ho * geo.wo;
    for c in 0..geo.cin {
        for ki in 0..geo.k {
            for kj in 0..geo.k {
                let row = (c * geo.k + ki) * geo.k + kj;
                for oi in 0..geo.ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= geo.h as isize {
                        continue;
                    }
                    for oj in 0..geo.wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= geo.w as isize {
                            continue;
                        }
                        f(row * p + oi * geo.wo + oj, (c * geo.h + ii as usize) * geo.w + jj as usize);
                    }
                }
            }
        }
    }
}

fn require_chw<T: Scalar>(tape: &Tape<T>, x: Var, what: &str) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(shape_err!("{what} expects a C×H×W map, got {s:?}")),
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-D cross-correlation with zero padding (no kernel flip).
    ///
    /// Output extent is `(n + 2·pad − k) / stride + 1`, rounded down.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geo = conv_geometry(self.shape(x), self.shape(w), stride, pad)?;
        let p = geo.ho * geo.wo;
        let rows = geo.cin * geo.k * geo.k;
        let mut cols = vec![T::zero(); rows * p];
        let xv = self.values(x);
        for_each_tap(&geo, stride, pad, |ci, xi| cols[ci] = xv[xi]);
        let mut out = vec![T::zero(); geo.cout * p];
        T::gemm(
            geo.cout,
            rows,
            p,
            T::one(),
            self.values(w),
            rows as isize,
            1,
            &cols,
            p as isize,
            1,
            T::zero(),
            &mut out,
            p as isize,
            1,
        );
        let t = Tensor::new(&[geo.cout, geo.ho, geo.wo], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                w,
                cols,
                stride,
                pad,
            },
            &[x, w],
        ))
    }

    /// Nearest-neighbour ×2 upsampling: each cell becomes a 2×2 block.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = require_chw(self, x, "upsample2x")?;
        let src = self.values(x);
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    out[(ch * h2 + i) * w2 + j] = src[(ch * h + i / 2) * w + j / 2];
                }
            }
        }
        let t = Tensor::new(&[c, h2, w2], out)?;
        Ok(self.push(t, Op::Upsample2x { x }, &[x]))
    }

    /// Mean over non-overlapping 2×2 blocks.
    pub fn avgpool2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = require_chw(self, x, "avgpool2x")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("avgpool2x needs even spatial extents, got {h}×{w}"));
        }
        let src = self.values(x);
        let (h2, w2) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    let at = |di: usize, dj: usize| src[(ch * h + 2 * i + di) * w + 2 * j + dj];
                    out[(ch * h2 + i) * w2 + j] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter;
                }
            }
        }
        let t = Tensor::new(&[c, h2, w2], out)?;
        Ok(self.push(t, Op::AvgPool2x { x }, &[x]))
    }

    /// Adds `b[c]` to every element of channel `c` (leading axis).
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = self.channel_map(x, b, "add_channel", |a, b| a + b)?;
        Ok(self.push(out, Op::AddChannel { x, b }, &[x, b]))
    }

    /// Multiplies every element of channel `c` (leading axis) by `s[c]`.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let out = self.channel_map(x, s, "mul_channel", |a, b| a * b)?;
        Ok(self.push(out, Op::MulChannel { x, s }, &[x, s]))
    }

    fn channel_map(&self, x: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let xs = self.shape(x);
        let c = *xs.first().ok_or_else(|| shape_err!("{what} on a scalar"))?;
        if self.value(b).len() != c {
            return Err(shape_err!(
                "{what}: {} channel values for input shape {xs:?}",
                self.value(b).len()
            ));
        }
        let per = self.value(x).len() / c.max(1);
        let bv = self.values(b);
        let out: Vec<T> = self
            .values(x)
            .iter()
            .enumerate()
            .map(|(i, &a)| f(a, bv[i / per]))
            .collect();
        Tensor::new(xs, out)
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<T: Scalar>(
    tape: &Tape<T>,
    out: Var,
    x: Var,
    w: Var,
    cols: &[T],
    stride: usize,
    pad: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let geo = conv_geometry(tape.shape(x), tape.shape(w), stride, pad).expect("validated in forward");
    debug_assert_eq!(tape.shape(out), [geo.cout, geo.ho, geo.wo]);
    let p = geo.ho * geo.wo;
    let rows = geo.cin * geo.k * geo.k;
    let (pi, ri) = (p as isize, rows as isize);
    if let Some(gw) = sink.slot(w) {
        // dW = dOut · colsᵀ
        T::gemm(geo.cout, p, rows, T::one(), g, pi, 1, cols, 1, pi, T::one(), gw, ri, 1);
    }
    if sink.slot(x).is_some() {
        let mut dcols = vec![T::zero(); rows * p];
        T::gemm(rows, geo.cout, p, T::one(), tape.values(w), 1, ri, g, pi, 1, T::zero(), &mut dcols, pi, 1);
        let gx = sink.slot(x).expect("checked above");
        for_each_tap(&geo, stride, pad, |ci, xi| gx[xi] += dcols[ci]);
    }
}

pub(super) fn upsample2x_backward<T: Scalar>(tape: &Tape<T>, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let (c, h, w) = (tape.shape(x)[0], tape.shape(x)[1], tape.shape(x)[2]);
    let (h2, w2) = (2 * h, 2 * w);
    if let Some(gx) = sink.slot(x) {
        for ch in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    gx[(ch * h + i / 2) * w + j / 2] += g[(ch * h2 + i) * w2 + j];
                }
            }
        }
    }
}

pub(super) fn avgpool2x_backward<T: Scalar>(tape: &Tape<T>, x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let (c, h, w) = (tape.shape(x)[0], tape.shape(x)[1], tape.shape(x)[2]);
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    if let Some(gx) = sink.slot(x) {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    gx[(ch * h + i) * w + j] += g[(ch * h2 + i / 2) * w2 + j / 2] * quarter;
                }
            }
        }
    }
}

pub(super) fn add_channel_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    b: Var,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if let Some(gx) = sink.slot(x) {
        for (d, &s) in gx.iter_mut().zip(g) {
            *d += s;
        }
    }
    let c = tape.value(b).len();
    let per = g.len() / c.max(1);
    if let Some(gb) = sink.slot(b) {
        for (ch, chunk) in g.chunks(per).enumerate() {
            gb[ch] += chunk.iter().copied().sum::<T>();
        }
    }
}

pub(super) fn mul_channel_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    s: Var,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let c = tape.value(s).len();
    let per = g.len() / c.max(1);
    let (xv, sv) = (tape.values(x), tape.values(s));
    if let Some(gx) = sink.slot(x) {
        for (i, (d, &gi)) in gx.iter_mut().zip(g).enumerate() {
            *d += gi * sv[i / per];
        }
    }
    if let Some(gs) = sink.slot(s) {
        for (ch, gc) in gs.iter_mut().enumerate().take(c) {
            let range = ch * per..(ch + 1) * per;
            *gc += g[range.clone()].iter().zip(&xv[range]).fold(T::zero(), |a, (&gi, &xi)| a + gi * xi);
        }
    }
}
