//! Parameterised layers shared by the encoders, the fusion block and the
//! graph branch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Uniform `[-1/√fan_in, 1/√fan_in]` initialiser driven by a seeded generator.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n)
            .map(|_| T::lit(self.rng.random_range(-bound..=bound)))
            .collect();
        Tensor::new(shape, values).expect("shape matches value count")
    }
}

/// `y = x W + b` on row-major N×in inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), init.uniform(&[fan_in, fan_out], fan_in))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), init.uniform(&[fan_out], fan_in))?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Convolution with a per-channel bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        let w = store.add(format!("{name}.w"), init.uniform(&[cout, cin, kernel, kernel], fan_in))?;
        let b = store.add(format!("{name}.b"), init.uniform(&[cout], fan_in))?;
        Ok(Self { w, b, stride, pad })
    }

    /// 1×1 convolution, stride 1.
    pub fn pointwise<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Self::new(store, init, name, cin, cout, 1, 1, 0)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.conv2d(x, w, self.stride, self.pad)?;
        tape.add_channel(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], T::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, T::lit(LN_EPS))
    }
}

/// Multi-head attention with separate query and key/value inputs.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

/// Attention output together with the node that holds its probabilities.
pub struct AttentionOut {
    pub out: Var,
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            wq: Linear::new(store, init, &format!("{name}.q"), dim, dim, true)?,
            // A key bias shifts every logit of a query row equally, so softmax
            // cancels it; it would be a parameter with identically zero gradient.
            wk: Linear::new(store, init, &format!("{name}.k"), kv_dim, dim, false)?,
            wv: Linear::new(store, init, &format!("{name}.v"), kv_dim, dim, true)?,
            wo: Linear::new(store, init, &format!("{name}.o"), dim, dim, true)?,
            heads,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        query: Var,
        context: Var,
    ) -> Result<AttentionOut> {
        let q = self.wq.forward(tape, store, query)?;
        let k = self.wk.forward(tape, store, context)?;
        let v = self.wv.forward(tape, store, context)?;
        let weights = tape.attention(q, k, v, self.heads)?;
        let out = self.wo.forward(tape, store, weights)?;
        Ok(AttentionOut { out, weights })
    }
}

/// Two-layer position-wise MLP with a relu in between.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, init, &format!("{name}.up"), dim, hidden, true)?,
            down: Linear::new(store, init, &format!("{name}.down"), hidden, dim, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.down.forward(tape, store, h)
    }
}

/// `LN(x + sublayer)`.
pub fn residual_norm<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    norm: &LayerNorm,
    x: Var,
    sub: Var,
) -> Result<Var> {
    let sum = tape.add(x, sub)?;
    norm.forward(tape, store, sum)
}

/// Self-attention followed by a feed-forward sublayer, each with a residual
/// connection and layer normalisation.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, init, &format!("{name}.sa"), dim, dim, heads)?,
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), dim, 4 * dim)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let a = self.attn.forward(tape, store, x, x)?;
        let x = residual_norm(tape, store, &self.norm1, x, a.out)?;
        let f = self.ffn.forward(tape, store, x)?;
        residual_norm(tape, store, &self.norm2, x, f)
    }
}

/// Fixed 1-D sinusoidal embedding, `len × dim`.
pub fn sinusoidal_1d<T: Scalar>(len: usize, dim: usize) -> Tensor<T> {
    let mut v = vec![T::zero(); len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            v[pos * dim + i] = T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[len, dim], v).expect("len*dim values")
}

/// Fixed 2-D sinusoidal embedding for an `h × w` grid flattened row-major,
/// `(h·w) × dim`. The first half of the channels encodes the column, the
/// second half the row.
pub fn sinusoidal_2d<T: Scalar>(h: usize, w: usize, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let cols = sinusoidal_1d::<T>(w, half);
    let rows = sinusoidal_1d::<T>(h, dim - half);
    let mut v = Vec::with_capacity(h * w * dim);
    for r in 0..h {
        for c in 0..w {
            v.extend_from_slice(&cols.values()[c * half..(c + 1) * half]);
            v.extend_from_slice(&rows.values()[r * (dim - half)..(r + 1) * (dim - half)]);
        }
    }
    Tensor::new(&[h * w, dim], v).expect("h*w*dim values")
}
