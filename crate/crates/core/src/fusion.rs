//! Context-aware module: multi-scale text gating of the visual pyramid,
//! coordinate-channel aggregation, an attention block that yields the
//! correlation map, and the fully connected gaze head. Also hosts the
//! element-wise-addition baseline used for ablations.

use crate::encoders::{FeaturePyramid, TextFeatures};
use crate::error::{shape_err, Result};
use crate::nn::{residual_norm, sinusoidal_1d, sinusoidal_2d, Conv, FeedForward, Init, LayerNorm, Linear, MultiHeadAttention};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Fused image-text features on the 1/8-scale grid, one row per cell.
#[derive(Debug, Clone, Copy)]
pub struct CorrelationMap {
    /// `S × d`, `S = grid_h · grid_w`, row-major over the grid.
    pub tokens: Var,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Self-attention node (probabilities over image tokens), when present.
    pub self_attention: Option<Var>,
    /// Cross-attention node (probabilities over text tokens), when present.
    pub cross_attention: Option<Var>,
}

/// `K × 2` normalised gaze coordinates, `(x, y)` per row.
#[derive(Debug, Clone, Copy)]
pub struct GazePrediction {
    pub points: Var,
}

/// CoordConv channels: channel 0 is x, channel 1 is y, each spaced linearly
/// over `[-1, 1]`; a single row or column maps to 0.
pub fn coord_channels<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    let ramp = |i: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    let mut v = vec![T::zero(); 2 * h * w];
    for r in 0..h {
        for c in 0..w {
            v[r * w + c] = T::lit(ramp(c, w));
            v[h * w + r * w + c] = T::lit(ramp(r, h));
        }
    }
    Tensor::new(&[2, h, w], v).expect("2*h*w values")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionDims {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub text_dim: usize,
    /// Channel width of the integrated features F₁, F₂, F₃.
    pub width: usize,
    /// Output width d of the aggregated map.
    pub model_dim: usize,
}

/// Intermediate maps of [`ContextFusion::fuse`], kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct FusionTrace {
    pub f1: Var,
    pub f2: Var,
    pub f3: Var,
    pub fm: Var,
}

#[derive(Debug, Clone)]
pub struct ContextFusion {
    f1_proj: Conv,
    text_hidden: Linear,
    text_out: Linear,
    mix2: Conv,
    mix3: Conv,
    aggregate: Conv,
}

impl ContextFusion {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, dims: FusionDims) -> Result<Self> {
        let w = dims.width;
        Ok(Self {
            f1_proj: Conv::pointwise(store, init, "fusion.f1_proj", dims.c1, w)?,
            text_hidden: Linear::new(store, init, "fusion.text_mlp.hidden", dims.text_dim, dims.text_dim, true)?,
            text_out: Linear::new(store, init, "fusion.text_mlp.out", dims.text_dim, w, true)?,
            mix2: Conv::pointwise(store, init, "fusion.mix2", dims.c2 + w, w)?,
            mix3: Conv::pointwise(store, init, "fusion.mix3", dims.c3 + w, w)?,
            aggregate: Conv::new(store, init, "fusion.coordconv", w + 2, dims.model_dim, 3, 1, 1)?,
        })
    }

    /// The text MLP applied to the global feature, shape `[width]`.
    pub fn text_gate<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, global: Var) -> Result<Var> {
        let d = tape.value(global).len();
        let g = tape.reshape(global, &[1, d])?;
        let h = self.text_hidden.forward(tape, store, g)?;
        let h = tape.relu(h);
        let out = self.text_out.forward(tape, store, h)?;
        let n = tape.value(out).len();
        tape.reshape(out, &[n])
    }

    /// Multi-scale integration F₁ → F₂ → F₃ and CoordConv aggregation to
    /// a `d × H/8 × W/8` map.
    pub fn fuse<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        pyramid: &FeaturePyramid,
        global: Var,
    ) -> Result<FusionTrace> {
        let spatial = |tape: &Tape<T>, v: Var| (tape.shape(v)[1], tape.shape(v)[2]);
        let (h1, w1) = spatial(tape, pyramid.f1);
        let (h2, w2) = spatial(tape, pyramid.f2);
        let (h3, w3) = spatial(tape, pyramid.f3);
        if (h2, w2) != (2 * h1, 2 * w1) || (h3, w3) != (2 * h2, 2 * w2) {
            return Err(shape_err!(
                "pyramid scales disagree: f1 {h1}×{w1}, f2 {h2}×{w2}, f3 {h3}×{w3}"
            ));
        }
        let gate = self.text_gate(tape, store, global)?;
        let v1 = self.f1_proj.forward(tape, store, pyramid.f1)?;
        let gated = tape.mul_channel(v1, gate)?;
        let f1 = tape.upsample2x(gated)?;

        let cat2 = tape.concat(&[pyramid.f2, f1], 0)?;
        let m2 = self.mix2.forward(tape, store, cat2)?;
        let f2 = tape.upsample2x(m2)?;

        let cat3 = tape.concat(&[pyramid.f3, f2], 0)?;
        let m3 = self.mix3.forward(tape, store, cat3)?;
        let f3 = tape.avgpool2x(m3)?;

        let coords = tape.constant(coord_channels(h2, w2));
        let cat = tape.concat(&[f3, coords], 0)?;
        let fm = self.aggregate.forward(tape, store, cat)?;
        Ok(FusionTrace { f1, f2, f3, fm })
    }
}

/// `H = FFN(CA(SA(F_m + PE), f_T^L + PE))`, each sublayer as `LN(x + sub(x))`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    sa: MultiHeadAttention,
    norm_sa: LayerNorm,
    ca: MultiHeadAttention,
    norm_ca: LayerNorm,
    ffn: FeedForward,
    norm_ffn: LayerNorm,
    dim: usize,
    text_dim: usize,
}

impl AttentionBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        dim: usize,
        text_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(crate::error::arg_err!("model width {dim} not divisible by {heads} heads"));
        }
        Ok(Self {
            sa: MultiHeadAttention::new(store, init, "attn.sa", dim, dim, heads)?,
            norm_sa: LayerNorm::new(store, "attn.ln_sa", dim)?,
            ca: MultiHeadAttention::new(store, init, "attn.ca", dim, text_dim, heads)?,
            norm_ca: LayerNorm::new(store, "attn.ln_ca", dim)?,
            ffn: FeedForward::new(store, init, "attn.ffn", dim, 4 * dim)?,
            norm_ffn: LayerNorm::new(store, "attn.ln_ffn", dim)?,
            dim,
            text_dim,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        fm: Var,
        local: Var,
    ) -> Result<CorrelationMap> {
        let (d, gh, gw) = match *tape.shape(fm) {
            [d, h, w] => (d, h, w),
            ref s => return Err(shape_err!("attention block expects d×h×w, got {s:?}")),
        };
        if d != self.dim {
            return Err(shape_err!("map width {d} differs from attention width {}", self.dim));
        }
        let m = match *tape.shape(local) {
            [m, dt] if dt == self.text_dim && m >= 1 => m,
            ref s => return Err(shape_err!("local text features must be M×{}, got {s:?}", self.text_dim)),
        };
        let flat = tape.reshape(fm, &[d, gh * gw])?;
        let tokens = tape.transpose(flat)?;
        let pe = tape.constant(sinusoidal_2d(gh, gw, d));
        let x = tape.add(tokens, pe)?;

        let sa = self.sa.forward(tape, store, x, x)?;
        let x = residual_norm(tape, store, &self.norm_sa, x, sa.out)?;

        let tpe = tape.constant(sinusoidal_1d(m, self.text_dim));
        let text = tape.add(local, tpe)?;
        let ca = self.ca.forward(tape, store, x, text)?;
        let x = residual_norm(tape, store, &self.norm_ca, x, ca.out)?;

        let f = self.ffn.forward(tape, store, x)?;
        let h = residual_norm(tape, store, &self.norm_ffn, x, f)?;
        Ok(CorrelationMap {
            tokens: h,
            grid_h: gh,
            grid_w: gw,
            self_attention: Some(sa.weights),
            cross_attention: Some(ca.weights),
        })
    }
}

/// Baseline: `conv1×1(f₂) + MLP(f_T^G)` broadcast over space, no attention.
#[derive(Debug, Clone)]
pub struct AdditionFusion {
    proj: Conv,
    text_hidden: Linear,
    text_out: Linear,
}

impl AdditionFusion {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, dims: FusionDims) -> Result<Self> {
        Ok(Self {
            proj: Conv::pointwise(store, init, "baseline.f2_proj", dims.c2, dims.model_dim)?,
            text_hidden: Linear::new(store, init, "baseline.text_mlp.hidden", dims.text_dim, dims.text_dim, true)?,
            text_out: Linear::new(store, init, "baseline.text_mlp.out", dims.text_dim, dims.model_dim, true)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        pyramid: &FeaturePyramid,
        text: &TextFeatures,
    ) -> Result<CorrelationMap> {
        let d = tape.value(text.global).len();
        let g = tape.reshape(text.global, &[1, d])?;
        let h = self.text_hidden.forward(tape, store, g)?;
        let h = tape.relu(h);
        let t = self.text_out.forward(tape, store, h)?;
        let n = tape.value(t).len();
        let t = tape.reshape(t, &[n])?;
        let v = self.proj.forward(tape, store, pyramid.f2)?;
        let fused = tape.add_channel(v, t)?;
        let (c, gh, gw) = (tape.shape(fused)[0], tape.shape(fused)[1], tape.shape(fused)[2]);
        let flat = tape.reshape(fused, &[c, gh * gw])?;
        let tokens = tape.transpose(flat)?;
        Ok(CorrelationMap {
            tokens,
            grid_h: gh,
            grid_w: gw,
            self_attention: None,
            cross_attention: None,
        })
    }
}

/// Fully connected head: flattened `S × d` map → `2K` logits → sigmoid.
///
/// The flattened map is scaled by `1/√S` before the linear layer. With
/// `S·d` inputs in the tens of thousands, an adaptive-moment step moves
/// every weight by roughly the learning rate at once, which without the
/// scale shifts each logit by `O(lr · S · d)` and saturates the sigmoid
/// within a handful of steps.
#[derive(Debug, Clone)]
pub struct GazeHead {
    fc: Linear,
    points: usize,
    input_scale: f64,
}

impl GazeHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        cells: usize,
        dim: usize,
        points: usize,
    ) -> Result<Self> {
        Ok(Self {
            fc: Linear::new(store, init, "head.fc", cells * dim, 2 * points, true)?,
            points,
            input_scale: 1.0 / (cells.max(1) as f64).sqrt(),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, hmap: &CorrelationMap) -> Result<GazePrediction> {
        let n = tape.value(hmap.tokens).len();
        if n != self.fc.fan_in {
            return Err(shape_err!(
                "gaze head expects {} map values, got {n}",
                self.fc.fan_in
            ));
        }
        let flat = tape.reshape(hmap.tokens, &[1, n])?;
        let flat = tape.scale(flat, T::lit(self.input_scale));
        let logits = self.fc.forward(tape, store, flat)?;
        let p = tape.sigmoid(logits);
        Ok(GazePrediction {
            points: tape.reshape(p, &[self.points, 2])?,
        })
    }
}

#[cfg(test)]
mod tests;
