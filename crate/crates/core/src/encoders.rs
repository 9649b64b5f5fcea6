//! Small trainable image and text encoders.
//!
//! The image encoder is a four-stage strided CNN whose 1/4, 1/8 and 1/16
//! scale maps are projected to `C₃`, `C₂`, `C₁` channels. The text encoder
//! embeds token ids, adds a sinusoidal position code and applies one
//! feed-forward layer; the global feature is the mean of the token rows.

use crate::error::{arg_err, shape_err, Result};
use crate::nn::{sinusoidal_1d, Conv, Init, Linear};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Multi-scale visual features recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    /// `C₁ × H/16 × W/16`
    pub f1: Var,
    /// `C₂ × H/8 × W/8`
    pub f2: Var,
    /// `C₃ × H/4 × W/4`
    pub f3: Var,
}

/// Token-level and sentence-level text features recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TextFeatures {
    /// `D`
    pub global: Var,
    /// `M × D`
    pub local: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageEncoderDims {
    pub stages: [usize; 4],
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
}

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    stages: Vec<Conv>,
    proj3: Conv,
    proj2: Conv,
    proj1: Conv,
}

impl ImageEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, dims: ImageEncoderDims) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        let mut cin = 1;
        for (i, &cout) in dims.stages.iter().enumerate() {
            stages.push(Conv::new(store, init, &format!("image.stage{}", i + 1), cin, cout, 3, 2, 1)?);
            cin = cout;
        }
        let [_, s2, s3, s4] = dims.stages;
        Ok(Self {
            stages,
            proj3: Conv::pointwise(store, init, "image.proj3", s2, dims.c3)?,
            proj2: Conv::pointwise(store, init, "image.proj2", s3, dims.c2)?,
            proj1: Conv::pointwise(store, init, "image.proj1", s4, dims.c1)?,
        })
    }

    /// Encodes a `1 × H × W` image; `H` and `W` must be multiples of 16.
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, image: Var) -> Result<FeaturePyramid> {
        match *tape.shape(image) {
            [1, h, w] if h % 16 == 0 && w % 16 == 0 && h > 0 && w > 0 => {}
            ref s => {
                return Err(shape_err!(
                    "image must be 1×H×W with H, W positive multiples of 16, got {s:?}"
                ))
            }
        }
        let mut maps = Vec::with_capacity(4);
        let mut x = image;
        for stage in &self.stages {
            let y = stage.forward(tape, store, x)?;
            x = tape.relu(y);
            maps.push(x);
        }
        Ok(FeaturePyramid {
            f3: self.proj3.forward(tape, store, maps[1])?,
            f2: self.proj2.forward(tape, store, maps[2])?,
            f1: self.proj1.forward(tape, store, maps[3])?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    table: ParamId,
    ff: Linear,
    vocab: usize,
    dim: usize,
}

impl TextEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, vocab: usize, dim: usize) -> Result<Self> {
        let table = store.add("text.embed", init.uniform(&[vocab, dim], 1))?;
        let ff = Linear::new(store, init, "text.ff", dim, dim, true)?;
        Ok(Self { table, ff, vocab, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, tokens: &[usize]) -> Result<TextFeatures> {
        if tokens.is_empty() {
            return Err(arg_err!("empty token sequence"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(arg_err!("token id {bad} out of range for vocabulary of {}", self.vocab));
        }
        let table = tape.param(store, self.table);
        let emb = tape.embed(table, tokens)?;
        let pe = tape.constant(sinusoidal_1d(tokens.len(), self.dim));
        let x = tape.add(emb, pe)?;
        let h = self.ff.forward(tape, store, x)?;
        let local = tape.relu(h);
        let global = tape.mean_rows(local)?;
        Ok(TextFeatures { global, local })
    }

    /// All-zero text features of the right shape, for text-blind ablations.
    pub fn blank<T: Scalar>(&self, tape: &mut Tape<T>, tokens: usize) -> TextFeatures {
        TextFeatures {
            global: tape.constant(Tensor::zeros(&[self.dim])),
            local: tape.constant(Tensor::zeros(&[tokens, self.dim])),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::grad_check_report;
    use crate::tensor::GradCheckOptions;

    const DIMS: ImageEncoderDims = ImageEncoderDims {
        stages: [8, 16, 32, 64],
        c1: 64,
        c2: 32,
        c3: 16,
    };

    fn image_encoder(dims: ImageEncoderDims) -> (ImageEncoder, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(0));
        (ImageEncoder::new(&mut store, &mut init, dims).unwrap(), store)
    }

    #[test]
    fn pyramid_extents_follow_scales() {
        let (enc, store) = image_encoder(DIMS);
        for (h, w) in [(128, 128), (224, 224), (64, 96)] {
            let mut tape = Tape::new();
            let img = tape.constant(Tensor::full(&[1, h, w], 0.3));
            let p = enc.encode(&mut tape, &store, img).unwrap();
            assert_eq!(tape.shape(p.f1), [64, h / 16, w / 16]);
            assert_eq!(tape.shape(p.f2), [32, h / 8, w / 8]);
            assert_eq!(tape.shape(p.f3), [16, h / 4, w / 4]);
        }
    }

    #[test]
    fn zero_image_gives_finite_features_and_bad_sizes_fail() {
        let (enc, store) = image_encoder(DIMS);
        let mut tape = Tape::new();
        let img = tape.constant(Tensor::zeros(&[1, 32, 32]));
        let p = enc.encode(&mut tape, &store, img).unwrap();
        for v in [p.f1, p.f2, p.f3] {
            assert!(tape.value(v).all_finite());
        }
        let bad = tape.constant(Tensor::zeros(&[1, 40, 32]));
        assert!(enc.encode(&mut tape, &store, bad).is_err());
    }

    fn text_encoder() -> (TextEncoder, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(1));
        (TextEncoder::new(&mut store, &mut init, 16, 64).unwrap(), store)
    }

    #[test]
    fn text_shapes_and_global_is_column_mean() {
        let (enc, store) = text_encoder();
        let mut tape = Tape::new();
        let f = enc.encode(&mut tape, &store, &[1, 4, 2, 0]).unwrap();
        assert_eq!(tape.shape(f.local), [4, 64]);
        assert_eq!(tape.shape(f.global), [64]);
        let local = tape.values(f.local);
        for j in 0..64 {
            let mean = (0..4).map(|i| local[i * 64 + j]).sum::<f64>() / 4.0;
            assert_eq!(tape.values(f.global)[j], mean);
        }
        assert!(enc.encode(&mut tape, &store, &[1, 16]).is_err());
    }

    #[test]
    fn text_depends_on_token_and_position() {
        let (enc, store) = text_encoder();
        let mut tape = Tape::new();
        let a = enc.encode(&mut tape, &store, &[1, 3, 2, 0]).unwrap();
        let b = enc.encode(&mut tape, &store, &[1, 5, 2, 0]).unwrap();
        let c = enc.encode(&mut tape, &store, &[3, 1, 2, 0]).unwrap();
        let row = |v: Var, i: usize| tape.values(v)[i * 64..(i + 1) * 64].to_vec();
        assert_ne!(row(a.local, 1), row(b.local, 1));
        assert_eq!(row(a.local, 0), row(b.local, 0));
        assert_ne!(tape.values(a.local), tape.values(c.local));
        let again = enc.encode(&mut tape, &store, &[1, 3, 2, 0]).unwrap();
        assert_eq!(tape.values(a.local), tape.values(again.local));
    }

    #[test]
    fn encoders_pass_grad_check() {
        let dims = ImageEncoderDims {
            stages: [2, 3, 3, 4],
            c1: 3,
            c2: 2,
            c3: 2,
        };
        let (enc, store) = image_encoder(dims);
        let img = Init::new(ChaCha8Rng::seed_from_u64(6)).uniform::<f64>(&[1, 32, 32], 1);
        let report = grad_check_report(
            |p, tape| {
                let x = tape.constant(img.clone());
                let f = enc.encode(tape, p, x)?;
                let a = tape.sum(f.f1);
                let sq = tape.mul(f.f2, f.f2)?;
                let b = tape.sum(sq);
                let c = tape.mean(f.f3);
                let ab = tape.add(a, b)?;
                tape.add(ab, c)
            },
            &store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        let mut store = ParamStore::new();
        let text = TextEncoder::new(&mut store, &mut Init::new(ChaCha8Rng::seed_from_u64(2)), 6, 8).unwrap();
        let err = crate::tensor::grad_check(
            |p, tape| {
                let f = text.encode(tape, p, &[1, 4, 4, 0])?;
                let sq = tape.mul(f.local, f.local)?;
                let a = tape.sum(sq);
                let g = tape.sigmoid(f.global);
                let b = tape.sum(g);
                tape.add(a, b)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
