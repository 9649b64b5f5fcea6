use super::*;
use crate::encoders::{ImageEncoder, ImageEncoderDims, TextEncoder};
use crate::tensor::{grad_check_report, GradCheckOptions};
use crate::testutil::{assert_close, probe, random, rng};

#[test]
fn coord_channels_endpoints() {
    let c = coord_channels::<f64>(2, 2);
    assert_eq!(c.values(), [-1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 1.0]);
    let c = coord_channels::<f64>(3, 3);
    assert_eq!((c.at(&[0, 1, 1]), c.at(&[1, 1, 1])), (0.0, 0.0));
    let c = coord_channels::<f64>(1, 4);
    assert!(c.values()[4..].iter().all(|&v| v == 0.0));
    assert_close(&c.values()[..4], &[-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0], 1e-15);
}

struct Net {
    image: ImageEncoder,
    text: TextEncoder,
    fusion: ContextFusion,
    block: AttentionBlock,
    head: GazeHead,
    store: ParamStore<f64>,
}

fn net(full: bool, seed: u64) -> Net {
    let (stages, c, text_dim, width, d, heads, size) = if full {
        ([8, 16, 32, 64], (64, 32, 16), 64, 32, 64, 4, 128)
    } else {
        ([2, 2, 3, 3], (2, 3, 2), 4, 2, 4, 2, 32)
    };
    let mut store = ParamStore::new();
    let mut init = Init::new(rng(seed));
    let dims = FusionDims {
        c1: c.0,
        c2: c.1,
        c3: c.2,
        text_dim,
        width,
        model_dim: d,
    };
    let image = ImageEncoder::new(
        &mut store,
        &mut init,
        ImageEncoderDims {
            stages,
            c1: c.0,
            c2: c.1,
            c3: c.2,
        },
    )
    .unwrap();
    let text = TextEncoder::new(&mut store, &mut init, 8, text_dim).unwrap();
    let fusion = ContextFusion::new(&mut store, &mut init, dims).unwrap();
    let block = AttentionBlock::new(&mut store, &mut init, d, text_dim, heads).unwrap();
    let g = size / 8;
    let head = GazeHead::new(&mut store, &mut init, g * g, d, 3).unwrap();
    Net {
        image,
        text,
        fusion,
        block,
        head,
        store,
    }
}

impl Net {
    fn run(&self, tape: &mut Tape<f64>, p: &ParamStore<f64>, img: &Tensor<f64>, tokens: &[usize]) -> Result<(FusionTrace, CorrelationMap, Var)> {
        let x = tape.constant(img.clone());
        let pyr = self.image.encode(tape, p, x)?;
        let txt = self.text.encode(tape, p, tokens)?;
        let trace = self.fusion.fuse(tape, p, &pyr, txt.global)?;
        let h = self.block.forward(tape, p, trace.fm, txt.local)?;
        let y = self.head.forward(tape, p, &h)?;
        Ok((trace, h, y.points))
    }
}

#[test]
fn fused_scales_on_a_128_image() {
    let n = net(true, 0);
    let img = random(&mut rng(1), &[1, 128, 128], 0.0, 1.0);
    let mut tape = Tape::new();
    let (t, h, y) = n.run(&mut tape, &n.store, &img, &[1, 3, 2, 0]).unwrap();
    assert_eq!(tape.shape(t.f1), [32, 16, 16]);
    assert_eq!(tape.shape(t.f2), [32, 32, 32]);
    assert_eq!(tape.shape(t.f3), [32, 16, 16]);
    assert_eq!(tape.shape(t.fm), [64, 16, 16]);
    assert_eq!(tape.shape(h.tokens), [256, 64]);
    assert_eq!((h.grid_h, h.grid_w), (16, 16));
    assert!(tape.value(h.tokens).all_finite());
    assert_eq!(tape.shape(y), [3, 2]);
    assert!(tape.values(y).iter().all(|&v| v > 0.0 && v < 1.0));

    let (sa, ca) = (h.self_attention.unwrap(), h.cross_attention.unwrap());
    for (node, keys) in [(sa, 256), (ca, 4)] {
        let w = tape.attention_weights(node).unwrap();
        assert_eq!(w.len(), 4 * 256 * keys);
        for row in w.chunks(keys) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_text_with_zero_bias_annihilates_f1() {
    let mut n = net(true, 2);
    for name in ["fusion.text_mlp.hidden.b", "fusion.text_mlp.out.b"] {
        let id = n.store.id(name).unwrap();
        n.store.get_mut(id).values_mut().fill(0.0);
    }
    let mut tape = Tape::new();
    let x = tape.constant(random(&mut rng(3), &[1, 128, 128], 0.0, 1.0));
    let pyr = n.image.encode(&mut tape, &n.store, x).unwrap();
    let g = tape.constant(Tensor::zeros(&[64]));
    let t = n.fusion.fuse(&mut tape, &n.store, &pyr, g).unwrap();
    assert!(tape.values(t.f1).iter().all(|&v| v == 0.0));
}

#[test]
fn global_text_changes_the_fused_map() {
    let n = net(true, 4);
    let mut tape = Tape::new();
    let x = tape.constant(random(&mut rng(5), &[1, 128, 128], 0.0, 1.0));
    let pyr = n.image.encode(&mut tape, &n.store, x).unwrap();
    let g1 = tape.constant(random(&mut rng(6), &[64], -1.0, 1.0));
    let g2 = tape.constant(random(&mut rng(7), &[64], -1.0, 1.0));
    let a = n.fusion.fuse(&mut tape, &n.store, &pyr, g1).unwrap();
    let b = n.fusion.fuse(&mut tape, &n.store, &pyr, g2).unwrap();
    assert_ne!(tape.values(a.fm), tape.values(b.fm));
    let again = n.fusion.fuse(&mut tape, &n.store, &pyr, g1).unwrap();
    assert_eq!(tape.values(a.fm), tape.values(again.fm));
}

#[test]
fn mismatched_pyramid_scales_are_rejected() {
    let n = net(true, 0);
    let mut tape = Tape::new();
    let f1 = tape.constant(Tensor::zeros(&[64, 8, 8]));
    let f2 = tape.constant(Tensor::zeros(&[32, 8, 8]));
    let f3 = tape.constant(Tensor::zeros(&[16, 32, 32]));
    let g = tape.constant(Tensor::zeros(&[64]));
    let p = FeaturePyramid { f1, f2, f3 };
    assert!(n.fusion.fuse(&mut tape, &n.store, &p, g).is_err());
}

#[test]
fn head_count_must_divide_width() {
    let mut store = ParamStore::<f64>::new();
    let mut init = Init::new(rng(0));
    assert!(AttentionBlock::new(&mut store, &mut init, 64, 64, 3).is_err());
}

#[test]
fn cross_attention_ignores_text_token_order() {
    let n = net(true, 8);
    let mut tape = Tape::new();
    let fm = tape.constant(random(&mut rng(9), &[64, 16, 16], -1.0, 1.0));
    let local = random(&mut rng(10), &[4, 64], -1.0, 1.0);
    let pe = sinusoidal_1d::<f64>(4, 64);
    // Permute (local + PE) as a set of rows, then re-express it as input
    // to the block, which adds PE row-wise.
    let perm = [2, 0, 3, 1];
    let mut permuted = vec![0.0; 4 * 64];
    for (dst, &src) in perm.iter().enumerate() {
        for j in 0..64 {
            let v = local.at(&[src, j]) + pe.at(&[src, j]);
            permuted[dst * 64 + j] = v - pe.at(&[dst, j]);
        }
    }
    let a_local = tape.constant(local);
    let b_local = tape.constant(Tensor::new(&[4, 64], permuted).unwrap());
    let a = n.block.forward(&mut tape, &n.store, fm, a_local).unwrap();
    let b = n.block.forward(&mut tape, &n.store, fm, b_local).unwrap();
    assert_close(tape.values(a.tokens), tape.values(b.tokens), 1e-10);
}

#[test]
fn zero_head_predicts_the_centre() {
    let mut n = net(true, 11);
    for name in ["head.fc.w", "head.fc.b"] {
        let id = n.store.id(name).unwrap();
        n.store.get_mut(id).values_mut().fill(0.0);
    }
    let mut tape = Tape::new();
    let img = random(&mut rng(12), &[1, 128, 128], 0.0, 1.0);
    let (_, _, y) = n.run(&mut tape, &n.store, &img, &[1, 3, 2, 0]).unwrap();
    assert!(tape.values(y).iter().all(|&v| v == 0.5));
}

#[test]
fn predictions_depend_on_tokens() {
    for seed in 0..3 {
        let n = net(true, 20 + seed);
        let img = random(&mut rng(30 + seed), &[1, 128, 128], 0.0, 1.0);
        let mut tape = Tape::new();
        let (_, _, a) = n.run(&mut tape, &n.store, &img, &[1, 3, 2, 0]).unwrap();
        let (_, _, b) = n.run(&mut tape, &n.store, &img, &[1, 4, 2, 0]).unwrap();
        assert_ne!(tape.values(a), tape.values(b), "seed {seed}");
    }
}

#[test]
fn addition_baseline_shapes() {
    let mut store = ParamStore::<f64>::new();
    let mut init = Init::new(rng(0));
    let dims = FusionDims {
        c1: 4,
        c2: 3,
        c3: 2,
        text_dim: 5,
        width: 2,
        model_dim: 6,
    };
    let base = AdditionFusion::new(&mut store, &mut init, dims).unwrap();
    let mut tape = Tape::new();
    let f1 = tape.constant(Tensor::zeros(&[4, 2, 2]));
    let f2 = tape.constant(random(&mut rng(1), &[3, 4, 4], -1.0, 1.0));
    let f3 = tape.constant(Tensor::zeros(&[2, 8, 8]));
    let global = tape.constant(random(&mut rng(2), &[5], -1.0, 1.0));
    let local = tape.constant(Tensor::zeros(&[3, 5]));
    let h = base
        .forward(&mut tape, &store, &FeaturePyramid { f1, f2, f3 }, &TextFeatures { global, local })
        .unwrap();
    assert_eq!(tape.shape(h.tokens), [16, 6]);
    assert!(h.self_attention.is_none() && h.cross_attention.is_none());
}

#[test]
fn image_and_tokens_to_gaze_passes_grad_check() {
    let n = net(false, 40);
    let img = random(&mut rng(41), &[1, 32, 32], 0.0, 1.0);
    let report = grad_check_report(
        |p, tape| {
            let (_, _, y) = n.run(tape, p, &img, &[1, 5, 2])?;
            probe(tape, y, 42)
        },
        &n.store,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
