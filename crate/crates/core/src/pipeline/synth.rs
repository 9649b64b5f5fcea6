//! Two-blob referring task: the query names one of two Gaussian blobs and
//! the gaze is a star of fixations around the named one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::TrainConfig;
use super::data::{Blob, Sample, SampleMeta, Split};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
/// Token id of class 0; class `c` is `FIRST_CLASS_TOKEN + c`.
pub const FIRST_CLASS_TOKEN: usize = 3;
pub const NUM_CLASSES: usize = 4;

pub const NOISE_MAX: f64 = 0.1;
pub const PEAK: f64 = 0.9;
pub const MIN_SEPARATION: f64 = 0.3;
/// Blob centres are drawn from `[MARGIN, 1 − MARGIN]²`.
pub const MARGIN: f64 = 0.15;
/// Distance of the satellite fixations from the central one.
pub const STAR_RADIUS: f64 = 0.15;
/// Per-axis standard deviation of each satellite around its star arm.
pub const JITTER: f64 = 0.04;
const MAX_RETRIES: usize = 10_000;

/// Blob radius in pixels for class `c`.
pub fn blob_radius(class: usize) -> f64 {
    4.0 + 2.0 * class as f64
}

/// Query tokens `[BOS, class, EOS, PAD, …]` of length `m ≥ 3`.
pub fn query_tokens(class: usize, m: usize) -> Vec<usize> {
    let mut t = vec![PAD; m];
    t[0] = BOS;
    t[1] = FIRST_CLASS_TOKEN + class;
    t[2] = EOS;
    t
}

/// Class named by a query, if its second token is a class token.
pub fn query_class(tokens: &[usize]) -> Option<usize> {
    let t = *tokens.get(1)?;
    (FIRST_CLASS_TOKEN..FIRST_CLASS_TOKEN + NUM_CLASSES)
        .contains(&t)
        .then(|| t - FIRST_CLASS_TOKEN)
}

/// Independent generator seed for sample `index` of `split`.
pub fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    // splitmix64 finaliser over a simple combination of the inputs.
    let tag = match split {
        Split::Train => 0x0074_7261_696e_u64,
        Split::Val => 0x76_616c,
        Split::Test => 0x7465_7374,
    };
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.rotate_left(32))
        .wrapping_add(index as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_centers(rng: &mut impl Rng) -> ([f64; 2], [f64; 2]) {
    let mut draw = || [rng.random_range(MARGIN..=1.0 - MARGIN), rng.random_range(MARGIN..=1.0 - MARGIN)];
    for _ in 0..MAX_RETRIES {
        let (a, b) = (draw(), draw());
        if (a[0] - b[0]).hypot(a[1] - b[1]) >= MIN_SEPARATION {
            return (a, b);
        }
    }
    ([0.3, 0.5], [0.7, 0.5])
}

/// Renders noise plus Gaussian-profile blobs, quantised to 8 bits so the
/// in-memory image equals its graymap file.
pub fn render(rng: &mut impl Rng, size: usize, blobs: &[Blob]) -> Vec<f64> {
    let mut img = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let mut v = rng.random_range(0.0..NOISE_MAX);
            for b in blobs {
                let dx = c as f64 + 0.5 - b.center[0] * size as f64;
                let dy = r as f64 + 0.5 - b.center[1] * size as f64;
                let rad = blob_radius(b.class);
                v += PEAK * (-(dx * dx + dy * dy) / (2.0 * rad * rad)).exp();
            }
            img.push((v.min(1.0) * 255.0).round() / 255.0);
        }
    }
    img
}

/// Star of `k` fixations: the centre itself, then `k − 1` satellites on
/// evenly spaced arms at [`STAR_RADIUS`], each jittered and clamped to the
/// unit square.
pub fn star_gaze(rng: &mut impl Rng, center: [f64; 2], k: usize) -> Vec<[f64; 2]> {
    let jitter = Normal::new(0.0, JITTER).expect("positive deviation");
    let mut pts = Vec::with_capacity(k);
    pts.push(center);
    for i in 1..k {
        let theta = std::f64::consts::TAU * (i - 1) as f64 / (k - 1) as f64;
        let x = center[0] + STAR_RADIUS * theta.cos() + jitter.sample(rng);
        let y = center[1] + STAR_RADIUS * theta.sin() + jitter.sample(rng);
        pts.push([x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)]);
    }
    pts
}

pub fn synth_sample(rng: &mut impl Rng, cfg: &TrainConfig) -> Sample {
    let target_class = rng.random_range(0..NUM_CLASSES);
    let other_class = (target_class + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES;
    let (a, b) = draw_centers(rng);
    let target = Blob {
        class: target_class,
        center: a,
    };
    let distractor = Blob {
        class: other_class,
        center: b,
    };
    let image = render(rng, cfg.image_size, &[target, distractor]);
    let gaze = star_gaze(rng, a, cfg.num_points);
    Sample {
        image,
        size: cfg.image_size,
        tokens: query_tokens(target_class, cfg.num_tokens),
        valid: vec![true; gaze.len()],
        gaze,
        meta: SampleMeta {
            target,
            distractor: Some(distractor),
        },
    }
}

/// `count` samples of `split`, each from its own sub-seed.
pub fn synth_split(cfg: &TrainConfig, split: Split, count: usize) -> Vec<Sample> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, split, i));
            synth_sample(&mut rng, cfg)
        })
        .collect()
}

/// The same scene with the query pointing at the other blob.
pub fn swap_query(sample: &Sample) -> Option<Sample> {
    let other = sample.meta.distractor?;
    let mut s = sample.clone();
    s.tokens = query_tokens(other.class, sample.tokens.len());
    s.meta = SampleMeta {
        target: other,
        distractor: Some(sample.meta.target),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    s.gaze = star_gaze(&mut rng, other.center, sample.gaze.len());
    Some(s)
}
