use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Learning rate used when fine-tuning pretrained backbones at full scale.
/// Training from scratch at desk scale uses [`TrainConfig::learning_rate`]'s
/// default instead.
pub const FINE_TUNE_LEARNING_RATE: f64 = 1e-6;

/// How text enters the visual features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Multi-scale gating, CoordConv aggregation, self/cross attention.
    ContextAware,
    /// Global text feature added to a single visual scale.
    Addition,
}

/// Every knob of data generation, model shape and optimisation.
///
/// Serialised as one flat JSON object; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub image_size: usize,
    /// K, gaze points per sample.
    pub num_points: usize,
    /// M, tokens per query.
    pub num_tokens: usize,
    pub vocab_size: usize,
    pub stage_channels: [usize; 4],
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub text_dim: usize,
    /// Channel width of the integrated maps F₁, F₂, F₃.
    pub fusion_width: usize,
    /// d, width of the correlation map.
    pub model_dim: usize,
    pub heads: usize,
    pub node_dim: usize,
    pub fusion: FusionMode,
    /// Replace both text features with zeros.
    pub text_blind: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sinkhorn_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            image_size: 128,
            num_points: 8,
            num_tokens: 4,
            vocab_size: 16,
            stage_channels: [8, 16, 32, 64],
            c1: 64,
            c2: 32,
            c3: 16,
            text_dim: 64,
            fusion_width: 32,
            model_dim: 64,
            heads: 4,
            node_dim: 64,
            fusion: FusionMode::ContextAware,
            text_blind: false,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            epochs: 30,
            alpha: 1.0,
            beta: 0.1,
            sinkhorn_iters: 20,
        }
    }
}

impl TrainConfig {
    /// Side of the 1/8-scale grid that carries the correlation map.
    pub fn grid(&self) -> usize {
        self.image_size / 8
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(arg_err!("config field '{field}': {why}"));
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return fail("image_size", "must be a positive multiple of 16");
        }
        if self.grid() < crate::gazegraph::PATCH {
            return fail("image_size", "1/8-scale grid must be at least 6 cells");
        }
        if self.num_points < 2 {
            return fail("num_points", "must be at least 2");
        }
        if self.num_tokens < 3 {
            return fail("num_tokens", "must hold BOS, class and EOS tokens");
        }
        if self.vocab_size < crate::pipeline::synth::FIRST_CLASS_TOKEN + crate::pipeline::synth::NUM_CLASSES {
            return fail("vocab_size", "too small for the special and class tokens");
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return fail("heads", "must divide model_dim");
        }
        if !self.node_dim.is_multiple_of(self.heads) {
            return fail("heads", "must divide node_dim");
        }
        if !self.model_dim.is_multiple_of(4) {
            return fail("model_dim", "must be a multiple of 4 for the 2-D position code");
        }
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("text_dim", self.text_dim),
            ("fusion_width", self.fusion_width),
            ("node_dim", self.node_dim),
        ] {
            if v == 0 {
                return fail(name, "must be positive");
            }
        }
        if self.stage_channels.contains(&0) {
            return fail("stage_channels", "must be positive");
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return fail("alpha", "must be a finite value ≥ 0");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return fail("beta", "must be a finite value ≥ 0");
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("learning_rate", "learning rate and weight decay must be ≥ 0");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if self.sinkhorn_iters == 0 {
            return fail("sinkhorn_iters", "must be at least 1");
        }
        Ok(())
    }

    /// Parses a JSON object, rejecting unknown keys, and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// True when two configs build parameter stores of identical layout.
    pub fn same_architecture(&self, other: &Self) -> bool {
        self.image_size == other.image_size
            && self.num_points == other.num_points
            && self.vocab_size == other.vocab_size
            && self.stage_channels == other.stage_channels
            && (self.c1, self.c2, self.c3) == (other.c1, other.c2, other.c3)
            && self.text_dim == other.text_dim
            && self.fusion_width == other.fusion_width
            && self.model_dim == other.model_dim
            && self.heads == other.heads
            && self.node_dim == other.node_dim
            && self.fusion == other.fusion
    }
}
