use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{FusionMode, TrainConfig};
use super::data::Sample;
use super::loss::total_loss;
use crate::encoders::{ImageEncoder, ImageEncoderDims, TextEncoder};
use crate::error::{arg_err, Result};
use crate::fusion::{AdditionFusion, AttentionBlock, ContextFusion, CorrelationMap, FusionDims, GazeHead};
use crate::gazegraph::{EdgeGenerator, GazeGraph, Gcn, NodeEncoder};
use crate::matcher::{correspondence_loss, Matcher};
use crate::nn::Init;
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
enum Fusion {
    ContextAware { fuse: ContextFusion, attend: Box<AttentionBlock> },
    Addition(AdditionFusion),
}

/// Encoders, fusion, gaze head and the graph-matching branch. Holds only
/// the architecture; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct GemModel {
    cfg: TrainConfig,
    image: ImageEncoder,
    text: TextEncoder,
    fusion: Fusion,
    head: GazeHead,
    nodes: NodeEncoder,
    edges: EdgeGenerator,
    gcn: Gcn,
    matcher: Matcher,
}

/// Result of the image+text → gaze path.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub hmap: CorrelationMap,
    /// `K × 2`
    pub points: Var,
}

/// Per-sample objective and its parts.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss<T> {
    pub total: Var,
    pub mse: T,
    /// Present when the matching branch ran (β > 0).
    pub ce: Option<T>,
}

impl GemModel {
    /// Builds the architecture for `cfg` and a freshly initialised store
    /// seeded from `cfg.seed`.
    pub fn new<T: Scalar>(cfg: &TrainConfig) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(cfg.seed));
        let s = &mut store;
        let i = &mut init;
        let image = ImageEncoder::new(
            s,
            i,
            ImageEncoderDims {
                stages: cfg.stage_channels,
                c1: cfg.c1,
                c2: cfg.c2,
                c3: cfg.c3,
            },
        )?;
        let text = TextEncoder::new(s, i, cfg.vocab_size, cfg.text_dim)?;
        let dims = FusionDims {
            c1: cfg.c1,
            c2: cfg.c2,
            c3: cfg.c3,
            text_dim: cfg.text_dim,
            width: cfg.fusion_width,
            model_dim: cfg.model_dim,
        };
        let fusion = match cfg.fusion {
            FusionMode::ContextAware => Fusion::ContextAware {
                fuse: ContextFusion::new(s, i, dims)?,
                attend: Box::new(AttentionBlock::new(s, i, cfg.model_dim, cfg.text_dim, cfg.heads)?),
            },
            FusionMode::Addition => Fusion::Addition(AdditionFusion::new(s, i, dims)?),
        };
        let grid = cfg.grid();
        let head = GazeHead::new(s, i, grid * grid, cfg.model_dim, cfg.num_points)?;
        let nodes = NodeEncoder::new(s, i, cfg.model_dim, cfg.node_dim)?;
        let edges = EdgeGenerator::new(s, i, cfg.node_dim, cfg.heads)?;
        let gcn = Gcn::new(s, i, cfg.node_dim)?;
        let matcher = Matcher::new(s, cfg.node_dim, cfg.sinkhorn_iters)?;
        let model = Self {
            cfg: cfg.clone(),
            image,
            text,
            fusion,
            head,
            nodes,
            edges,
            gcn,
            matcher,
        };
        Ok((model, store))
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Image (`size × size`, row-major) and tokens → correlation map and
    /// predicted points.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, image: &[f64], tokens: &[usize]) -> Result<Forward> {
        let size = self.cfg.image_size;
        if image.len() != size * size {
            return Err(arg_err!("image has {} pixels, expected {size}×{size}", image.len()));
        }
        if tokens.len() != self.cfg.num_tokens {
            return Err(arg_err!("{} tokens, expected {}", tokens.len(), self.cfg.num_tokens));
        }
        let x = tape.constant(Tensor::from_f64(&[1, size, size], image)?);
        let pyramid = self.image.encode(tape, store, x)?;
        let text = if self.cfg.text_blind {
            self.text.blank(tape, tokens.len())
        } else {
            self.text.encode(tape, store, tokens)?
        };
        let hmap = match &self.fusion {
            Fusion::ContextAware { fuse, attend } => {
                let trace = fuse.fuse(tape, store, &pyramid, text.global)?;
                attend.forward(tape, store, trace.fm, text.local)?
            }
            Fusion::Addition(add) => add.forward(tape, store, &pyramid, &text)?,
        };
        let pred = self.head.forward(tape, store, &hmap)?;
        Ok(Forward {
            hmap,
            points: pred.points,
        })
    }

    /// Gaze graph for `points`, cropped from `hmap`.
    pub fn graph<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, hmap: &CorrelationMap, points: &[[f64; 2]]) -> Result<GazeGraph> {
        let nodes = self.nodes.forward(tape, store, hmap, points)?;
        let edges = self.edges.forward(tape, store, nodes)?;
        Ok(GazeGraph { nodes, edges })
    }

    /// Soft correspondence between the graphs of `gt` and `pred` points.
    pub fn correspondence<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        hmap: &CorrelationMap,
        gt: &[[f64; 2]],
        pred: &[[f64; 2]],
    ) -> Result<Var> {
        let g = self.graph(tape, store, hmap, gt)?;
        let p = self.graph(tape, store, hmap, pred)?;
        self.matcher.correspondence(tape, store, &self.gcn, &g, &p)
    }

    /// Correspondence over the valid points of `sample`, using the current
    /// prediction values as (constant) crop locations.
    pub fn sample_correspondence<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, sample: &Sample, fwd: &Forward) -> Result<Var> {
        let pred = points_of(tape.values(fwd.points));
        let (gt, pr): (Vec<_>, Vec<_>) = sample
            .gaze
            .iter()
            .zip(&pred)
            .zip(&sample.valid)
            .filter(|(_, &v)| v)
            .map(|((g, p), _)| (*g, *p))
            .unzip();
        self.correspondence(tape, store, &fwd.hmap, &gt, &pr)
    }

    /// `α·MSE + β·CE` for one sample; the matching branch is skipped when
    /// `β = 0`.
    pub fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, sample: &Sample) -> Result<SampleLoss<T>> {
        let fwd = self.forward(tape, store, &sample.image, &sample.tokens)?;
        let c = if self.cfg.beta > 0.0 {
            Some(self.sample_correspondence(tape, store, sample, &fwd)?)
        } else {
            None
        };
        let parts = total_loss(tape, fwd.points, &sample.gaze, &sample.valid, c, self.cfg.alpha, self.cfg.beta)?;
        Ok(SampleLoss {
            total: parts.total,
            mse: tape.item(parts.mse),
            ce: parts.ce.map(|v| tape.item(v)),
        })
    }

    /// Matching cross-entropy for one sample, regardless of β.
    pub fn correspondence_ce<T: Scalar>(&self, store: &ParamStore<T>, sample: &Sample) -> Result<T> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, store, &sample.image, &sample.tokens)?;
        let c = self.sample_correspondence(&mut tape, store, sample, &fwd)?;
        let ce = correspondence_loss(&mut tape, c)?;
        Ok(tape.item(ce))
    }

    /// Predicted points for one image and query.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, image: &[f64], tokens: &[usize]) -> Result<Vec<[f64; 2]>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, store, image, tokens)?;
        Ok(points_of(tape.values(fwd.points)))
    }
}

fn points_of<T: Scalar>(v: &[T]) -> Vec<[f64; 2]> {
    v.chunks(2)
        .map(|p| [p[0].to_f64().unwrap(), p[1].to_f64().unwrap()])
        .collect()
}
