//! Gaze graphs: crop node features around gaze points, learn soft edges,
//! and embed nodes with a two-layer GCN.

use std::ops::Range;

use crate::error::{shape_err, Result};
use crate::fusion::CorrelationMap;
use crate::nn::{EncoderLayer, Init, Linear};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Side of the square crop taken around each gaze point, in grid cells.
pub const PATCH: usize = 6;

/// Node features plus a row-stochastic soft adjacency.
#[derive(Debug, Clone, Copy)]
pub struct GazeGraph {
    /// `K × d_n`
    pub nodes: Var,
    /// `K × K`, rows sum to one.
    pub edges: Var,
}

/// Grid cell `(row, col)` holding a normalised point `(x, y)`.
/// `x` selects the column and `y` the row; both are clamped into the grid.
pub fn gaze_to_cell(point: [f64; 2], grid: usize) -> (usize, usize) {
    let cell = |v: f64| -> usize {
        let c = (v * grid as f64).floor();
        if c.is_nan() || c < 0.0 {
            0
        } else {
            (c as usize).min(grid - 1)
        }
    };
    (cell(point[1]), cell(point[0]))
}

/// The six cells `c−2..=c+3` along one axis, shifted to stay inside `0..grid`.
pub fn crop_window(center: usize, grid: usize) -> Range<usize> {
    debug_assert!(grid >= PATCH, "grid {grid} smaller than the crop");
    let start = center.saturating_sub(2).min(grid - PATCH);
    start..start + PATCH
}

/// Row indices into a flattened `grid_h × grid_w` map covering the crop
/// around each point, `PATCH²` per point in row-major order.
pub fn crop_indices(points: &[[f64; 2]], grid_h: usize, grid_w: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(points.len() * PATCH * PATCH);
    for &p in points {
        let (r, _) = gaze_to_cell(p, grid_h);
        let (_, c) = gaze_to_cell(p, grid_w);
        for rr in crop_window(r, grid_h) {
            for cc in crop_window(c, grid_w) {
                idx.push(rr * grid_w + cc);
            }
        }
    }
    idx
}

/// Shared projection of flattened crops to node features.
#[derive(Debug, Clone)]
pub struct NodeEncoder {
    proj: Linear,
    map_dim: usize,
}

impl NodeEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, map_dim: usize, node_dim: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(store, init, "graph.node_proj", PATCH * PATCH * map_dim, node_dim, true)?,
            map_dim,
        })
    }

    /// Node features for `points`. Coordinates only choose which cells are
    /// read, so no gradient flows to them.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        hmap: &CorrelationMap,
        points: &[[f64; 2]],
    ) -> Result<Var> {
        if hmap.grid_h < PATCH || hmap.grid_w < PATCH {
            return Err(shape_err!(
                "grid {}×{} is smaller than the {PATCH}×{PATCH} crop",
                hmap.grid_h,
                hmap.grid_w
            ));
        }
        if tape.shape(hmap.tokens) != [hmap.grid_h * hmap.grid_w, self.map_dim] {
            return Err(shape_err!(
                "correlation map {:?} does not match grid {}×{} and width {}",
                tape.shape(hmap.tokens),
                hmap.grid_h,
                hmap.grid_w,
                self.map_dim
            ));
        }
        let idx = crop_indices(points, hmap.grid_h, hmap.grid_w);
        let rows = tape.gather_rows(hmap.tokens, &idx)?;
        let flat = tape.reshape(rows, &[points.len(), PATCH * PATCH * self.map_dim])?;
        let y = self.proj.forward(tape, store, flat)?;
        Ok(tape.relu(y))
    }
}

/// One encoder layer over the nodes, then a row softmax of scaled inner
/// products of the resulting edge features.
#[derive(Debug, Clone)]
pub struct EdgeGenerator {
    layer: EncoderLayer,
    dim: usize,
}

impl EdgeGenerator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            layer: EncoderLayer::new(store, init, "graph.edge", dim, heads)?,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, nodes: Var) -> Result<Var> {
        let e = self.layer.forward(tape, store, nodes)?;
        edge_softmax(tape, e, self.dim)
    }
}

/// `E[i, j] = softmax_j(⟨e_i, e_j⟩ / √dim)`.
pub fn edge_softmax<T: Scalar>(tape: &mut Tape<T>, e: Var, dim: usize) -> Result<Var> {
    let gram = tape.matmul_t(e, false, e, true)?;
    let scaled = tape.scale(gram, T::one() / T::from_usize(dim).unwrap().sqrt());
    tape.softmax(scaled, 1)
}

/// Two propagation layers `N ← relu(E N W)`.
#[derive(Debug, Clone)]
pub struct Gcn {
    pub layers: Vec<ParamId>,
}

impl Gcn {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, dim: usize) -> Result<Self> {
        let layers = (1..=2)
            .map(|i| store.add(format!("graph.gcn{i}.w"), init.uniform(&[dim, dim], dim)))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, graph: &GazeGraph) -> Result<Var> {
        let mut n = graph.nodes;
        for &w in &self.layers {
            let w = tape.param(store, w);
            let prop = tape.matmul(graph.edges, n)?;
            let y = tape.matmul(prop, w)?;
            n = tape.relu(y);
        }
        Ok(n)
    }
}
