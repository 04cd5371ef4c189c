//! The association and registration network.
//!
//! Each measurement attends over its `k` nearest map landmarks (local
//! attention), the resulting per-measurement features attend over each
//! other (global attention), and a max-pool plus feed-forward head regresses
//! the pose offset `[dx, dy, dphi]`.

mod knn;
mod params;

pub use knn::{knn_group, NeighborGroup};
pub use params::{init_params, Affine, BlockLayout, Layout, ModelParams, NeighborFeatures, NetConfig, RowFf};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{PointSet, PoseOffset};

/// Tape handles for one row-wise feed-forward net.
#[derive(Debug, Clone)]
pub struct RowFfVars {
    pub layers: Vec<(Var, Var)>,
}

/// Tape handles for one multi-head attention block.
#[derive(Debug, Clone)]
pub struct BlockVars {
    pub query: Vec<Var>,
    pub key: Vec<Var>,
    pub value: Vec<Var>,
    pub output: Var,
    pub norm1: (Var, Var),
    pub ff: RowFfVars,
    pub norm2: (Var, Var),
}

/// Parameters placed on a tape, one handle per array.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
    pub measurement_embed: RowFfVars,
    pub neighbor_embed: RowFfVars,
    pub local: BlockVars,
    pub global: BlockVars,
    pub head: RowFfVars,
    pub s_tran: Var,
    pub s_rot: Var,
}

/// How keys relate to queries in an attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keys {
    /// Every query attends over every key row.
    Dense,
    /// Query `i` attends only over key rows `i*k..(i+1)*k`.
    Grouped(usize),
}

/// Row-wise feed-forward: affine layers with relu between them (not after the last).
pub fn row_ff(tape: &mut Tape, x: Var, ff: &RowFfVars) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in ff.layers.iter().enumerate() {
        let z = tape.matmul(h, w)?;
        h = tape.add_row(z, b)?;
        if i + 1 < ff.layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// `softmax(Q K^T / sqrt(d)) V`; the returned pair is `(output, weights)`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var, keys: Keys) -> Result<(Var, Var)> {
    let (dq, dk, dv) = (tape.value(q).cols(), tape.value(k).cols(), tape.value(v).cols());
    if dq != dk || dk != dv {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            lhs: tape.value(q).shape(),
            rhs: tape.value(k).shape(),
        });
    }
    if tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            lhs: tape.value(k).shape(),
            rhs: tape.value(v).shape(),
        });
    }
    let scale = 1.0 / (dq as f64).sqrt();
    match keys {
        Keys::Dense => {
            let s = tape.matmul_t(q, k)?;
            let s = tape.scale(s, scale);
            let w = tape.softmax_rows(s);
            Ok((tape.matmul(w, v)?, w))
        }
        Keys::Grouped(group) => {
            let s = tape.group_scores(q, k, group)?;
            let s = tape.scale(s, scale);
            let w = tape.softmax_rows(s);
            Ok((tape.group_mix(w, v, group)?, w))
        }
    }
}

/// Heads `A(X Wq_i, Y Wk_i, Y Wv_i)` concatenated and projected by `Wo`.
pub fn multi_head(
    tape: &mut Tape,
    x: Var,
    y: Var,
    block: &BlockVars,
    keys: Keys,
    weights: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let d = tape.value(x).cols();
    if tape.value(y).cols() != d {
        return Err(Error::Shape {
            op: "multi_head",
            lhs: tape.value(x).shape(),
            rhs: tape.value(y).shape(),
        });
    }
    let h = block.query.len();
    if h == 0 || d % h != 0 {
        return Err(Error::Config(format!("{h} heads do not divide width {d}")));
    }
    let mut heads = Vec::with_capacity(h);
    let mut maps = Vec::with_capacity(h);
    for i in 0..h {
        let q = tape.matmul(x, block.query[i])?;
        let k = tape.matmul(y, block.key[i])?;
        let v = tape.matmul(y, block.value[i])?;
        let (out, w) = scaled_dot_attention(tape, q, k, v, keys)?;
        heads.push(out);
        maps.push(w);
    }
    if let Some(sink) = weights {
        sink.extend(maps);
    }
    let cat = if h == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    tape.matmul(cat, block.output)
}

/// `S = LayerNorm(X + Multihead(X, Y, Y))`, `out = LayerNorm(S + rFF(S))`.
pub fn mha_block(
    tape: &mut Tape,
    x: Var,
    y: Var,
    block: &BlockVars,
    keys: Keys,
    weights: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let attended = multi_head(tape, x, y, block, keys, weights)?;
    let residual = tape.add(x, attended)?;
    let s = tape.layer_norm(residual, block.norm1.0, block.norm1.1)?;
    let ff = row_ff(tape, s, &block.ff)?;
    let residual = tape.add(s, ff)?;
    tape.layer_norm(residual, block.norm2.0, block.norm2.1)
}

/// Network output for one scene, with the attention maps of both blocks.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub offset: PoseOffset,
    /// One `nu x k` map per head; row `i` weighs the neighbors of measurement `i`.
    pub local_weights: Vec<Tensor>,
    /// One `nu x nu` map per head.
    pub global_weights: Vec<Tensor>,
    pub neighbors: Vec<NeighborGroup>,
}

/// A configured network; parameters are passed per call.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    layout: Layout,
}

impl Network {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        Ok(Self { cfg, layout })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        init_params(&self.cfg, seed)
    }

    /// Places `params` on `tape`, as gradient leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, params: &ModelParams, trainable: bool) -> BoundParams {
        let vars: Vec<Var> = params
            .arrays()
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let ff = |f: &RowFf| RowFfVars {
            layers: f.layers.iter().map(|a| (vars[a.weight], vars[a.bias])).collect(),
        };
        let block = |b: &BlockLayout| BlockVars {
            query: b.query.iter().map(|&i| vars[i]).collect(),
            key: b.key.iter().map(|&i| vars[i]).collect(),
            value: b.value.iter().map(|&i| vars[i]).collect(),
            output: vars[b.output],
            norm1: (vars[b.norm1.0], vars[b.norm1.1]),
            ff: ff(&b.ff),
            norm2: (vars[b.norm2.0], vars[b.norm2.1]),
        };
        let l = &self.layout;
        BoundParams {
            measurement_embed: ff(&l.measurement_embed),
            neighbor_embed: ff(&l.neighbor_embed),
            local: block(&l.local),
            global: block(&l.global),
            head: ff(&l.head),
            s_tran: vars[l.s_tran],
            s_rot: vars[l.s_rot],
            vars,
        }
    }

    fn neighbor_features(&self, groups: &[NeighborGroup]) -> Tensor {
        let s = self.cfg.input_scale;
        let width = self.cfg.neighbor_features.width();
        let mut data = Vec::with_capacity(groups.len() * self.cfg.k * width);
        for g in groups {
            for (o, dist) in g.offsets.iter().zip(&g.distances) {
                match self.cfg.neighbor_features {
                    NeighborFeatures::Offset => data.extend([o[0] * s, o[1] * s, dist * s]),
                    NeighborFeatures::DistanceOnly => data.push(dist * s),
                }
            }
        }
        Tensor::from_vec_unchecked(groups.len() * self.cfg.k, width, data)
    }

    /// Local attention: one `1 x d_m` row per measurement, attending over the
    /// embeddings of its `k` nearest landmarks. Returns `(M_local, neighbor groups)`.
    pub fn local_attention(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        measurements: &PointSet,
        landmarks: &PointSet,
        weights: Option<&mut Vec<Var>>,
    ) -> Result<(Var, Vec<NeighborGroup>)> {
        let groups = knn_group(measurements, landmarks, self.cfg.k)?;
        let s = self.cfg.input_scale;
        let m_data = measurements.iter().flat_map(|p| [p.x * s, p.y * s]).collect();
        let m = tape.constant(Tensor::from_vec_unchecked(measurements.len(), 2, m_data));
        let nb = tape.constant(self.neighbor_features(&groups));
        let queries = row_ff(tape, m, &bound.measurement_embed)?;
        let neighbors = row_ff(tape, nb, &bound.neighbor_embed)?;
        let out = mha_block(
            tape,
            queries,
            neighbors,
            &bound.local,
            Keys::Grouped(self.cfg.k),
            weights,
        )?;
        Ok((out, groups))
    }

    /// Raw `1 x 3` network output on `tape` (heading not wrapped).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        measurements: &PointSet,
        landmarks: &PointSet,
    ) -> Result<Var> {
        self.forward_inner(tape, bound, measurements, landmarks, None)
            .map(|(v, _)| v)
    }

    fn forward_inner(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        measurements: &PointSet,
        landmarks: &PointSet,
        mut trace: Option<(&mut Vec<Var>, &mut Vec<Var>)>,
    ) -> Result<(Var, Vec<NeighborGroup>)> {
        let (local, groups) =
            self.local_attention(tape, bound, measurements, landmarks, trace.as_mut().map(|t| &mut *t.0))?;
        let global = mha_block(tape, local, local, &bound.global, Keys::Dense, trace.map(|t| t.1))?;
        let pooled = tape.max_pool_rows(global)?;
        Ok((row_ff(tape, pooled, &bound.head)?, groups))
    }

    /// Predicted offset `[dx, dy, dphi]` with the heading wrapped.
    pub fn forward(&self, params: &ModelParams, measurements: &PointSet, landmarks: &PointSet) -> Result<PoseOffset> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, params, false);
        let out = self.forward_on_tape(&mut tape, &bound, measurements, landmarks)?;
        to_offset(tape.value(out))
    }

    /// Like [`Network::forward`], additionally returning the attention maps.
    pub fn forward_traced(
        &self,
        params: &ModelParams,
        measurements: &PointSet,
        landmarks: &PointSet,
    ) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, params, false);
        let (mut lw, mut gw) = (Vec::new(), Vec::new());
        let (out, neighbors) =
            self.forward_inner(&mut tape, &bound, measurements, landmarks, Some((&mut lw, &mut gw)))?;
        Ok(ForwardTrace {
            offset: to_offset(tape.value(out))?,
            local_weights: lw.iter().map(|v| tape.value(*v).clone()).collect(),
            global_weights: gw.iter().map(|v| tape.value(*v).clone()).collect(),
            neighbors,
        })
    }
}

fn to_offset(out: &Tensor) -> Result<PoseOffset> {
    let d = out.data();
    if !d.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("network output"));
    }
    Ok(PoseOffset::new(d[0], d[1], d[2]))
}

#[cfg(test)]
mod tests;
