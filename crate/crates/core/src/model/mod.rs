//! The joint view attention network.
//!
//! Every view of a compound-target pair is encoded into a set of
//! `latent_dim`-wide segment vectors. Segments of all views are stacked into
//! one joint matrix, mixed by multihead self-attention blocks, split back
//! per view, sum-pooled and concatenated into the combined input vector
//! (CIV) that a small fully connected head regresses to an affinity.
//!
//! Batches use a sample-major layout: sample `s` owns rows
//! `s * k_max .. (s + 1) * k_max` of the joint matrix, with zero rows padding
//! shorter samples. Padded keys are masked out of the softmax and padded rows
//! are excluded from pooling, so padding never changes a prediction.

mod config;
mod explain;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{FeatureSet, SegmentMatrix, ViewKind, AMINO_ACIDS};
use crate::tensor::{
    recurrent_step, Checkpoint, CheckpointError, Graph, GruWeights, ParamId, ParamStore, Real,
    Tensor, TensorError, Var,
};

pub use config::ModelConfig;
pub use explain::{explain_segments, rank_by_norm, segment_norm, NormKind, RankedSegment, SegmentExplanation};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input is missing the `{0}` view")]
    MissingView(ViewKind),
    #[error("view `{view}` has width {found}, the model expects {expected}")]
    ViewDim {
        view: ViewKind,
        expected: usize,
        found: usize,
    },
    #[error("invalid segment data: {0}")]
    InvalidSegment(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct GruIds {
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
}

#[derive(Debug, Clone)]
enum ViewEncoder {
    /// One whole-entity row mapped straight into the latent space.
    Vector { proj: Affine },
    /// Message passing over atoms, then projection.
    Graph { rounds: Vec<Affine>, proj: Affine },
    /// Window embeddings fed left to right through a gated recurrence.
    Ngram {
        embed: ParamId,
        gru: GruIds,
        proj: Affine,
    },
}

#[derive(Debug, Clone)]
struct BlockIds {
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: Vec<ParamId>,
    wo: ParamId,
    norm1: (ParamId, ParamId),
    ffn1: Affine,
    ffn2: Affine,
    norm2: (ParamId, ParamId),
}

/// Parameter layout of a model; holds ids only, values live in a
/// [`ParamStore`].
#[derive(Debug, Clone)]
pub struct JovaNet {
    config: ModelConfig,
    encoders: Vec<ViewEncoder>,
    blocks: Vec<BlockIds>,
    head: Vec<Affine>,
}

/// Segments of a batch stacked into the joint matrix.
#[derive(Debug, Clone)]
pub struct JointRepresentation {
    /// `[batch * k_max, latent_dim]`.
    pub segments: Var,
    pub k_max: usize,
    /// Per sample, the row range of each view inside that sample's block.
    pub view_spans: Vec<Vec<(ViewKind, Range<usize>)>>,
    /// One flag per joint row; `true` marks padding.
    pub pad_mask: Vec<bool>,
}

impl JointRepresentation {
    pub fn batch_size(&self) -> usize {
        self.view_spans.len()
    }

    /// Number of real segments of sample `s`.
    pub fn segment_count(&self, s: usize) -> usize {
        self.view_spans[s].last().map_or(0, |(_, r)| r.end)
    }

    fn key_mask(&self) -> Vec<bool> {
        self.pad_mask.iter().map(|&p| !p).collect()
    }
}

/// Pooled view vectors and the combined input vector.
#[derive(Debug, Clone, Copy)]
pub struct PooledViews {
    /// `[batch * J, latent_dim]`; row `s * J + j` is view `j` of sample `s`.
    pub per_view: Var,
    /// `[batch, J * latent_dim]`.
    pub civ: Var,
}

/// Everything a forward pass records.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub joint: JointRepresentation,
    /// Attention-updated segments, same layout as `joint.segments`.
    pub updated: Var,
    /// Per block, per head attention weights `[batch * k_max, k_max]`.
    pub attention: Vec<Vec<Var>>,
    pub pooled: PooledViews,
    /// `[batch, 1]`.
    pub prediction: Var,
}

fn fan_in_uniform<T: Real>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

struct Builder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn add(&mut self, name: String, value: Tensor<T>) -> Result<ParamId> {
        Ok(self.store.add(name, value)?)
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> Result<ParamId> {
        let v = fan_in_uniform(&mut self.rng, vec![rows, cols], rows);
        self.add(name, v)
    }

    fn vector(&mut self, name: String, len: usize, fill: f64) -> Result<ParamId> {
        self.add(name, Tensor::from_f64(vec![len], &vec![fill; len])?)
    }

    fn affine(&mut self, prefix: &str, inputs: usize, outputs: usize) -> Result<Affine> {
        Ok(Affine {
            w: self.matrix(format!("{prefix}.w"), inputs, outputs)?,
            b: self.vector(format!("{prefix}.b"), outputs, 0.0)?,
        })
    }
}

impl JovaNet {
    /// Registers freshly initialised parameters for `config` in `store`.
    pub fn build<T: Real>(config: ModelConfig, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let l = config.latent_dim;
        let mut b = Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };

        let mut encoders = Vec::with_capacity(config.views.len());
        for &view in &config.views {
            let name = view.name();
            let d = config.view_dim(view);
            let enc = match view {
                ViewKind::CompoundFingerprint | ViewKind::TargetComposition => ViewEncoder::Vector {
                    proj: b.affine(&format!("{name}.proj"), d, l)?,
                },
                ViewKind::CompoundGraph => {
                    let mut rounds = Vec::with_capacity(config.graph_depth);
                    let mut width = d;
                    for r in 0..config.graph_depth {
                        rounds.push(b.affine(&format!("{name}.mp{r}"), width, config.graph_hidden)?);
                        width = config.graph_hidden;
                    }
                    ViewEncoder::Graph {
                        rounds,
                        proj: b.affine(&format!("{name}.proj"), width, l)?,
                    }
                }
                ViewKind::TargetNgram => {
                    let e = config.ngram_embed_dim;
                    let h = config.rnn_hidden;
                    let input = config.featurizer.ngram_len * e;
                    let embed = {
                        let v = fan_in_uniform(&mut b.rng, vec![AMINO_ACIDS.len(), e], 1);
                        b.add(format!("{name}.embed"), v)?
                    };
                    let mut ids = Vec::with_capacity(9);
                    for gate in ["z", "r", "n"] {
                        ids.push(b.matrix(format!("{name}.gru.w_{gate}"), input, h)?);
                    }
                    for gate in ["z", "r", "n"] {
                        ids.push(b.matrix(format!("{name}.gru.u_{gate}"), h, h)?);
                    }
                    for gate in ["z", "r", "n"] {
                        ids.push(b.vector(format!("{name}.gru.b_{gate}"), h, 0.0)?);
                    }
                    ViewEncoder::Ngram {
                        embed,
                        gru: GruIds {
                            w: [ids[0], ids[1], ids[2]],
                            u: [ids[3], ids[4], ids[5]],
                            b: [ids[6], ids[7], ids[8]],
                        },
                        proj: b.affine(&format!("{name}.proj"), h, l)?,
                    }
                }
            };
            encoders.push(enc);
        }

        let dk = config.head_dim();
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for i in 0..config.num_blocks {
            let p = format!("attn{i}");
            let heads = |kind: &str, b: &mut Builder<'_, T>| -> Result<Vec<ParamId>> {
                (0..config.num_heads)
                    .map(|h| b.matrix(format!("{p}.{kind}{h}"), l, dk))
                    .collect()
            };
            let wq = heads("wq", &mut b)?;
            let wk = heads("wk", &mut b)?;
            let wv = heads("wv", &mut b)?;
            blocks.push(BlockIds {
                wq,
                wk,
                wv,
                wo: b.matrix(format!("{p}.wo"), l, l)?,
                norm1: (
                    b.vector(format!("{p}.norm1.gain"), l, 1.0)?,
                    b.vector(format!("{p}.norm1.bias"), l, 0.0)?,
                ),
                ffn1: b.affine(&format!("{p}.ffn1"), l, config.ffn_dim)?,
                ffn2: b.affine(&format!("{p}.ffn2"), config.ffn_dim, l)?,
                norm2: (
                    b.vector(format!("{p}.norm2.gain"), l, 1.0)?,
                    b.vector(format!("{p}.norm2.bias"), l, 0.0)?,
                ),
            });
        }

        let mut head = Vec::with_capacity(config.head_hidden.len() + 1);
        let mut width = config.civ_dim();
        for (i, &h) in config.head_hidden.iter().enumerate() {
            head.push(b.affine(&format!("head{i}"), width, h)?);
            width = h;
        }
        head.push(b.affine("head.out", width, 1)?);

        Ok(Self {
            config,
            encoders,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter holding the scalar output bias.
    pub fn output_bias(&self) -> ParamId {
        self.head.last().expect("head has an output layer").b
    }

    fn affine<T: Real>(g: &mut Graph<'_, T>, x: Var, a: Affine) -> Result<Var> {
        let w = g.param(a.w);
        let b = g.param(a.b);
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }

    fn gather_view<'a>(&self, batch: &[&'a FeatureSet], view: ViewKind) -> Result<Vec<&'a SegmentMatrix>> {
        let expected = self.config.view_dim(view);
        batch
            .iter()
            .map(|set| {
                let m = set.get(view).ok_or(ModelError::MissingView(view))?;
                if m.dim != expected {
                    return Err(ModelError::ViewDim {
                        view,
                        expected,
                        found: m.dim,
                    });
                }
                if m.rows == 0 {
                    return Err(ModelError::InvalidSegment(format!("view `{view}` has no segments")));
                }
                Ok(m)
            })
            .collect()
    }

    /// Encodes one view for the whole batch into `[sum of rows, latent_dim]`,
    /// sample-major.
    fn encode_view<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        encoder: &ViewEncoder,
        mats: &[&SegmentMatrix],
    ) -> Result<Var> {
        let total: usize = mats.iter().map(|m| m.rows).sum();
        let dim = mats[0].dim;
        match encoder {
            ViewEncoder::Vector { proj } => {
                let data = mats.iter().flat_map(|m| m.data.iter().map(|&v| T::lit(v))).collect();
                let x = g.constant(Tensor::new(vec![total, dim], data)?);
                Self::affine(g, x, *proj)
            }
            ViewEncoder::Graph { rounds, proj } => {
                let data = mats.iter().flat_map(|m| m.data.iter().map(|&v| T::lit(v))).collect();
                let mut adjacency = Vec::with_capacity(total);
                let mut offset = 0;
                for m in mats {
                    for nbrs in m.adjacency() {
                        adjacency.push(nbrs.into_iter().map(|j| j + offset).collect());
                    }
                    offset += m.rows;
                }
                let mut h = g.constant(Tensor::new(vec![total, dim], data)?);
                for &round in rounds {
                    let msg = g.neighbor_sum(h, &adjacency)?;
                    let s = g.add(h, msg)?;
                    let a = Self::affine(g, s, round)?;
                    h = g.relu(a);
                }
                Self::affine(g, h, *proj)
            }
            ViewEncoder::Ngram { embed, gru, proj } => {
                self.encode_ngram(g, *embed, *gru, *proj, mats, total, dim)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn encode_ngram<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        embed: ParamId,
        gru: GruIds,
        proj: Affine,
        mats: &[&SegmentMatrix],
        total: usize,
        n: usize,
    ) -> Result<Var> {
        let mut ids = Vec::with_capacity(total * n);
        for m in mats {
            for &v in &m.data {
                let code = v as usize;
                if v < 0.0 || v.fract() != 0.0 || code >= AMINO_ACIDS.len() {
                    return Err(ModelError::InvalidSegment(format!("residue code {v}")));
                }
                ids.push(code);
            }
        }
        let table = g.param(embed);
        let emb = g.embedding(table, &ids)?;
        let width = n * self.config.ngram_embed_dim;
        let windows = g.reshape(emb, vec![total, width])?;

        let w = GruWeights {
            w_z: g.param(gru.w[0]),
            w_r: g.param(gru.w[1]),
            w_n: g.param(gru.w[2]),
            u_z: g.param(gru.u[0]),
            u_r: g.param(gru.u[1]),
            u_n: g.param(gru.u[2]),
            b_z: g.param(gru.b[0]),
            b_r: g.param(gru.b[1]),
            b_n: g.param(gru.b[2]),
        };

        let offsets: Vec<usize> = mats
            .iter()
            .scan(0, |acc, m| {
                let o = *acc;
                *acc += m.rows;
                Some(o)
            })
            .collect();
        let steps = mats.iter().map(|m| m.rows).max().unwrap_or(0);
        // position of each sample inside the previous step's hidden matrix
        let mut prev_pos: Vec<Option<usize>> = vec![None; mats.len()];
        let mut hidden: Vec<Var> = Vec::with_capacity(steps);
        let mut step_pos: Vec<Vec<Option<usize>>> = Vec::with_capacity(steps);
        for t in 0..steps {
            let active: Vec<usize> = (0..mats.len()).filter(|&s| mats[s].rows > t).collect();
            let x_idx: Vec<_> = active.iter().map(|&s| Some((0, offsets[s] + t))).collect();
            let x = g.gather_rows(&[windows], &x_idx)?;
            let h_prev = if t == 0 {
                g.constant(Tensor::zeros(vec![active.len(), self.config.rnn_hidden]))
            } else {
                let idx: Vec<_> = active.iter().map(|&s| prev_pos[s].map(|p| (0, p))).collect();
                g.gather_rows(&[hidden[t - 1]], &idx)?
            };
            let h = recurrent_step(g, x, h_prev, &w)?;
            let mut pos = vec![None; mats.len()];
            for (p, &s) in active.iter().enumerate() {
                pos[s] = Some(p);
            }
            hidden.push(h);
            step_pos.push(pos.clone());
            prev_pos = pos;
        }
        let mut out_idx = Vec::with_capacity(total);
        for (s, m) in mats.iter().enumerate() {
            for (t, pos) in step_pos.iter().enumerate().take(m.rows) {
                out_idx.push(pos[s].map(|p| (t, p)));
            }
        }
        let states = g.gather_rows(&hidden, &out_idx)?;
        Self::affine(g, states, proj)
    }

    /// Encodes and projects every view and stacks the segments into the
    /// joint matrix. `pad_to` forces a minimum per-sample row count.
    pub fn project_views<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[&FeatureSet],
        pad_to: Option<usize>,
    ) -> Result<JointRepresentation> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut projected = Vec::with_capacity(self.encoders.len());
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(self.encoders.len());
        for (&view, enc) in self.config.views.iter().zip(&self.encoders) {
            let mats = self.gather_view(batch, view)?;
            rows.push(mats.iter().map(|m| m.rows).collect());
            projected.push(self.encode_view(g, enc, &mats)?);
        }

        let n = batch.len();
        let counts: Vec<usize> = (0..n).map(|s| rows.iter().map(|r| r[s]).sum()).collect();
        let k_max = counts.iter().copied().max().unwrap_or(0).max(pad_to.unwrap_or(0));
        let mut offsets = vec![0usize; rows.len()];
        let mut index = Vec::with_capacity(n * k_max);
        let mut view_spans = Vec::with_capacity(n);
        let mut pad_mask = Vec::with_capacity(n * k_max);
        for s in 0..n {
            let mut spans = Vec::with_capacity(rows.len());
            let mut start = 0;
            for (j, &view) in self.config.views.iter().enumerate() {
                let r = rows[j][s];
                index.extend((0..r).map(|i| Some((j, offsets[j] + i))));
                offsets[j] += r;
                spans.push((view, start..start + r));
                start += r;
            }
            index.extend(std::iter::repeat_n(None, k_max - start));
            pad_mask.extend((0..k_max).map(|i| i >= start));
            view_spans.push(spans);
        }
        let segments = g.gather_rows(&projected, &index)?;
        Ok(JointRepresentation {
            segments,
            k_max,
            view_spans,
            pad_mask,
        })
    }

    /// One attention block applied to `x` (joint layout). Returns the updated
    /// segments and the per-head attention weights.
    pub fn attention_block<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        joint: &JointRepresentation,
        x: Var,
        block: usize,
    ) -> Result<(Var, Vec<Var>)> {
        let ids = &self.blocks[block];
        let n = joint.batch_size();
        let k = joint.k_max;
        let dk = self.config.head_dim();
        let scale = T::lit(1.0 / (dk as f64).sqrt());
        let key_mask = joint.key_mask();

        let mut heads = Vec::with_capacity(self.config.num_heads);
        let mut weights = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let project = |g: &mut Graph<'_, T>, id: ParamId| -> Result<Var> {
                let w = g.param(id);
                let y = g.matmul(x, w)?;
                Ok(g.reshape(y, vec![n, k, dk])?)
            };
            let q = project(g, ids.wq[h])?;
            let kk = project(g, ids.wk[h])?;
            let v = project(g, ids.wv[h])?;
            let scores = g.batch_matmul(q, kk, true)?;
            let scores = g.scale_shift(scores, scale, T::zero());
            let scores = g.reshape(scores, vec![n * k, k])?;
            let attn = g.masked_softmax(scores, Some(&key_mask), k)?;
            weights.push(attn);
            let attn3 = g.reshape(attn, vec![n, k, k])?;
            let out = g.batch_matmul(attn3, v, false)?;
            heads.push(g.reshape(out, vec![n * k, dk])?);
        }
        let cat = g.concat(&heads, 1)?;
        let wo = g.param(ids.wo);
        let mixed = g.matmul(cat, wo)?;
        let res = g.add(x, mixed)?;
        let a = self.add_norm(g, res, ids.norm1)?;

        let f = Self::affine(g, a, ids.ffn1)?;
        let f = g.relu(f);
        let f = Self::affine(g, f, ids.ffn2)?;
        let res = g.add(a, f)?;
        let out = self.add_norm(g, res, ids.norm2)?;
        let keep: Vec<bool> = joint.pad_mask.iter().map(|&p| !p).collect();
        Ok((g.mask_rows(out, &keep)?, weights))
    }

    fn add_norm<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, (gain, bias): (ParamId, ParamId)) -> Result<Var> {
        let y = g.layer_norm(x, LAYER_NORM_EPS);
        let gain = g.param(gain);
        let bias = g.param(bias);
        let y = g.mul_row(y, gain)?;
        Ok(g.add_row(y, bias)?)
    }

    /// Sum-pools the real segments of each view and concatenates the pooled
    /// vectors in view order.
    pub fn split_and_pool<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        joint: &JointRepresentation,
        updated: Var,
    ) -> Result<PooledViews> {
        let n = joint.batch_size();
        let views = self.config.views.len();
        let mut groups = vec![None; n * joint.k_max];
        for (s, spans) in joint.view_spans.iter().enumerate() {
            for (j, (_, range)) in spans.iter().enumerate() {
                for r in range.clone() {
                    groups[s * joint.k_max + r] = Some(s * views + j);
                }
            }
        }
        let per_view = g.segment_sum(updated, &groups, n * views)?;
        let civ = g.reshape(per_view, vec![n, views * self.config.latent_dim])?;
        Ok(PooledViews { per_view, civ })
    }

    /// Fully connected regression head: `[batch, J * l] -> [batch, 1]`.
    pub fn predict_head<T: Real>(&self, g: &mut Graph<'_, T>, civ: Var) -> Result<Var> {
        let width = g.value(civ).cols();
        if width != self.config.civ_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "predict",
                detail: format!("CIV has {width} entries, expected {}", self.config.civ_dim()),
            }
            .into());
        }
        let mut h = civ;
        let last = self.head.len() - 1;
        for (i, &layer) in self.head.iter().enumerate() {
            h = Self::affine(g, h, layer)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[&FeatureSet],
        pad_to: Option<usize>,
    ) -> Result<ForwardPass> {
        let joint = self.project_views(g, batch, pad_to)?;
        let mut x = joint.segments;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in 0..self.blocks.len() {
            let (y, w) = self.attention_block(g, &joint, x, b)?;
            x = y;
            attention.push(w);
        }
        let pooled = self.split_and_pool(g, &joint, x)?;
        let prediction = self.predict_head(g, pooled.civ)?;
        Ok(ForwardPass {
            joint,
            updated: x,
            attention,
            pooled,
            prediction,
        })
    }
}

/// Plain-value results of a forward pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub predictions: Vec<f64>,
    /// Per sample, the attention-updated rows of its real segments.
    pub segments: Vec<Vec<Vec<f64>>>,
    pub view_spans: Vec<Vec<(ViewKind, Range<usize>)>>,
}

/// A network layout together with its parameter values.
#[derive(Debug, Clone)]
pub struct JovaModel<T: Real> {
    pub net: JovaNet,
    pub params: ParamStore<T>,
}

impl<T: Real> JovaModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = JovaNet::build(config, &mut params)?;
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    /// Sets the scalar output bias, e.g. to the training-set mean.
    pub fn set_output_bias(&mut self, value: f64) {
        let id = self.net.output_bias();
        self.params.get_mut(id).value.data_mut()[0] = T::lit(value);
    }

    pub fn predict(&self, batch: &[&FeatureSet]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let pass = self.net.forward(&mut g, batch, None)?;
        let out = g.value(pass.prediction);
        if !out.all_finite() {
            return Err(TensorError::NumericalOverflow("non-finite prediction".into()).into());
        }
        Ok(out.to_f64())
    }

    /// Forward pass that keeps the per-segment outputs for interpretation.
    pub fn infer(&self, batch: &[&FeatureSet]) -> Result<Inference> {
        let mut g = Graph::new(&self.params);
        let pass = self.net.forward(&mut g, batch, None)?;
        let updated = g.value(pass.updated);
        let k = pass.joint.k_max;
        let segments = (0..batch.len())
            .map(|s| {
                (0..pass.joint.segment_count(s))
                    .map(|r| updated.row(s * k + r).iter().map(|v| v.as_f64()).collect())
                    .collect()
            })
            .collect();
        Ok(Inference {
            predictions: g.value(pass.prediction).to_f64(),
            segments,
            view_spans: pass.joint.view_spans,
        })
    }

    /// Copy of the model at another precision.
    pub fn cast<U: Real>(&self) -> JovaModel<U> {
        JovaModel {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        for (k, v) in self.config().to_pairs() {
            ck.meta.insert(format!("model.{k}"), v);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let pairs = ck
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k, v.as_str())));
        let config = ModelConfig::from_pairs(pairs)?;
        let mut model = Self::new(config)?;
        ck.load_into(&mut model.params)?;
        Ok(model)
    }
}

/// Draws a random feature set matching `config`, for tests and benchmarks.
pub fn random_features<R: Rng>(config: &ModelConfig, rng: &mut R, atoms: usize, windows: usize) -> FeatureSet {
    use crate::features::SegmentOrigin;
    let views = config
        .views
        .iter()
        .map(|&view| {
            let dim = config.view_dim(view);
            match view {
                ViewKind::CompoundFingerprint | ViewKind::TargetComposition => {
                    let data = (0..dim).map(|_| if rng.gen_bool(0.05) { 1.0 } else { 0.0 }).collect();
                    SegmentMatrix::new(view, 1, dim, data, vec![SegmentOrigin::Whole])
                }
                ViewKind::CompoundGraph => {
                    let data = (0..atoms * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
                    let mut m = SegmentMatrix::new(view, atoms, dim, data, (0..atoms).map(SegmentOrigin::Atom).collect());
                    m.edges = (1..atoms).map(|i| (rng.gen_range(0..i) as u32, i as u32)).collect();
                    m
                }
                ViewKind::TargetNgram => {
                    let data = (0..windows * dim).map(|_| rng.gen_range(0..20) as f64).collect();
                    let origins = (0..windows)
                        .map(|w| SegmentOrigin::Residues {
                            start: w * dim,
                            end: (w + 1) * dim,
                        })
                        .collect();
                    SegmentMatrix::new(view, windows, dim, data, origins)
                }
            }
        })
        .collect();
    FeatureSet { views }
}
