//! From-scratch graph neural networks over the tape in [`tape`]: forward
//! inference to class confidences, Adam training on hard labels, and
//! reverse-mode gradients of scalar objectives with respect to relaxed
//! adjacency entries.
//!
//! Layer rules:
//! - GCN: `H^l = relu(D^-1/2 (A+I) D^-1/2 H^{l-1} W + b)` with self-loop
//!   renormalization, `D` the degree of `A + I`.
//! - SAGE: `h_v = relu(W_self h_v + W_neigh (A h)_v / max(deg_v, 1e-8) + b)`.
//! - GIN: `H^l = mlp(H^{l-1} + A H^{l-1})` with a two-layer relu MLP.
//!
//! The classifier head consumes the concatenation of the pooled embeddings
//! of every layer, `h^0` through `h^k`.

pub mod tape;

use crate::exec::{self, Exec};
use crate::graph::Graph;
use crate::metrics::UncertaintyMetric;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use tape::{NodeId, Tape};
use thiserror::Error;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Degree floor for the SAGE mean aggregator; keeps adjacency gradients
/// finite on isolated nodes.
const SAGE_DEG_EPS: f64 = 1e-8;
const CHECKPOINT_MAGIC: &[u8; 8] = b"GSTCKPT1";

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training pool is empty")]
    EmptyPool,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Sage,
    Gin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Average,
    Sum,
    Maximum,
}

/// Architecture descriptor for both target and clone models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layer_kind: LayerKind,
    pub num_layers: usize,
    pub hidden_width: usize,
    pub pooling: Pooling,
    pub num_classes: usize,
    pub feat_dim: usize,
}

impl ModelConfig {
    /// Desk-scale default: a 3-layer width-32 GCN with average pooling.
    pub fn new(feat_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            layer_kind: LayerKind::Gcn,
            num_layers: 3,
            hidden_width: 32,
            pooling: Pooling::Average,
            num_classes,
            feat_dim,
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.num_layers < 1 {
            return Err(GnnError::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.hidden_width == 0 || self.feat_dim == 0 {
            return Err(GnnError::InvalidConfig("widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(GnnError::InvalidConfig("need at least 2 classes".into()));
        }
        Ok(())
    }

    /// Width of the classifier head input: pooled `h^0..h^k` concatenated.
    pub fn head_input_width(&self) -> usize {
        self.feat_dim + self.num_layers * self.hidden_width
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    w: Array2<f64>,
    b: Array2<f64>, // 1 x out
}

#[derive(Debug, Clone, PartialEq)]
enum LayerParams {
    Gcn(Linear),
    Sage { w_self: Array2<f64>, w_neigh: Array2<f64>, b: Array2<f64> },
    Gin { l1: Linear, l2: Linear },
}

#[derive(Debug, Clone, PartialEq)]
struct AdamState {
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

/// A graph classifier: config, per-layer parameters, classifier head, and
/// optimizer state that persists across fine-tuning calls.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub config: ModelConfig,
    layers: Vec<LayerParams>,
    head: Linear,
    opt: Option<AdamState>,
}

/// Everything a forward pass computes, cached for diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Node embeddings `h^0..h^k`.
    pub embeddings: Vec<Array2<f64>>,
    /// Pooled graph-level vector per layer.
    pub pooled: Vec<Array2<f64>>,
    /// 1 x C pre-softmax scores.
    pub logits: Array2<f64>,
    /// 1 x C probabilities.
    pub probs: Array2<f64>,
    /// The adjacency actually used (relaxed when one was supplied).
    pub relaxed_adj: Array2<f64>,
}

impl ForwardTrace {
    pub fn probs_vec(&self) -> Vec<f64> {
        self.probs.row(0).to_vec()
    }

    pub fn logits_vec(&self) -> Vec<f64> {
        self.logits.row(0).to_vec()
    }
}

/// Scalar objective differentiated with respect to the adjacency.
#[derive(Debug, Clone, Copy)]
pub enum Objective {
    Metric(UncertaintyMetric),
    /// A single raw logit, used by targeted baselines.
    Logit(usize),
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
}

impl GnnModel {
    /// Fan-in scaled symmetric-uniform weights, zero biases; deterministic
    /// under a seeded generator.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, GnnError> {
        config.validate()?;
        let w = config.hidden_width;
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut input = config.feat_dim;
        for _ in 0..config.num_layers {
            let layer = match config.layer_kind {
                LayerKind::Gcn => LayerParams::Gcn(Linear {
                    w: glorot(rng, input, w),
                    b: Array2::zeros((1, w)),
                }),
                LayerKind::Sage => LayerParams::Sage {
                    w_self: glorot(rng, input, w),
                    w_neigh: glorot(rng, input, w),
                    b: Array2::zeros((1, w)),
                },
                LayerKind::Gin => LayerParams::Gin {
                    l1: Linear { w: glorot(rng, input, w), b: Array2::zeros((1, w)) },
                    l2: Linear { w: glorot(rng, w, w), b: Array2::zeros((1, w)) },
                },
            };
            layers.push(layer);
            input = w;
        }
        let head = Linear {
            w: glorot(rng, config.head_input_width(), config.num_classes),
            b: Array2::zeros((1, config.num_classes)),
        };
        Ok(GnnModel { config, layers, head, opt: None })
    }

    /// Parameter tensors in canonical (checkpoint) order.
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Gcn(l) => {
                    out.push(&l.w);
                    out.push(&l.b);
                }
                LayerParams::Sage { w_self, w_neigh, b } => {
                    out.push(w_self);
                    out.push(w_neigh);
                    out.push(b);
                }
                LayerParams::Gin { l1, l2 } => {
                    out.push(&l1.w);
                    out.push(&l1.b);
                    out.push(&l2.w);
                    out.push(&l2.b);
                }
            }
        }
        out.push(&self.head.w);
        out.push(&self.head.b);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerParams::Gcn(l) => {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
                LayerParams::Sage { w_self, w_neigh, b } => {
                    out.push(w_self);
                    out.push(w_neigh);
                    out.push(b);
                }
                LayerParams::Gin { l1, l2 } => {
                    out.push(&mut l1.w);
                    out.push(&mut l1.b);
                    out.push(&mut l2.w);
                    out.push(&mut l2.b);
                }
            }
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Zeroes every parameter; handy for degenerate-output tests.
    pub fn zero_params(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
        self.opt = None;
    }

    fn check_graph(&self, g: &Graph) -> Result<(), GnnError> {
        if g.feat_dim() != self.config.feat_dim {
            return Err(GnnError::ShapeMismatch(format!(
                "graph feature width {} vs model feat_dim {}",
                g.feat_dim(),
                self.config.feat_dim
            )));
        }
        Ok(())
    }

    /// Forward pass; `relaxed_adj` replaces the graph's 0/1 adjacency when
    /// given (same shape, zero diagonal).
    pub fn forward(
        &self,
        g: &Graph,
        relaxed_adj: Option<&Array2<f64>>,
    ) -> Result<ForwardTrace, GnnError> {
        self.check_graph(g)?;
        let adj = match relaxed_adj {
            Some(a) => {
                if a.dim() != (g.n(), g.n()) {
                    return Err(GnnError::ShapeMismatch(format!(
                        "relaxed adjacency {:?} for graph of {} nodes",
                        a.dim(),
                        g.n()
                    )));
                }
                a.clone()
            }
            None => g.adj_f64(),
        };
        let (t, ids) = self.build_tape(g, adj.clone(), false, false);
        let mut t = t;
        let probs = t.softmax(ids.logits);
        Ok(ForwardTrace {
            embeddings: ids.embeddings.iter().map(|&e| t.value(e).clone()).collect(),
            pooled: ids.pooled.iter().map(|&p| t.value(p).clone()).collect(),
            logits: t.value(ids.logits).clone(),
            probs: t.value(probs).clone(),
            relaxed_adj: adj,
        })
    }

    /// Hard-label prediction: argmax probability, ties toward the smallest
    /// class index.
    pub fn predict_hard(&self, g: &Graph) -> Result<usize, GnnError> {
        let trace = self.forward(g, None)?;
        let probs = trace.probs_vec();
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }

    fn build_tape(
        &self,
        g: &Graph,
        adj: Array2<f64>,
        adj_grad: bool,
        param_grad: bool,
    ) -> (Tape, TapeIds) {
        let n = g.n();
        let mut t = Tape::new();
        let adj_id = t.leaf(adj, adj_grad);
        let x = t.leaf(g.feats.clone(), false);

        // Adjacency-derived nodes shared by all layers.
        let gcn_norm = match self.config.layer_kind {
            LayerKind::Gcn => {
                let a1 = t.add_const(adj_id, &Array2::eye(n));
                let deg = t.row_sum(a1);
                let s = t.pow_const(deg, -0.5);
                let scaled = t.scale_rows(a1, s);
                Some(t.scale_cols(scaled, s))
            }
            _ => None,
        };
        let sage_inv = match self.config.layer_kind {
            LayerKind::Sage => {
                let deg = t.row_sum(adj_id);
                let clamped = t.clamp_min(deg, SAGE_DEG_EPS);
                Some(t.pow_const(clamped, -1.0))
            }
            _ => None,
        };

        let mut param_ids = Vec::new();
        let leaf = |t: &mut Tape, v: &Array2<f64>| t.leaf(v.clone(), param_grad);

        let mut embeddings = vec![x];
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                LayerParams::Gcn(lin) => {
                    let w = leaf(&mut t, &lin.w);
                    let b = leaf(&mut t, &lin.b);
                    param_ids.extend([w, b]);
                    let prop = t.matmul(gcn_norm.unwrap(), h);
                    let z = t.matmul(prop, w);
                    let pre = t.add_bias(z, b);
                    t.relu(pre)
                }
                LayerParams::Sage { w_self, w_neigh, b } => {
                    let ws = leaf(&mut t, w_self);
                    let wn = leaf(&mut t, w_neigh);
                    let bb = leaf(&mut t, b);
                    param_ids.extend([ws, wn, bb]);
                    let own = t.matmul(h, ws);
                    let ah = t.matmul(adj_id, h);
                    let mean = t.scale_rows(ah, sage_inv.unwrap());
                    let nb = t.matmul(mean, wn);
                    let sum = t.add(own, nb);
                    let pre = t.add_bias(sum, bb);
                    t.relu(pre)
                }
                LayerParams::Gin { l1, l2 } => {
                    let w1 = leaf(&mut t, &l1.w);
                    let b1 = leaf(&mut t, &l1.b);
                    let w2 = leaf(&mut t, &l2.w);
                    let b2 = leaf(&mut t, &l2.b);
                    param_ids.extend([w1, b1, w2, b2]);
                    let ah = t.matmul(adj_id, h);
                    let agg = t.add(h, ah);
                    let z1 = t.matmul(agg, w1);
                    let p1 = t.add_bias(z1, b1);
                    let r1 = t.relu(p1);
                    let z2 = t.matmul(r1, w2);
                    let p2 = t.add_bias(z2, b2);
                    t.relu(p2)
                }
            };
            embeddings.push(h);
        }

        let pooled: Vec<NodeId> = embeddings
            .iter()
            .map(|&e| match self.config.pooling {
                Pooling::Average => t.mean_pool(e),
                Pooling::Sum => t.sum_pool(e),
                Pooling::Maximum => t.max_pool(e),
            })
            .collect();
        let cat = t.concat_cols(&pooled);
        let hw = leaf(&mut t, &self.head.w);
        let hb = leaf(&mut t, &self.head.b);
        param_ids.extend([hw, hb]);
        let z = t.matmul(cat, hw);
        let logits = t.add_bias(z, hb);

        (t, TapeIds { adj: adj_id, params: param_ids, embeddings, pooled, logits })
    }

    /// Gradient of an uncertainty metric with respect to every relaxed
    /// adjacency entry, symmetrized as `(G + G^T) / 2` with zero diagonal.
    pub fn grad_wrt_adjacency(
        &self,
        g: &Graph,
        metric: UncertaintyMetric,
    ) -> Result<Array2<f64>, GnnError> {
        self.grad_adjacency_objective(g, g.adj_f64(), Objective::Metric(metric))
    }

    /// Adjacency gradient of an arbitrary scalar objective at an arbitrary
    /// (possibly relaxed) adjacency.
    pub fn grad_adjacency_objective(
        &self,
        g: &Graph,
        adj: Array2<f64>,
        objective: Objective,
    ) -> Result<Array2<f64>, GnnError> {
        self.check_graph(g)?;
        let (mut t, ids) = self.build_tape(g, adj, true, false);
        let root = self.objective_node(&mut t, ids.logits, objective);
        let mut grads = t.backward(root);
        let raw = grads.take(ids.adj).unwrap_or_else(|| Array2::zeros((g.n(), g.n())));
        let mut sym = (&raw + &raw.t()) / 2.0;
        for i in 0..g.n() {
            sym[[i, i]] = 0.0;
        }
        Ok(sym)
    }

    fn objective_node(&self, t: &mut Tape, logits: NodeId, objective: Objective) -> NodeId {
        let c = self.config.num_classes;
        match objective {
            Objective::Logit(class) => {
                let mut w = Array2::zeros((c, 1));
                w[[class, 0]] = 1.0;
                t.dot_const(logits, w)
            }
            Objective::Metric(metric) => {
                let probs = t.softmax(logits);
                match metric {
                    UncertaintyMetric::Entropy => t.entropy(probs),
                    UncertaintyMetric::Margin | UncertaintyMetric::Max => {
                        let p = t.value(probs).row(0).to_vec();
                        let (y1, y2) = top_two(&p);
                        let mut w = Array2::zeros((c, 1));
                        match metric {
                            UncertaintyMetric::Margin => {
                                w[[y2, 0]] = 1.0;
                                w[[y1, 0]] = -1.0;
                            }
                            UncertaintyMetric::Max => w[[y1, 0]] = -1.0,
                            UncertaintyMetric::Entropy => unreachable!(),
                        }
                        t.dot_const(probs, w)
                    }
                }
            }
        }
    }

    /// Cross-entropy loss and canonical-order parameter gradients for one
    /// labeled graph.
    fn loss_and_param_grads(&self, g: &Graph, label: usize) -> (f64, Vec<Array2<f64>>) {
        let (mut t, ids) = self.build_tape(g, g.adj_f64(), false, true);
        let loss = t.cross_entropy_logits(ids.logits, label);
        let loss_value = t.value(loss)[[0, 0]];
        let mut grads = t.backward(loss);
        let out = ids
            .params
            .iter()
            .zip(self.tensors())
            .map(|(&id, tensor)| {
                grads.take(id).unwrap_or_else(|| Array2::zeros(tensor.dim()))
            })
            .collect();
        (loss_value, out)
    }

    /// Trains on hard-labeled graphs with Adam, shuffling each epoch.
    /// Returns the per-epoch mean cross-entropy. Optimizer moments persist
    /// across calls so later rounds fine-tune rather than restart.
    pub fn fit(
        &mut self,
        graphs: &[&Graph],
        labels: &[usize],
        epochs: usize,
        lr: f64,
        rng: &mut impl Rng,
        mode: Exec,
    ) -> Result<Vec<f64>, GnnError> {
        self.fit_batched(graphs, labels, epochs, lr, 64, rng, mode)
    }

    /// [`GnnModel::fit`] with an explicit minibatch size.
    #[allow(clippy::too_many_arguments)]
    pub fn fit_batched(
        &mut self,
        graphs: &[&Graph],
        labels: &[usize],
        epochs: usize,
        lr: f64,
        batch: usize,
        rng: &mut impl Rng,
        mode: Exec,
    ) -> Result<Vec<f64>, GnnError> {
        if graphs.is_empty() || graphs.len() != labels.len() {
            return Err(GnnError::EmptyPool);
        }
        for (&label, g) in labels.iter().zip(graphs) {
            if label >= self.config.num_classes {
                return Err(GnnError::LabelOutOfRange {
                    label,
                    classes: self.config.num_classes,
                });
            }
            self.check_graph(g)?;
        }
        if self.opt.is_none() {
            self.opt = Some(AdamState {
                t: 0,
                m: self.tensors().iter().map(|t| Array2::zeros(t.dim())).collect(),
                v: self.tensors().iter().map(|t| Array2::zeros(t.dim())).collect(),
            });
        }
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        let mut epoch_losses = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            use rand::seq::SliceRandom;
            order.shuffle(rng);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(batch.max(1)) {
                let results = exec::map_ordered(mode, chunk, |&i| {
                    self.loss_and_param_grads(graphs[i], labels[i])
                });
                // Sum in index order to stay deterministic across thread counts.
                let mut mean: Vec<Array2<f64>> =
                    self.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
                for (loss, grads) in results {
                    loss_sum += loss;
                    for (acc, g) in mean.iter_mut().zip(grads) {
                        *acc += &g;
                    }
                }
                let scale = 1.0 / chunk.len() as f64;
                for g in &mut mean {
                    g.mapv_inplace(|v| v * scale);
                }
                self.adam_step(&mean, lr);
            }
            let epoch_loss = loss_sum / graphs.len() as f64;
            if !epoch_loss.is_finite() {
                return Err(GnnError::NonFiniteLoss { epoch });
            }
            epoch_losses.push(epoch_loss);
        }
        Ok(epoch_losses)
    }

    fn adam_step(&mut self, grads: &[Array2<f64>], lr: f64) {
        let opt = self.opt.as_mut().expect("optimizer state initialized by fit");
        opt.t += 1;
        let t = opt.t as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for ((tensor, g), (m, v)) in self
            .layers
            .iter_mut()
            .flat_map(layer_tensors_mut)
            .chain([&mut self.head.w, &mut self.head.b])
            .zip(grads)
            .zip(opt.m.iter_mut().zip(opt.v.iter_mut()))
        {
            azip_adam(tensor, g, m, v, lr, bias1, bias2);
        }
    }

    /// Writes a versioned binary checkpoint: magic, config JSON, then the
    /// flat parameter vector as little-endian f64 bits in canonical tensor
    /// order. Round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> Result<(), GnnError> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let config = serde_json::to_vec(&self.config)
            .map_err(|e| GnnError::BadCheckpoint(e.to_string()))?;
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        let count: usize = self.num_params();
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for tensor in self.tensors() {
            for &x in tensor.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    /// Loads a checkpoint written by [`GnnModel::save`].
    pub fn load(path: &Path) -> Result<Self, GnnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let take = |at: &mut usize, len: usize| -> Result<&[u8], GnnError> {
            let slice = bytes
                .get(*at..*at + len)
                .ok_or_else(|| GnnError::BadCheckpoint("truncated file".into()))?;
            *at += len;
            Ok(slice)
        };
        let mut at = 0usize;
        if take(&mut at, 8)? != CHECKPOINT_MAGIC {
            return Err(GnnError::BadCheckpoint("bad magic".into()));
        }
        let config_len =
            u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let config: ModelConfig = serde_json::from_slice(take(&mut at, config_len)?)
            .map_err(|e| GnnError::BadCheckpoint(e.to_string()))?;
        let count = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let mut model = GnnModel::init(config, &mut rng)?;
        if model.num_params() != count {
            return Err(GnnError::BadCheckpoint(format!(
                "parameter count {count} does not match config ({})",
                model.num_params()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
        }
        let mut it = values.into_iter();
        for tensor in model.tensors_mut() {
            for slot in tensor.iter_mut() {
                *slot = it.next().unwrap();
            }
        }
        model.opt = None;
        Ok(model)
    }
}

struct TapeIds {
    adj: NodeId,
    params: Vec<NodeId>,
    embeddings: Vec<NodeId>,
    pooled: Vec<NodeId>,
    logits: NodeId,
}

fn layer_tensors_mut(layer: &mut LayerParams) -> Vec<&mut Array2<f64>> {
    match layer {
        LayerParams::Gcn(l) => vec![&mut l.w, &mut l.b],
        LayerParams::Sage { w_self, w_neigh, b } => vec![w_self, w_neigh, b],
        LayerParams::Gin { l1, l2 } => vec![&mut l1.w, &mut l1.b, &mut l2.w, &mut l2.b],
    }
}

fn azip_adam(
    tensor: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    ndarray::Zip::from(tensor)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|w, &grad, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * grad;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * grad * grad;
            let mhat = *m / bias1;
            let vhat = *v / bias2;
            *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        });
}

/// Indices of the largest and second-largest probabilities.
pub fn top_two(probs: &[f64]) -> (usize, usize) {
    assert!(probs.len() >= 2, "need at least two classes");
    let mut y1 = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[y1] {
            y1 = i;
        }
    }
    let mut y2 = usize::MAX;
    for (i, &p) in probs.iter().enumerate() {
        if i != y1 && (y2 == usize::MAX || p > probs[y2]) {
            y2 = i;
        }
    }
    (y1, y2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::UncertaintyMetric;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_graph(seed: u64, n: usize, d: usize, p: f64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let feats = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        Graph::from_edges(n, &edges, feats, None)
    }

    #[test]
    fn init_is_deterministic() {
        let config = ModelConfig::new(4, 3);
        let a = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn head_width_concatenates_all_layers() {
        let config = ModelConfig {
            layer_kind: LayerKind::Gcn,
            num_layers: 3,
            hidden_width: 8,
            pooling: Pooling::Average,
            num_classes: 3,
            feat_dim: 4,
        };
        assert_eq!(config.head_input_width(), 4 + 8 + 8 + 8);
        let m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.head.w.dim(), (28, 3));
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let config = ModelConfig::new(4, 3);
        let mut m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        m.zero_params();
        let g = small_graph(2, 6, 4, 0.5);
        let trace = m.forward(&g, None).unwrap();
        for &p in &trace.probs_vec() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(m.predict_hard(&g).unwrap(), 0);
    }

    #[test]
    fn probabilities_normalize() {
        let config = ModelConfig::new(4, 5);
        let m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let g = small_graph(4, 8, 4, 0.4);
        let trace = m.forward(&g, None).unwrap();
        let sum: f64 = trace.probs_vec().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(trace.probs_vec().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn isolated_node_gcn_reduces_to_dense_layer() {
        // One node, no edges: renormalization is identity, so
        // h^1 = relu(x W + b).
        let config = ModelConfig {
            layer_kind: LayerKind::Gcn,
            num_layers: 1,
            hidden_width: 2,
            pooling: Pooling::Average,
            num_classes: 2,
            feat_dim: 2,
        };
        let mut m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        if let LayerParams::Gcn(lin) = &mut m.layers[0] {
            lin.w = arr2(&[[1.0, -2.0], [0.5, 3.0]]);
            lin.b = arr2(&[[0.25, -0.5]]);
        }
        let g = Graph::from_edges(1, &[], arr2(&[[2.0, 1.0]]), None);
        let trace = m.forward(&g, None).unwrap();
        // x W + b = [2*1 + 1*0.5 + 0.25, 2*(-2) + 1*3 - 0.5] = [2.75, -1.5]
        assert!((trace.embeddings[1][[0, 0]] - 2.75).abs() < 1e-12);
        assert_eq!(trace.embeddings[1][[0, 1]], 0.0);
    }

    #[test]
    fn two_node_gcn_matches_hand_computation() {
        // 2 nodes joined by an edge, feats [[1],[2]], one GCN layer with
        // w=[[1]], b=[0.5]. A+I has all-ones, degrees 2, so the normalized
        // propagation matrix is [[.5,.5],[.5,.5]] and
        // h^1 = relu([[1.5],[1.5]] * 1 + 0.5) = [[2],[2]].
        // Average pooling: h0 -> [1.5], h1 -> [2]; head w=[[1,-1],[0.5,0.25]],
        // b=[0.1,-0.2] gives logits [2.6, -1.2].
        let config = ModelConfig {
            layer_kind: LayerKind::Gcn,
            num_layers: 1,
            hidden_width: 1,
            pooling: Pooling::Average,
            num_classes: 2,
            feat_dim: 1,
        };
        let mut m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        if let LayerParams::Gcn(lin) = &mut m.layers[0] {
            lin.w = arr2(&[[1.0]]);
            lin.b = arr2(&[[0.5]]);
        }
        m.head.w = arr2(&[[1.0, -1.0], [0.5, 0.25]]);
        m.head.b = arr2(&[[0.1, -0.2]]);
        let g = Graph::from_edges(2, &[(0, 1)], arr2(&[[1.0], [2.0]]), None);
        let trace = m.forward(&g, None).unwrap();
        assert!((trace.logits[[0, 0]] - 2.6).abs() < 1e-12);
        assert!((trace.logits[[0, 1]] + 1.2).abs() < 1e-12);
        let e = (2.6f64).exp() + (-1.2f64).exp();
        assert!((trace.probs[[0, 0]] - (2.6f64).exp() / e).abs() < 1e-12);
    }

    #[test]
    fn fit_memorizes_single_graph() {
        let config = ModelConfig::new(4, 3);
        let mut m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let g = small_graph(8, 6, 4, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let losses =
            m.fit(&[&g], &[2], 200, 0.01, &mut rng, Exec::Seq).unwrap();
        assert!(losses.last().unwrap() < &0.01, "final loss {}", losses.last().unwrap());
        assert_eq!(m.predict_hard(&g).unwrap(), 2);
        assert!(losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn fit_zero_epochs_leaves_params_unchanged() {
        let config = ModelConfig::new(4, 2);
        let mut m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let before = m.clone();
        let g = small_graph(2, 5, 4, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.fit(&[&g], &[0], 0, 0.01, &mut rng, Exec::Seq).unwrap();
        assert_eq!(m.tensors(), before.tensors());
    }

    #[test]
    fn fit_rejects_bad_labels() {
        let config = ModelConfig::new(4, 2);
        let mut m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let g = small_graph(2, 5, 4, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            m.fit(&[&g], &[2], 1, 0.01, &mut rng, Exec::Seq),
            Err(GnnError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn fit_separates_linearly_separable_toy() {
        // Class 0: all-positive features; class 1: all-negative.
        let config = ModelConfig {
            layer_kind: LayerKind::Gcn,
            num_layers: 2,
            hidden_width: 8,
            pooling: Pooling::Average,
            num_classes: 2,
            feat_dim: 2,
        };
        let mut m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut graphs = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..16 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let n = 4 + i % 3;
            let feats =
                Array2::from_shape_fn((n, 2), |_| sign * rng.gen_range(0.5..1.5));
            let edges: Vec<(usize, usize)> = (0..n - 1).map(|v| (v, v + 1)).collect();
            graphs.push(Graph::from_edges(n, &edges, feats, None));
            labels.push(if i % 2 == 0 { 0 } else { 1 });
        }
        let refs: Vec<&Graph> = graphs.iter().collect();
        let mut fit_rng = ChaCha8Rng::seed_from_u64(6);
        m.fit(&refs, &labels, 500, 0.01, &mut fit_rng, Exec::Seq).unwrap();
        let correct = refs
            .iter()
            .zip(&labels)
            .filter(|(g, &l)| m.predict_hard(g).unwrap() == l)
            .count();
        assert_eq!(correct, refs.len());
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let config = ModelConfig {
            layer_kind: LayerKind::Gcn,
            num_layers: 2,
            hidden_width: 3,
            pooling: Pooling::Average,
            num_classes: 2,
            feat_dim: 2,
        };
        let m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let g = small_graph(13, 5, 2, 0.5);
        let label = 1;
        let (_, grads) = m.loss_and_param_grads(&g, label);
        let h = 1e-5;
        for ti in 0..m.tensors().len() {
            let dims = m.tensors()[ti].dim();
            for r in 0..dims.0 {
                for c in 0..dims.1 {
                    let mut plus = m.clone();
                    plus.tensors_mut()[ti][[r, c]] += h;
                    let mut minus = m.clone();
                    minus.tensors_mut()[ti][[r, c]] -= h;
                    let (lp, _) = plus.loss_and_param_grads(&g, label);
                    let (lm, _) = minus.loss_and_param_grads(&g, label);
                    let numeric = (lp - lm) / (2.0 * h);
                    let analytic = grads[ti][[r, c]];
                    let denom = numeric.abs().max(1e-6);
                    assert!(
                        (numeric - analytic).abs() / denom < 1e-4,
                        "tensor {ti} ({r},{c}): numeric {numeric} analytic {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_model_has_zero_adjacency_gradient() {
        let config = ModelConfig::new(4, 3);
        let mut m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        m.zero_params();
        let g = small_graph(3, 6, 4, 0.5);
        let grad = m.grad_wrt_adjacency(&g, UncertaintyMetric::Entropy).unwrap();
        assert!(grad.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn four_cycle_gradient_respects_edge_orbits() {
        // All four cycle edges lie in one orbit, both chords in another;
        // with identical node features the gradient must be constant on
        // each orbit (average pooling).
        let config = ModelConfig {
            layer_kind: LayerKind::Gcn,
            num_layers: 2,
            hidden_width: 4,
            pooling: Pooling::Average,
            num_classes: 3,
            feat_dim: 2,
        };
        let m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let g = Graph::from_edges(
            4,
            &[(0, 1), (1, 2), (2, 3), (3, 0)],
            Array2::ones((4, 2)),
            None,
        );
        let grad = m.grad_wrt_adjacency(&g, UncertaintyMetric::Margin).unwrap();
        let edge = grad[[0, 1]];
        for &(i, j) in &[(1usize, 2usize), (2, 3), (3, 0)] {
            assert!((grad[[i, j]] - edge).abs() < 1e-9);
        }
        assert!((grad[[0, 2]] - grad[[1, 3]]).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let config = ModelConfig {
            layer_kind: LayerKind::Sage,
            num_layers: 2,
            hidden_width: 5,
            pooling: Pooling::Maximum,
            num_classes: 4,
            feat_dim: 3,
        };
        let m = GnnModel::init(config, &mut ChaCha8Rng::seed_from_u64(33)).unwrap();
        let path = tmp.path().join("model.ckpt");
        m.save(&path).unwrap();
        let back = GnnModel::load(&path).unwrap();
        assert_eq!(m.config, back.config);
        for (a, b) in m.tensors().iter().zip(back.tensors()) {
            assert_eq!(a.as_slice().unwrap(), b.as_slice().unwrap());
        }
    }

    #[test]
    fn top_two_orders_by_probability() {
        assert_eq!(top_two(&[0.5, 0.3, 0.2]), (0, 1));
        assert_eq!(top_two(&[0.1, 0.2, 0.7]), (2, 1));
        // Ties go to the lowest index.
        assert_eq!(top_two(&[0.4, 0.4, 0.2]), (0, 1));
    }
}
