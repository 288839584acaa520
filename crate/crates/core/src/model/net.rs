use std::rc::Rc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, ModelConfig, ModelError, NormKind};
use crate::dataset::Task;
use crate::graph::{NodeFeatures, UnifiedGraph};
use crate::numcore::norm::{batch_norm, graph_norm, layer_norm};
use crate::numcore::{EdgeIndex, NumError, Tape, Tensor, Var};

pub const BCE_CLAMP: f64 = 1e-7;
pub const REGRESSION_SCALE: f64 = 15.0;

/// Block sizes the model's input projections were built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDims {
    pub n: usize,
    pub m: usize,
    pub l: usize,
}

impl GraphDims {
    pub fn of(graph: &UnifiedGraph) -> Self {
        Self {
            n: graph.n,
            m: graph.m,
            l: graph.l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerSlots {
    q: Linear,
    k: Linear,
    v: Linear,
    edge_k: usize,
    edge_v: usize,
    out: Linear,
    norm_alpha: usize,
    norm_gamma: usize,
    norm_beta: usize,
    residual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    proj_d: Linear,
    proj_c: Linear,
    proj_g: Linear,
    layers: Vec<LayerSlots>,
    head: Vec<Linear>,
}

/// Parameter tensors with stable names and an index layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GtModel {
    pub config: ModelConfig,
    pub dims: GraphDims,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    layout: Layout,
}

struct Builder<'a> {
    names: Vec<String>,
    params: Vec<Tensor>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn glorot(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-a..a))
            .collect();
        let t = Tensor::matrix(rows, cols, data).expect("sized");
        self.push(name, t)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.glorot(format!("{name}.weight"), fan_in, fan_out),
            b: self.push(format!("{name}.bias"), Tensor::zeros(&[1, fan_out])),
        }
    }
}

/// Allocates and initializes every parameter, recording where each lives.
fn build(
    config: &ModelConfig,
    dims: GraphDims,
    rng: &mut ChaCha8Rng,
) -> (Layout, Vec<String>, Vec<Tensor>) {
    let mut b = Builder {
        names: Vec::new(),
        params: Vec::new(),
        rng,
    };
    let proj_d = b.linear("proj_drug", dims.n, config.h1);
    let proj_c = b.linear("proj_cell", dims.m, config.h1);
    let proj_g = b.linear("proj_gene", dims.l, config.h1);
    let mut layers = Vec::new();
    for i in 0..config.num_layers {
        let (w_in, w) = (config.layer_input_width(i), config.layer_width(i));
        let p = format!("layer{i}");
        let q = b.linear(&format!("{p}.query"), w_in, w);
        let k = b.linear(&format!("{p}.key"), w_in, w);
        let v = b.linear(&format!("{p}.value"), w_in, w);
        let edge_k = b.glorot(format!("{p}.edge_key"), 1, w);
        let edge_v = b.glorot(format!("{p}.edge_value"), 1, w);
        let out = b.linear(&format!("{p}.out"), w, w);
        let norm_alpha = b.push(format!("{p}.norm.alpha"), Tensor::full(&[1, w], 1.0));
        let norm_gamma = b.push(format!("{p}.norm.gamma"), Tensor::full(&[1, w], 1.0));
        let norm_beta = b.push(format!("{p}.norm.beta"), Tensor::zeros(&[1, w]));
        layers.push(LayerSlots {
            q,
            k,
            v,
            edge_k,
            edge_v,
            out,
            norm_alpha,
            norm_gamma,
            norm_beta,
            residual: w_in == w,
        });
    }
    let z = config.output_width();
    let mut head = Vec::new();
    let mut fan_in = 2 * z;
    for i in 0..config.mlp_layers {
        let fan_out = if i + 1 == config.mlp_layers { 1 } else { z };
        head.push(b.linear(&format!("head{i}"), fan_in, fan_out));
        fan_in = fan_out;
    }
    let layout = Layout {
        proj_d,
        proj_c,
        proj_g,
        layers,
        head,
    };
    (layout, b.names, b.params)
}

/// Whether dropout is active and where its randomness comes from.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Result<Var, NumError> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => tape.dropout(x, p, true, &mut **rng),
        }
    }
}

/// Tape handles for one forward pass.
pub struct Bound {
    pub params: Vec<Var>,
    pub features: [Var; 3],
}

/// Forward result: final node embeddings and per-layer attention
/// coefficients (`[edges, heads]`, empty when the graph has no edges).
pub struct ForwardOut {
    pub z: Var,
    pub alphas: Vec<Tensor>,
}

fn linear(tape: &mut Tape, x: Var, l: Linear, p: &[Var]) -> Result<Var, NumError> {
    let y = tape.matmul(x, p[l.w])?;
    tape.add(y, p[l.b])
}

impl GtModel {
    pub fn new(config: ModelConfig, dims: GraphDims) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self::new_unchecked(config, dims))
    }

    /// Skips range validation; widths must still be divisible by the head
    /// count. Used for tiny models in tests and gradient checks.
    pub fn new_unchecked(config: ModelConfig, dims: GraphDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (layout, names, params) = build(&config, dims, &mut rng);
        Self {
            config,
            dims,
            names,
            params,
            layout,
        }
    }

    /// Replaces every parameter, checking names and shapes.
    pub fn with_params(mut self, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        if named.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                named.len()
            )));
        }
        for (k, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[k] || t.shape() != self.params[k].shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {k}: expected {} {:?}, found {name} {:?}",
                    self.names[k],
                    self.params[k].shape(),
                    t.shape()
                )));
            }
            self.params[k] = t;
        }
        Ok(self)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Places parameters (as trainable leaves) and features on `tape`.
    pub fn bind(&self, tape: &mut Tape, features: &NodeFeatures) -> Bound {
        Bound {
            params: self.params.iter().map(|p| tape.leaf(p.clone())).collect(),
            features: [
                tape.constant(features.drug.values.clone()),
                tape.constant(features.cell.values.clone()),
                tape.constant(features.gene.values.clone()),
            ],
        }
    }

    /// Maps each node type's similarity rows to width `h1` and stacks them in
    /// drug, cell, gene order.
    pub fn project_inputs(&self, tape: &mut Tape, b: &Bound) -> Result<Var, NumError> {
        let l = &self.layout;
        let d = linear(tape, b.features[0], l.proj_d, &b.params)?;
        let c = linear(tape, b.features[1], l.proj_c, &b.params)?;
        let g = linear(tape, b.features[2], l.proj_g, &b.params)?;
        tape.concat_rows(&[d, c, g])
    }

    /// One graph-transformer layer: edge-aware multi-head attention over
    /// incoming edges, output projection, optional residual, normalization,
    /// activation and dropout.
    pub fn gt_layer(
        &self,
        tape: &mut Tape,
        h_in: Var,
        layer: usize,
        edges: &Rc<EdgeIndex>,
        b: &Bound,
        mode: &mut Mode,
    ) -> Result<(Var, Option<Tensor>), NumError> {
        let s = &self.layout.layers[layer];
        let cfg = &self.config;
        let p = &b.params;
        let width = cfg.layer_width(layer);
        let heads = cfg.heads;
        let x = mode.dropout(tape, h_in, cfg.dropout_pre)?;
        let q = linear(tape, x, s.q, p)?;
        let k = linear(tape, x, s.k, p)?;
        let v = linear(tape, x, s.v, p)?;
        let (attended, alpha) = if edges.is_empty() {
            let rows = tape.value(h_in).rows();
            (tape.constant(Tensor::zeros(&[rows, width])), None)
        } else {
            let scale = 1.0 / ((width / heads) as f64).sqrt();
            let logits = tape.edge_scores(q, k, p[s.edge_k], edges.clone(), heads, scale)?;
            let alpha = tape.segment_softmax(logits, edges.clone())?;
            let alpha_value = tape.value(alpha).clone();
            let alpha = mode.dropout(tape, alpha, cfg.attention_dropout)?;
            let agg = tape.edge_aggregate(alpha, v, p[s.edge_v], edges.clone(), heads)?;
            (agg, Some(alpha_value))
        };
        let mut h = linear(tape, attended, s.out, p)?;
        if s.residual {
            h = tape.add(h, h_in)?;
        }
        h = match cfg.norm {
            NormKind::Graph => {
                graph_norm(tape, h, p[s.norm_alpha], p[s.norm_gamma], p[s.norm_beta])?
            }
            NormKind::Batch => batch_norm(tape, h, p[s.norm_gamma], p[s.norm_beta])?,
            NormKind::Layer => layer_norm(tape, h, p[s.norm_gamma], p[s.norm_beta])?,
        };
        h = activate(tape, h, cfg.activation);
        h = mode.dropout(tape, h, cfg.dropout_post)?;
        Ok((h, alpha))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        edges: &Rc<EdgeIndex>,
        mode: &mut Mode,
    ) -> Result<ForwardOut, NumError> {
        let mut h = self.project_inputs(tape, b)?;
        let mut alphas = Vec::with_capacity(self.config.num_layers);
        for layer in 0..self.config.num_layers {
            let (next, alpha) = self.gt_layer(tape, h, layer, edges, b, mode)?;
            h = next;
            alphas.push(alpha.unwrap_or_else(|| Tensor::zeros(&[0, self.config.heads])));
        }
        Ok(ForwardOut { z: h, alphas })
    }

    /// Scores `(drug, cell)` pairs from the final embeddings, as a `[pairs, 1]`
    /// column: sigmoid for classification, `15 * sigmoid` for regression.
    pub fn predict(
        &self,
        tape: &mut Tape,
        z: Var,
        pairs: &[(usize, usize)],
        b: &Bound,
        mode: &mut Mode,
    ) -> Result<Var, NumError> {
        let n = self.dims.n;
        let drugs = Rc::new(pairs.iter().map(|&(d, _)| d).collect::<Vec<_>>());
        let cells = Rc::new(pairs.iter().map(|&(_, c)| n + c).collect::<Vec<_>>());
        let zd = tape.gather_rows(z, drugs)?;
        let zc = tape.gather_rows(z, cells)?;
        let mut h = tape.concat_cols(&[zd, zc])?;
        let last = self.layout.head.len() - 1;
        for (i, &lin) in self.layout.head.iter().enumerate() {
            h = linear(tape, h, lin, &b.params)?;
            if i < last {
                h = activate(tape, h, self.config.activation);
                h = mode.dropout(tape, h, self.config.dropout_mlp)?;
            }
        }
        let y = tape.sigmoid(h);
        Ok(match self.config.task {
            Task::Classification => y,
            Task::Regression => tape.scale(y, REGRESSION_SCALE),
        })
    }

    /// Eval-mode predictions as plain numbers.
    pub fn predict_pairs(
        &self,
        graph: &UnifiedGraph,
        features: &NodeFeatures,
        pairs: &[(usize, usize)],
    ) -> Result<Vec<f64>, ModelError> {
        let (preds, _) = self.predict_with_attention(graph, features, pairs)?;
        Ok(preds)
    }

    /// Eval-mode predictions plus each layer's attention coefficients.
    pub fn predict_with_attention(
        &self,
        graph: &UnifiedGraph,
        features: &NodeFeatures,
        pairs: &[(usize, usize)],
    ) -> Result<(Vec<f64>, Vec<Tensor>), ModelError> {
        self.check_dims(graph)?;
        let edges = graph.edge_index()?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, features);
        let mut mode = Mode::Eval;
        let out = self.forward(&mut tape, &b, &edges, &mut mode)?;
        if pairs.is_empty() {
            return Ok((Vec::new(), out.alphas));
        }
        let y = self.predict(&mut tape, out.z, pairs, &b, &mut mode)?;
        Ok((tape.value(y).data().to_vec(), out.alphas))
    }

    pub fn check_dims(&self, graph: &UnifiedGraph) -> Result<(), ModelError> {
        if GraphDims::of(graph) != self.dims {
            return Err(ModelError::Config(format!(
                "model built for {:?}, graph has {:?}",
                self.dims,
                GraphDims::of(graph)
            )));
        }
        Ok(())
    }
}

fn activate(tape: &mut Tape, x: Var, a: Activation) -> Var {
    match a {
        Activation::Relu => tape.relu(x),
        Activation::Gelu => tape.gelu(x),
    }
}

/// Mean binary cross-entropy with predictions clamped to
/// `[1e-7, 1 - 1e-7]`. `y` is a `[pairs, 1]` column of 0/1 labels.
pub fn bce_loss(tape: &mut Tape, pred: Var, y: &Tensor) -> Result<Var, NumError> {
    check_lengths(tape, pred, y)?;
    let yv = tape.constant(y.clone());
    let one_minus_y = tape.constant(y.map(|v| 1.0 - v));
    let p = tape.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let lp = tape.ln(p);
    let neg = tape.scale(p, -1.0);
    let q = tape.add_scalar(neg, 1.0);
    let lq = tape.ln(q);
    let a = tape.mul(yv, lp)?;
    let b = tape.mul(one_minus_y, lq)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s);
    Ok(tape.scale(m, -1.0))
}

/// Mean squared error against a `[pairs, 1]` column.
pub fn mse_loss(tape: &mut Tape, pred: Var, y: &Tensor) -> Result<Var, NumError> {
    check_lengths(tape, pred, y)?;
    let yv = tape.constant(y.clone());
    let d = tape.sub(pred, yv)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

pub fn task_loss(tape: &mut Tape, task: Task, pred: Var, y: &Tensor) -> Result<Var, NumError> {
    match task {
        Task::Classification => bce_loss(tape, pred, y),
        Task::Regression => mse_loss(tape, pred, y),
    }
}

fn check_lengths(tape: &Tape, pred: Var, y: &Tensor) -> Result<(), NumError> {
    let p = tape.value(pred);
    if p.shape() != y.shape() {
        return Err(NumError::Shape(format!(
            "predictions {:?} vs targets {:?}",
            p.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// Plain-number loss, for reporting.
pub fn loss_value(task: Task, pred: &[f64], y: &[f64]) -> f64 {
    assert_eq!(pred.len(), y.len());
    let k = pred.len().max(1) as f64;
    match task {
        Task::Classification => {
            -pred
                .iter()
                .zip(y)
                .map(|(&p, &t)| {
                    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    t * p.ln() + (1.0 - t) * (1.0 - p).ln()
                })
                .sum::<f64>()
                / k
        }
        Task::Regression => {
            pred.iter()
                .zip(y)
                .map(|(p, t)| (p - t).powi(2))
                .sum::<f64>()
                / k
        }
    }
}
