use std::fmt::Write as _;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{loss_value, task_loss, GraphDims, GtModel, Mode};
use super::ModelError;
use crate::dataset::LabeledEntry;
use crate::graph::{NodeFeatures, UnifiedGraph};
use crate::numcore::{cosine_lr, AdamConfig, AdamState, NumError, Tape, Tensor};

/// Per-epoch losses. `val_loss` is empty when no validation pairs were given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl LossTrace {
    /// Tab-separated `epoch train_loss [val_loss]`.
    pub fn to_tsv(&self) -> String {
        let has_val = !self.val_loss.is_empty();
        let mut s = String::from(if has_val {
            "epoch\ttrain_loss\tval_loss\n"
        } else {
            "epoch\ttrain_loss\n"
        });
        for (e, t) in self.train_loss.iter().enumerate() {
            let _ = write!(s, "{e}\t{t}");
            if has_val {
                let _ = write!(s, "\t{}", self.val_loss[e]);
            }
            s.push('\n');
        }
        s
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.val_loss.last().copied()
    }
}

fn split(entries: &[LabeledEntry]) -> (Vec<(usize, usize)>, Tensor) {
    let pairs = entries.iter().map(|e| (e.drug, e.cell)).collect();
    let y = Tensor::column(entries.iter().map(|e| e.value).collect());
    (pairs, y)
}

/// Full-graph training. `train` pairs drive the loss; `val` pairs (which must
/// also be absent from `graph`) are scored in eval mode after every epoch.
/// A non-finite loss or gradient aborts with [`ModelError::Diverged`].
pub fn train(
    config: &super::ModelConfig,
    graph: &UnifiedGraph,
    features: &NodeFeatures,
    train: &[LabeledEntry],
    val: &[LabeledEntry],
) -> Result<(GtModel, LossTrace), ModelError> {
    let model = GtModel::new(config.clone(), GraphDims::of(graph))?;
    train_model(model, graph, features, train, val)
}

/// Like [`train`] but starts from an existing model, skipping config range
/// checks.
pub fn train_model(
    model: GtModel,
    graph: &UnifiedGraph,
    features: &NodeFeatures,
    train: &[LabeledEntry],
    val: &[LabeledEntry],
) -> Result<(GtModel, LossTrace), ModelError> {
    let mut trace = LossTrace::default();
    let model = train_traced(model, graph, features, train, val, &mut trace)?;
    Ok((model, trace))
}

/// Like [`train_model`] but records losses into `trace` as it goes, so the
/// epochs completed before a divergence remain available.
pub fn train_traced(
    mut model: GtModel,
    graph: &UnifiedGraph,
    features: &NodeFeatures,
    train: &[LabeledEntry],
    val: &[LabeledEntry],
    trace: &mut LossTrace,
) -> Result<GtModel, ModelError> {
    model.check_dims(graph)?;
    if train.is_empty() {
        return Err(ModelError::Config("no training pairs".into()));
    }
    let cfg = model.config.clone();
    let edges = graph.edge_index()?;
    let (train_pairs, train_y) = split(train);
    let (val_pairs, val_y) = split(val);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            decay_mode: cfg.optimizer.decay_mode(),
            ..AdamConfig::default()
        },
        &model.params,
    );
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, features);
        let mut mode = Mode::Train(&mut rng);
        let out = model.forward(&mut tape, &b, &edges, &mut mode)?;
        let pred = model.predict(&mut tape, out.z, &train_pairs, &b, &mut mode)?;
        let loss = task_loss(&mut tape, cfg.task, pred, &train_y)?;
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(ModelError::Diverged { epoch, loss: lv });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = b
            .params
            .iter()
            .zip(&model.params)
            .map(|(&v, p)| grads.get_or_zeros(v, p))
            .collect();
        let lr = if cfg.cosine_schedule {
            cosine_lr(cfg.lr, epoch, cfg.epochs)
        } else {
            cfg.lr
        };
        adam.step(&mut model.params, &g, lr).map_err(|e| match e {
            NumError::Diverged(_) => ModelError::Diverged { epoch, loss: lv },
            other => other.into(),
        })?;
        trace.train_loss.push(lv);
        if !val_pairs.is_empty() {
            let p = model.predict_pairs(graph, features, &val_pairs)?;
            let vl = loss_value(cfg.task, &p, val_y.data());
            if !vl.is_finite() {
                return Err(ModelError::Diverged { epoch, loss: vl });
            }
            trace.val_loss.push(vl);
        }
        log::debug!("epoch {epoch}: train loss {lv:.6}");
    }
    Ok(model)
}
