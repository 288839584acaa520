use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{task_metric, MetricReport};
use super::split::{SplitKind, SplitPlan, ZeroShotAlignment};
use super::{Annotation, EvalError};
use crate::dataset::{Dataset, LabeledEntry, Task};
use crate::graph::{DgMode, GraphOptions, NodeFeatures, UnifiedGraph};
use crate::model::{train, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub drug: usize,
    pub cell: usize,
    pub fold: usize,
    pub y: f64,
    pub pred: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub held: Option<usize>,
    pub n: usize,
    pub metric: Option<f64>,
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub kind: SplitKind,
    pub task: Task,
    pub folds: Vec<FoldOutcome>,
    /// Mean and sample standard deviation of the per-fold metric over folds
    /// where it is defined.
    pub fold_mean: Option<f64>,
    pub fold_std: Option<f64>,
    /// Metric over all test predictions pooled together.
    pub pooled: MetricReport,
    pub predictions: Vec<Prediction>,
}

impl EvalOutcome {
    pub fn folds_tsv(&self) -> String {
        let mut s = String::from("fold\theld\tn\tmetric\tfinal_train_loss\n");
        for f in &self.folds {
            let held = f.held.map_or("NA".to_string(), |h| h.to_string());
            let metric = f.metric.map_or("NA".to_string(), |v| v.to_string());
            let loss = f
                .final_train_loss
                .map_or("NA".to_string(), |v| v.to_string());
            s.push_str(&format!("{}\t{held}\t{}\t{metric}\t{loss}\n", f.fold, f.n));
        }
        s
    }

    pub fn predictions_tsv(&self, ds: &Dataset) -> String {
        let mut s = String::from("drug\tcell\tfold\ty\tpred\n");
        for p in &self.predictions {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                ds.labels.drugs[p.drug], ds.labels.cells[p.cell], p.fold, p.y, p.pred
            ));
        }
        s
    }

    /// Pooled report split by an annotation of drugs or pairs.
    pub fn stratify(&self, ds: &Dataset, annotation: &Annotation, seed: u64) -> MetricReport {
        let pairs: Vec<(usize, usize)> =
            self.predictions.iter().map(|p| (p.drug, p.cell)).collect();
        let (y, pred) = self.columns();
        super::metrics::stratified_report(self.task, &pairs, &y, &pred, seed, |d, c| {
            annotation.group_of(&ds.labels.drugs[d], &ds.labels.cells[c])
        })
    }

    fn columns(&self) -> (Vec<f64>, Vec<f64>) {
        self.predictions.iter().map(|p| (p.y, p.pred)).unzip()
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

fn fit_and_predict(
    ds: &Dataset,
    features: &NodeFeatures,
    config: &ModelConfig,
    graph_opts: &GraphOptions,
    train_pairs: &[(usize, usize)],
    test_pairs: &[(usize, usize)],
) -> Result<(Vec<f64>, Option<f64>), EvalError> {
    let values: HashMap<(usize, usize), f64> = ds
        .labels
        .entries
        .iter()
        .map(|e| ((e.drug, e.cell), e.value))
        .collect();
    let train_set: HashSet<(usize, usize)> = train_pairs.iter().copied().collect();
    let mask: HashSet<(usize, usize)> = values
        .keys()
        .filter(|p| !train_set.contains(p))
        .copied()
        .collect();
    let entries: Vec<LabeledEntry> = train_pairs
        .iter()
        .map(|&(drug, cell)| LabeledEntry {
            drug,
            cell,
            value: values[&(drug, cell)],
        })
        .collect();
    let graph = UnifiedGraph::build(ds, &mask, DgMode::Train, graph_opts)?;
    let (model, trace) = train(config, &graph, features, &entries, &[])?;
    let preds = model.predict_pairs(&graph, features, test_pairs)?;
    Ok((preds, trace.train_loss.last().copied()))
}

/// Trains one model per fold (folds run in parallel, each with a seed
/// derived from the configuration seed and the fold index) and scores the
/// held-out pairs. Every labeled pair outside a fold's training set is
/// hidden from that fold's graph.
pub fn run_plan(
    ds: &Dataset,
    plan: &SplitPlan,
    config: &ModelConfig,
    graph_opts: &GraphOptions,
) -> Result<EvalOutcome, EvalError> {
    if config.task != ds.labels.task {
        return Err(EvalError::Invalid(format!(
            "model configured for {:?} but the dataset is {:?}",
            config.task, ds.labels.task
        )));
    }
    let features = NodeFeatures::from_dataset(ds)?;
    let results: Vec<Result<(FoldOutcome, Vec<Prediction>), EvalError>> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            let cfg = ModelConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..config.clone()
            };
            let (preds, loss) =
                fit_and_predict(ds, &features, &cfg, graph_opts, &fold.train, &fold.test)?;
            let predictions: Vec<Prediction> = fold
                .test
                .iter()
                .zip(&preds)
                .map(|(&(drug, cell), &pred)| Prediction {
                    drug,
                    cell,
                    fold: i,
                    y: ds
                        .labels
                        .value_of(drug, cell)
                        .expect("test pair is labeled"),
                    pred,
                })
                .collect();
            let (y, p): (Vec<f64>, Vec<f64>) = predictions.iter().map(|p| (p.y, p.pred)).unzip();
            log::info!("fold {i}: {} test pairs", predictions.len());
            Ok((
                FoldOutcome {
                    fold: i,
                    held: fold.held,
                    n: predictions.len(),
                    metric: task_metric(ds.labels.task, &y, &p),
                    final_train_loss: loss,
                },
                predictions,
            ))
        })
        .collect();
    let mut folds = Vec::new();
    let mut predictions = Vec::new();
    for r in results {
        let (f, p) = r?;
        folds.push(f);
        predictions.extend(p);
    }
    let defined: Vec<f64> = folds.iter().filter_map(|f| f.metric).collect();
    let (fold_mean, fold_std) = mean_std(&defined);
    let (y, p): (Vec<f64>, Vec<f64>) = predictions.iter().map(|p| (p.y, p.pred)).unzip();
    Ok(EvalOutcome {
        kind: plan.kind,
        task: ds.labels.task,
        folds,
        fold_mean,
        fold_std,
        pooled: MetricReport::compute(ds.labels.task, &y, &p, plan.seed),
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotOutcome {
    pub overall: MetricReport,
    pub seen: MetricReport,
    pub unseen: MetricReport,
    pub predictions: Vec<(usize, usize, f64, f64, bool)>,
}

impl ZeroShotOutcome {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("subset\tmetric\tvalue\tlo\thi\tn\n");
        for (name, r) in [
            ("overall", &self.overall),
            ("seen", &self.seen),
            ("unseen", &self.unseen),
        ] {
            let (metric, est) = match r.task {
                Task::Classification => ("auroc", r.auroc),
                Task::Regression => ("r2", r.r2),
            };
            match est {
                Some(e) => s.push_str(&format!(
                    "{name}\t{metric}\t{}\t{}\t{}\t{}\n",
                    e.point, e.lo, e.hi, r.n
                )),
                None => s.push_str(&format!("{name}\t{metric}\tNA\tNA\tNA\t{}\n", r.n)),
            }
        }
        s
    }
}

/// Trains on every pair of the aligned training dataset and scores the
/// evaluation pairs, split into seen and unseen.
pub fn run_zero_shot(
    align: &ZeroShotAlignment,
    config: &ModelConfig,
    graph_opts: &GraphOptions,
    seed: u64,
) -> Result<ZeroShotOutcome, EvalError> {
    let ds = &align.train;
    let features = NodeFeatures::from_dataset(ds)?;
    let train_pairs = ds.labels.pairs();
    let test_pairs: Vec<(usize, usize)> = align.test.iter().map(|p| (p.drug, p.cell)).collect();
    let (preds, _) = fit_and_predict(ds, &features, config, graph_opts, &train_pairs, &test_pairs)?;
    let task = ds.labels.task;
    let report = |keep: &dyn Fn(bool) -> bool| {
        let (y, p): (Vec<f64>, Vec<f64>) = align
            .test
            .iter()
            .zip(&preds)
            .filter(|(t, _)| keep(t.seen))
            .map(|(t, &p)| (t.value, p))
            .unzip();
        MetricReport::compute(task, &y, &p, seed)
    };
    Ok(ZeroShotOutcome {
        overall: report(&|_| true),
        seen: report(&|s| s),
        unseen: report(&|s| !s),
        predictions: align
            .test
            .iter()
            .zip(&preds)
            .map(|(t, &p)| (t.drug, t.cell, t.value, p, t.seen))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[]), (None, None));
        assert_eq!(mean_std(&[2.0]), (Some(2.0), None));
        assert_eq!(mean_std(&[1.0, 3.0]), (Some(2.0), Some(2f64.sqrt())));
    }
}
