use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{percentile, Task};

/// Midranks (1-based; ties share the mean of their positions).
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn split_classes(scores: &[f64], labels: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let pos = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y >= 0.5)
        .map(|(&s, _)| s)
        .collect();
    let neg = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y < 0.5)
        .map(|(&s, _)| s)
        .collect();
    (pos, neg)
}

/// Area under the ROC curve as `P(s+ > s-) + P(s+ = s-) / 2`; `None` unless
/// both classes are present. Labels are 1 (positive) or 0.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let (pos, neg) = split_classes(scores, labels);
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let r = midranks(&all);
    let (n1, n0) = (pos.len() as f64, neg.len() as f64);
    let r1: f64 = r[..pos.len()].iter().sum();
    Some((r1 - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Point estimate with a confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// AUROC with DeLong's structural-component variance and a normal
/// approximation interval clipped to `[0, 1]`. `None` unless each class has
/// at least two members.
pub fn delong_ci(scores: &[f64], labels: &[f64], level: f64) -> Option<Estimate> {
    let (pos, neg) = split_classes(scores, labels);
    let (m, n) = (pos.len(), neg.len());
    if m < 2 || n < 2 {
        return None;
    }
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let tz = midranks(&all);
    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let (mf, nf) = (m as f64, n as f64);
    let auc = (tz[..m].iter().sum::<f64>() - mf * (mf + 1.0) / 2.0) / (mf * nf);
    let v10: Vec<f64> = (0..m).map(|i| (tz[i] - tx[i]) / nf).collect();
    let v01: Vec<f64> = (0..n).map(|j| 1.0 - (tz[m + j] - ty[j]) / mf).collect();
    let var = |v: &[f64]| {
        let mu = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let variance = var(&v10) / mf + var(&v01) / nf;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0);
    let half = if variance > 0.0 {
        z * variance.sqrt()
    } else {
        0.0
    };
    Some(Estimate {
        point: auc,
        lo: (auc - half).max(0.0),
        hi: (auc + half).min(1.0),
    })
}

/// Coefficient of determination `1 - SS_res / SS_tot`; `None` for fewer than
/// two targets or zero target variance.
pub fn r2(y: &[f64], pred: &[f64]) -> Option<f64> {
    assert_eq!(
        y.len(),
        pred.len(),
        "targets and predictions differ in length"
    );
    if y.len() < 2 {
        return None;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
    /// Resamples skipped because their targets had no variance.
    pub degenerate: usize,
    /// More than half of the resamples were degenerate.
    pub unreliable: bool,
}

/// Percentile bootstrap interval for R² by resampling pairs with replacement.
pub fn bootstrap_r2_ci(
    y: &[f64],
    pred: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Option<BootstrapCi> {
    assert_eq!(y.len(), pred.len());
    let k = y.len();
    if k < 2 || resamples == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut degenerate = 0;
    let (mut ys, mut ps) = (vec![0.0; k], vec![0.0; k]);
    for _ in 0..resamples {
        for i in 0..k {
            let j = rng.gen_range(0..k);
            ys[i] = y[j];
            ps[i] = pred[j];
        }
        match r2(&ys, &ps) {
            Some(v) => stats.push(v),
            None => degenerate += 1,
        }
    }
    if stats.is_empty() {
        return None;
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0 * 100.0;
    Some(BootstrapCi {
        lo: percentile(&stats, tail),
        hi: percentile(&stats, 100.0 - tail),
        resamples,
        degenerate,
        unreliable: degenerate * 2 > resamples,
    })
}

/// The task's headline metric: AUROC or R².
pub fn task_metric(task: Task, y: &[f64], pred: &[f64]) -> Option<f64> {
    match task {
        Task::Classification => auroc(pred, y),
        Task::Regression => r2(y, pred),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub group: String,
    pub n: usize,
    pub unique_drugs: usize,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub n: usize,
    pub auroc: Option<Estimate>,
    pub r2: Option<Estimate>,
    pub unreliable_ci: bool,
    pub strata: Vec<Stratum>,
}

impl MetricReport {
    /// Metric plus interval for the task: DeLong for AUROC, 1,000-resample
    /// bootstrap for R².
    pub fn compute(task: Task, y: &[f64], pred: &[f64], seed: u64) -> Self {
        let mut report = MetricReport {
            task,
            n: y.len(),
            auroc: None,
            r2: None,
            unreliable_ci: false,
            strata: Vec::new(),
        };
        match task {
            Task::Classification => {
                report.auroc = delong_ci(pred, y, 0.95).or_else(|| {
                    auroc(pred, y).map(|a| Estimate {
                        point: a,
                        lo: a,
                        hi: a,
                    })
                });
            }
            Task::Regression => {
                if let Some(point) = r2(y, pred) {
                    let ci = bootstrap_r2_ci(y, pred, 1000, 0.95, seed);
                    report.unreliable_ci = ci.is_none_or(|c| c.unreliable);
                    let (lo, hi) = ci.map_or((point, point), |c| (c.lo, c.hi));
                    report.r2 = Some(Estimate {
                        point,
                        lo: lo.min(point),
                        hi: hi.max(point),
                    });
                }
            }
        }
        report
    }

    pub fn point(&self) -> Option<f64> {
        self.auroc.or(self.r2).map(|e| e.point)
    }

    pub fn to_tsv(&self) -> String {
        let (name, est) = match self.task {
            Task::Classification => ("auroc", self.auroc),
            Task::Regression => ("r2", self.r2),
        };
        let mut s = format!("metric\tvalue\tlo\thi\tn\n{name}\t");
        match est {
            Some(e) => s.push_str(&format!("{}\t{}\t{}\t{}\n", e.point, e.lo, e.hi, self.n)),
            None => s.push_str(&format!("NA\tNA\tNA\t{}\n", self.n)),
        }
        if !self.strata.is_empty() {
            s.push_str("\ngroup\tvalue\tn\tunique_drugs\n");
            for st in &self.strata {
                let v = st.metric.map_or("NA".to_string(), |v| v.to_string());
                s.push_str(&format!(
                    "{}\t{v}\t{}\t{}\n",
                    st.group, st.n, st.unique_drugs
                ));
            }
        }
        s
    }
}

/// Per-group metrics, ranked best first (groups without a defined metric
/// last, then by name). Pairs with no group fall into `"other"`.
pub fn stratified_report<F>(
    task: Task,
    pairs: &[(usize, usize)],
    y: &[f64],
    pred: &[f64],
    seed: u64,
    group_of: F,
) -> MetricReport
where
    F: Fn(usize, usize) -> Option<String>,
{
    let mut report = MetricReport::compute(task, y, pred, seed);
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, &(d, c)) in pairs.iter().enumerate() {
        groups
            .entry(group_of(d, c).unwrap_or_else(|| "other".into()))
            .or_default()
            .push(i);
    }
    let mut strata: Vec<Stratum> = groups
        .into_iter()
        .map(|(group, idx)| {
            let gy: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let gp: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let drugs: BTreeSet<usize> = idx.iter().map(|&i| pairs[i].0).collect();
            Stratum {
                group,
                n: idx.len(),
                unique_drugs: drugs.len(),
                metric: task_metric(task, &gy, &gp),
            }
        })
        .collect();
    strata.sort_by(|a, b| match (a.metric, b.metric) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.group.cmp(&b.group)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.group.cmp(&b.group),
    });
    report.strata = strata;
    report
}
