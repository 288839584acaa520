use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LabeledEntry, LabeledResponse, ResponseMatrix, Task};

/// Where the central-95% filter on log-IC50 draws its percentiles from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PercentileScope {
    Global,
    PerDrug,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationOptions {
    pub percentile_scope: PercentileScope,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
}

impl Default for ClassificationOptions {
    fn default() -> Self {
        Self {
            percentile_scope: PercentileScope::Global,
            lower_percentile: 2.5,
            upper_percentile: 97.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionOptions {
    pub min_measurements: usize,
    pub clip_min: f64,
    pub clip_max: f64,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            min_measurements: 10,
            clip_min: 0.0,
            clip_max: 15.0,
        }
    }
}

/// Percentile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty; `pct` is in `[0, 100]`.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of nothing");
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// log10, central-percentile filter, then per-drug margin labels:
/// sensitive (1) below `mean - sd`, resistant (0) above `mean + sd`, everything
/// in between dropped. Drugs with fewer than two surviving values are dropped.
pub fn preprocess_classification(
    raw: &ResponseMatrix,
    opts: &ClassificationOptions,
) -> LabeledResponse {
    let (n, m) = (raw.n_drugs(), raw.n_cells());
    let mut logs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (d, row) in logs.iter_mut().enumerate() {
        for c in 0..m {
            if let Some(v) = raw.get(d, c) {
                if v > 0.0 && v.is_finite() {
                    row.push((c, v.log10()));
                }
            }
        }
    }

    match opts.percentile_scope {
        PercentileScope::Off => {}
        PercentileScope::Global => {
            let all = sorted(logs.iter().flatten().map(|&(_, x)| x).collect());
            if !all.is_empty() {
                let lo = percentile(&all, opts.lower_percentile);
                let hi = percentile(&all, opts.upper_percentile);
                for row in &mut logs {
                    row.retain(|&(_, x)| x >= lo && x <= hi);
                }
            }
        }
        PercentileScope::PerDrug => {
            for row in &mut logs {
                if row.is_empty() {
                    continue;
                }
                let vals = sorted(row.iter().map(|&(_, x)| x).collect());
                let lo = percentile(&vals, opts.lower_percentile);
                let hi = percentile(&vals, opts.upper_percentile);
                row.retain(|&(_, x)| x >= lo && x <= hi);
            }
        }
    }

    let mut entries = Vec::new();
    for (d, row) in logs.iter().enumerate() {
        if row.len() < 2 {
            continue;
        }
        let k = row.len() as f64;
        let mean = row.iter().map(|&(_, x)| x).sum::<f64>() / k;
        let var = row.iter().map(|&(_, x)| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let sd = var.sqrt();
        for &(c, x) in row {
            let label = if x < mean - sd {
                1.0
            } else if x > mean + sd {
                0.0
            } else {
                continue;
            };
            entries.push(LabeledEntry {
                drug: d,
                cell: c,
                value: label,
            });
        }
    }
    LabeledResponse {
        task: Task::Classification,
        drugs: raw.drugs.clone(),
        cells: raw.cells.clone(),
        entries,
    }
}

/// Drops invalid IC50 (zero, non-positive, non-finite), converts to pIC50,
/// then applies [`regression_filter`].
pub fn preprocess_regression(raw: &ResponseMatrix, opts: &RegressionOptions) -> LabeledResponse {
    let mut entries = Vec::new();
    for d in 0..raw.n_drugs() {
        for c in 0..raw.n_cells() {
            if let Some(v) = raw.get(d, c) {
                if v > 0.0 && v.is_finite() {
                    entries.push(LabeledEntry {
                        drug: d,
                        cell: c,
                        value: -v.log10(),
                    });
                }
            }
        }
    }
    let pic50 = LabeledResponse {
        task: Task::Regression,
        drugs: raw.drugs.clone(),
        cells: raw.cells.clone(),
        entries,
    };
    regression_filter(&pic50, opts)
}

/// Clips pIC50 values into range and removes drugs with too few
/// measurements. Idempotent.
pub fn regression_filter(labels: &LabeledResponse, opts: &RegressionOptions) -> LabeledResponse {
    let mut per_drug: BTreeMap<usize, usize> = BTreeMap::new();
    for e in &labels.entries {
        *per_drug.entry(e.drug).or_default() += 1;
    }
    let entries = labels
        .entries
        .iter()
        .filter(|e| per_drug[&e.drug] >= opts.min_measurements)
        .map(|e| LabeledEntry {
            value: e.value.clamp(opts.clip_min, opts.clip_max),
            ..*e
        })
        .collect();
    LabeledResponse {
        task: Task::Regression,
        drugs: labels.drugs.clone(),
        cells: labels.cells.clone(),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[Option<f64>]]) -> ResponseMatrix {
        let m = rows[0].len();
        ResponseMatrix {
            drugs: (0..rows.len()).map(|d| format!("d{d}")).collect(),
            cells: (0..m).map(|c| format!("c{c}")).collect(),
            values: rows
                .iter()
                .flat_map(|r| r.iter().map(|v| v.unwrap_or(0.0)))
                .collect(),
            observed: rows
                .iter()
                .flat_map(|r| r.iter().map(Option::is_some))
                .collect(),
        }
    }

    fn no_filter() -> ClassificationOptions {
        ClassificationOptions {
            percentile_scope: PercentileScope::Off,
            ..Default::default()
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 25.0), 2.0);
        assert!((percentile(&v, 2.5) - 1.1).abs() < 1e-12);
        assert_eq!(percentile(&v, 100.0), 5.0);
    }

    #[test]
    fn margin_labels_use_strict_inequalities() {
        // log10 values -1, 0, 0, 0, 1: mean 0, sample sd sqrt(0.5)
        let raw = matrix(&[&[Some(0.1), Some(1.0), Some(1.0), Some(1.0), Some(10.0)]]);
        let out = preprocess_classification(&raw, &no_filter());
        assert_eq!(out.entries.len(), 2);
        assert_eq!(out.value_of(0, 0), Some(1.0));
        assert_eq!(out.value_of(0, 4), Some(0.0));
        assert_eq!(out.value_of(0, 1), None);
    }

    #[test]
    fn constant_drug_is_all_uncertain() {
        let raw = matrix(&[&[Some(5.0), Some(5.0), Some(5.0)]]);
        assert!(preprocess_classification(&raw, &no_filter()).is_empty());
    }

    #[test]
    fn single_observation_drug_dropped() {
        let raw = matrix(&[
            &[Some(5.0), None, None],
            &[Some(0.1), Some(1.0), Some(10.0)],
        ]);
        let out = preprocess_classification(&raw, &no_filter());
        assert!(out.entries.iter().all(|e| e.drug == 1));
    }

    #[test]
    fn regression_transform_and_clip() {
        let mut row = vec![
            Some(1.0),
            Some(1e-20),
            Some(0.0),
            Some(f64::INFINITY),
            Some(1e3),
        ];
        row.extend(std::iter::repeat_n(Some(0.5), 8));
        let raw = matrix(&[&row]);
        let out = preprocess_regression(&raw, &RegressionOptions::default());
        assert_eq!(out.len(), 11);
        assert_eq!(out.value_of(0, 0), Some(0.0));
        assert_eq!(out.value_of(0, 1), Some(15.0));
        assert_eq!(out.value_of(0, 2), None);
        assert_eq!(out.value_of(0, 3), None);
        assert_eq!(out.value_of(0, 4), Some(0.0));
    }

    #[test]
    fn drug_with_nine_measurements_removed() {
        let nine: Vec<Option<f64>> = (0..12).map(|c| (c < 9).then_some(0.01)).collect();
        let ten: Vec<Option<f64>> = (0..12).map(|c| (c < 10).then_some(0.01)).collect();
        let raw = matrix(&[&nine, &ten]);
        let out = preprocess_regression(&raw, &RegressionOptions::default());
        assert!(out.entries.iter().all(|e| e.drug == 1));
        assert_eq!(out.len(), 10);
    }

    #[test]
    fn global_percentile_filter_drops_extremes() {
        let vals: Vec<Option<f64>> = (1..=100)
            .map(|i| Some(10f64.powf(i as f64 / 10.0)))
            .collect();
        let raw = matrix(&[&vals]);
        let opts = ClassificationOptions::default();
        let out = preprocess_classification(&raw, &opts);
        // the lowest and highest values fall outside the central 95%
        assert!(out.entries.iter().all(|e| e.cell != 0 && e.cell != 99));
        assert!(out.value_of(0, 10).is_some());
    }
}
