//! Raw matrix ingestion, task-specific response preprocessing, and gene
//! selection.

mod genes;
mod load;
mod preprocess;

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::TableError;

pub use genes::select_genes;
pub use load::{
    fingerprints_from_smiles, load_aliases, load_allowlist, load_matrices, AlignmentReport,
    DataPaths, RawData,
};
pub use preprocess::{
    percentile, preprocess_classification, preprocess_regression, regression_filter,
    ClassificationOptions, PercentileScope, RegressionOptions,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("no {0} shared between the input files")]
    EmptyIntersection(&'static str),
    #[error("smiles for drug {drug}: {source}")]
    Smiles {
        drug: String,
        #[source]
        source: crate::smiles::SmilesError,
    },
    #[error("{0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

/// Drug x cell-line response values with an observed mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub drugs: Vec<String>,
    pub cells: Vec<String>,
    /// Row-major `drugs x cells`; meaningless where `observed` is false.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl ResponseMatrix {
    pub fn n_drugs(&self) -> usize {
        self.drugs.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, d: usize, c: usize) -> Option<f64> {
        let k = d * self.cells.len() + c;
        self.observed[k].then_some(self.values[k])
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }
}

/// Cell-line x gene expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub cells: Vec<String>,
    pub genes: Vec<String>,
    pub values: Vec<f64>,
}

impl ExpressionMatrix {
    pub fn get(&self, c: usize, g: usize) -> f64 {
        self.values[c * self.genes.len() + g]
    }

    pub fn select_genes(&self, keep: &[usize]) -> Self {
        let l = self.genes.len();
        let values = (0..self.cells.len())
            .flat_map(|c| keep.iter().map(move |&g| (c, g)))
            .map(|(c, g)| self.values[c * l + g])
            .collect();
        Self {
            cells: self.cells.clone(),
            genes: keep.iter().map(|&g| self.genes[g].clone()).collect(),
            values,
        }
    }

    pub fn select_cells(&self, keep: &[usize]) -> Self {
        let l = self.genes.len();
        Self {
            cells: keep.iter().map(|&c| self.cells[c].clone()).collect(),
            genes: self.genes.clone(),
            values: keep
                .iter()
                .flat_map(|&c| self.values[c * l..(c + 1) * l].iter().copied())
                .collect(),
        }
    }
}

/// Known drug-target interactions; unknown pairs are `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtiMatrix {
    pub drugs: Vec<String>,
    pub genes: Vec<String>,
    pub known: Vec<bool>,
}

impl DtiMatrix {
    pub fn is_known(&self, d: usize, g: usize) -> bool {
        self.known[d * self.genes.len() + g]
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn annotated_genes(&self) -> HashSet<usize> {
        let l = self.genes.len();
        (0..self.known.len())
            .filter(|&k| self.known[k])
            .map(|k| k % l)
            .collect()
    }

    pub fn select(&self, drugs: &[usize], genes: &[usize]) -> Self {
        let l = self.genes.len();
        Self {
            drugs: drugs.iter().map(|&d| self.drugs[d].clone()).collect(),
            genes: genes.iter().map(|&g| self.genes[g].clone()).collect(),
            known: drugs
                .iter()
                .flat_map(|&d| genes.iter().map(move |&g| (d, g)))
                .map(|(d, g)| self.known[d * l + g])
                .collect(),
        }
    }
}

/// Drug fingerprint bits as 0.0/1.0, one row per drug.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintMatrix {
    pub drugs: Vec<String>,
    pub nbits: usize,
    pub bits: Vec<f64>,
}

impl FingerprintMatrix {
    pub fn select(&self, drugs: &[usize]) -> Self {
        let o = self.nbits;
        Self {
            drugs: drugs.iter().map(|&d| self.drugs[d].clone()).collect(),
            nbits: o,
            bits: drugs
                .iter()
                .flat_map(|&d| self.bits[d * o..(d + 1) * o].iter().copied())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub drug: usize,
    pub cell: usize,
    /// 1.0 sensitive / 0.0 resistant, or a pIC50 value.
    pub value: f64,
}

/// Preprocessed supervision over the drug and cell axes it names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledResponse {
    pub task: Task,
    pub drugs: Vec<String>,
    pub cells: Vec<String>,
    pub entries: Vec<LabeledEntry>,
}

impl LabeledResponse {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| (e.drug, e.cell)).collect()
    }

    pub fn value_of(&self, drug: usize, cell: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.drug == drug && e.cell == cell)
            .map(|e| e.value)
    }
}

/// A fully aligned, preprocessed dataset ready for graph construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: LabeledResponse,
    pub expression: ExpressionMatrix,
    pub dti: DtiMatrix,
    pub fingerprints: FingerprintMatrix,
}

/// Counts in the shape of a dataset summary table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub drugs: usize,
    pub cell_lines: usize,
    pub drug_response_pairs: usize,
    pub known_drug_target: usize,
    pub genes: usize,
}

impl DatasetStats {
    pub fn to_tsv(&self) -> String {
        format!(
            "metric\tvalue\nDrugs\t{}\nCell Lines\t{}\nTotal Drug-Response\t{}\nKnown Drug-Target\t{}\nGenes\t{}\n",
            self.drugs, self.cell_lines, self.drug_response_pairs, self.known_drug_target, self.genes
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareOptions {
    pub task: Task,
    pub classification: ClassificationOptions,
    pub regression: RegressionOptions,
    /// Fraction of highest-variance genes kept before the DTI union.
    pub gene_variance_fraction: f64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            task: Task::Classification,
            classification: ClassificationOptions::default(),
            regression: RegressionOptions::default(),
            gene_variance_fraction: 0.1,
        }
    }
}

impl Dataset {
    /// Preprocesses `raw` for the configured task, drops drugs and cells left
    /// without labels, and restricts the gene axis to the selected genes.
    pub fn prepare(raw: &RawData, opts: &PrepareOptions) -> Result<Self, DataError> {
        let labels = match opts.task {
            Task::Classification => preprocess_classification(&raw.response, &opts.classification),
            Task::Regression => preprocess_regression(&raw.response, &opts.regression),
        };
        if labels.is_empty() {
            return Err(DataError::Inconsistent(
                "no drug-cell pairs survived preprocessing".into(),
            ));
        }
        let n = labels.drugs.len();
        let m = labels.cells.len();
        let mut has_drug = vec![false; n];
        let mut has_cell = vec![false; m];
        for e in &labels.entries {
            has_drug[e.drug] = true;
            has_cell[e.cell] = true;
        }
        let keep_drugs: Vec<usize> = (0..n).filter(|&d| has_drug[d]).collect();
        let keep_cells: Vec<usize> = (0..m).filter(|&c| has_cell[c]).collect();
        let mut drug_map = vec![usize::MAX; n];
        keep_drugs
            .iter()
            .enumerate()
            .for_each(|(i, &d)| drug_map[d] = i);
        let mut cell_map = vec![usize::MAX; m];
        keep_cells
            .iter()
            .enumerate()
            .for_each(|(i, &c)| cell_map[c] = i);

        let labels = LabeledResponse {
            task: labels.task,
            drugs: keep_drugs
                .iter()
                .map(|&d| labels.drugs[d].clone())
                .collect(),
            cells: keep_cells
                .iter()
                .map(|&c| labels.cells[c].clone())
                .collect(),
            entries: labels
                .entries
                .iter()
                .map(|e| LabeledEntry {
                    drug: drug_map[e.drug],
                    cell: cell_map[e.cell],
                    value: e.value,
                })
                .collect(),
        };
        let expression = raw.expression.select_cells(&keep_cells);
        let all_genes: Vec<usize> = (0..raw.dti.genes.len()).collect();
        let dti = raw.dti.select(&keep_drugs, &all_genes);
        let genes = select_genes(&expression, &dti, opts.gene_variance_fraction);
        let ds = Dataset {
            labels,
            expression: expression.select_genes(&genes),
            dti: dti.select(&(0..keep_drugs.len()).collect::<Vec<_>>(), &genes),
            fingerprints: raw.fingerprints.select(&keep_drugs),
        };
        ds.check_aligned()?;
        Ok(ds)
    }

    pub fn n_drugs(&self) -> usize {
        self.labels.drugs.len()
    }

    pub fn n_cells(&self) -> usize {
        self.labels.cells.len()
    }

    pub fn n_genes(&self) -> usize {
        self.expression.genes.len()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            drugs: self.n_drugs(),
            cell_lines: self.n_cells(),
            drug_response_pairs: self.labels.len(),
            known_drug_target: self.dti.known_count(),
            genes: self.n_genes(),
        }
    }

    /// Restricts to the given drug, cell and gene indices (in that order).
    /// Labels touching a dropped drug or cell are removed.
    pub fn subset(&self, drugs: &[usize], cells: &[usize], genes: &[usize]) -> Self {
        let mut dmap = vec![None; self.n_drugs()];
        drugs
            .iter()
            .enumerate()
            .for_each(|(i, &d)| dmap[d] = Some(i));
        let mut cmap = vec![None; self.n_cells()];
        cells
            .iter()
            .enumerate()
            .for_each(|(i, &c)| cmap[c] = Some(i));
        let entries = self
            .labels
            .entries
            .iter()
            .filter_map(|e| {
                Some(LabeledEntry {
                    drug: dmap[e.drug]?,
                    cell: cmap[e.cell]?,
                    value: e.value,
                })
            })
            .collect();
        Dataset {
            labels: LabeledResponse {
                task: self.labels.task,
                drugs: drugs
                    .iter()
                    .map(|&d| self.labels.drugs[d].clone())
                    .collect(),
                cells: cells
                    .iter()
                    .map(|&c| self.labels.cells[c].clone())
                    .collect(),
                entries,
            },
            expression: self.expression.select_cells(cells).select_genes(genes),
            dti: self.dti.select(drugs, genes),
            fingerprints: self.fingerprints.select(drugs),
        }
    }

    /// Verifies that every matrix shares the same identifier axes.
    pub fn check_aligned(&self) -> Result<(), DataError> {
        let bad = |what: &str| Err(DataError::Inconsistent(format!("{what} axes disagree")));
        if self.labels.drugs != self.dti.drugs || self.labels.drugs != self.fingerprints.drugs {
            return bad("drug");
        }
        if self.labels.cells != self.expression.cells {
            return bad("cell");
        }
        if self.expression.genes != self.dti.genes {
            return bad("gene");
        }
        Ok(())
    }
}
