//! Split generation, metrics with confidence intervals, fold runners, and
//! the synthetic fixture.

pub mod metrics;
mod runner;
mod split;
pub mod synth;

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::dataset::DataError;
use crate::graph::GraphError;
use crate::model::ModelError;
use crate::table::{read_records, TableError};

pub use metrics::{
    auroc, bootstrap_r2_ci, delong_ci, r2, stratified_report, BootstrapCi, Estimate, MetricReport,
    Stratum,
};
pub use runner::{run_plan, run_zero_shot, EvalOutcome, FoldOutcome, Prediction, ZeroShotOutcome};
pub use split::{
    align_zero_shot, holdout, make_split, Fold, SplitKind, SplitOptions, SplitPlan,
    ZeroShotAlignment, ZeroShotPair,
};
pub use synth::{make_synthetic_fixture, FixtureSpec, SyntheticFixture};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error("{what} {index} has no labeled pairs")]
    EmptyEntity { what: &'static str, index: usize },
    #[error("the two datasets share no {0}")]
    NoOverlap(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Group labels for drugs (two columns: `drug, group`) or drug-cell pairs
/// (three columns: `drug, cell, group`). Pair labels take precedence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotation {
    pub by_drug: HashMap<String, String>,
    pub by_pair: HashMap<(String, String), String>,
}

impl Annotation {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let records = read_records(path)?;
        let mut out = Annotation::default();
        for (i, r) in records.iter().enumerate().skip(1) {
            match r.as_slice() {
                [d, g] => {
                    out.by_drug.insert(d.clone(), g.clone());
                }
                [d, c, g] => {
                    out.by_pair.insert((d.clone(), c.clone()), g.clone());
                }
                _ => {
                    return Err(EvalError::Invalid(format!(
                        "{}: line {} needs 2 or 3 columns",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn group_of(&self, drug: &str, cell: &str) -> Option<String> {
        self.by_pair
            .get(&(drug.to_string(), cell.to_string()))
            .or_else(|| self.by_drug.get(drug))
            .cloned()
    }
}
