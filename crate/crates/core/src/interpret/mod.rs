//! Attention-based gene rankings and gene-set over-representation analysis.

mod attention;
mod ora;

use thiserror::Error;

use crate::model::ModelError;
use crate::table::TableError;

pub use attention::{extract_ac, AttentionReport, GeneScore};
pub use ora::{
    benjamini_hochberg, enrichment_tsv, hypergeom_upper_tail, load_moa, moa_summary,
    moa_summary_tsv, ora, parse_gmt, Enrichment, GeneSet, GeneSetCollection,
};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("the model has no attention layers")]
    NoLayers,
    #[error("{0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    Gmt {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("empty gene query")]
    EmptyQuery,
    #[error("query gene {0} is not in the universe")]
    NotInUniverse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Table(#[from] TableError),
}
