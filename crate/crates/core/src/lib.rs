pub mod cli;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod interpret;
pub mod model;
pub mod numcore;
pub mod pubmed;
pub mod smiles;
pub mod table;
