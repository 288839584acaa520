#![allow(dead_code)]

use std::path::PathBuf;

use drgt_core::dataset::{Dataset, PrepareOptions, Task};
use drgt_core::eval::{make_synthetic_fixture, FixtureSpec, SyntheticFixture};

pub fn corpus() -> Vec<(String, String)> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/smiles_corpus.tsv");
    std::fs::read_to_string(path)
        .expect("corpus file")
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (name, smi) = l.split_once('\t').expect("two columns");
            (name.to_string(), smi.to_string())
        })
        .collect()
}

pub fn fixture(spec: FixtureSpec) -> SyntheticFixture {
    make_synthetic_fixture(spec).expect("fixture")
}

pub fn prepared(fx: &SyntheticFixture, task: Task) -> Dataset {
    let opts = PrepareOptions {
        task,
        ..PrepareOptions::default()
    };
    Dataset::prepare(&fx.raw, &opts).expect("prepare")
}

pub fn small_dataset(task: Task, seed: u64) -> Dataset {
    let fx = fixture(FixtureSpec {
        n_drugs: 10,
        n_cells: 12,
        n_genes: 24,
        seed,
        ..FixtureSpec::default()
    });
    prepared(&fx, task)
}
