//! A small synthetic dataset with planted block structure.
//!
//! Drugs, cell lines and genes are each assigned to one of `blocks` latent
//! groups. A drug is potent against cells of its own block and weak against
//! cells of the next block; expression and drug targets follow the same
//! grouping, so the graph carries the signal the response depends on.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::{
    AlignmentReport, DataPaths, DtiMatrix, ExpressionMatrix, FingerprintMatrix, RawData,
    ResponseMatrix,
};
use crate::table::{format_table, write_text};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureSpec {
    pub n_drugs: usize,
    pub n_cells: usize,
    pub n_genes: usize,
    /// Standard deviation of the Gaussian noise on log-IC50 and expression.
    pub noise: f64,
    pub blocks: usize,
    /// Fraction of response entries left unobserved.
    pub missing: f64,
    pub targets_per_drug: usize,
    pub nbits: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_drugs: 40,
            n_cells: 30,
            n_genes: 60,
            noise: 0.1,
            blocks: 4,
            missing: 0.0,
            targets_per_drug: 3,
            nbits: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFixture {
    pub spec: FixtureSpec,
    pub raw: RawData,
    pub drug_block: Vec<usize>,
    pub cell_block: Vec<usize>,
    pub gene_block: Vec<usize>,
    /// Ground-truth affinity, `drugs x cells` row-major: +1 for the drug's
    /// own block, -1 for the following block, 0 otherwise.
    pub affinity: Vec<f64>,
}

pub fn make_synthetic_fixture(spec: FixtureSpec) -> Result<SyntheticFixture, EvalError> {
    let FixtureSpec {
        n_drugs: n,
        n_cells: m,
        n_genes: l,
        blocks: k,
        ..
    } = spec;
    if n < 4 || m < 4 || l < 4 {
        return Err(EvalError::Invalid(format!(
            "fixture needs at least 4 drugs, cells and genes (got {n}, {m}, {l})"
        )));
    }
    if k < 2 || k > n.min(m).min(l) {
        return Err(EvalError::Invalid(format!(
            "{k} blocks do not fit the fixture"
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) || !(0.0..1.0).contains(&spec.missing) {
        return Err(EvalError::Invalid(
            "noise must be >= 0 and missing in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let drug_block: Vec<usize> = (0..n).map(|d| d % k).collect();
    let cell_block: Vec<usize> = (0..m).map(|c| c % k).collect();
    let gene_block: Vec<usize> = (0..l).map(|g| g % k).collect();
    let drugs: Vec<String> = (0..n).map(|d| format!("D{d:03}")).collect();
    let cells: Vec<String> = (0..m).map(|c| format!("C{c:03}")).collect();
    let genes: Vec<String> = (0..l).map(|g| format!("G{g:03}")).collect();

    let mut affinity = vec![0.0; n * m];
    let mut values = vec![0.0; n * m];
    let mut observed = vec![true; n * m];
    for d in 0..n {
        let offset = rng.gen_range(-1.0..1.0);
        for c in 0..m {
            let a = if cell_block[c] == drug_block[d] {
                1.0
            } else if cell_block[c] == (drug_block[d] + 1) % k {
                -1.0
            } else {
                0.0
            };
            affinity[d * m + c] = a;
            let log_ic50 = -6.0 + offset - 1.5 * a + spec.noise * gauss(&mut rng);
            values[d * m + c] = 10f64.powf(log_ic50);
            if spec.missing > 0.0 && rng.gen_bool(spec.missing) {
                observed[d * m + c] = false;
                values[d * m + c] = 0.0;
            }
        }
    }

    let mut expression = Vec::with_capacity(m * l);
    for &cb in &cell_block {
        for &gb in &gene_block {
            let on = if gb == cb { 2.0 } else { 0.0 };
            expression.push(5.0 + on + spec.noise * gauss(&mut rng));
        }
    }

    let mut known = vec![false; n * l];
    for d in 0..n {
        let mut pool: Vec<usize> = (0..l).filter(|&g| gene_block[g] == drug_block[d]).collect();
        for _ in 0..spec.targets_per_drug.min(pool.len()) {
            let g = pool.swap_remove(rng.gen_range(0..pool.len()));
            known[d * l + g] = true;
        }
    }

    let patterns: Vec<Vec<bool>> = (0..k)
        .map(|_| (0..spec.nbits).map(|_| rng.gen_bool(0.5)).collect())
        .collect();
    let mut bits = Vec::with_capacity(n * spec.nbits);
    for &b in &drug_block {
        for &p in &patterns[b] {
            let flip = rng.gen_bool(0.05);
            bits.push(if p ^ flip { 1.0 } else { 0.0 });
        }
    }

    Ok(SyntheticFixture {
        spec,
        raw: RawData {
            response: ResponseMatrix {
                drugs: drugs.clone(),
                cells: cells.clone(),
                values,
                observed,
            },
            expression: ExpressionMatrix {
                cells,
                genes: genes.clone(),
                values: expression,
            },
            dti: DtiMatrix {
                drugs: drugs.clone(),
                genes,
                known,
            },
            fingerprints: FingerprintMatrix {
                drugs,
                nbits: spec.nbits,
                bits,
            },
            report: AlignmentReport::default(),
        },
        drug_block,
        cell_block,
        gene_block,
        affinity,
    })
}

impl SyntheticFixture {
    pub fn affinity_of(&self, drug: usize, cell: usize) -> f64 {
        self.affinity[drug * self.raw.response.cells.len() + cell]
    }

    /// Writes the bundle as tab-separated files in `dir` and returns their
    /// locations: response, expression, a `drug, gene` target list,
    /// fingerprints, and the ground-truth affinities.
    pub fn write(&self, dir: &Path) -> Result<DataPaths, EvalError> {
        let r = &self.raw;
        let m = r.response.cells.len();
        let response = format_table("drug", &r.response.drugs, &r.response.cells, |d, c| {
            if r.response.observed[d * m + c] {
                r.response.values[d * m + c].to_string()
            } else {
                "NA".into()
            }
        });
        let l = r.expression.genes.len();
        let expression = format_table("cell", &r.expression.cells, &r.expression.genes, |c, g| {
            r.expression.values[c * l + g].to_string()
        });
        let mut dti = String::from("drug\tgene\n");
        for (d, drug) in r.dti.drugs.iter().enumerate() {
            for (g, gene) in r.dti.genes.iter().enumerate() {
                if r.dti.is_known(d, g) {
                    dti.push_str(&format!("{drug}\t{gene}\n"));
                }
            }
        }
        let o = r.fingerprints.nbits;
        let bit_names: Vec<String> = (0..o).map(|b| format!("b{b}")).collect();
        let fps = format_table("drug", &r.fingerprints.drugs, &bit_names, |d, b| {
            (r.fingerprints.bits[d * o + b] as u8).to_string()
        });
        let truth = format_table("drug", &r.response.drugs, &r.response.cells, |d, c| {
            self.affinity[d * m + c].to_string()
        });
        let paths = DataPaths {
            response: dir.join("response.tsv"),
            expression: dir.join("expression.tsv"),
            dti: dir.join("dti.tsv"),
            fingerprints: Some(dir.join("fingerprints.tsv")),
            ..DataPaths::default()
        };
        write_text(&paths.response, &response)?;
        write_text(&paths.expression, &expression)?;
        write_text(&paths.dti, &dti)?;
        write_text(paths.fingerprints.as_ref().expect("set above"), &fps)?;
        write_text(&dir.join("affinity.tsv"), &truth)?;
        Ok(paths)
    }
}
