use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, DtiMatrix, ExpressionMatrix, FingerprintMatrix, ResponseMatrix};
use crate::smiles::{morgan_fingerprint, parse_smiles};
use crate::table::{read_records, read_table, Table};

/// Input file locations. Exactly one of `fingerprints` or `smiles` must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Drugs x cell lines, raw IC50.
    pub response: PathBuf,
    /// Cell lines x genes.
    pub expression: PathBuf,
    /// Either a drugs x genes 0/1 matrix or a two-column `drug, gene` list.
    pub dti: PathBuf,
    #[serde(default)]
    pub fingerprints: Option<PathBuf>,
    #[serde(default)]
    pub smiles: Option<PathBuf>,
    #[serde(default)]
    pub drug_allowlist: Option<PathBuf>,
    #[serde(default)]
    pub fingerprint_radius: Option<usize>,
}

/// What alignment removed, by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub drugs_without_fingerprint: Vec<String>,
    pub drugs_not_allowlisted: Vec<String>,
    pub cells_without_expression: Vec<String>,
    pub expression_cells_without_response: Vec<String>,
    pub fingerprint_drugs_without_response: Vec<String>,
    pub dti_genes_without_expression: Vec<String>,
    pub dti_drugs_without_response: Vec<String>,
    /// Drugs with no entry in the DTI file; they get all-unknown rows.
    pub drugs_without_dti: Vec<String>,
    pub duplicate_response_rows: usize,
    pub imputed_expression_values: usize,
}

impl AlignmentReport {
    pub fn log(&self) {
        let items: [(&str, usize); 7] = [
            (
                "response drugs without fingerprints",
                self.drugs_without_fingerprint.len(),
            ),
            (
                "drugs outside the allowlist",
                self.drugs_not_allowlisted.len(),
            ),
            (
                "response cells without expression",
                self.cells_without_expression.len(),
            ),
            (
                "expression cells without response",
                self.expression_cells_without_response.len(),
            ),
            (
                "DTI genes absent from expression",
                self.dti_genes_without_expression.len(),
            ),
            ("drugs without any DTI entry", self.drugs_without_dti.len()),
            (
                "duplicate response rows averaged",
                self.duplicate_response_rows,
            ),
        ];
        for (what, count) in items {
            if count > 0 {
                log::info!("alignment: dropped or adjusted {count} {what}");
            }
        }
    }
}

/// Aligned raw matrices, before task preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub response: ResponseMatrix,
    pub expression: ExpressionMatrix,
    pub dti: DtiMatrix,
    pub fingerprints: FingerprintMatrix,
    pub report: AlignmentReport,
}

fn invalid(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Invalid {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Collapses duplicate row identifiers by averaging observed values.
fn merge_duplicate_rows(t: Table) -> (Table, usize) {
    let cols = t.col_ids.len();
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, (Vec<f64>, Vec<usize>)> = HashMap::new();
    for (r, id) in t.row_ids.iter().enumerate() {
        let entry = acc.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (vec![0.0; cols], vec![0; cols])
        });
        for c in 0..cols {
            if let Some(v) = t.get(r, c) {
                entry.0[c] += v;
                entry.1[c] += 1;
            }
        }
    }
    let dupes = t.row_ids.len() - order.len();
    let values = order
        .iter()
        .flat_map(|id| {
            let (sum, cnt) = &acc[id];
            (0..cols)
                .map(|c| (cnt[c] > 0).then(|| sum[c] / cnt[c] as f64))
                .collect::<Vec<_>>()
        })
        .collect();
    (
        Table {
            row_ids: order,
            col_ids: t.col_ids,
            values,
        },
        dupes,
    )
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect()
}

/// Known `(drug, gene)` pairs plus the gene columns in file order.
type DtiPairs = (Vec<(String, String)>, Vec<String>);

fn read_dti(path: &Path) -> Result<DtiPairs, DataError> {
    let records = read_records(path)?;
    let Some(header) = records.first() else {
        return Err(invalid(path, "empty DTI file"));
    };
    let pair_list = header.len() == 2
        && records[1..]
            .iter()
            .any(|r| r.len() == 2 && r[1].parse::<f64>().is_err());
    if pair_list {
        let mut pairs = Vec::new();
        for (i, r) in records.iter().enumerate().skip(1) {
            if r.len() != 2 {
                return Err(invalid(
                    path,
                    format!("line {}: expected drug and gene", i + 1),
                ));
            }
            pairs.push((r[0].clone(), r[1].clone()));
        }
        let genes = pairs.iter().map(|p| p.1.clone()).collect::<BTreeSet<_>>();
        return Ok((pairs, genes.into_iter().collect()));
    }
    let t = read_table(path)?;
    let mut pairs = Vec::new();
    for (r, d) in t.row_ids.iter().enumerate() {
        for (c, g) in t.col_ids.iter().enumerate() {
            if t.get(r, c).is_some_and(|v| v != 0.0) {
                pairs.push((d.clone(), g.clone()));
            }
        }
    }
    Ok((pairs, t.col_ids))
}

/// Reads a two-column `drug_id, smiles` file and computes fingerprints.
pub fn fingerprints_from_smiles(
    path: &Path,
    radius: usize,
    nbits: usize,
) -> Result<FingerprintMatrix, DataError> {
    let records = read_records(path)?;
    let mut drugs = Vec::new();
    let mut bits = Vec::new();
    for (i, r) in records.iter().enumerate().skip(1) {
        if r.len() < 2 {
            return Err(invalid(
                path,
                format!("line {}: expected drug id and SMILES", i + 1),
            ));
        }
        let mol = parse_smiles(&r[1]).map_err(|source| DataError::Smiles {
            drug: r[0].clone(),
            source,
        })?;
        drugs.push(r[0].clone());
        bits.extend(morgan_fingerprint(&mol, radius, nbits).to_f64());
    }
    Ok(FingerprintMatrix { drugs, nbits, bits })
}

fn read_fingerprints(path: &Path) -> Result<FingerprintMatrix, DataError> {
    let t = read_table(path)?;
    let nbits = t.col_ids.len();
    let mut bits = Vec::with_capacity(t.values.len());
    for v in &t.values {
        match v {
            Some(x) if *x == 0.0 || *x == 1.0 => bits.push(*x),
            other => {
                return Err(invalid(
                    path,
                    format!("fingerprint bit must be 0 or 1, got {other:?}"),
                ))
            }
        }
    }
    Ok(FingerprintMatrix {
        drugs: t.row_ids,
        nbits,
        bits,
    })
}

/// One identifier per line (first field); a header line is optional and
/// skipped if it matches `header`.
fn read_id_list(path: &Path, header: &str) -> Result<HashSet<String>, DataError> {
    Ok(read_records(path)?
        .into_iter()
        .filter_map(|r| r.into_iter().next())
        .filter(|s| !s.eq_ignore_ascii_case(header))
        .collect())
}

pub fn load_allowlist(path: &Path) -> Result<HashSet<String>, DataError> {
    read_id_list(path, "drug")
}

/// Two-column `identifier, preferred name` file.
pub fn load_aliases(path: &Path) -> Result<HashMap<String, String>, DataError> {
    let records = read_records(path)?;
    let mut out = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.len() < 2 {
            return Err(invalid(
                path,
                format!("line {}: expected two fields", i + 1),
            ));
        }
        if i == 0 && r[0].eq_ignore_ascii_case("id") {
            continue;
        }
        out.insert(r[0].clone(), r[1].clone());
    }
    Ok(out)
}

/// Loads every input file and aligns the matrices by identifier
/// intersection. Drugs keep response-file order, cells keep response-file
/// order, genes keep expression-file order.
pub fn load_matrices(paths: &DataPaths) -> Result<RawData, DataError> {
    let mut report = AlignmentReport::default();
    let (response, dupes) = merge_duplicate_rows(read_table(&paths.response)?);
    report.duplicate_response_rows = dupes;
    let expr = read_table(&paths.expression)?;
    let fps = match (&paths.fingerprints, &paths.smiles) {
        (Some(f), None) => read_fingerprints(f)?,
        (None, Some(s)) => fingerprints_from_smiles(
            s,
            paths
                .fingerprint_radius
                .unwrap_or(crate::smiles::DEFAULT_RADIUS),
            crate::smiles::DEFAULT_NBITS,
        )?,
        _ => {
            return Err(invalid(
                &paths.response,
                "exactly one of a fingerprint matrix or a SMILES file is required",
            ))
        }
    };
    let allow = paths
        .drug_allowlist
        .as_deref()
        .map(load_allowlist)
        .transpose()?;
    let (dti_pairs, dti_genes) = read_dti(&paths.dti)?;

    let fp_idx = index_of(&fps.drugs);
    let expr_idx = index_of(&expr.row_ids);
    let mut drugs = Vec::new();
    let mut drug_rows = Vec::new();
    for (r, d) in response.row_ids.iter().enumerate() {
        if !fp_idx.contains_key(d.as_str()) {
            report.drugs_without_fingerprint.push(d.clone());
        } else if allow.as_ref().is_some_and(|a| !a.contains(d)) {
            report.drugs_not_allowlisted.push(d.clone());
        } else {
            drugs.push(d.clone());
            drug_rows.push(r);
        }
    }
    let mut cells = Vec::new();
    let mut cell_cols = Vec::new();
    for (c, id) in response.col_ids.iter().enumerate() {
        if expr_idx.contains_key(id.as_str()) {
            cells.push(id.clone());
            cell_cols.push(c);
        } else {
            report.cells_without_expression.push(id.clone());
        }
    }
    if drugs.is_empty() {
        return Err(DataError::EmptyIntersection("drugs"));
    }
    if cells.is_empty() {
        return Err(DataError::EmptyIntersection("cell lines"));
    }
    let cell_set: HashSet<&str> = cells.iter().map(String::as_str).collect();
    report.expression_cells_without_response = expr
        .row_ids
        .iter()
        .filter(|c| !cell_set.contains(c.as_str()))
        .cloned()
        .collect();
    let drug_set: HashSet<&str> = drugs.iter().map(String::as_str).collect();
    let response_drugs: HashSet<&str> = response.row_ids.iter().map(String::as_str).collect();
    report.fingerprint_drugs_without_response = fps
        .drugs
        .iter()
        .filter(|d| !response_drugs.contains(d.as_str()))
        .cloned()
        .collect();

    let m = cells.len();
    let mut values = Vec::with_capacity(drugs.len() * m);
    let mut observed = Vec::with_capacity(drugs.len() * m);
    for &r in &drug_rows {
        for &c in &cell_cols {
            let v = response.get(r, c);
            values.push(v.unwrap_or(0.0));
            observed.push(v.is_some());
        }
    }

    let genes = expr.col_ids.clone();
    let l = genes.len();
    let mut evals = Vec::with_capacity(m * l);
    let mut col_mean = vec![0.0; l];
    for (g, mean) in col_mean.iter_mut().enumerate() {
        let obs: Vec<f64> = cells
            .iter()
            .filter_map(|c| expr.get(expr_idx[c.as_str()], g))
            .collect();
        *mean = if obs.is_empty() {
            0.0
        } else {
            obs.iter().sum::<f64>() / obs.len() as f64
        };
    }
    for c in &cells {
        let r = expr_idx[c.as_str()];
        for (g, mean) in col_mean.iter().enumerate() {
            evals.push(expr.get(r, g).unwrap_or_else(|| {
                report.imputed_expression_values += 1;
                *mean
            }));
        }
    }

    let gene_idx = index_of(&genes);
    let drug_idx = index_of(&drugs);
    let mut known = vec![false; drugs.len() * l];
    let mut with_dti: HashSet<&str> = HashSet::new();
    let mut missing_genes = BTreeSet::new();
    let mut stray_drugs = BTreeSet::new();
    for (d, g) in &dti_pairs {
        match (drug_idx.get(d.as_str()), gene_idx.get(g.as_str())) {
            (Some(&di), Some(&gi)) => {
                known[di * l + gi] = true;
                with_dti.insert(d.as_str());
            }
            (None, _) if !drug_set.contains(d.as_str()) => {
                stray_drugs.insert(d.clone());
            }
            _ => {}
        }
        if !gene_idx.contains_key(g.as_str()) {
            missing_genes.insert(g.clone());
        }
    }
    for g in &dti_genes {
        if !gene_idx.contains_key(g.as_str()) {
            missing_genes.insert(g.clone());
        }
    }
    report.dti_genes_without_expression = missing_genes.into_iter().collect();
    report.dti_drugs_without_response = stray_drugs.into_iter().collect();
    report.drugs_without_dti = drugs
        .iter()
        .filter(|d| !with_dti.contains(d.as_str()))
        .cloned()
        .collect();

    let fp_rows: Vec<usize> = drugs.iter().map(|d| fp_idx[d.as_str()]).collect();
    let fingerprints = fps.select(&fp_rows);

    report.log();
    Ok(RawData {
        response: ResponseMatrix {
            drugs: drugs.clone(),
            cells: cells.clone(),
            values,
            observed,
        },
        expression: ExpressionMatrix {
            cells,
            genes: genes.clone(),
            values: evals,
        },
        dti: DtiMatrix {
            drugs,
            genes,
            known,
        },
        fingerprints,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture(dir: &Path) -> DataPaths {
        fs::write(
            dir.join("resp.csv"),
            "drug,c1,c2,c3\nd1,1.0,2.0,\nd2,0.5,,4\nd3,1,1,1\nd1,3.0,2.0,5\n",
        )
        .unwrap();
        fs::write(
            dir.join("expr.tsv"),
            "cell\tg1\tg2\nc1\t1\t2\nc2\t3\tNA\nc9\t0\t0\n",
        )
        .unwrap();
        fs::write(dir.join("dti.csv"), "drug,gene\nd1,g2\nd2,gX\n").unwrap();
        fs::write(dir.join("fp.csv"), "drug,b0,b1\nd1,1,0\nd2,0,1\n").unwrap();
        DataPaths {
            response: dir.join("resp.csv"),
            expression: dir.join("expr.tsv"),
            dti: dir.join("dti.csv"),
            fingerprints: Some(dir.join("fp.csv")),
            ..Default::default()
        }
    }

    #[test]
    fn aligns_by_intersection() {
        let dir = tempfile::tempdir().unwrap();
        let raw = load_matrices(&write_fixture(dir.path())).unwrap();
        assert_eq!(raw.response.drugs, ["d1", "d2"]);
        assert_eq!(raw.response.cells, ["c1", "c2"]);
        assert_eq!(raw.report.drugs_without_fingerprint, ["d3"]);
        assert_eq!(raw.report.cells_without_expression, ["c3"]);
        assert_eq!(raw.report.expression_cells_without_response, ["c9"]);
        assert_eq!(raw.report.dti_genes_without_expression, ["gX"]);
        assert_eq!(raw.report.duplicate_response_rows, 1);
        // duplicates averaged: d1/c1 = (1 + 3) / 2
        assert_eq!(raw.response.get(0, 0), Some(2.0));
        assert_eq!(raw.response.get(1, 1), None);
        assert!(raw.dti.is_known(0, 1));
        assert_eq!(raw.dti.known_count(), 1);
        assert_eq!(raw.expression.get(1, 1), 2.0);
        assert_eq!(raw.report.imputed_expression_values, 1);
    }

    #[test]
    fn loading_twice_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_fixture(dir.path());
        assert_eq!(
            load_matrices(&paths).unwrap(),
            load_matrices(&paths).unwrap()
        );
    }

    #[test]
    fn dti_matrix_form_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = write_fixture(dir.path());
        fs::write(
            dir.path().join("dti_m.tsv"),
            "drug\tg1\tg2\nd1\t0\t1\nd2\t0\t0\n",
        )
        .unwrap();
        paths.dti = dir.path().join("dti_m.tsv");
        let raw = load_matrices(&paths).unwrap();
        assert!(raw.dti.is_known(0, 1));
        assert_eq!(raw.dti.known_count(), 1);
        assert_eq!(raw.report.drugs_without_dti, ["d2"]);
    }

    #[test]
    fn smiles_file_and_allowlist() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = write_fixture(dir.path());
        fs::write(
            dir.path().join("smi.csv"),
            "drug,smiles\nd1,CCO\nd2,c1ccccc1\nd3,CC\n",
        )
        .unwrap();
        fs::write(dir.path().join("allow.txt"), "drug\nd2\nd3\n").unwrap();
        paths.fingerprints = None;
        paths.smiles = Some(dir.path().join("smi.csv"));
        paths.drug_allowlist = Some(dir.path().join("allow.txt"));
        let raw = load_matrices(&paths).unwrap();
        assert_eq!(raw.response.drugs, ["d2", "d3"]);
        assert_eq!(raw.fingerprints.nbits, 2048);
        assert_eq!(raw.report.drugs_not_allowlisted, ["d1"]);
    }

    #[test]
    fn missing_both_fingerprint_sources_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = write_fixture(dir.path());
        paths.fingerprints = None;
        assert!(matches!(
            load_matrices(&paths),
            Err(DataError::Invalid { .. })
        ));
    }
}
