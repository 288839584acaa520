use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use super::InterpretError;
use crate::table::read_records;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSet {
    pub name: String,
    /// Uppercased, deduplicated, in first-seen order.
    pub genes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSetCollection {
    pub source: String,
    pub sets: Vec<GeneSet>,
}

/// Reads a GMT file: one set per line, `name <TAB> description <TAB> genes...`.
pub fn parse_gmt(path: &Path) -> Result<GeneSetCollection, InterpretError> {
    let text = std::fs::read_to_string(path).map_err(|e| InterpretError::Gmt {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_gmt_str(&text, &source).map_err(|(line, msg)| InterpretError::Gmt {
        path: path.display().to_string(),
        line,
        msg,
    })
}

fn parse_gmt_str(text: &str, source: &str) -> Result<GeneSetCollection, (usize, String)> {
    let mut sets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err((
                i + 1,
                format!("expected at least 3 fields, found {}", fields.len()),
            ));
        }
        let mut seen = HashSet::new();
        let genes: Vec<String> = fields[2..]
            .iter()
            .map(|g| g.trim().to_uppercase())
            .filter(|g| !g.is_empty() && seen.insert(g.clone()))
            .collect();
        if genes.is_empty() {
            return Err((i + 1, format!("set {} has no genes", fields[0])));
        }
        sets.push(GeneSet {
            name: fields[0].trim().to_string(),
            genes,
        });
    }
    if sets.is_empty() {
        return Err((0, "no gene sets".into()));
    }
    Ok(GeneSetCollection {
        source: source.to_string(),
        sets,
    })
}

fn binom_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

/// `P(X >= k)` for `X ~ Hypergeometric(N, K, n)`: the chance that `n` draws
/// without replacement from `N` items, `K` of them marked, include at least
/// `k` marked ones. Exact integer arithmetic when it fits in 128 bits.
pub fn hypergeom_upper_tail(big_n: u64, big_k: u64, n: u64, k: u64) -> f64 {
    assert!(
        big_k <= big_n && n <= big_n,
        "invalid hypergeometric parameters"
    );
    let lo = k.max((n + big_k).saturating_sub(big_n));
    let hi = n.min(big_k);
    if lo > hi {
        return 0.0;
    }
    if k <= (n + big_k).saturating_sub(big_n) {
        return 1.0;
    }
    let exact = (|| {
        let total = binom_u128(big_n, n)?;
        let mut num: u128 = 0;
        for i in lo..=hi {
            let t = binom_u128(big_k, i)?.checked_mul(binom_u128(big_n - big_k, n - i)?)?;
            num = num.checked_add(t)?;
        }
        Some(num as f64 / total as f64)
    })();
    if let Some(p) = exact {
        return p;
    }
    let ln_total = ln_binomial(big_n, n);
    let terms: Vec<f64> = (lo..=hi)
        .map(|i| ln_binomial(big_k, i) + ln_binomial(big_n - big_k, n - i) - ln_total)
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p = max.exp() * terms.iter().map(|t| (t - max).exp()).sum::<f64>();
    p.min(1.0)
}

/// Benjamini-Hochberg step-up adjustment; output is in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p[i] * (m as f64 / (rank + 1) as f64));
        q[i] = running.min(1.0);
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrichment {
    pub set: String,
    pub overlap: usize,
    pub set_size: usize,
    pub query_size: usize,
    pub universe: usize,
    pub p: f64,
    pub q: f64,
}

impl Enrichment {
    pub fn significant(&self) -> bool {
        self.q < 0.05
    }
}

/// Over-representation of `query` in each set of `collection`, relative to
/// `universe`, with BH adjustment across the sets. Gene matching ignores case.
pub fn ora(
    query: &[String],
    collection: &GeneSetCollection,
    universe: &[String],
) -> Result<Vec<Enrichment>, InterpretError> {
    let universe: BTreeSet<String> = universe.iter().map(|g| g.to_uppercase()).collect();
    let query: BTreeSet<String> = query.iter().map(|g| g.to_uppercase()).collect();
    if query.is_empty() {
        return Err(InterpretError::EmptyQuery);
    }
    if let Some(g) = query.iter().find(|g| !universe.contains(*g)) {
        return Err(InterpretError::NotInUniverse(g.clone()));
    }
    let big_n = universe.len();
    let mut out: Vec<Enrichment> = collection
        .sets
        .iter()
        .map(|s| {
            let members: BTreeSet<&String> =
                s.genes.iter().filter(|g| universe.contains(*g)).collect();
            let overlap = query.iter().filter(|g| members.contains(g)).count();
            Enrichment {
                set: s.name.clone(),
                overlap,
                set_size: members.len(),
                query_size: query.len(),
                universe: big_n,
                p: hypergeom_upper_tail(
                    big_n as u64,
                    members.len() as u64,
                    query.len() as u64,
                    overlap as u64,
                ),
                q: 0.0,
            }
        })
        .collect();
    let q = benjamini_hochberg(&out.iter().map(|e| e.p).collect::<Vec<_>>());
    out.iter_mut().zip(q).for_each(|(e, q)| e.q = q);
    Ok(out)
}

/// Drug-to-group labels from a two-column `drug, group` file.
pub fn load_moa(path: &Path) -> Result<HashMap<String, String>, InterpretError> {
    Ok(read_records(path)?
        .into_iter()
        .skip(1)
        .filter(|r| r.len() >= 2)
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect())
}

/// For every gene set, how many drugs are significantly enriched in it,
/// split by the drugs' mechanism-of-action label (`"other"` if unlabeled).
/// Returns `set -> moa -> count`, covering every set and label present.
pub fn moa_summary(
    per_drug: &[(String, Vec<Enrichment>)],
    moa: &HashMap<String, String>,
) -> BTreeMap<String, BTreeMap<String, usize>> {
    let label = |d: &str| moa.get(d).cloned().unwrap_or_else(|| "other".into());
    let labels: BTreeSet<String> = per_drug.iter().map(|(d, _)| label(d)).collect();
    let mut out: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (drug, results) in per_drug {
        let m = label(drug);
        let mut counted = HashSet::new();
        for r in results {
            let row = out
                .entry(r.set.clone())
                .or_insert_with(|| labels.iter().map(|l| (l.clone(), 0)).collect());
            if r.significant() && counted.insert(r.set.clone()) {
                *row.get_mut(&m).expect("label present") += 1;
            }
        }
    }
    out
}

pub fn moa_summary_tsv(summary: &BTreeMap<String, BTreeMap<String, usize>>) -> String {
    let labels: BTreeSet<&String> = summary.values().flat_map(|m| m.keys()).collect();
    let mut s = String::from("gene_set");
    for l in &labels {
        s.push('\t');
        s.push_str(l);
    }
    s.push('\n');
    for (set, row) in summary {
        s.push_str(set);
        for l in &labels {
            s.push_str(&format!("\t{}", row.get(*l).copied().unwrap_or(0)));
        }
        s.push('\n');
    }
    s
}

pub fn enrichment_tsv(per_drug: &[(String, Vec<Enrichment>)]) -> String {
    let mut s = String::from("drug\tgene_set\toverlap\tset_size\tquery_size\tuniverse\tp\tq\n");
    for (drug, results) in per_drug {
        for r in results {
            s.push_str(&format!(
                "{drug}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.set, r.overlap, r.set_size, r.query_size, r.universe, r.p, r.q
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn genes(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hypergeometric_examples() {
        assert_eq!(hypergeom_upper_tail(10, 4, 5, 3), 66.0 / 252.0);
        assert_eq!(hypergeom_upper_tail(10, 4, 5, 0), 1.0);
        assert_eq!(hypergeom_upper_tail(10, 4, 10, 4), 1.0);
        let big = hypergeom_upper_tail(20000, 200, 100, 5);
        assert!(big > 0.0 && big < 0.1);
    }

    #[test]
    fn gmt_parsing() {
        let c = parse_gmt_str("A\tdesc\tegfr\tEGFR\tkras\nB\t\tTP53\n", "h").unwrap();
        assert_eq!(c.sets.len(), 2);
        assert_eq!(c.sets[0].genes, genes(&["EGFR", "KRAS"]));
        assert!(parse_gmt_str("", "h").is_err());
        assert_eq!(parse_gmt_str("A\tonly\n", "h").unwrap_err().0, 1);
    }

    #[test]
    fn bh_step_up() {
        let q = benjamini_hochberg(&[0.01, 0.04, 0.03, 0.2]);
        let expect = [0.04, 0.16 / 3.0, 0.16 / 3.0, 0.2];
        for (a, b) in q.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{q:?}");
        }
    }

    #[test]
    fn ora_and_summary() {
        let universe = genes(&["A", "B", "C", "D", "E", "F", "G", "H", "I", "J"]);
        let c = GeneSetCollection {
            source: "t".into(),
            sets: vec![
                GeneSet {
                    name: "S1".into(),
                    genes: genes(&["A", "B", "C", "D", "ZZZ"]),
                },
                GeneSet {
                    name: "S2".into(),
                    genes: genes(&["J"]),
                },
            ],
        };
        let r = ora(&genes(&["a", "b", "c", "E", "F"]), &c, &universe).unwrap();
        assert_eq!((r[0].overlap, r[0].set_size, r[0].query_size), (3, 4, 5));
        assert_eq!(r[0].p, 66.0 / 252.0);
        assert_eq!(r[1].p, 1.0);
        assert!(ora(&[], &c, &universe).is_err());
        assert!(ora(&genes(&["Q"]), &c, &universe).is_err());

        let none = moa_summary(&[("d1".into(), r.clone())], &HashMap::new());
        assert!(none.values().all(|m| m.values().all(|&n| n == 0)));
        let mut sig = r;
        sig.iter_mut().for_each(|e| e.q = 0.01);
        let moa: HashMap<String, String> = [("d1".to_string(), "kinase".to_string())].into();
        let s = moa_summary(&[("d1".into(), sig.clone()), ("d2".into(), sig)], &moa);
        assert_eq!(s["S1"]["kinase"], 1);
        assert_eq!(s["S2"]["other"], 1);
        assert!(moa_summary_tsv(&s).starts_with("gene_set\tkinase\tother\n"));
    }
}
