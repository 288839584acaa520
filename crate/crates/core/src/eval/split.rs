use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::{Dataset, LabeledEntry, LabeledResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    RandomMaskCv,
    LeaveDrugOut,
    LeaveCellOut,
    ZeroShot,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::RandomMaskCv => "random_mask_cv",
            SplitKind::LeaveDrugOut => "leave_drug_out",
            SplitKind::LeaveCellOut => "leave_cell_out",
            SplitKind::ZeroShot => "zero_shot",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random_mask_cv" | "random" | "cv" => Ok(SplitKind::RandomMaskCv),
            "leave_drug_out" | "lodo" => Ok(SplitKind::LeaveDrugOut),
            "leave_cell_out" | "loco" => Ok(SplitKind::LeaveCellOut),
            "zero_shot" => Ok(SplitKind::ZeroShot),
            other => Err(format!("unknown split kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// The held-out drug or cell index for leave-one-out folds.
    pub held: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Invalid(format!("split plan: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitOptions {
    pub folds: usize,
    /// Cap on the number of held-out entities for leave-one-out splits;
    /// a seeded sample is drawn when fewer than all are requested.
    pub max_entities: Option<usize>,
    /// Leave-one-out: skip entities without labeled pairs (with a warning)
    /// instead of failing.
    pub skip_empty: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            max_entities: None,
            skip_empty: false,
        }
    }
}

/// Builds a split over the observed pairs of `labels`.
///
/// Zero-shot splits pair two datasets and are built with
/// [`align_zero_shot`] instead.
pub fn make_split(
    kind: SplitKind,
    labels: &LabeledResponse,
    seed: u64,
    opts: &SplitOptions,
) -> Result<SplitPlan, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Invalid("no labeled pairs to split".into()));
    }
    let pairs = labels.pairs();
    let folds = match kind {
        SplitKind::RandomMaskCv => random_folds(&pairs, seed, opts.folds)?,
        SplitKind::LeaveDrugOut => {
            leave_one_out(&pairs, labels.drugs.len(), |p| p.0, "drug", seed, opts)?
        }
        SplitKind::LeaveCellOut => {
            leave_one_out(&pairs, labels.cells.len(), |p| p.1, "cell", seed, opts)?
        }
        SplitKind::ZeroShot => {
            return Err(EvalError::Invalid(
                "zero-shot splits need a second dataset".into(),
            ))
        }
    };
    Ok(SplitPlan { kind, seed, folds })
}

fn random_folds(pairs: &[(usize, usize)], seed: u64, k: usize) -> Result<Vec<Fold>, EvalError> {
    if k < 2 || k > pairs.len() {
        return Err(EvalError::Invalid(format!(
            "cannot make {k} folds from {} pairs",
            pairs.len()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assign = vec![0; pairs.len()];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = (0..pairs.len()).partition(|&i| assign[i] == f);
            Fold {
                train: train.into_iter().map(|i| pairs[i]).collect(),
                test: test.into_iter().map(|i| pairs[i]).collect(),
                held: None,
            }
        })
        .collect())
}

fn leave_one_out(
    pairs: &[(usize, usize)],
    count: usize,
    key: impl Fn(&(usize, usize)) -> usize,
    what: &'static str,
    seed: u64,
    opts: &SplitOptions,
) -> Result<Vec<Fold>, EvalError> {
    let mut by_entity: BTreeMap<usize, usize> = (0..count).map(|e| (e, 0)).collect();
    for p in pairs {
        *by_entity.entry(key(p)).or_default() += 1;
    }
    if let Some((&e, _)) = by_entity.iter().find(|(_, &n)| n == 0) {
        if !opts.skip_empty {
            return Err(EvalError::EmptyEntity { what, index: e });
        }
    }
    let mut entities = Vec::new();
    for (e, n) in by_entity {
        if n == 0 {
            log::warn!("skipping {what} {e}: no labeled pairs");
        } else {
            entities.push(e);
        }
    }
    if let Some(cap) = opts.max_entities {
        if cap < entities.len() {
            entities.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            entities.truncate(cap);
            entities.sort_unstable();
        }
    }
    Ok(entities
        .into_iter()
        .map(|e| {
            let (test, train) = pairs.iter().partition(|p| key(p) == e);
            Fold {
                train,
                test,
                held: Some(e),
            }
        })
        .collect())
}

/// Seeded random hold-out of `ceil(fraction * len)` pairs (at least one pair
/// stays in training). Returns `(train, held_out)`.
pub fn holdout(
    labels: &LabeledResponse,
    fraction: f64,
    seed: u64,
) -> (Vec<LabeledEntry>, Vec<LabeledEntry>) {
    let len = labels.len();
    let k = ((fraction.clamp(0.0, 1.0) * len as f64).ceil() as usize).min(len.saturating_sub(1));
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0d0d_da7a));
    let mut held = vec![false; len];
    order[..k].iter().for_each(|&i| held[i] = true);
    let (val, train): (Vec<_>, Vec<_>) = labels
        .entries
        .iter()
        .enumerate()
        .partition(|(i, _)| held[*i]);
    (
        train.into_iter().map(|(_, e)| *e).collect(),
        val.into_iter().map(|(_, e)| *e).collect(),
    )
}

/// One evaluation pair of a zero-shot transfer, indexed into the aligned
/// training dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotPair {
    pub drug: usize,
    pub cell: usize,
    pub value: f64,
    /// The pair was observed in the training dataset.
    pub seen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotAlignment {
    /// The training dataset restricted to the shared drugs, cells and genes.
    pub train: Dataset,
    pub test: Vec<ZeroShotPair>,
}

impl ZeroShotAlignment {
    /// A single-fold plan: every training pair against every evaluation pair.
    pub fn plan(&self, seed: u64) -> SplitPlan {
        SplitPlan {
            kind: SplitKind::ZeroShot,
            seed,
            folds: vec![Fold {
                train: self.train.labels.pairs(),
                test: self.test.iter().map(|p| (p.drug, p.cell)).collect(),
                held: None,
            }],
        }
    }
}

fn shared(a: &[String], b: &[String]) -> (Vec<usize>, HashMap<usize, usize>) {
    let pos: HashMap<&str, usize> = b.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut keep = Vec::new();
    let mut b_to_new = HashMap::new();
    for (i, s) in a.iter().enumerate() {
        if let Some(&j) = pos.get(s.as_str()) {
            b_to_new.insert(j, keep.len());
            keep.push(i);
        }
    }
    (keep, b_to_new)
}

/// Restricts `train` to the drugs, cells and genes it shares with `test`
/// and maps the evaluation pairs of `test` onto that index space.
pub fn align_zero_shot(train: &Dataset, test: &Dataset) -> Result<ZeroShotAlignment, EvalError> {
    let (drugs, test_drug) = shared(&train.labels.drugs, &test.labels.drugs);
    let (cells, test_cell) = shared(&train.labels.cells, &test.labels.cells);
    let (genes, _) = shared(&train.expression.genes, &test.expression.genes);
    for (what, keep) in [("drugs", &drugs), ("cell lines", &cells), ("genes", &genes)] {
        if keep.is_empty() {
            return Err(EvalError::NoOverlap(what));
        }
    }
    let aligned = train.subset(&drugs, &cells, &genes);
    let seen: HashSet<(usize, usize)> = aligned.labels.pairs().into_iter().collect();
    let pairs: Vec<ZeroShotPair> = test
        .labels
        .entries
        .iter()
        .filter_map(|e| {
            let drug = *test_drug.get(&e.drug)?;
            let cell = *test_cell.get(&e.cell)?;
            Some(ZeroShotPair {
                drug,
                cell,
                value: e.value,
                seen: seen.contains(&(drug, cell)),
            })
        })
        .collect();
    if pairs.is_empty() {
        return Err(EvalError::NoOverlap("drug-cell pairs"));
    }
    if aligned.labels.is_empty() {
        return Err(EvalError::NoOverlap("training pairs"));
    }
    Ok(ZeroShotAlignment {
        train: aligned,
        test: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabeledEntry, Task};

    fn labels(n: usize, m: usize, skip: impl Fn(usize, usize) -> bool) -> LabeledResponse {
        LabeledResponse {
            task: Task::Classification,
            drugs: (0..n).map(|d| format!("d{d}")).collect(),
            cells: (0..m).map(|c| format!("c{c}")).collect(),
            entries: (0..n)
                .flat_map(|d| (0..m).map(move |c| (d, c)))
                .filter(|&(d, c)| !skip(d, c))
                .map(|(drug, cell)| LabeledEntry {
                    drug,
                    cell,
                    value: ((drug + cell) % 2) as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn hundred_pairs_give_five_folds_of_twenty() {
        let l = labels(10, 10, |_, _| false);
        let plan = make_split(SplitKind::RandomMaskCv, &l, 4, &SplitOptions::default()).unwrap();
        assert_eq!(plan.folds.len(), 5);
        let mut all = HashSet::new();
        for f in &plan.folds {
            assert_eq!(f.test.len(), 20);
            assert_eq!(f.train.len(), 80);
            for p in &f.test {
                assert!(all.insert(*p));
                assert!(!f.train.contains(p));
            }
        }
        assert_eq!(all.len(), 100);
        assert_eq!(
            plan,
            make_split(SplitKind::RandomMaskCv, &l, 4, &SplitOptions::default()).unwrap()
        );
        assert_eq!(SplitPlan::from_json(&plan.to_json()).unwrap(), plan);
    }

    #[test]
    fn leave_drug_out_holds_all_pairs_of_the_drug() {
        let l = labels(4, 5, |d, c| d == 2 && c < 3);
        let plan = make_split(SplitKind::LeaveDrugOut, &l, 0, &SplitOptions::default()).unwrap();
        assert_eq!(plan.folds.len(), 4);
        let f = &plan.folds[2];
        assert_eq!(f.held, Some(2));
        assert_eq!(f.test, vec![(2, 3), (2, 4)]);
        assert!(f.train.iter().all(|p| p.0 != 2));
        let capped = SplitOptions {
            max_entities: Some(2),
            ..SplitOptions::default()
        };
        let plan = make_split(SplitKind::LeaveCellOut, &l, 0, &capped).unwrap();
        assert_eq!(plan.folds.len(), 2);
    }

    #[test]
    fn holdout_sizes_and_determinism() {
        let l = labels(5, 4, |_, _| false);
        let (train, val) = holdout(&l, 0.1, 3);
        assert_eq!((train.len(), val.len()), (18, 2));
        assert_eq!(holdout(&l, 0.1, 3), (train, val));
        assert_eq!(holdout(&l, 1.0, 3).0.len(), 1);
    }

    #[test]
    fn entity_without_pairs_is_an_error() {
        let l = labels(3, 3, |d, _| d == 1);
        assert!(matches!(
            make_split(SplitKind::LeaveDrugOut, &l, 0, &SplitOptions::default()),
            Err(EvalError::EmptyEntity {
                what: "drug",
                index: 1
            })
        ));
    }
}
