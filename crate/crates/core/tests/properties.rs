mod common;

use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drgt_core::dataset::{
    preprocess_classification, preprocess_regression, regression_filter, select_genes,
    ClassificationOptions, DtiMatrix, ExpressionMatrix, LabeledEntry, LabeledResponse,
    PercentileScope, RegressionOptions, ResponseMatrix, Task,
};
use drgt_core::eval::{auroc, holdout, make_split, r2, SplitKind, SplitOptions};
use drgt_core::graph::{
    assemble, build_cg, rbf_similarity, BlockEdge, DgMode, GraphOptions, NodeFeatures,
    SimilarityKind, SimilarityMatrix, StdConvention, UnifiedGraph,
};
use drgt_core::interpret::{benjamini_hochberg, hypergeom_upper_tail};
use drgt_core::model::{Activation, GraphDims, GtModel, Mode, ModelConfig, NormKind};
use drgt_core::numcore::{Tape, Tensor};
use drgt_core::pubmed::{
    Backend, ClientOptions, Clock, DiskCache, ManualClock, PubmedClient, Source, Transport,
    TransportError,
};
use drgt_core::smiles::{morgan_fingerprint, parse_smiles, write_smiles};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn brute_auroc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1.0 && lj == 0.0 {
                total += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / total
}

fn random_labels(seed: u64, n_drugs: usize, n_cells: usize, density: f64) -> LabeledResponse {
    let mut r = rng(seed);
    let mut entries = Vec::new();
    for d in 0..n_drugs {
        for c in 0..n_cells {
            if r.gen_bool(density) {
                entries.push(LabeledEntry {
                    drug: d,
                    cell: c,
                    value: f64::from(r.gen_bool(0.5) as u8),
                });
            }
        }
    }
    if entries.is_empty() {
        entries.push(LabeledEntry {
            drug: 0,
            cell: 0,
            value: 1.0,
        });
    }
    LabeledResponse {
        task: Task::Classification,
        drugs: (0..n_drugs).map(|d| format!("D{d}")).collect(),
        cells: (0..n_cells).map(|c| format!("C{c}")).collect(),
        entries,
    }
}

fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_equals_pairwise_count(
        pts in prop::collection::vec((0u8..6, any::<bool>()), 2..=12)
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| f64::from(p.0)).collect();
        let labels: Vec<f64> = pts.iter().map(|p| f64::from(p.1 as u8)).collect();
        let pos = labels.iter().filter(|&&l| l == 1.0).count();
        match auroc(&scores, &labels) {
            None => prop_assert!(pos == 0 || pos == labels.len()),
            Some(a) => prop_assert!((a - brute_auroc(&scores, &labels)).abs() <= 1e-12),
        }
    }

    #[test]
    fn auroc_ignores_increasing_maps(
        pts in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..=40),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let labels: Vec<f64> = pts.iter().map(|p| f64::from(p.1 as u8)).collect();
        let base = auroc(&scores, &labels);
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let expo: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        for mapped in [affine, expo, cubed] {
            let m = auroc(&mapped, &labels);
            prop_assert_eq!(base.is_some(), m.is_some());
            if let (Some(x), Some(y)) = (base, m) {
                prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn r2_ignores_joint_reordering(
        pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..=50),
        seed in any::<u64>(),
    ) {
        let y: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let pred: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.shuffle(&mut rng(seed));
        let y2: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let p2: Vec<f64> = order.iter().map(|&i| pred[i]).collect();
        match (r2(&y, &pred), r2(&y2, &p2)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
        if let Some(perfect) = r2(&y, &y) {
            prop_assert_eq!(perfect, 1.0);
        }
    }

    #[test]
    fn random_folds_partition_the_pairs(
        seed in any::<u64>(),
        folds in 2usize..=6,
        n in 3usize..12,
        m in 3usize..12,
    ) {
        let labels = random_labels(seed, n, m, 0.6);
        let opts = SplitOptions { folds, ..SplitOptions::default() };
        let plan = match make_split(SplitKind::RandomMaskCv, &labels, seed, &opts) {
            Ok(p) => p,
            Err(_) => {
                prop_assert!(labels.len() < folds);
                return Ok(());
            }
        };
        let all: BTreeSet<_> = labels.pairs().into_iter().collect();
        let mut seen = BTreeSet::new();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        for f in &plan.folds {
            let train: BTreeSet<_> = f.train.iter().copied().collect();
            let test: BTreeSet<_> = f.test.iter().copied().collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(train.union(&test).copied().collect::<BTreeSet<_>>(), all.clone());
            for p in test {
                prop_assert!(seen.insert(p), "pair {:?} tested twice", p);
            }
        }
        prop_assert_eq!(seen, all);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn leave_one_out_holds_out_whole_entities(seed in any::<u64>(), by_drug in any::<bool>()) {
        let labels = random_labels(seed, 6, 7, 0.5);
        let kind = if by_drug { SplitKind::LeaveDrugOut } else { SplitKind::LeaveCellOut };
        let opts = SplitOptions { skip_empty: true, ..SplitOptions::default() };
        let plan = make_split(kind, &labels, seed, &opts).unwrap();
        let key = |p: &(usize, usize)| if by_drug { p.0 } else { p.1 };
        for f in &plan.folds {
            let held = f.held.unwrap();
            prop_assert!(!f.test.is_empty());
            prop_assert!(f.test.iter().all(|p| key(p) == held));
            prop_assert!(f.train.iter().all(|p| key(p) != held));
            prop_assert_eq!(f.train.len() + f.test.len(), labels.len());
        }
    }

    #[test]
    fn holdout_is_a_partition(seed in any::<u64>(), fraction in 0.0f64..1.0) {
        let labels = random_labels(seed, 5, 9, 0.7);
        let (train, val) = holdout(&labels, fraction, seed);
        prop_assert_eq!(train.len() + val.len(), labels.len());
        prop_assert!(!train.is_empty());
        let t: HashSet<_> = train.iter().map(|e| (e.drug, e.cell)).collect();
        prop_assert!(val.iter().all(|e| !t.contains(&(e.drug, e.cell))));
        let expected = ((fraction * labels.len() as f64).ceil() as usize).min(labels.len() - 1);
        prop_assert_eq!(val.len(), expected);
        prop_assert_eq!(holdout(&labels, fraction, seed), (train, val));
    }

    #[test]
    fn bh_is_monotone_and_dominates(p in prop::collection::vec(0.0f64..=1.0, 1..60)) {
        let q = benjamini_hochberg(&p);
        prop_assert_eq!(q.len(), p.len());
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        for w in order.windows(2) {
            prop_assert!(q[w[0]] <= q[w[1]]);
        }
        for i in 0..p.len() {
            prop_assert!(q[i] >= p[i] && q[i] <= 1.0, "p {} q {}", p[i], q[i]);
        }
    }

    #[test]
    fn hypergeometric_tail_matches_enumeration(
        big_n in 1u64..=30,
        a in 0u64..=30,
        b in 0u64..=30,
        c in 0u64..=30,
    ) {
        let big_k = a % (big_n + 1);
        let n = b % (big_n + 1);
        let k = c % (n.min(big_k) + 1);
        let total = choose(big_n, n);
        let hits: u128 = (k..=n.min(big_k))
            .map(|i| choose(big_k, i) * choose(big_n - big_k, n - i))
            .sum();
        let exact = hits as f64 / total as f64;
        let got = hypergeom_upper_tail(big_n, big_k, n, k);
        prop_assert!((got - exact).abs() <= 1e-12 * exact.max(1e-300), "{} vs {}", got, exact);
    }

    #[test]
    fn similarity_is_a_kernel(
        seed in any::<u64>(),
        rows in 1usize..10,
        cols in 1usize..20,
    ) {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..rows * cols).map(|_| r.gen_range(0.0..1.0)).collect();
        let s = rbf_similarity(SimilarityKind::Cell, rows, cols, &x).unwrap();
        for i in 0..rows {
            prop_assert_eq!(s.values.get(i, i), 1.0);
            for j in 0..rows {
                let v = s.values.get(i, j);
                prop_assert!(v > 0.0 && v <= 1.0);
                prop_assert_eq!(v, s.values.get(j, i));
            }
        }
    }
}

fn expression(seed: u64, m: usize, l: usize) -> ExpressionMatrix {
    let mut r = rng(seed);
    ExpressionMatrix {
        cells: (0..m).map(|c| format!("C{c}")).collect(),
        genes: (0..l).map(|g| format!("G{g}")).collect(),
        values: (0..m * l).map(|_| r.gen_range(-3.0..3.0)).collect(),
    }
}

fn response(seed: u64, n: usize, m: usize) -> ResponseMatrix {
    let mut r = rng(seed);
    let mut values = Vec::with_capacity(n * m);
    let mut observed = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        values.push(10f64.powf(r.gen_range(-3.0..3.0)));
        observed.push(r.gen_bool(0.85));
    }
    ResponseMatrix {
        drugs: (0..n).map(|d| format!("D{d}")).collect(),
        cells: (0..m).map(|c| format!("C{c}")).collect(),
        values,
        observed,
    }
}

fn edge_set(edges: &[BlockEdge]) -> Vec<(usize, usize)> {
    edges.iter().map(|e| (e.a, e.b)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cell_gene_edges_ignore_gene_rescaling(
        seed in any::<u64>(),
        sample in any::<bool>(),
    ) {
        let (m, l) = (6, 8);
        let expr = expression(seed, m, l);
        let mut r = rng(seed ^ 1);
        let scales: Vec<(f64, f64)> =
            (0..l).map(|_| (r.gen_range(0.2..5.0), r.gen_range(-10.0..10.0))).collect();
        let mut moved = expr.clone();
        for c in 0..m {
            for (g, &(a, b)) in scales.iter().enumerate() {
                moved.values[c * l + g] = a * expr.get(c, g) + b;
            }
        }
        let std = if sample { StdConvention::Sample } else { StdConvention::Population };
        let before = build_cg(&expr, std);
        let after = build_cg(&moved, std);
        prop_assert_eq!(edge_set(&before), edge_set(&after));
        for (x, y) in before.iter().zip(&after) {
            prop_assert!((x.weight - y.weight).abs() <= 1e-9);
        }
    }

    #[test]
    fn classification_labels_ignore_per_drug_affine_maps(
        seed in any::<u64>(),
        per_drug in any::<bool>(),
    ) {
        let raw = response(seed, 5, 25);
        let mut r = rng(seed ^ 2);
        let maps: Vec<(f64, f64)> =
            (0..5).map(|_| (r.gen_range(0.3..3.0), r.gen_range(-2.0..2.0))).collect();
        let mut moved = raw.clone();
        for (d, &(a, b)) in maps.iter().enumerate() {
            for c in 0..25 {
                let i = d * 25 + c;
                moved.values[i] = 10f64.powf(a * raw.values[i].log10() + b);
            }
        }
        let opts = ClassificationOptions {
            percentile_scope: if per_drug { PercentileScope::PerDrug } else { PercentileScope::Off },
            ..ClassificationOptions::default()
        };
        let x = preprocess_classification(&raw, &opts);
        let y = preprocess_classification(&moved, &opts);
        prop_assert_eq!(x.entries, y.entries);
    }

    #[test]
    fn regression_filter_is_idempotent(
        seed in any::<u64>(),
        min_measurements in 1usize..20,
    ) {
        let raw = response(seed, 6, 20);
        let opts = RegressionOptions {
            min_measurements,
            clip_min: -1.0,
            clip_max: 2.0,
        };
        let once = preprocess_regression(&raw, &opts);
        prop_assert_eq!(&regression_filter(&once, &opts), &once);
        let twice = regression_filter(&regression_filter(&once, &opts), &opts);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn gene_selection_keeps_every_target(
        seed in any::<u64>(),
        fraction in 0.0f64..=1.0,
    ) {
        let (m, l) = (7, 15);
        let expr = expression(seed, m, l);
        let mut r = rng(seed ^ 3);
        let dti = DtiMatrix {
            drugs: vec!["D0".into(), "D1".into()],
            genes: expr.genes.clone(),
            known: (0..2 * l).map(|_| r.gen_bool(0.15)).collect(),
        };
        let keep = select_genes(&expr, &dti, fraction);
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        for g in dti.annotated_genes() {
            prop_assert!(keep.contains(&g));
        }
        let top = (l as f64 * fraction).ceil() as usize;
        prop_assert!(keep.len() >= top && keep.len() <= top + dti.annotated_genes().len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graph_is_symmetric_and_blind_to_masked_labels(
        seed in any::<u64>(),
        regression in any::<bool>(),
        padding in any::<bool>(),
    ) {
        let task = if regression { Task::Regression } else { Task::Classification };
        let ds = common::small_dataset(task, seed % 4);
        let mut r = rng(seed);
        let mask: HashSet<(usize, usize)> = ds
            .labels
            .pairs()
            .into_iter()
            .filter(|_| r.gen_bool(0.3))
            .collect();
        let opts = GraphOptions { zero_padding: padding, ..GraphOptions::default() };
        let g = UnifiedGraph::build(&ds, &mask, DgMode::Train, &opts).unwrap();

        let a = g.dense();
        for (i, row) in a.iter().enumerate() {
            prop_assert_eq!(row[i], 0.0);
            for (j, v) in row.iter().enumerate() {
                prop_assert_eq!(v.to_bits(), a[j][i].to_bits());
            }
        }

        let mut poked = ds.clone();
        for e in &mut poked.labels.entries {
            if mask.contains(&(e.drug, e.cell)) {
                e.value = if regression { r.gen_range(-5.0..20.0) } else { 1.0 - e.value };
            }
        }
        let h = UnifiedGraph::build(&poked, &mask, DgMode::Train, &opts).unwrap();
        prop_assert!(g.bit_identical(&h));
    }
}

/// Hop distance from `start` over the undirected edges of `g`.
fn hops(g: &UnifiedGraph, start: usize) -> Vec<usize> {
    let t = g.num_nodes();
    let mut dist = vec![usize::MAX; t];
    dist[start] = 0;
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for e in g.edges.iter().filter(|e| e.src == u) {
                if dist[e.dst] == usize::MAX {
                    dist[e.dst] = dist[u] + 1;
                    next.push(e.dst);
                }
            }
        }
        frontier = next;
    }
    dist
}

fn random_square(r: &mut ChaCha8Rng, kind: SimilarityKind, n: usize) -> SimilarityMatrix {
    SimilarityMatrix {
        kind,
        values: Tensor::matrix(n, n, (0..n * n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn predictions_only_see_nearby_nodes(seed in any::<u64>(), layers in 1usize..=3) {
        let (n, m, l) = (4, 4, 6);
        let mut r = rng(seed);
        let sparse = |r: &mut ChaCha8Rng, a: usize, b: usize| -> Vec<BlockEdge> {
            let mut out = Vec::new();
            for i in 0..a {
                for j in 0..b {
                    if r.gen_bool(0.12) {
                        out.push(BlockEdge { a: i, b: j, weight: r.gen_range(0.1..1.0) });
                    }
                }
            }
            out
        };
        let dc = sparse(&mut r, n, m);
        let dg = sparse(&mut r, n, l);
        let cg = sparse(&mut r, m, l);
        let graph = assemble(n, m, l, &dc, &dg, &cg).unwrap();
        let features = NodeFeatures {
            drug: random_square(&mut r, SimilarityKind::Drug, n),
            cell: random_square(&mut r, SimilarityKind::Cell, m),
            gene: random_square(&mut r, SimilarityKind::Gene, l),
        };
        let config = ModelConfig {
            h1: 8,
            h2: 8,
            h3: 8,
            heads: 2,
            num_layers: layers,
            norm: NormKind::Layer,
            activation: Activation::Gelu,
            seed,
            ..ModelConfig::default()
        };
        let model = GtModel::new_unchecked(config, GraphDims::of(&graph));
        let (d, c) = (r.gen_range(0..n), r.gen_range(0..m));

        let mut tape = Tape::new();
        let mut bound = model.bind(&mut tape, &features);
        bound.features = [
            tape.leaf(features.drug.values.clone()),
            tape.leaf(features.cell.values.clone()),
            tape.leaf(features.gene.values.clone()),
        ];
        let edges = graph.edge_index().unwrap();
        let mut mode = Mode::Eval;
        let out = model.forward(&mut tape, &bound, &edges, &mut mode).unwrap();
        let y = model.predict(&mut tape, out.z, &[(d, c)], &bound, &mut mode).unwrap();
        let y = tape.sum(y);
        let grads = tape.backward(y).unwrap();

        let from_d = hops(&graph, graph.drug_node(d));
        let from_c = hops(&graph, graph.cell_node(c));
        let offsets = [0, n, n + m];
        for (block, size) in [n, m, l].into_iter().enumerate() {
            let var = bound.features[block];
            let like = tape.value(var).clone();
            let grad = grads.get_or_zeros(var, &like);
            for u in 0..size {
                let node = offsets[block] + u;
                let near = from_d[node] <= layers || from_c[node] <= layers;
                let touched = (0..size).any(|k| grad.get(u, k) != 0.0);
                if !near {
                    prop_assert!(!touched, "node {} beyond {} hops moved the score", node, layers);
                }
            }
        }
        let own = grads.get_or_zeros(bound.features[0], &features.drug.values);
        prop_assert!((0..n).any(|k| own.get(d, k) != 0.0));
    }
}

fn corpus_strategy() -> impl Strategy<Value = (String, String)> {
    let corpus = common::corpus();
    (0..corpus.len()).prop_map(move |i| corpus[i].clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fingerprint_ignores_smiles_spelling(
        (name, smi) in corpus_strategy(),
        seed in any::<u64>(),
        radius in 0usize..=3,
    ) {
        let mol = parse_smiles(&smi).unwrap();
        let text = write_smiles(&mol, &mut rng(seed));
        let again = parse_smiles(&text).unwrap();
        prop_assert_eq!(
            morgan_fingerprint(&mol, radius, 1024),
            morgan_fingerprint(&again, radius, 1024),
            "{} rewritten as {}", name, text
        );
    }

    #[test]
    fn larger_radius_only_adds_bits((_name, smi) in corpus_strategy(), radius in 0usize..4) {
        let mol = parse_smiles(&smi).unwrap();
        let small = morgan_fingerprint(&mol, radius, 2048);
        let big = morgan_fingerprint(&mol, radius + 1, 2048);
        prop_assert!(small.is_subset_of(&big));
    }

    #[test]
    fn grammar_faults_are_rejected(
        (_name, smi) in corpus_strategy(),
        fault in 0usize..7,
        at in any::<prop::sample::Index>(),
    ) {
        let broken = match fault {
            0 => format!("{smi}("),
            1 => format!("{smi})"),
            2 => format!("){smi}"),
            3 => format!("{smi}C%98"),
            4 => format!("{smi}="),
            5 => format!("{smi}C["),
            _ => {
                let cuts: Vec<usize> = (0..=smi.len()).filter(|&i| smi.is_char_boundary(i)).collect();
                let i = cuts[at.index(cuts.len())];
                format!("{}?{}", &smi[..i], &smi[i..])
            }
        };
        prop_assert!(parse_smiles(&broken).is_err(), "accepted {}", broken);
    }
}

struct Recorder {
    clock: Arc<ManualClock>,
    calls: Mutex<Vec<Duration>>,
    fail: AtomicUsize,
}

struct RecorderHandle(Arc<Recorder>);

impl Transport for RecorderHandle {
    fn get(&self, _url: &str, _query: &[(&str, &str)]) -> Result<String, TransportError> {
        let m = &self.0;
        m.calls.lock().unwrap().push(m.clock.now());
        if m.fail.load(Ordering::SeqCst) > 0 {
            m.fail.fetch_sub(1, Ordering::SeqCst);
            return Err(TransportError::Network("down".into()));
        }
        Ok(r#"{"esearchresult":{"count":"7"}}"#.into())
    }
}

fn recorder_client(rate: f64, fail: usize) -> (PubmedClient, Arc<Recorder>) {
    let clock = Arc::new(ManualClock::default());
    let rec = Arc::new(Recorder {
        clock: clock.clone(),
        calls: Mutex::new(Vec::new()),
        fail: AtomicUsize::new(fail),
    });
    let options = ClientOptions {
        rate,
        backoff: Duration::from_millis(10),
        ..ClientOptions::default()
    };
    let client = PubmedClient::new(
        Backend::Live(Box::new(RecorderHandle(rec.clone()))),
        options,
        clock,
    )
    .unwrap();
    (client, rec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn requests_respect_the_rate_limit(
        rate in 1.0f64..12.0,
        queries in 2usize..25,
        fail in 0usize..3,
    ) {
        let (client, rec) = recorder_client(rate, fail);
        for i in 0..queries {
            client.count("drug", &format!("G{i}")).unwrap();
        }
        let calls = rec.calls.lock().unwrap().clone();
        prop_assert_eq!(calls.len(), queries + fail);
        let window = Duration::from_secs(1);
        for (i, &t) in calls.iter().enumerate() {
            let inside = calls[i..].iter().take_while(|&&u| u < t + window).count();
            prop_assert!(inside as f64 <= rate.ceil(), "{} requests within 1s at rate {}", inside, rate);
        }
    }

    #[test]
    fn cache_replays_live_counts(queries in 1usize..8) {
        let dir = tempfile::tempdir().unwrap();
        let (live, _) = recorder_client(5.0, 0);
        let live = live.with_cache(DiskCache::new(dir.path()));
        let first: Vec<_> = (0..queries)
            .map(|i| live.count("drug", &format!("G{i}")).unwrap())
            .collect();
        let (replay, rec) = recorder_client(5.0, 0);
        let replay = replay.with_cache(DiskCache::new(dir.path()));
        for r in &first {
            let again = replay.count(&r.drug, &r.gene).unwrap();
            prop_assert_eq!(again.source, Source::Cache);
            prop_assert_eq!(again.count, r.count);
        }
        prop_assert!(rec.calls.lock().unwrap().is_empty());
        prop_assert!(rec.clock.now() == Duration::ZERO);
    }
}

#[test]
fn dropout_free_forward_is_repeatable() {
    let ds = common::small_dataset(Task::Classification, 1);
    let g = UnifiedGraph::build(
        &ds,
        &HashSet::new(),
        DgMode::Train,
        &GraphOptions::default(),
    )
    .unwrap();
    let f = NodeFeatures::from_dataset(&ds).unwrap();
    let model = GtModel::new(ModelConfig::desk(), GraphDims::of(&g)).unwrap();
    let pairs = ds.labels.pairs();
    let a = model.predict_pairs(&g, &f, &pairs).unwrap();
    let b = model.predict_pairs(&g, &f, &pairs).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
