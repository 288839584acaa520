use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use super::config::{PubmedMode, RunConfig};
use super::CliError;
use crate::dataset::{
    fingerprints_from_smiles, load_aliases, load_matrices, DataPaths, Dataset, LabeledEntry,
};
use crate::eval::{
    align_zero_shot, holdout, make_split, make_synthetic_fixture, run_plan, run_zero_shot,
    Annotation, EvalOutcome, MetricReport, SplitKind, SplitOptions,
};
use crate::graph::{DgMode, NodeFeatures, UnifiedGraph};
use crate::interpret::{
    enrichment_tsv, extract_ac, load_moa, moa_summary, moa_summary_tsv, ora, parse_gmt,
};
use crate::model::{random_search, train, train_traced, GraphDims, GtModel, LossTrace};
use crate::pubmed::{
    heatmap_tsv, records_tsv, summarize_support, Backend, ClientOptions, DiskCache, FixtureTable,
    PubmedClient, SystemClock, UreqTransport,
};
use crate::table::{format_table, write_text};

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    write_text(path, text).map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write(path, &s)
}

pub fn load_dataset(cfg: &RunConfig, paths: &DataPaths) -> Result<Dataset, CliError> {
    let raw = load_matrices(paths)?;
    raw.report.log();
    Ok(Dataset::prepare(&raw, &cfg.prepare_options())?)
}

fn mask_of(entries: &[LabeledEntry]) -> HashSet<(usize, usize)> {
    entries.iter().map(|e| (e.drug, e.cell)).collect()
}

pub fn preprocess(cfg: &RunConfig) -> Result<(), CliError> {
    let raw = load_matrices(cfg.data()?)?;
    raw.report.log();
    let ds = Dataset::prepare(&raw, &cfg.prepare_options())?;
    let out = &cfg.output;
    write(&out.join("stats.tsv"), &ds.stats().to_tsv())?;
    write_json(&out.join("alignment.json"), &raw.report)?;
    let mut labels = String::from("drug\tcell\tvalue\n");
    for e in &ds.labels.entries {
        labels.push_str(&format!(
            "{}\t{}\t{}\n",
            ds.labels.drugs[e.drug], ds.labels.cells[e.cell], e.value
        ));
    }
    write(&out.join("labels.tsv"), &labels)?;
    write(
        &out.join("genes.txt"),
        &(ds.expression.genes.join("\n") + "\n"),
    )?;
    log::info!("{:?}", ds.stats());
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg, cfg.data()?)?;
    let (train_set, val_set) = holdout(&ds.labels, cfg.train.val_fraction, cfg.seed);
    let graph = UnifiedGraph::build(&ds, &mask_of(&val_set), DgMode::Train, &cfg.graph)?;
    let features = NodeFeatures::from_dataset(&ds)?;
    let model = GtModel::new(cfg.model.clone(), GraphDims::of(&graph))?;
    let mut trace = LossTrace::default();
    let result = train_traced(model, &graph, &features, &train_set, &val_set, &mut trace);
    write(&cfg.output.join("loss.tsv"), &trace.to_tsv())?;
    let model = result?;
    model.save(&cfg.output.join("model.json"))?;
    write(&cfg.output.join("run.toml"), &cfg.to_toml())?;
    if let (Some(first), Some(last)) = (trace.train_loss.first(), trace.train_loss.last()) {
        log::info!("train loss {first:.5} -> {last:.5}");
    }
    Ok(())
}

fn report_tsv(r: &MetricReport) -> String {
    r.to_tsv()
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let kind = cfg.evaluate.split_kind();
    let ds = load_dataset(cfg, cfg.data()?)?;
    let out = cfg.output.join(format!("eval_test{}", cfg.evaluate.test));
    if kind == SplitKind::ZeroShot {
        let target_paths = cfg.evaluate.target.as_ref().ok_or_else(|| {
            CliError::Validation("test 3 needs [evaluate.target] data paths".into())
        })?;
        let target = load_dataset(cfg, target_paths)?;
        let align = align_zero_shot(&ds, &target)?;
        let seen = align.test.iter().filter(|p| p.seen).count();
        log::info!(
            "zero-shot: {} evaluation pairs, {seen} seen in training",
            align.test.len()
        );
        let result = run_zero_shot(&align, &cfg.model, &cfg.graph, cfg.seed)?;
        write_json(&out.join("plan.json"), &align.plan(cfg.seed))?;
        write(&out.join("zero_shot.tsv"), &result.to_tsv())?;
        write_json(&out.join("summary.json"), &result)?;
        return Ok(());
    }
    let opts = SplitOptions {
        folds: cfg.evaluate.folds,
        max_entities: cfg.evaluate.max_entities,
        skip_empty: true,
    };
    let plan = make_split(kind, &ds.labels, cfg.seed, &opts)?;
    write(&out.join("plan.json"), &(plan.to_json() + "\n"))?;
    let result = run_plan(&ds, &plan, &cfg.model, &cfg.graph)?;
    write_outcome(&out, &ds, &result, cfg)?;
    Ok(())
}

fn write_outcome(
    out: &Path,
    ds: &Dataset,
    r: &EvalOutcome,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    write(&out.join("folds.tsv"), &r.folds_tsv())?;
    write(&out.join("predictions.tsv"), &r.predictions_tsv(ds))?;
    write(&out.join("metrics.tsv"), &report_tsv(&r.pooled))?;
    for f in &r.folds {
        let (y, p): (Vec<f64>, Vec<f64>) = r
            .predictions
            .iter()
            .filter(|p| p.fold == f.fold)
            .map(|p| (p.y, p.pred))
            .unzip();
        let rep = MetricReport::compute(r.task, &y, &p, cfg.seed.wrapping_add(f.fold as u64));
        write(&out.join(format!("fold_{}.tsv", f.fold)), &report_tsv(&rep))?;
    }
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| v.to_string());
    write(
        &out.join("summary.tsv"),
        &format!(
            "split\tfolds\tmean\tstd\n{}\t{}\t{}\t{}\n",
            r.kind.name(),
            r.folds.len(),
            fmt(r.fold_mean),
            fmt(r.fold_std)
        ),
    )?;
    write_json(&out.join("summary.json"), r)?;
    if let Some(a) = &cfg.evaluate.annotation {
        let ann = Annotation::load(a)?;
        write(
            &out.join("strata.tsv"),
            &r.stratify(ds, &ann, cfg.seed).to_tsv(),
        )?;
    }
    log::info!(
        "{}: fold mean {} (std {}), pooled {}",
        r.kind.name(),
        fmt(r.fold_mean),
        fmt(r.fold_std),
        fmt(r.pooled.point())
    );
    Ok(())
}

pub fn tune(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg, cfg.data()?)?;
    let (train_set, val_set) = holdout(&ds.labels, cfg.train.val_fraction, cfg.seed);
    let graph = UnifiedGraph::build(&ds, &mask_of(&val_set), DgMode::Train, &cfg.graph)?;
    let features = NodeFeatures::from_dataset(&ds)?;
    let result = random_search(
        &cfg.tune.search_space(),
        cfg.tune.budget,
        cfg.task,
        cfg.seed,
        |c| {
            let (_, trace) = train(c, &graph, &features, &train_set, &val_set)?;
            Ok(trace.final_val_loss().unwrap_or(f64::INFINITY))
        },
    );
    let mut trials = String::from("trial\tval_loss\tconfig\n");
    if let Ok(r) = &result {
        for (i, t) in r.trials.iter().enumerate() {
            let loss = t.val_loss.map_or("diverged".to_string(), |v| v.to_string());
            let json = serde_json::to_string(&t.config).expect("config serializes");
            trials.push_str(&format!("{i}\t{loss}\t{json}\n"));
        }
    }
    let result = result?;
    write(&cfg.output.join("trials.tsv"), &trials)?;
    write_json(&cfg.output.join("tune.json"), &result)?;
    let mut best = cfg.clone();
    best.model = result.best.clone();
    write(&cfg.output.join("best.toml"), &best.to_toml())?;
    log::info!("best validation loss {}", result.best_val_loss);
    Ok(())
}

pub fn explain(cfg: &RunConfig) -> Result<bool, CliError> {
    let ds = load_dataset(cfg, cfg.data()?)?;
    let (_, val_set) = holdout(&ds.labels, cfg.train.val_fraction, cfg.seed);
    let graph = UnifiedGraph::build(&ds, &mask_of(&val_set), DgMode::Interpret, &cfg.graph)?;
    let features = NodeFeatures::from_dataset(&ds)?;
    let model = GtModel::load(&cfg.checkpoint_path())?;
    let report = extract_ac(&model, &graph, &features, &ds.dti, cfg.explain.layer)?;
    let out = cfg.output.join("explain");
    write(&out.join("attention.tsv"), &report.to_tsv())?;
    let longest = report.ranked.iter().map(Vec::len).max().unwrap_or(0);
    let top_file = |k: usize| -> Result<(), CliError> {
        if k > longest {
            log::warn!("top {k} requested but drugs link to at most {longest} genes");
        }
        let mut s = String::from("drug\trank\tgene\tscore\tknown_dti\n");
        for (d, drug) in report.drugs.iter().enumerate() {
            for (i, g) in report.top_k(d, k.min(longest).max(1))?.iter().enumerate() {
                s.push_str(&format!(
                    "{drug}\t{}\t{}\t{}\t{}\n",
                    i + 1,
                    report.genes[g.gene],
                    g.score,
                    u8::from(g.known)
                ));
            }
        }
        write(&out.join(format!("top{k}.tsv")), &s)
    };
    top_file(cfg.explain.top_k)?;
    top_file(cfg.explain.enrichment_k)?;
    let mut edges = String::from("source\ttarget\tweight\n");
    for (d, drug) in report.drugs.iter().enumerate() {
        for g in report.top_k(d, cfg.explain.top_k)? {
            edges.push_str(&format!("{drug}\t{}\t{}\n", report.genes[g.gene], g.score));
        }
    }
    write(&out.join("edges.tsv"), &edges)?;

    if let Some(gmt) = &cfg.explain.gene_sets {
        let sets = parse_gmt(gmt)?;
        let mut per_drug = Vec::new();
        for (d, drug) in report.drugs.iter().enumerate() {
            let query: Vec<String> = report
                .top_k(d, cfg.explain.enrichment_k.min(longest).max(1))?
                .iter()
                .map(|g| report.genes[g.gene].clone())
                .collect();
            if query.is_empty() {
                continue;
            }
            per_drug.push((drug.clone(), ora(&query, &sets, &report.genes)?));
        }
        write(&out.join("enrichment.tsv"), &enrichment_tsv(&per_drug))?;
        let moa = match &cfg.explain.moa {
            Some(p) => load_moa(p)?,
            None => HashMap::new(),
        };
        write(
            &out.join("moa_summary.tsv"),
            &moa_summary_tsv(&moa_summary(&per_drug, &moa)),
        )?;
    } else {
        log::info!("no gene-set file configured; skipping enrichment");
    }

    let backend = match cfg.pubmed.mode {
        PubmedMode::Off => return Ok(true),
        PubmedMode::Offline => Backend::Fixture(FixtureTable::load(
            cfg.pubmed.fixture.as_ref().expect("validated"),
        )?),
        PubmedMode::Live => Backend::Live(Box::new(UreqTransport::default())),
    };
    let options = ClientOptions {
        rate: cfg.pubmed.rate,
        field: cfg.pubmed.field.clone(),
        ..ClientOptions::from_env()
    };
    let mut client = PubmedClient::new(backend, options, Arc::new(SystemClock::default()))?;
    if let Some(c) = &cfg.pubmed.cache {
        client = client.with_cache(DiskCache::new(c));
    }
    if let Some(a) = &cfg.pubmed.aliases {
        client = client.with_aliases(load_aliases(a)?);
    }
    let pairs: Vec<(String, String)> = report
        .top_k_pairs(cfg.explain.top_k)
        .into_iter()
        .map(|(d, g)| (report.drugs[d].clone(), report.genes[g].clone()))
        .collect();
    let records = client.count_all(&pairs)?;
    let (drugs, genes) = (&report.drugs, &report.genes);
    let known: HashSet<(String, String)> = report
        .ranked
        .iter()
        .enumerate()
        .flat_map(|(d, list)| {
            list.iter()
                .filter(|g| g.known)
                .map(move |g| (drugs[d].clone(), genes[g.gene].clone()))
        })
        .collect();
    // Records carry alias-resolved drug names; summarize on the query names.
    let renamed: Vec<_> = records
        .iter()
        .zip(&pairs)
        .map(|(r, (d, _))| crate::pubmed::CoOccurrenceRecord {
            drug: d.clone(),
            ..r.clone()
        })
        .collect();
    let summary = summarize_support(&pairs, &known, &renamed);
    write(&out.join("pubmed_records.tsv"), &records_tsv(&records))?;
    write(&out.join("support.tsv"), &summary.to_tsv())?;
    write(&out.join("pubmed_heatmap.tsv"), &heatmap_tsv(&records))?;
    Ok(summary.unavailable == 0)
}

pub fn fingerprint(smiles: &Path, out: &Path, radius: usize, nbits: usize) -> Result<(), CliError> {
    let fps = fingerprints_from_smiles(smiles, radius, nbits)?;
    let names: Vec<String> = (0..fps.nbits).map(|b| format!("b{b}")).collect();
    let text = format_table("drug", &fps.drugs, &names, |d, b| {
        (fps.bits[d * fps.nbits + b] as u8).to_string()
    });
    write(out, &text)
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let fx = make_synthetic_fixture(cfg.synth)?;
    let paths = fx.write(&cfg.output)?;
    let mut run = RunConfig {
        data: Some(DataPaths {
            response: "response.tsv".into(),
            expression: "expression.tsv".into(),
            dti: "dti.tsv".into(),
            fingerprints: Some("fingerprints.tsv".into()),
            ..DataPaths::default()
        }),
        output: "out".into(),
        ..cfg.clone()
    };
    run.model = crate::model::ModelConfig {
        task: cfg.task,
        seed: cfg.seed,
        ..crate::model::ModelConfig::desk()
    };
    write(&cfg.output.join("run.toml"), &run.to_toml())?;
    log::info!(
        "fixture written to {}",
        paths.response.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}
