use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dataset::{ClassificationOptions, DataPaths, PrepareOptions, RegressionOptions, Task};
use crate::eval::{FixtureSpec, SplitKind};
use crate::graph::GraphOptions;
use crate::model::{ModelConfig, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub classification: ClassificationOptions,
    pub regression: RegressionOptions,
    pub gene_variance_fraction: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let p = PrepareOptions::default();
        Self {
            classification: p.classification,
            regression: p.regression,
            gene_variance_fraction: p.gene_variance_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Fraction of labeled pairs held out (and hidden from the graph) for
    /// the validation loss and attention extraction.
    pub val_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { val_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeaveOut {
    Drug,
    Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// 1: random masking CV, 2: leave one drug or cell out, 3: zero-shot.
    pub test: u8,
    pub leave: LeaveOut,
    pub folds: usize,
    pub max_entities: Option<usize>,
    /// Drug or pair group labels for stratified reports.
    pub annotation: Option<PathBuf>,
    /// The second dataset evaluated in the zero-shot test.
    pub target: Option<DataPaths>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            test: 1,
            leave: LeaveOut::Drug,
            folds: 5,
            max_entities: None,
            annotation: None,
            target: None,
        }
    }
}

impl EvaluateSection {
    pub fn split_kind(&self) -> SplitKind {
        match (self.test, self.leave) {
            (2, LeaveOut::Drug) => SplitKind::LeaveDrugOut,
            (2, LeaveOut::Cell) => SplitKind::LeaveCellOut,
            (3, _) => SplitKind::ZeroShot,
            _ => SplitKind::RandomMaskCv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Full,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub budget: usize,
    pub space: SpaceKind,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            budget: 10,
            space: SpaceKind::Desk,
        }
    }
}

impl TuneSection {
    pub fn search_space(&self) -> SearchSpace {
        match self.space {
            SpaceKind::Full => SearchSpace::full(),
            SpaceKind::Desk => SearchSpace::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    /// Defaults to `model.json` in the output directory.
    pub checkpoint: Option<PathBuf>,
    pub top_k: usize,
    pub enrichment_k: usize,
    pub gene_sets: Option<PathBuf>,
    /// Drug mechanism-of-action labels for the enrichment summary.
    pub moa: Option<PathBuf>,
    /// Attention layer to read; the final layer by default.
    pub layer: Option<usize>,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            top_k: 5,
            enrichment_k: 100,
            gene_sets: None,
            moa: None,
            layer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PubmedMode {
    Off,
    Offline,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PubmedSection {
    pub mode: PubmedMode,
    /// `drug, gene, count` table used in offline mode.
    pub fixture: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub rate: f64,
    pub field: Option<String>,
}

impl Default for PubmedSection {
    fn default() -> Self {
        Self {
            mode: PubmedMode::Off,
            fixture: None,
            cache: None,
            aliases: None,
            rate: 3.0,
            field: None,
        }
    }
}

/// Everything a run needs, read from TOML with command-line overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub output: PathBuf,
    pub data: Option<DataPaths>,
    pub preprocess: PreprocessSection,
    pub graph: GraphOptions,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub tune: TuneSection,
    pub explain: ExplainSection,
    pub pubmed: PubmedSection,
    pub synth: FixtureSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Classification,
            seed: 0,
            output: PathBuf::from("drgt-out"),
            data: None,
            preprocess: PreprocessSection::default(),
            graph: GraphOptions::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            evaluate: EvaluateSection::default(),
            tune: TuneSection::default(),
            explain: ExplainSection::default(),
            pubmed: PubmedSection::default(),
            synth: FixtureSpec::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `dotted.key=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(
        parts[parts.len() - 1].to_string(),
        parse_value(value.trim()),
    );
    Ok(())
}

impl RunConfig {
    /// Defaults, then `path` (if any), then each override in order. Relative
    /// data paths in the file are resolved against the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
                .parse::<toml::Table>()
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
        if let Some(base) = path.and_then(Path::parent) {
            cfg.resolve_relative(base);
        }
        cfg.model.task = cfg.task;
        cfg.model.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p);
            }
        };
        let fix_data = |d: &mut DataPaths| {
            fix(&mut d.response);
            fix(&mut d.expression);
            fix(&mut d.dti);
            fix_opt(&mut d.fingerprints);
            fix_opt(&mut d.smiles);
            fix_opt(&mut d.drug_allowlist);
        };
        if let Some(d) = &mut self.data {
            fix_data(d);
        }
        if let Some(d) = &mut self.evaluate.target {
            fix_data(d);
        }
        fix(&mut self.output);
        fix_opt(&mut self.evaluate.annotation);
        fix_opt(&mut self.explain.checkpoint);
        fix_opt(&mut self.explain.gene_sets);
        fix_opt(&mut self.explain.moa);
        fix_opt(&mut self.pubmed.fixture);
        fix_opt(&mut self.pubmed.cache);
        fix_opt(&mut self.pubmed.aliases);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        self.model
            .validate()
            .map_err(|e| CliError::Validation(format!("model: {e}")))?;
        if !(self.train.val_fraction > 0.0 && self.train.val_fraction < 1.0) {
            return bad(format!(
                "train.val_fraction = {} outside (0, 1)",
                self.train.val_fraction
            ));
        }
        let g = self.preprocess.gene_variance_fraction;
        if !(g > 0.0 && g <= 1.0) {
            return bad(format!(
                "preprocess.gene_variance_fraction = {g} outside (0, 1]"
            ));
        }
        let c = &self.preprocess.classification;
        if !(0.0 <= c.lower_percentile
            && c.lower_percentile < c.upper_percentile
            && c.upper_percentile <= 100.0)
        {
            return bad(
                "preprocess.classification percentiles must satisfy 0 <= lower < upper <= 100"
                    .into(),
            );
        }
        let r = &self.preprocess.regression;
        if r.clip_min.is_nan() || r.clip_max.is_nan() || r.clip_min >= r.clip_max {
            return bad("preprocess.regression.clip_min must be below clip_max".into());
        }
        if !(1..=3).contains(&self.evaluate.test) {
            return bad(format!(
                "evaluate.test = {} not in 1..=3",
                self.evaluate.test
            ));
        }
        if self.evaluate.folds < 2 {
            return bad(format!("evaluate.folds = {} below 2", self.evaluate.folds));
        }
        if self.tune.budget == 0 {
            return bad("tune.budget must be at least 1".into());
        }
        if self.explain.top_k == 0 || self.explain.enrichment_k == 0 {
            return bad("explain.top_k and explain.enrichment_k must be at least 1".into());
        }
        if !(self.pubmed.rate > 0.0 && self.pubmed.rate.is_finite()) {
            return bad(format!(
                "pubmed.rate = {} must be positive",
                self.pubmed.rate
            ));
        }
        if self.pubmed.mode == PubmedMode::Offline && self.pubmed.fixture.is_none() {
            return bad("pubmed.mode = \"offline\" needs pubmed.fixture".into());
        }
        Ok(())
    }

    pub fn data(&self) -> Result<&DataPaths, CliError> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::Validation("no [data] section in the configuration".into()))
    }

    pub fn prepare_options(&self) -> PrepareOptions {
        PrepareOptions {
            task: self.task,
            classification: self.preprocess.classification,
            regression: self.preprocess.regression,
            gene_variance_fraction: self.preprocess.gene_variance_fraction,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.explain
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.output.join("model.json"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
