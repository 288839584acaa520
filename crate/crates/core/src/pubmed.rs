//! PubMed co-mention counts for drug-gene pairs through NCBI ESearch, with a
//! disk cache, rate limiting, and an offline fixture mode.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::fnv1a64;
use crate::table::{read_records, TableError};

pub const ESEARCH_URL: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/esearch.fcgi";

#[derive(Debug, Error)]
pub enum PubmedError {
    #[error("drug and gene names must be non-empty")]
    EmptyName,
    #[error("malformed ESearch response: {0}")]
    Protocol(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("network: {0}")]
    Network(String),
    #[error("HTTP status {0}")]
    Status(u16),
}

/// Performs one HTTP GET with query parameters and returns the body.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<String, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<String, TransportError> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(k, v);
        }
        match req.call() {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| TransportError::Network(e.to_string())),
            Err(ureq::Error::Status(code, _)) => Err(TransportError::Status(code)),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

/// Time source for rate limiting and retry backoff.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// A clock that only advances when slept on.
#[derive(Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().expect("clock lock")
    }

    fn sleep(&self, d: Duration) {
        *self.now.lock().expect("clock lock") += d;
    }
}

/// Spaces requests at least `1 / rate` seconds apart.
struct RateLimiter {
    interval: Duration,
    last: Option<Duration>,
}

impl RateLimiter {
    fn acquire(&mut self, clock: &dyn Clock) {
        if let Some(last) = self.last {
            let next = last + self.interval;
            let now = clock.now();
            if now < next {
                clock.sleep(next - now);
            }
        }
        self.last = Some(clock.now());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Live,
    Cache,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrenceRecord {
    pub drug: String,
    pub gene: String,
    /// Number of matching abstracts; `None` when the service could not be
    /// reached, which is different from zero.
    pub count: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub source: Source,
}

fn key(drug: &str, gene: &str) -> (String, String) {
    (drug.trim().to_lowercase(), gene.trim().to_lowercase())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Extracts the hit count from an ESearch JSON body.
pub fn parse_esearch_count(body: &str) -> Result<u64, PubmedError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| PubmedError::Protocol(e.to_string()))?;
    let count = v
        .get("esearchresult")
        .and_then(|r| r.get("count"))
        .ok_or_else(|| PubmedError::Protocol("missing esearchresult.count".into()))?;
    match count {
        serde_json::Value::String(s) => s
            .parse()
            .map_err(|_| PubmedError::Protocol(format!("count {s:?} is not an integer"))),
        serde_json::Value::Number(n) => n
            .as_u64()
            .ok_or_else(|| PubmedError::Protocol(format!("count {n} is not an integer"))),
        other => Err(PubmedError::Protocol(format!("unexpected count {other}"))),
    }
}

/// Local `drug, gene, count` table used instead of the live service.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureTable {
    counts: HashMap<(String, String), u64>,
}

impl FixtureTable {
    pub fn load(path: &Path) -> Result<Self, PubmedError> {
        let mut counts = HashMap::new();
        for (i, r) in read_records(path)?.into_iter().enumerate().skip(1) {
            let [drug, gene, count] = r.as_slice() else {
                return Err(PubmedError::Invalid(format!(
                    "{}: line {} needs drug, gene, count",
                    path.display(),
                    i + 1
                )));
            };
            let count = count.parse().map_err(|_| {
                PubmedError::Invalid(format!(
                    "{}: line {}: bad count {count:?}",
                    path.display(),
                    i + 1
                ))
            })?;
            counts.insert(key(drug, gene), count);
        }
        Ok(Self { counts })
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, String, u64)>>(pairs: I) -> Self {
        Self {
            counts: pairs
                .into_iter()
                .map(|(d, g, c)| (key(&d, &g), c))
                .collect(),
        }
    }

    pub fn get(&self, drug: &str, gene: &str) -> u64 {
        self.counts.get(&key(drug, gene)).copied().unwrap_or(0)
    }
}

/// One JSON file per pair, written atomically.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, drug: &str, gene: &str) -> PathBuf {
        let (d, g) = key(drug, gene);
        let h = fnv1a64(format!("{d}\u{1f}{g}").as_bytes());
        self.dir.join(format!("{h:016x}.json"))
    }

    pub fn get(&self, drug: &str, gene: &str) -> Option<CoOccurrenceRecord> {
        let text = fs::read_to_string(self.path(drug, gene)).ok()?;
        let rec: CoOccurrenceRecord = serde_json::from_str(&text).ok()?;
        (key(&rec.drug, &rec.gene) == key(drug, gene) && rec.count.is_some()).then_some(rec)
    }

    pub fn put(&self, rec: &CoOccurrenceRecord) -> Result<(), PubmedError> {
        let err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PubmedError::Cache { path, source }
        };
        fs::create_dir_all(&self.dir).map_err(err(&self.dir))?;
        let path = self.path(&rec.drug, &rec.gene);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let body = serde_json::to_string(rec).expect("record serializes");
        fs::write(&tmp, body).map_err(err(&tmp))?;
        fs::rename(&tmp, &path).map_err(err(&path))
    }
}

pub enum Backend {
    Live(Box<dyn Transport>),
    Fixture(FixtureTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientOptions {
    /// Maximum requests per second reaching the transport.
    pub rate: f64,
    pub attempts: usize,
    pub backoff: Duration,
    /// Optional field tag appended to both quoted terms, e.g. `tiab`.
    pub field: Option<String>,
    pub api_key: Option<String>,
    pub email: Option<String>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            rate: 3.0,
            attempts: 3,
            backoff: Duration::from_millis(500),
            field: None,
            api_key: None,
            email: None,
        }
    }
}

impl ClientOptions {
    /// Defaults plus `NCBI_API_KEY` and `NCBI_EMAIL` from the environment.
    pub fn from_env() -> Self {
        Self {
            api_key: std::env::var("NCBI_API_KEY").ok().filter(|s| !s.is_empty()),
            email: std::env::var("NCBI_EMAIL").ok().filter(|s| !s.is_empty()),
            ..Self::default()
        }
    }
}

pub struct PubmedClient {
    backend: Backend,
    cache: Option<DiskCache>,
    aliases: HashMap<String, String>,
    options: ClientOptions,
    clock: Arc<dyn Clock>,
    limiter: Mutex<RateLimiter>,
}

impl PubmedClient {
    pub fn new(
        backend: Backend,
        options: ClientOptions,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, PubmedError> {
        if !(options.rate > 0.0 && options.rate.is_finite()) || options.attempts == 0 {
            return Err(PubmedError::Invalid(
                "rate must be positive and attempts at least 1".into(),
            ));
        }
        Ok(Self {
            backend,
            cache: None,
            aliases: HashMap::new(),
            limiter: Mutex::new(RateLimiter {
                interval: Duration::from_nanos((1e9 / options.rate).ceil() as u64),
                last: None,
            }),
            options,
            clock,
        })
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Drug identifiers to rename before querying (e.g. catalogue numbers to
    /// preferred names).
    pub fn with_aliases(mut self, aliases: HashMap<String, String>) -> Self {
        self.aliases = aliases;
        self
    }

    pub fn query_term(&self, drug: &str, gene: &str) -> String {
        match &self.options.field {
            Some(f) => format!("\"{drug}\"[{f}] AND \"{gene}\"[{f}]"),
            None => format!("\"{drug}\" AND \"{gene}\""),
        }
    }

    /// Abstract count for one pair. Network failures are retried with
    /// exponential backoff and then reported as an unavailable record;
    /// malformed responses are errors.
    pub fn count(&self, drug: &str, gene: &str) -> Result<CoOccurrenceRecord, PubmedError> {
        let drug = self
            .aliases
            .get(drug.trim())
            .map_or(drug.trim(), String::as_str);
        let gene = gene.trim();
        if drug.is_empty() || gene.is_empty() {
            return Err(PubmedError::EmptyName);
        }
        let record = |count, source| CoOccurrenceRecord {
            drug: drug.to_string(),
            gene: gene.to_string(),
            count,
            timestamp: unix_now(),
            source,
        };
        let transport = match &self.backend {
            Backend::Fixture(t) => return Ok(record(Some(t.get(drug, gene)), Source::Fixture)),
            Backend::Live(t) => t,
        };
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(drug, gene)) {
            return Ok(CoOccurrenceRecord {
                source: Source::Cache,
                ..hit
            });
        }
        let term = self.query_term(drug, gene);
        let mut query: Vec<(&str, &str)> = vec![
            ("db", "pubmed"),
            ("retmode", "json"),
            ("rettype", "count"),
            ("term", &term),
        ];
        if let Some(k) = &self.options.api_key {
            query.push(("api_key", k));
        }
        if let Some(e) = &self.options.email {
            query.push(("email", e));
        }
        for attempt in 0..self.options.attempts {
            if attempt > 0 {
                self.clock
                    .sleep(self.options.backoff * (1 << (attempt - 1)));
            }
            self.limiter
                .lock()
                .expect("limiter lock")
                .acquire(self.clock.as_ref());
            match transport.get(ESEARCH_URL, &query) {
                Ok(body) => {
                    let rec = record(Some(parse_esearch_count(&body)?), Source::Live);
                    if let Some(c) = &self.cache {
                        c.put(&rec)?;
                    }
                    return Ok(rec);
                }
                Err(e) => log::warn!(
                    "ESearch attempt {} for {drug}/{gene} failed: {e}",
                    attempt + 1
                ),
            }
        }
        Ok(record(None, Source::Live))
    }

    pub fn count_all(
        &self,
        pairs: &[(String, String)],
    ) -> Result<Vec<CoOccurrenceRecord>, PubmedError> {
        pairs.iter().map(|(d, g)| self.count(d, g)).collect()
    }
}

/// Literature support for a set of predicted drug-gene pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SupportSummary {
    pub total: usize,
    pub known: usize,
    pub novel: usize,
    pub supported: usize,
    pub novel_supported: usize,
    pub known_supported: usize,
    /// Pairs whose count could not be retrieved; never counted as unsupported.
    pub unavailable: usize,
    pub drugs: usize,
    pub drugs_with_supported_novel: usize,
    pub pct_drugs_with_supported_novel: f64,
}

impl SupportSummary {
    pub fn to_tsv(&self) -> String {
        format!(
            "metric\tvalue\n\
             Total Predicted Drug-Gene Pairs\t{}\n\
             Known DTI Pairs\t{}\n\
             Novel Pairs\t{}\n\
             Pairs with PubMed Support\t{}\n\
             Novel Pairs with PubMed Support\t{}\n\
             Known Pairs with PubMed Support\t{}\n\
             Unavailable Pairs\t{}\n\
             Drugs\t{}\n\
             Drugs with Supported Novel Pair\t{}\n\
             % Drugs with Supported Novel Pair\t{}\n",
            self.total,
            self.known,
            self.novel,
            self.supported,
            self.novel_supported,
            self.known_supported,
            self.unavailable,
            self.drugs,
            self.drugs_with_supported_novel,
            self.pct_drugs_with_supported_novel
        )
    }
}

/// Tallies support for `pairs` (drug, gene). A pair is known if it appears
/// in `known`, supported if its record has at least one abstract. Matching
/// is case-insensitive; pairs without a record count as unavailable.
pub fn summarize_support(
    pairs: &[(String, String)],
    known: &HashSet<(String, String)>,
    records: &[CoOccurrenceRecord],
) -> SupportSummary {
    let known: HashSet<(String, String)> = known.iter().map(|(d, g)| key(d, g)).collect();
    let counts: HashMap<(String, String), Option<u64>> = records
        .iter()
        .map(|r| (key(&r.drug, &r.gene), r.count))
        .collect();
    let mut s = SupportSummary::default();
    let mut drugs = BTreeSet::new();
    let mut drugs_ok = BTreeSet::new();
    for (d, g) in pairs {
        let k = key(d, g);
        let is_known = known.contains(&k);
        drugs.insert(k.0.clone());
        s.total += 1;
        if is_known {
            s.known += 1;
        } else {
            s.novel += 1;
        }
        match counts.get(&k).copied().flatten() {
            None => s.unavailable += 1,
            Some(0) => {}
            Some(_) => {
                s.supported += 1;
                if is_known {
                    s.known_supported += 1;
                } else {
                    s.novel_supported += 1;
                    drugs_ok.insert(k.0.clone());
                }
            }
        }
    }
    s.drugs = drugs.len();
    s.drugs_with_supported_novel = drugs_ok.len();
    s.pct_drugs_with_supported_novel = if s.drugs == 0 {
        0.0
    } else {
        100.0 * s.drugs_with_supported_novel as f64 / s.drugs as f64
    };
    s
}

/// Drug x gene matrix of `ln(1 + count)`, `NA` where unavailable or absent.
pub fn heatmap_tsv(records: &[CoOccurrenceRecord]) -> String {
    let mut cells: BTreeMap<(String, String), Option<u64>> = BTreeMap::new();
    for r in records {
        cells.insert((r.drug.clone(), r.gene.clone()), r.count);
    }
    let drugs: BTreeSet<&String> = cells.keys().map(|k| &k.0).collect();
    let genes: BTreeSet<&String> = cells.keys().map(|k| &k.1).collect();
    let mut s = String::from("drug");
    for g in &genes {
        s.push('\t');
        s.push_str(g);
    }
    s.push('\n');
    for d in &drugs {
        s.push_str(d);
        for g in &genes {
            match cells.get(&((*d).clone(), (*g).clone())).copied().flatten() {
                Some(c) => s.push_str(&format!("\t{}", (c as f64).ln_1p())),
                None => s.push_str("\tNA"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn records_tsv(records: &[CoOccurrenceRecord]) -> String {
    let mut s = String::from("drug\tgene\tcount\ttimestamp\tsource\n");
    for r in records {
        let count = r.count.map_or("unavailable".to_string(), |c| c.to_string());
        let source = match r.source {
            Source::Live => "live",
            Source::Cache => "cache",
            Source::Fixture => "fixture",
        };
        s.push_str(&format!(
            "{}\t{}\t{count}\t{}\t{source}\n",
            r.drug, r.gene, r.timestamp
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Mock {
        clock: Arc<ManualClock>,
        calls: Mutex<Vec<Duration>>,
        fail_first: AtomicUsize,
        body: String,
    }

    impl Transport for Arc<Mock> {
        fn get(&self, _url: &str, query: &[(&str, &str)]) -> Result<String, TransportError> {
            assert!(query.iter().any(|(k, _)| *k == "term"));
            self.calls.lock().unwrap().push(self.clock.now());
            if self.fail_first.load(Ordering::SeqCst) > 0 {
                self.fail_first.fetch_sub(1, Ordering::SeqCst);
                return Err(TransportError::Network("down".into()));
            }
            Ok(self.body.clone())
        }
    }

    fn mock(fail_first: usize, body: &str) -> (Arc<Mock>, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::default());
        let m = Arc::new(Mock {
            clock: clock.clone(),
            calls: Mutex::new(Vec::new()),
            fail_first: AtomicUsize::new(fail_first),
            body: body.into(),
        });
        (m, clock)
    }

    const BODY: &str = r#"{"header":{},"esearchresult":{"count":"137","retmax":"0"}}"#;

    #[test]
    fn parses_count() {
        assert_eq!(parse_esearch_count(BODY).unwrap(), 137);
        assert!(parse_esearch_count("{}").is_err());
        assert!(parse_esearch_count("<html>").is_err());
    }

    #[test]
    fn rate_limited_to_three_per_second() {
        let (m, clock) = mock(0, BODY);
        let client = PubmedClient::new(
            Backend::Live(Box::new(m.clone())),
            ClientOptions::default(),
            clock,
        )
        .unwrap();
        for i in 0..10 {
            client.count("gefitinib", &format!("G{i}")).unwrap();
        }
        let calls = m.calls.lock().unwrap();
        assert_eq!(calls.len(), 10);
        for (i, &t) in calls.iter().enumerate() {
            let in_window = calls[i..]
                .iter()
                .filter(|&&u| u < t + Duration::from_secs(1))
                .count();
            assert!(in_window <= 3, "{in_window} calls within a second");
        }
    }

    #[test]
    fn cache_hit_skips_transport_and_unavailable_is_not_zero() {
        let dir = tempfile::tempdir().unwrap();
        let (m, clock) = mock(0, BODY);
        let client = PubmedClient::new(
            Backend::Live(Box::new(m.clone())),
            ClientOptions::default(),
            clock,
        )
        .unwrap()
        .with_cache(DiskCache::new(dir.path()));
        let a = client.count("Gefitinib", "EGFR").unwrap();
        let b = client.count("gefitinib", "egfr").unwrap();
        assert_eq!((a.count, a.source), (Some(137), Source::Live));
        assert_eq!((b.count, b.source), (Some(137), Source::Cache));
        assert_eq!(m.calls.lock().unwrap().len(), 1);

        let (m, clock) = mock(5, BODY);
        let client = PubmedClient::new(
            Backend::Live(Box::new(m.clone())),
            ClientOptions::default(),
            clock,
        )
        .unwrap()
        .with_cache(DiskCache::new(dir.path()));
        let r = client.count("erlotinib", "EGFR").unwrap();
        assert_eq!(r.count, None);
        assert_eq!(m.calls.lock().unwrap().len(), 3);
        let s = summarize_support(
            &[("erlotinib".into(), "EGFR".into())],
            &HashSet::new(),
            &[r],
        );
        assert_eq!((s.unavailable, s.supported), (1, 0));
    }

    #[test]
    fn fixture_backend() {
        let table = FixtureTable::from_pairs([("gefitinib".to_string(), "EGFR".to_string(), 137)]);
        let client = PubmedClient::new(
            Backend::Fixture(table),
            ClientOptions::default(),
            Arc::new(ManualClock::default()),
        )
        .unwrap();
        assert_eq!(client.count("GEFITINIB", "egfr").unwrap().count, Some(137));
        assert_eq!(client.count("gefitinib", "KRAS").unwrap().count, Some(0));
        assert!(client.count("", "KRAS").is_err());
    }

    #[test]
    fn summary_arithmetic() {
        assert_eq!(
            summarize_support(&[], &HashSet::new(), &[]),
            SupportSummary::default()
        );
        let pairs: Vec<(String, String)> = (0..10)
            .map(|i| (format!("d{}", i / 5), format!("g{i}")))
            .collect();
        let known: HashSet<(String, String)> = [pairs[0].clone(), pairs[1].clone()].into();
        let records: Vec<CoOccurrenceRecord> = pairs
            .iter()
            .enumerate()
            .map(|(i, (d, g))| CoOccurrenceRecord {
                drug: d.clone(),
                gene: g.clone(),
                count: Some(if [0, 2, 3].contains(&i) { 4 } else { 0 }),
                timestamp: 0,
                source: Source::Fixture,
            })
            .collect();
        let s = summarize_support(&pairs, &known, &records);
        assert_eq!(
            (
                s.total,
                s.known,
                s.novel,
                s.supported,
                s.novel_supported,
                s.known_supported
            ),
            (10, 2, 8, 3, 2, 1)
        );
        assert_eq!((s.drugs, s.drugs_with_supported_novel), (2, 1));
        assert_eq!(s.pct_drugs_with_supported_novel, 50.0);
        assert!(heatmap_tsv(&records).contains(&format!("\t{}", 5f64.ln())));
    }
}
