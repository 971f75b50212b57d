//! Activity, network and text features for author/site pairs.
//!
//! A feature vector has the fixed layout
//!
//! ```text
//! [src_text(d) | src_activity(9) | src_network(3) | cand_text(d) | cand_activity(9) | cand_network(3) | dyadic(3)]
//! ```
//!
//! for a total of `2(d + 12) + 3` values. Disabled blocks stay in place and
//! are zero-filled, so offsets depend only on `d`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_log::{EventRecord, HOUR_MS, WEEK_MS};
use crate::feedback::{count_open, last_before, Corpus, InteractionGraph, PairIx, SiteIx, TrainingSample, UserIx};
use crate::keyed::Key;

pub const ACTIVITY_LEN: usize = 9;
pub const NETWORK_LEN: usize = 3;
pub const DYADIC_LEN: usize = 3;
/// Recency value for an action the author has never taken.
pub const MISSING_RECENCY_HOURS: f64 = 10_000.0;
pub const DEFAULT_TEXT_DIM: usize = 768;
/// Updates pooled into a site's text representation.
pub const TEXT_UPDATES: usize = 3;

/// Which feature blocks are enabled. Dyadic indicators belong to the network block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub activity: bool,
    pub network: bool,
    pub text: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet {
        activity: true,
        network: true,
        text: true,
    };

    /// Parses ablation labels such as `"ANT"`, `"AN"` or `"T"`.
    pub fn from_label(label: &str) -> Result<Self> {
        let mut set = FeatureSet {
            activity: false,
            network: false,
            text: false,
        };
        for c in label.chars() {
            match c.to_ascii_uppercase() {
                'A' => set.activity = true,
                'N' => set.network = true,
                'T' => set.text = true,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown feature block `{other}` in `{label}` (expected A, N, T)"
                    )))
                }
            }
        }
        if !(set.activity || set.network || set.text) {
            return Err(Error::InvalidConfig("empty feature set".into()));
        }
        Ok(set)
    }

    pub fn label(&self) -> String {
        [(self.activity, 'A'), (self.network, 'N'), (self.text, 'T')]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, c)| *c)
            .collect()
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::ALL
    }
}

/// Block offsets for text dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub text_dim: usize,
}

impl Layout {
    pub fn new(text_dim: usize) -> Self {
        Layout { text_dim }
    }

    /// Length of one pair's block: text, activity, network.
    pub fn half_len(&self) -> usize {
        self.text_dim + ACTIVITY_LEN + NETWORK_LEN
    }

    pub fn len(&self) -> usize {
        2 * self.half_len() + DYADIC_LEN
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn candidate_offset(&self) -> usize {
        self.half_len()
    }

    pub fn dyadic_offset(&self) -> usize {
        2 * self.half_len()
    }

    /// True for positions holding text embedding values.
    pub fn is_text(&self, i: usize) -> bool {
        let h = self.half_len();
        i < 2 * h && i % h < self.text_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivityFeatures {
    /// Per activity kind (update, reaction, comment, guestbook): count in the last week.
    pub counts: [u32; 4],
    /// Per activity kind: hours since the latest action, or the missing sentinel.
    pub hours_since_last: [f64; 4],
    pub tenure_hours: f64,
}

impl ActivityFeatures {
    pub fn to_array(&self) -> [f64; ACTIVITY_LEN] {
        let mut out = [0.0; ACTIVITY_LEN];
        for k in 0..4 {
            out[2 * k] = f64::from(self.counts[k]);
            out[2 * k + 1] = self.hours_since_last[k];
        }
        out[8] = self.tenure_hours;
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkFeatures {
    pub indegree: u32,
    pub outdegree: u32,
    pub wcc_size: u32,
}

impl NetworkFeatures {
    pub fn to_array(&self) -> [f64; NETWORK_LEN] {
        [
            f64::from(self.indegree),
            f64::from(self.outdegree),
            f64::from(self.wcc_size),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn hours(ms: i64) -> f64 {
    ms as f64 / HOUR_MS as f64
}

/// Author-level activity at `t` (actions on any site).
pub fn activity_features(corpus: &Corpus, author: UserIx, t: i64) -> ActivityFeatures {
    let h = corpus.history();
    let mut counts = [0u32; 4];
    let mut recency = [MISSING_RECENCY_HOURS; 4];
    for k in 0..4 {
        let ts = h.actions(author, k);
        counts[k] = count_open(ts, t - WEEK_MS, t) as u32;
        if let Some(last) = last_before(ts, t) {
            recency[k] = hours(t - last);
        }
    }
    let tenure_hours = match h.first_update(author) {
        Some(first) if first < t => hours(t - first),
        _ => 0.0,
    };
    ActivityFeatures {
        counts,
        hours_since_last: recency,
        tenure_hours,
    }
}

pub fn network_features(graph: &InteractionGraph, author: UserIx) -> NetworkFeatures {
    NetworkFeatures {
        indegree: graph.indegree(author),
        outdegree: graph.outdegree(author),
        wcc_size: graph.component_size(author),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    /// Signed feature hashing over word n-grams.
    Hashing { dim: usize, seed: u64, ngram_max: usize },
    /// Vectors looked up by update `content_ref`.
    Precomputed { dim: usize, path: PathBuf },
}

impl EmbedderSpec {
    pub fn hashing(dim: usize) -> Self {
        EmbedderSpec::Hashing {
            dim,
            seed: 0,
            ngram_max: 2,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Hashing { dim, .. } | EmbedderSpec::Precomputed { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Result<Embedder> {
        match self {
            EmbedderSpec::Hashing { dim, seed, ngram_max } => {
                Ok(Embedder::Hashing(HashingEmbedder::new(*dim, *seed, *ngram_max)?))
            }
            EmbedderSpec::Precomputed { dim, path } => {
                let table = EmbeddingTable::load(path)?;
                if table.dim != *dim {
                    return Err(Error::InvalidConfig(format!(
                        "embedding table has dim {} but spec says {dim}",
                        table.dim
                    )));
                }
                Ok(Embedder::Precomputed(table))
            }
        }
    }
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::hashing(DEFAULT_TEXT_DIM)
    }
}

#[derive(Clone, Debug)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
    ngram_max: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64, ngram_max: usize) -> Result<Self> {
        if dim == 0 || ngram_max == 0 {
            return Err(Error::InvalidConfig(
                "hashing embedder needs dim >= 1 and ngram_max >= 1".into(),
            ));
        }
        Ok(HashingEmbedder { dim, seed, ngram_max })
    }

    /// L2-normalized signed bucket counts of lowercase word n-grams.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let tokens: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut v = vec![0.0; self.dim];
        for n in 1..=self.ngram_max {
            for gram in tokens.windows(n) {
                let h = Key::new(self.seed).int(n as i64).str(&gram.join(" ")).finish();
                let bucket = (h % self.dim as u64) as usize;
                v[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

/// `content_ref` → vector table.
///
/// Binary layout: magic `RECEMB01`, `dim: u32`, `count: u64`, then per row
/// `id_len: u32`, UTF-8 id bytes, `dim` little-endian `f32`s. A JSON-lines
/// form with `{"content_ref": .., "vector": [..]}` rows is also accepted.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f32>>,
}

const EMBEDDING_MAGIC: &[u8; 8] = b"RECEMB01";

impl EmbeddingTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
        if head.starts_with(EMBEDDING_MAGIC) {
            Self::read_binary(reader).map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })
        } else {
            Self::read_jsonl(reader)
        }
    }

    fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::io("<embeddings>", e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(io)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8).map_err(io)?;
        let count = u64::from_le_bytes(b8) as usize;
        if dim == 0 {
            return Err(Error::Format("embedding table dim is 0".into()));
        }
        let mut vectors = HashMap::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b4).map_err(io)?;
            let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut id).map_err(io)?;
            let id = String::from_utf8(id).map_err(|e| Error::Format(e.to_string()))?;
            let mut row = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut b4).map_err(io)?;
                let x = f32::from_le_bytes(b4);
                if !x.is_finite() {
                    return Err(Error::Format(format!("non-finite value in embedding `{id}`")));
                }
                row.push(x);
            }
            vectors.insert(id, row);
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            content_ref: String,
            vector: Vec<f32>,
        }
        let mut table = EmbeddingTable::default();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if table.dim == 0 {
                table.dim = row.vector.len();
            }
            if row.vector.len() != table.dim || table.dim == 0 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("vector length {} != {}", row.vector.len(), table.dim),
                });
            }
            if row.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "non-finite value".into(),
                });
            }
            table.vectors.insert(row.content_ref, row.vector);
        }
        Ok(table)
    }

    /// Writes the binary form with rows sorted by id.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        out.write_all(EMBEDDING_MAGIC).map_err(io)?;
        out.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(self.vectors.len() as u64).to_le_bytes()).map_err(io)?;
        let mut ids: Vec<&String> = self.vectors.keys().collect();
        ids.sort();
        for id in ids {
            out.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
            out.write_all(id.as_bytes()).map_err(io)?;
            for x in &self.vectors[id] {
                out.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }
}

#[derive(Clone, Debug)]
pub enum Embedder {
    Hashing(HashingEmbedder),
    Precomputed(EmbeddingTable),
}

impl Embedder {
    pub fn dim(&self) -> usize {
        match self {
            Embedder::Hashing(h) => h.dim,
            Embedder::Precomputed(t) => t.dim,
        }
    }

    pub fn embed_update(&self, record: &EventRecord) -> Result<Vec<f64>> {
        match self {
            Embedder::Hashing(h) => Ok(h.embed(record.text.as_deref().unwrap_or(""))),
            Embedder::Precomputed(table) => {
                let id = record.content_ref.as_deref().unwrap_or("");
                table
                    .vectors
                    .get(id)
                    .map(|v| v.iter().map(|&x| f64::from(x)).collect())
                    .ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub embedder: EmbedderSpec,
    pub set: FeatureSet,
}

/// Computes feature vectors over a corpus, caching per-update text embeddings.
pub struct FeatureExtractor<'c> {
    corpus: &'c Corpus,
    layout: Layout,
    set: FeatureSet,
    embedder: Embedder,
    update_cache: Vec<OnceLock<Vec<f64>>>,
}

impl<'c> FeatureExtractor<'c> {
    pub fn new(corpus: &'c Corpus, cfg: &FeatureConfig) -> Result<Self> {
        Ok(Self::with_embedder(corpus, cfg.embedder.build()?, cfg.set))
    }

    pub fn with_embedder(corpus: &'c Corpus, embedder: Embedder, set: FeatureSet) -> Self {
        FeatureExtractor {
            corpus,
            layout: Layout::new(embedder.dim()),
            set,
            update_cache: (0..corpus.log().len()).map(|_| OnceLock::new()).collect(),
            embedder,
        }
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn feature_set(&self) -> FeatureSet {
        self.set
    }

    fn update_vector(&self, record_ix: usize) -> Result<&[f64]> {
        let cell = &self.update_cache[record_ix];
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let v = self.embedder.embed_update(&self.corpus.log().records()[record_ix])?;
        Ok(cell.get_or_init(|| v))
    }

    /// Mean of the embeddings of the site's most recent updates before `t`.
    pub fn site_text(&self, site: SiteIx, t: i64) -> Result<Vec<f64>> {
        let recent = self.corpus.history().recent_updates(site, t, TEXT_UPDATES);
        let mut out = vec![0.0; self.layout.text_dim];
        for &r in recent {
            for (o, x) in out.iter_mut().zip(self.update_vector(r)?) {
                *o += x;
            }
        }
        if !recent.is_empty() {
            let n = recent.len() as f64;
            for o in &mut out {
                *o /= n;
            }
        }
        Ok(out)
    }

    /// One pair's `[text | activity | network]` block with disabled blocks zeroed.
    pub fn pair_block(&self, graph: &InteractionGraph, pair: PairIx, t: i64) -> Result<Vec<f64>> {
        let info = self.corpus.history().pair(pair);
        let mut out = Vec::with_capacity(self.layout.half_len());
        if self.set.text {
            out.extend(self.site_text(info.site, t)?);
        } else {
            out.resize(self.layout.text_dim, 0.0);
        }
        if self.set.activity {
            out.extend(activity_features(self.corpus, info.author, t).to_array());
        } else {
            out.extend([0.0; ACTIVITY_LEN]);
        }
        if self.set.network {
            out.extend(network_features(graph, info.author).to_array());
        } else {
            out.extend([0.0; NETWORK_LEN]);
        }
        Ok(out)
    }

    pub fn dyadic_block(&self, graph: &InteractionGraph, source: PairIx, candidate: PairIx) -> [f64; 3] {
        if !self.set.network {
            return [0.0; DYADIC_LEN];
        }
        let h = self.corpus.history();
        graph.dyadic(h.pair(source).author, h.pair(candidate).author).as_array()
    }

    /// Concatenates precomputed blocks into a full vector.
    pub fn join(&self, source_block: &[f64], candidate_block: &[f64], dyadic: [f64; 3]) -> FeatureVector {
        let mut v = Vec::with_capacity(self.layout.len());
        v.extend_from_slice(source_block);
        v.extend_from_slice(candidate_block);
        v.extend(dyadic);
        FeatureVector(v)
    }

    pub fn assemble(
        &self,
        graph: &InteractionGraph,
        source: PairIx,
        candidate: PairIx,
        t: i64,
    ) -> Result<FeatureVector> {
        let s = self.pair_block(graph, source, t)?;
        let c = self.pair_block(graph, candidate, t)?;
        Ok(self.join(&s, &c, self.dyadic_block(graph, source, candidate)))
    }

    /// Feature rows for time-ordered samples, replaying the network as it goes.
    pub fn sample_matrix(&self, samples: &[TrainingSample]) -> Result<Vec<Vec<f64>>> {
        let h = self.corpus.history();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by_key(|&i| samples[i].timestamp_ms);
        let mut cursor = self.corpus.graph_cursor();
        let mut rows = vec![Vec::new(); samples.len()];
        for i in order {
            let s = &samples[i];
            let lookup = |p| {
                h.pair_ix(p)
                    .ok_or_else(|| Error::InvalidRecord(format!("sample {i} references unknown pair {p:?}")))
            };
            let (sp, cp) = (lookup(&s.source)?, lookup(&s.candidate)?);
            let graph = cursor.advance_to(s.timestamp_ms);
            rows[i] = self.assemble(graph, sp, cp, s.timestamp_ms)?.0;
        }
        Ok(rows)
    }
}

/// Per-position centering and scaling fitted on training rows.
/// Text positions pass through unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], layout: Layout) -> Self {
        let n = layout.len();
        let mut mean = vec![0.0; n];
        let mut scale = vec![1.0; n];
        if rows.is_empty() {
            return Standardizer { mean, scale };
        }
        let m = rows.len() as f64;
        for i in (0..n).filter(|&i| !layout.is_text(i)) {
            let mu = rows.iter().map(|r| r[i]).sum::<f64>() / m;
            let var = rows.iter().map(|r| (r[i] - mu).powi(2)).sum::<f64>() / m;
            mean[i] = mu;
            scale[i] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{EventKind::*, EventLog, EventRecord, DAY_MS};

    fn corpus(records: Vec<EventRecord>) -> Corpus {
        Corpus::new(EventLog::from_records(records).unwrap())
    }

    fn update(ts: i64, who: &str, site: &str, text: &str, id: &str) -> EventRecord {
        EventRecord::new(ts, JournalUpdate, who, site)
            .with_text(text)
            .with_content_ref(id)
    }

    #[test]
    fn layout_lengths() {
        assert_eq!(Layout::new(768).len(), 1563);
        assert_eq!(Layout::new(4).len(), 35);
        let l = Layout::new(4);
        assert!(l.is_text(0) && l.is_text(3) && !l.is_text(4));
        assert!(l.is_text(16) && !l.is_text(20) && !l.is_text(34));
    }

    #[test]
    fn activity_counts_recency_and_sentinel() {
        let t = 100 * DAY_MS;
        let c = corpus(vec![
            update(t - 48 * HOUR_MS, "a", "s", "x", "j0"),
            update(t - 20 * HOUR_MS, "a", "s", "x", "j1"),
            update(t - 5 * HOUR_MS, "a", "s", "x", "j2"),
            EventRecord::new(t - 10 * DAY_MS, Reaction, "a", "z"),
        ]);
        let u = c.history().user(&"a".into()).unwrap();
        let f = activity_features(&c, u, t);
        assert_eq!(f.counts, [3, 0, 0, 0]);
        assert_eq!(f.hours_since_last[0], 5.0);
        assert_eq!(f.hours_since_last[1], 240.0);
        assert_eq!(f.hours_since_last[3], MISSING_RECENCY_HOURS);
        assert_eq!(f.tenure_hours, 48.0);
    }

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let e = HashingEmbedder::new(64, 3, 2).unwrap();
        let a = e.embed("the quick brown fox");
        assert_eq!(a, e.embed("The quick, brown fox!"));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(e.embed("").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_updates_pool_to_single_vector() {
        let c = corpus(
            (0..3)
                .map(|i| update(i, "a", "s", "same words here", &format!("j{i}")))
                .collect(),
        );
        let fx = FeatureExtractor::with_embedder(
            &c,
            Embedder::Hashing(HashingEmbedder::new(32, 0, 2).unwrap()),
            FeatureSet::ALL,
        );
        let single = HashingEmbedder::new(32, 0, 2).unwrap().embed("same words here");
        let pooled = fx.site_text(0, 10).unwrap();
        for (p, s) in pooled.iter().zip(&single) {
            assert!((p - s).abs() < 1e-12);
        }
    }

    #[test]
    fn two_updates_pool_to_their_mean() {
        let c = corpus(vec![
            update(0, "a", "s", "alpha beta gamma", "j0"),
            update(1, "a", "s", "delta epsilon", "j1"),
        ]);
        let emb = HashingEmbedder::new(16, 5, 2).unwrap();
        let fx = FeatureExtractor::with_embedder(&c, Embedder::Hashing(emb.clone()), FeatureSet::ALL);
        let (x, y) = (emb.embed("alpha beta gamma"), emb.embed("delta epsilon"));
        let pooled = fx.site_text(0, 2).unwrap();
        for i in 0..16 {
            assert!((pooled[i] - (x[i] + y[i]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn precomputed_missing_ref_names_id() {
        let c = corpus(vec![update(0, "a", "s", "x", "j0")]);
        let table = EmbeddingTable {
            dim: 2,
            vectors: HashMap::from([("other".to_string(), vec![1.0, 0.0])]),
        };
        let fx = FeatureExtractor::with_embedder(&c, Embedder::Precomputed(table), FeatureSet::ALL);
        match fx.site_text(0, 1) {
            Err(Error::MissingEmbedding(id)) => assert_eq!(id, "j0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embedding_table_round_trip() {
        let table = EmbeddingTable {
            dim: 3,
            vectors: HashMap::from([
                ("j0".to_string(), vec![1.0, -2.5, 0.25]),
                ("j1".to_string(), vec![0.0, 3.0, 1.0]),
            ]),
        };
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("emb.bin");
        table.write_binary(&bin).unwrap();
        let back = EmbeddingTable::load(&bin).unwrap();
        assert_eq!(back.dim, 3);
        assert_eq!(back.vectors, table.vectors);

        let jsonl = dir.path().join("emb.jsonl");
        std::fs::write(&jsonl, "{\"content_ref\":\"j0\",\"vector\":[1.0,-2.5,0.25]}\n").unwrap();
        let back = EmbeddingTable::load(&jsonl).unwrap();
        assert_eq!(back.vectors["j0"], vec![1.0, -2.5, 0.25]);
    }

    #[test]
    fn text_only_mask_zeroes_other_blocks() {
        let mut rs = Vec::new();
        for i in 0..3 {
            rs.push(update(i, "a", "sa", "hello there", &format!("a{i}")));
            rs.push(update(10 + i, "b", "sb", "other words", &format!("b{i}")));
        }
        rs.push(EventRecord::new(50, Comment, "a", "sb"));
        let c = corpus(rs);
        let fx = FeatureExtractor::with_embedder(
            &c,
            Embedder::Hashing(HashingEmbedder::new(4, 0, 1).unwrap()),
            FeatureSet::from_label("T").unwrap(),
        );
        let g = c.graph_at(100);
        let v = fx.assemble(&g, 0, 1, 100).unwrap();
        assert_eq!(v.len(), 35);
        let layout = fx.layout();
        for (i, x) in v.0.iter().enumerate() {
            if !layout.is_text(i) {
                assert_eq!(*x, 0.0, "position {i}");
            }
        }
        assert!(v.0[..4].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn feature_set_labels() {
        assert_eq!(FeatureSet::from_label("ANT").unwrap(), FeatureSet::ALL);
        assert_eq!(FeatureSet::from_label("na").unwrap().label(), "AN");
        assert!(FeatureSet::from_label("X").is_err());
        assert!(FeatureSet::from_label("").is_err());
    }

    #[test]
    fn standardizer_skips_text() {
        let layout = Layout::new(1);
        let rows = vec![vec![5.0; layout.len()], vec![7.0; layout.len()]];
        let st = Standardizer::fit(&rows, layout);
        assert_eq!(st.mean[0], 0.0);
        assert_eq!(st.mean[1], 6.0);
        let mut r = rows[0].clone();
        st.apply(&mut r);
        assert_eq!(r[0], 5.0);
        assert_eq!(r[1], -1.0);
    }
}
