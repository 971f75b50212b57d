//! Trained and baseline scorers behind one scoring contract.
//!
//! Every scorer maps a (source pair, candidate pair, time) triple to a finite
//! real where higher means more relevant. Scores are computed from a
//! [`ScoringContext`] that holds the feature extractor and the initiation
//! network frozen at the scoring instant.

mod mf;
mod mlp;
mod optim;

pub use mf::{train_mf, MfConfig, MfModel};
pub use mlp::{fit_mlp, holdout_split, Mlp, MlpConfig, TrainingTrace};
pub use optim::{Adam, OneCycle, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_log::{SiteId, UserId, HOUR_MS, WEEK_MS};
use crate::features::{FeatureConfig, FeatureExtractor, Standardizer};
use crate::feedback::{count_open, last_before, AuthorSitePair, InteractionGraph, PairIx, SiteIx, TrainingSample};
use crate::keyed::Key;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "MLP")]
    Mlp,
    PeopleYouKnow,
    CosSim,
    #[serde(rename = "MF")]
    Mf,
    MostInits,
    RecentInits,
    MostJournals,
    RecentJournals,
    NewestAuthor,
    MostInteractive,
    Random,
}

impl ModelKind {
    pub const ALL: [ModelKind; 11] = [
        ModelKind::Mlp,
        ModelKind::PeopleYouKnow,
        ModelKind::CosSim,
        ModelKind::Mf,
        ModelKind::MostInits,
        ModelKind::RecentInits,
        ModelKind::MostJournals,
        ModelKind::RecentJournals,
        ModelKind::NewestAuthor,
        ModelKind::MostInteractive,
        ModelKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "MLP",
            ModelKind::PeopleYouKnow => "PeopleYouKnow",
            ModelKind::CosSim => "CosSim",
            ModelKind::Mf => "MF",
            ModelKind::MostInits => "MostInits",
            ModelKind::RecentInits => "RecentInits",
            ModelKind::MostJournals => "MostJournals",
            ModelKind::RecentJournals => "RecentJournals",
            ModelKind::NewestAuthor => "NewestAuthor",
            ModelKind::MostInteractive => "MostInteractive",
            ModelKind::Random => "Random",
        }
    }

    /// Stable numeric tag used in model files.
    pub fn tag(self) -> u32 {
        Self::ALL.iter().position(|k| *k == self).unwrap() as u32
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    /// Kinds whose score is a fixed function of the log (no training).
    pub fn is_heuristic(self) -> bool {
        !matches!(self, ModelKind::Mlp | ModelKind::Mf | ModelKind::CosSim)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    None,
    Mlp(Mlp),
    Mf(MfModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerModel {
    pub kind: ModelKind,
    pub features: FeatureConfig,
    pub standardizer: Option<Standardizer>,
    pub meta: TrainingMeta,
    pub params: ModelParams,
}

/// Everything a scorer may read at time `t`: features and the network
/// built from initiations strictly before `t`.
pub struct ScoringContext<'a, 'c> {
    pub features: &'a FeatureExtractor<'c>,
    pub graph: &'a InteractionGraph,
    pub t: i64,
}

/// Score for "never happened" recency baselines; finite and below any real value.
const NEVER: f64 = -1e12;

fn hours(ms: i64) -> f64 {
    ms as f64 / HOUR_MS as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

impl ScorerModel {
    /// A scorer that needs no training.
    pub fn heuristic(kind: ModelKind, seed: u64) -> Result<Self> {
        if !kind.is_heuristic() && kind != ModelKind::CosSim {
            return Err(Error::Model(format!("{kind} must be trained")));
        }
        Ok(ScorerModel {
            kind,
            features: FeatureConfig::default(),
            standardizer: None,
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
            params: ModelParams::None,
        })
    }

    pub fn seed(&self) -> u64 {
        self.meta.seed
    }

    /// Deterministic tie-break key for a site.
    pub fn tie_break(&self, site: &SiteId) -> u64 {
        Key::new(self.meta.seed).str("tie").str(site.as_str()).finish()
    }

    fn check_layout(&self, ctx: &ScoringContext) -> Result<()> {
        let n = ctx.features.layout().len();
        if let Some(st) = &self.standardizer {
            if st.len() != n {
                return Err(Error::Model(format!(
                    "standardizer has {} positions but features have {n}",
                    st.len()
                )));
            }
        }
        if let ModelParams::Mlp(net) = &self.params {
            if net.n_inputs() != n {
                return Err(Error::Model(format!(
                    "network expects {} inputs but features have {n}",
                    net.n_inputs()
                )));
            }
            if self.standardizer.is_none() {
                return Err(Error::Model("MLP has no standardization statistics".into()));
            }
        }
        Ok(())
    }

    fn score_vector(&self, mut v: Vec<f64>, half: usize) -> Result<f64> {
        if let Some(st) = &self.standardizer {
            st.apply(&mut v);
        }
        match (&self.params, self.kind) {
            (ModelParams::Mlp(net), ModelKind::Mlp) => Ok(net.predict(&v)),
            (_, ModelKind::CosSim) => Ok(cosine(&v[..half], &v[half..2 * half])),
            _ => Err(Error::Model(format!("{} does not score feature vectors", self.kind))),
        }
    }

    fn uses_features(&self) -> bool {
        matches!(self.kind, ModelKind::Mlp | ModelKind::CosSim)
    }

    /// Scores that depend only on the candidate site and `t`.
    fn site_score(&self, ctx: &ScoringContext, site: SiteIx) -> f64 {
        let corpus = ctx.features.corpus();
        let h = corpus.history();
        let t = ctx.t;
        let recency = |ts: &[i64]| last_before(ts, t).map_or(NEVER, |last| -hours(t - last));
        match self.kind {
            ModelKind::MostInits => count_open(corpus.site_initiations(site), t - WEEK_MS, t) as f64,
            ModelKind::RecentInits => recency(corpus.site_initiations(site)),
            ModelKind::MostJournals => count_open(h.site_update_ts(site), t - WEEK_MS, t) as f64,
            ModelKind::RecentJournals => recency(h.site_update_ts(site)),
            ModelKind::NewestAuthor => h
                .site_first_update(site)
                .filter(|&f| f < t)
                .map_or(NEVER, |f| -hours(t - f)),
            ModelKind::MostInteractive => h
                .site_authors_at(site, t)
                .map(|u| count_open(h.interactions(u), t - WEEK_MS, t))
                .sum::<usize>() as f64,
            _ => unreachable!("not a site-level baseline"),
        }
    }

    /// Score of one candidate pair for one source pair.
    pub fn score(&self, ctx: &ScoringContext, source: PairIx, candidate: PairIx) -> Result<f64> {
        let h = ctx.features.corpus().history();
        let (sp, cp) = (h.pair(source), h.pair(candidate));
        let s = match self.kind {
            ModelKind::Mlp | ModelKind::CosSim => {
                self.check_layout(ctx)?;
                let v = ctx.features.assemble(ctx.graph, source, candidate, ctx.t)?;
                self.score_vector(v.0, ctx.features.layout().half_len())?
            }
            ModelKind::PeopleYouKnow => {
                let d = ctx.graph.dyadic(sp.author, cp.author);
                if d.prior_reciprocal {
                    3.0
                } else if d.friend_of_friend {
                    2.0
                } else if d.weakly_connected {
                    1.0
                } else {
                    0.0
                }
            }
            ModelKind::Mf => match &self.params {
                ModelParams::Mf(mf) => mf.score(h.user_id(sp.author), h.site_id(cp.site)),
                _ => return Err(Error::Model("MF model has no embeddings".into())),
            },
            ModelKind::Random => Key::new(self.meta.seed)
                .str(h.user_id(sp.author).as_str())
                .str(h.site_id(sp.site).as_str())
                .str(h.user_id(cp.author).as_str())
                .str(h.site_id(cp.site).as_str())
                .int(ctx.t)
                .unit(),
            _ => self.site_score(ctx, cp.site),
        };
        if !s.is_finite() {
            return Err(Error::Model(format!("{} produced a non-finite score", self.kind)));
        }
        Ok(s)
    }

    /// Scores by id; both pairs must be known to the corpus.
    pub fn score_ids(&self, ctx: &ScoringContext, source: &AuthorSitePair, candidate: &AuthorSitePair) -> Result<f64> {
        let h = ctx.features.corpus().history();
        let lookup = |p: &AuthorSitePair| {
            h.pair_ix(p)
                .ok_or_else(|| Error::InvalidRecord(format!("unknown author/site pair {}/{}", p.author, p.site)))
        };
        self.score(ctx, lookup(source)?, lookup(candidate)?)
    }

    /// `out[c][s]` = score of `candidates[c]` for `sources[s]`, computed in
    /// parallel over candidates. Equal to calling [`score`](Self::score) per pair.
    pub fn score_matrix(
        &self,
        ctx: &ScoringContext,
        sources: &[PairIx],
        candidates: &[PairIx],
    ) -> Result<Vec<Vec<f64>>> {
        if !self.uses_features() {
            return candidates
                .par_iter()
                .map(|&c| sources.iter().map(|&s| self.score(ctx, s, c)).collect())
                .collect();
        }
        self.check_layout(ctx)?;
        let fx = ctx.features;
        let src_blocks = sources
            .iter()
            .map(|&s| fx.pair_block(ctx.graph, s, ctx.t))
            .collect::<Result<Vec<_>>>()?;
        let half = fx.layout().half_len();
        candidates
            .par_iter()
            .map(|&c| {
                let cb = fx.pair_block(ctx.graph, c, ctx.t)?;
                sources
                    .iter()
                    .zip(&src_blocks)
                    .map(|(&s, sb)| {
                        let v = fx.join(sb, &cb, fx.dyadic_block(ctx.graph, s, c));
                        self.score_vector(v.0, half)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Trains the MLP on labelled samples; rows are standardized with statistics
/// fitted on the same samples.
pub fn train_mlp(
    fx: &FeatureExtractor,
    features: &FeatureConfig,
    samples: &[TrainingSample],
    cfg: &MlpConfig,
) -> Result<(ScorerModel, TrainingTrace)> {
    if fx.feature_set() != features.set || fx.layout().text_dim != features.embedder.dim() {
        return Err(Error::InvalidConfig(
            "feature extractor does not match the feature config".into(),
        ));
    }
    let mut rows = fx.sample_matrix(samples)?;
    let standardizer = Standardizer::fit(&rows, fx.layout());
    for r in &mut rows {
        standardizer.apply(r);
    }
    let ys: Vec<f64> = samples.iter().map(|s| f64::from(s.label)).collect();
    let groups: Vec<u64> = samples.iter().map(|s| s.initiation as u64).collect();
    let (net, trace) = fit_mlp(&rows, &ys, &groups, cfg)?;
    let model = ScorerModel {
        kind: ModelKind::Mlp,
        features: features.clone(),
        standardizer: Some(standardizer),
        meta: TrainingMeta {
            seed: cfg.seed,
            epochs: cfg.epochs,
            best_epoch: Some(trace.best_epoch),
            n_samples: samples.len(),
        },
        params: ModelParams::Mlp(net),
    };
    Ok((model, trace))
}

/// Cosine-similarity scorer with standardization statistics from the samples.
pub fn fit_cossim(fx: &FeatureExtractor, features: &FeatureConfig, samples: &[TrainingSample]) -> Result<ScorerModel> {
    let rows = fx.sample_matrix(samples)?;
    Ok(ScorerModel {
        kind: ModelKind::CosSim,
        features: features.clone(),
        standardizer: Some(Standardizer::fit(&rows, fx.layout())),
        meta: TrainingMeta {
            n_samples: samples.len(),
            ..Default::default()
        },
        params: ModelParams::None,
    })
}

pub fn train_mf_model(samples: &[TrainingSample], cfg: &MfConfig) -> Result<ScorerModel> {
    let mf = train_mf(samples, cfg)?;
    Ok(ScorerModel {
        kind: ModelKind::Mf,
        features: FeatureConfig::default(),
        standardizer: None,
        meta: TrainingMeta {
            seed: cfg.seed,
            epochs: cfg.epochs,
            best_epoch: None,
            n_samples: samples.len(),
        },
        params: ModelParams::Mf(mf),
    })
}

/// Outcome of a grid search: per-config seed MRRs and the winner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: MlpConfig,
    pub trials: Vec<SearchTrial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub config: MlpConfig,
    pub mrr_by_seed: Vec<f64>,
    pub median_mrr: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Trains every grid point under each seed via `validation_mrr(config)` and
/// keeps the best median MRR. Ties go to fewer hidden units, then lower dropout.
pub fn hyperparameter_search<F>(grid: &[MlpConfig], seeds: &[u64], mut validation_mrr: F) -> Result<SearchResult>
where
    F: FnMut(&MlpConfig) -> Result<f64>,
{
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "hyperparameter grid and seed list must be nonempty".into(),
        ));
    }
    let mut trials = Vec::with_capacity(grid.len());
    for base in grid {
        let mut mrr_by_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = MlpConfig { seed, ..base.clone() };
            mrr_by_seed.push(validation_mrr(&cfg)?);
        }
        let median_mrr = median(&mrr_by_seed);
        trials.push(SearchTrial {
            config: base.clone(),
            mrr_by_seed,
            median_mrr,
        });
    }
    let best = trials
        .iter()
        .min_by(|a, b| {
            b.median_mrr
                .total_cmp(&a.median_mrr)
                .then(a.config.hidden_units.cmp(&b.config.hidden_units))
                .then(a.config.dropout.total_cmp(&b.config.dropout))
        })
        .expect("nonempty")
        .config
        .clone();
    Ok(SearchResult { best, trials })
}

/// The hidden-units × dropout × weight-decay grid, at a fixed `max_lr`.
pub fn default_grid(base: &MlpConfig) -> Vec<MlpConfig> {
    let mut grid = Vec::new();
    for hidden_units in [100, 300, 500] {
        for dropout in [0.1, 0.5, 0.9] {
            for weight_decay in [0.0, 1e-4, 1e-2] {
                grid.push(MlpConfig {
                    hidden_units,
                    dropout,
                    weight_decay,
                    ..base.clone()
                });
            }
        }
    }
    grid
}

const MODEL_MAGIC: &[u8; 8] = b"RECMODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    kind: ModelKind,
    features: FeatureConfig,
    meta: TrainingMeta,
    /// Length of the standardizer mean and scale vectors (0 when absent).
    standardizer_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mf: Option<MfHeader>,
}

#[derive(Serialize, Deserialize)]
struct MfHeader {
    dim: usize,
    authors: Vec<UserId>,
    sites: Vec<SiteId>,
}

fn split_off(rest: &mut &[f64], k: usize) -> Result<Vec<f64>> {
    if rest.len() < k {
        return Err(Error::Format("model has too few values".into()));
    }
    let (a, b) = rest.split_at(k);
    *rest = b;
    Ok(a.to_vec())
}

impl ScorerModel {
    /// Binary container: magic, format version, kind tag, JSON header, then
    /// little-endian f64 values (standardizer mean, scale, then weights).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut values: Vec<f64> = Vec::new();
        let standardizer_len = self.standardizer.as_ref().map_or(0, |s| {
            values.extend(&s.mean);
            values.extend(&s.scale);
            s.len()
        });
        let mut header = ModelHeader {
            kind: self.kind,
            features: self.features.clone(),
            meta: self.meta.clone(),
            standardizer_len,
            layer_sizes: None,
            mf: None,
        };
        match &self.params {
            ModelParams::None => {}
            ModelParams::Mlp(net) => {
                header.layer_sizes = Some(net.sizes().to_vec());
                values.extend(net.params());
            }
            ModelParams::Mf(mf) => {
                header.mf = Some(MfHeader {
                    dim: mf.dim(),
                    authors: mf.authors().to_vec(),
                    sites: mf.sites().to_vec(),
                });
                values.extend(mf.author_emb());
                values.extend(mf.site_emb());
            }
        }
        let json = serde_json::to_vec(&header).expect("model header serializes");
        let mut out = Vec::with_capacity(32 + json.len() + 8 * values.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.tag().to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::Format("model file is truncated".into()));
            }
            let (head, rest) = r.split_at(n);
            r = rest;
            Ok(head)
        };
        if take(8)? != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format version {version}")));
        }
        let tag = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let json_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let header: ModelHeader =
            serde_json::from_slice(take(json_len)?).map_err(|e| Error::Format(format!("model header: {e}")))?;
        if ModelKind::from_tag(tag) != Some(header.kind) {
            return Err(Error::Format("model kind tag disagrees with header".into()));
        }
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("bad value count".into()))?,
        )?;
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after model values".into()));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut rest = values.as_slice();
        let standardizer = if header.standardizer_len > 0 {
            let l = header.standardizer_len;
            Some(Standardizer {
                mean: split_off(&mut rest, l)?,
                scale: split_off(&mut rest, l)?,
            })
        } else {
            None
        };
        let params = match header.kind {
            ModelKind::Mlp => {
                let sizes = header
                    .layer_sizes
                    .ok_or_else(|| Error::Format("MLP model lacks layer sizes".into()))?;
                let n = rest.len();
                ModelParams::Mlp(Mlp::from_params(sizes, split_off(&mut rest, n)?)?)
            }
            ModelKind::Mf => {
                let h = header
                    .mf
                    .ok_or_else(|| Error::Format("MF model lacks vocabulary".into()))?;
                let a = split_off(&mut rest, (h.authors.len() + 1) * h.dim)?;
                let n = rest.len();
                let s = split_off(&mut rest, n)?;
                ModelParams::Mf(MfModel::from_parts(h.dim, h.authors, h.sites, a, s)?)
            }
            _ => ModelParams::None,
        };
        if !rest.is_empty() {
            return Err(Error::Format("model has unused values".into()));
        }
        Ok(ScorerModel {
            kind: header.kind,
            features: header.features,
            standardizer,
            meta: header.meta,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        out.write_all(&self.to_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{EventKind::*, EventLog, EventRecord};
    use crate::features::{Embedder, EmbedderSpec, FeatureSet, HashingEmbedder};
    use crate::feedback::Corpus;

    fn three_author_corpus() -> Corpus {
        let mut rs = Vec::new();
        for (i, (a, s)) in [("a", "sa"), ("b", "sb"), ("c", "sc")].iter().enumerate() {
            for k in 0..3 {
                rs.push(
                    EventRecord::new((i * 10 + k) as i64, JournalUpdate, a, s)
                        .with_text(format!("{a} words {k}"))
                        .with_content_ref(format!("{a}{k}")),
                );
            }
        }
        // b initiated with a's site
        rs.push(EventRecord::new(100, Comment, "b", "sa"));
        rs.push(
            EventRecord::new(200, JournalUpdate, "a", "sa")
                .with_text("x")
                .with_content_ref("a9"),
        );
        rs.push(
            EventRecord::new(200, JournalUpdate, "b", "sb")
                .with_text("x")
                .with_content_ref("b9"),
        );
        rs.push(
            EventRecord::new(200, JournalUpdate, "c", "sc")
                .with_text("x")
                .with_content_ref("c9"),
        );
        Corpus::new(EventLog::from_records(rs).unwrap())
    }

    fn extractor(c: &Corpus) -> FeatureExtractor<'_> {
        FeatureExtractor::with_embedder(
            c,
            Embedder::Hashing(HashingEmbedder::new(8, 0, 2).unwrap()),
            FeatureSet::ALL,
        )
    }

    #[test]
    fn people_you_know_ranks_reciprocal_first() {
        let c = three_author_corpus();
        let fx = extractor(&c);
        let g = c.graph_at(300);
        let ctx = ScoringContext {
            features: &fx,
            graph: &g,
            t: 300,
        };
        let m = ScorerModel::heuristic(ModelKind::PeopleYouKnow, 0).unwrap();
        let h = c.history();
        let p = |a: &str, s: &str| h.pair_ix(&AuthorSitePair::new(a, s)).unwrap();
        // source a: b initiated with a before, c is disconnected
        assert_eq!(m.score(&ctx, p("a", "sa"), p("b", "sb")).unwrap(), 3.0);
        assert_eq!(m.score(&ctx, p("a", "sa"), p("c", "sc")).unwrap(), 0.0);
    }

    #[test]
    fn cossim_self_is_one() {
        let c = three_author_corpus();
        let fx = extractor(&c);
        let g = c.graph_at(300);
        let ctx = ScoringContext {
            features: &fx,
            graph: &g,
            t: 300,
        };
        let m = ScorerModel::heuristic(ModelKind::CosSim, 0).unwrap();
        let p = c.history().pair_ix(&AuthorSitePair::new("a", "sa")).unwrap();
        assert!((m.score(&ctx, p, p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_is_keyed() {
        let c = three_author_corpus();
        let fx = extractor(&c);
        let g = c.graph_at(300);
        let ctx = ScoringContext {
            features: &fx,
            graph: &g,
            t: 300,
        };
        let m = ScorerModel::heuristic(ModelKind::Random, 7).unwrap();
        let a = m.score(&ctx, 0, 1).unwrap();
        assert_eq!(a, m.score(&ctx, 0, 1).unwrap());
        assert!((0.0..1.0).contains(&a));
    }

    #[test]
    fn site_baselines() {
        let c = three_author_corpus();
        let fx = extractor(&c);
        let g = c.graph_at(300);
        let ctx = ScoringContext {
            features: &fx,
            graph: &g,
            t: 300,
        };
        let h = c.history();
        let p = |a: &str, s: &str| h.pair_ix(&AuthorSitePair::new(a, s)).unwrap();
        let score = |k| {
            ScorerModel::heuristic(k, 0)
                .unwrap()
                .score(&ctx, p("b", "sb"), p("a", "sa"))
                .unwrap()
        };
        assert_eq!(score(ModelKind::MostInits), 1.0);
        assert_eq!(score(ModelKind::MostJournals), 4.0);
        assert_eq!(score(ModelKind::RecentInits), -hours(200));
        assert_eq!(score(ModelKind::NewestAuthor), -hours(300));
        let other = ScorerModel::heuristic(ModelKind::MostInteractive, 0).unwrap();
        assert_eq!(other.score(&ctx, p("a", "sa"), p("b", "sb")).unwrap(), 1.0);
        assert!(ScorerModel::heuristic(ModelKind::Mlp, 0).is_err());
    }

    #[test]
    fn matrix_matches_pairwise_and_file_round_trips() {
        let c = three_author_corpus();
        let fx = extractor(&c);
        let features = FeatureConfig {
            embedder: EmbedderSpec::Hashing {
                dim: 8,
                seed: 0,
                ngram_max: 2,
            },
            set: FeatureSet::ALL,
        };
        let h = c.history();
        let samples: Vec<TrainingSample> = (0..3u32)
            .flat_map(|i| {
                let src = h.pair_ids(i);
                (0..3u32).filter(move |&j| j != i).map(move |j| (src.clone(), j))
            })
            .enumerate()
            .map(|(n, (src, j))| TrainingSample {
                initiation: n,
                source: src,
                candidate: h.pair_ids(j),
                label: (n % 2) as u8,
                timestamp_ms: 150,
            })
            .collect();
        let cfg = MlpConfig {
            hidden_units: 4,
            epochs: 5,
            ..MlpConfig::study()
        };
        let (m, _) = train_mlp(&fx, &features, &samples, &cfg).unwrap();
        let g = c.graph_at(300);
        let ctx = ScoringContext {
            features: &fx,
            graph: &g,
            t: 300,
        };
        let mat = m.score_matrix(&ctx, &[0, 1], &[0, 1, 2]).unwrap();
        for (ci, row) in mat.iter().enumerate() {
            for (si, v) in row.iter().enumerate() {
                assert_eq!(*v, m.score(&ctx, si as u32, ci as u32).unwrap());
            }
        }
        let back = ScorerModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), m.to_bytes());
        let mut bad = m.to_bytes();
        bad[0] = b'X';
        assert!(ScorerModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn search_tie_breaks() {
        let a = MlpConfig {
            hidden_units: 300,
            dropout: 0.1,
            ..MlpConfig::study()
        };
        let b = MlpConfig {
            hidden_units: 100,
            dropout: 0.5,
            ..MlpConfig::study()
        };
        let c = MlpConfig {
            hidden_units: 100,
            dropout: 0.1,
            ..MlpConfig::study()
        };
        let r = hyperparameter_search(&[a.clone(), b.clone(), c.clone()], &[1, 2, 3], |_| Ok(0.5)).unwrap();
        assert_eq!(r.best, c);
        let r = hyperparameter_search(&[a.clone(), b.clone()], &[1, 2, 3], |cfg| {
            Ok(if cfg.hidden_units == 300 { 0.9 } else { 0.1 })
        })
        .unwrap();
        assert_eq!(r.best, a);
        assert_eq!(hyperparameter_search(&[b.clone()], &[0], |_| Ok(0.0)).unwrap().best, b);
        assert_eq!(default_grid(&MlpConfig::study()).len(), 27);
    }
}
