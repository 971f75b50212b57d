//! Pipeline stages shared by the individual subcommands and `pipeline`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use log::{info, warn};
use serde::Serialize;

use recengine_core::batcher::{
    build_pseudo_control_sets, draft_assign, draft_audit, rank_sites, render_email, site_metadata_from_log,
    write_batch, DraftAudit, RankedSite,
};
use recengine_core::evaluation::{
    chronological_split, compute_metrics, coverage_eval, subsample, CoverageConfig, CoverageReport, Evaluator,
    MetricsReport, SplitSpec, Splits, COVERAGE_OFFSET_MS,
};
use recengine_core::event_log::{EventLog, SiteId, UserId};
use recengine_core::features::{EmbedderSpec, EmbeddingTable, FeatureConfig, FeatureExtractor};
use recengine_core::feedback::{build_training_samples, Corpus, SampleSet};
use recengine_core::models::{fit_cossim, train_mf_model, train_mlp, ModelKind, ScorerModel, TrainingTrace};

use crate::config::RunConfig;
use crate::usage;

/// Feature settings with `paths.embeddings`, when given, replacing the embedder.
pub fn feature_config(cfg: &RunConfig) -> anyhow::Result<FeatureConfig> {
    let mut fc = cfg.features.clone();
    if let Some(path) = &cfg.paths.embeddings {
        let table = EmbeddingTable::load(path)?;
        fc.embedder = EmbedderSpec::Precomputed {
            dim: table.dim,
            path: path.clone(),
        };
    }
    Ok(fc)
}

pub fn split(cfg: &RunConfig, corpus: &Corpus) -> anyhow::Result<(SplitSpec, Splits)> {
    let log = corpus.log();
    let (Some(first), Some(last)) = (log.first_ts(), log.last_ts()) else {
        return Err(usage("the event log is empty"));
    };
    let spec = cfg.split_spec(first, last);
    let splits = chronological_split(corpus.initiations(), &spec)?;
    info!(
        "split: {} train, {} validation, {} test initiations",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    Ok((spec, splits))
}

pub struct Trained {
    pub model: ScorerModel,
    pub trace: Option<TrainingTrace>,
    pub samples: SampleSetSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleSetSummary {
    pub n_initiations: usize,
    pub n_samples: usize,
    pub n_positive: usize,
    pub missing_negatives: usize,
    pub skipped_initiations: usize,
}

impl SampleSetSummary {
    pub fn new(n_initiations: usize, set: &SampleSet) -> Self {
        SampleSetSummary {
            n_initiations,
            n_samples: set.samples.len(),
            n_positive: set.n_positive(),
            missing_negatives: set.missing_negatives,
            skipped_initiations: set.skipped_initiations,
        }
    }
}

/// Fits `kind` on samples built from `initiations`.
pub fn train(cfg: &RunConfig, corpus: &Corpus, kind: ModelKind, initiations: &[usize]) -> anyhow::Result<Trained> {
    if kind.is_heuristic() {
        return Ok(Trained {
            model: ScorerModel::heuristic(kind, cfg.seed)?,
            trace: None,
            samples: SampleSetSummary::new(0, &SampleSet::default()),
        });
    }
    let set = build_training_samples(corpus, initiations, cfg.seed);
    let samples = SampleSetSummary::new(initiations.len(), &set);
    info!(
        "{kind}: {} training samples from {} initiations",
        set.samples.len(),
        initiations.len()
    );
    if set.samples.is_empty() {
        bail!("no training samples: the training split has no initiation with eligible source and target pairs");
    }
    let fc = feature_config(cfg)?;
    let (model, trace) = match kind {
        ModelKind::Mlp => {
            let fx = FeatureExtractor::new(corpus, &fc)?;
            let (m, t) = train_mlp(&fx, &fc, &set.samples, &cfg.model.mlp)?;
            (m, Some(t))
        }
        ModelKind::CosSim => {
            let fx = FeatureExtractor::new(corpus, &fc)?;
            (fit_cossim(&fx, &fc, &set.samples)?, None)
        }
        ModelKind::Mf => (train_mf_model(&set.samples, &cfg.model.mf)?, None),
        _ => unreachable!("heuristics handled above"),
    };
    Ok(Trained { model, trace, samples })
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelMetrics {
    pub model: String,
    pub metrics: MetricsReport,
    pub coverage: CoverageReport,
    pub skipped_no_source: usize,
    pub skipped_target_absent: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsFile {
    pub split: SplitSpec,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub n_test_sampled: usize,
    pub coverage_t: i64,
    pub models: Vec<ModelMetrics>,
}

impl MetricsFile {
    pub fn table(&self) -> String {
        let rows: Vec<_> = self
            .models
            .iter()
            .map(|m| (m.model.clone(), m.metrics.clone(), Some(m.coverage.clone())))
            .collect();
        recengine_core::evaluation::format_table(&rows)
    }
}

pub fn evaluate_model(
    cfg: &RunConfig,
    corpus: &Corpus,
    model: &ScorerModel,
    test: &[usize],
    coverage_t: i64,
) -> anyhow::Result<ModelMetrics> {
    let fx = FeatureExtractor::new(corpus, &model.features)?;
    let run = Evaluator::new(model, &fx).evaluate(test)?;
    let metrics = compute_metrics(&run.results).with_context(|| format!("evaluating {}", model.kind))?;
    let coverage = coverage_eval(
        model,
        &fx,
        coverage_t,
        &CoverageConfig {
            n_authors: cfg.evaluation.coverage_authors,
            k: cfg.evaluation.k,
            seed: cfg.seed,
        },
    )?;
    Ok(ModelMetrics {
        model: model.kind.to_string(),
        metrics,
        coverage,
        skipped_no_source: run.skipped_no_source,
        skipped_target_absent: run.skipped_target_absent,
    })
}

/// Ranks the (sampled) test split with `model` and the configured baselines.
pub fn evaluate(
    cfg: &RunConfig,
    corpus: &Corpus,
    model: &ScorerModel,
    spec: &SplitSpec,
    splits: &Splits,
) -> anyhow::Result<MetricsFile> {
    let test = if cfg.evaluation.test_sample == 0 {
        splits.test.clone()
    } else {
        subsample(&splits.test, cfg.evaluation.test_sample, cfg.seed)
    };
    if test.is_empty() {
        bail!("the test split has no initiations");
    }
    let coverage_t = spec.train_end_ts + COVERAGE_OFFSET_MS;
    let mut models = vec![evaluate_model(cfg, corpus, model, &test, coverage_t)?];
    for &kind in &cfg.evaluation.baselines {
        if kind == model.kind {
            continue;
        }
        let baseline = train(cfg, corpus, kind, &splits.train)?.model;
        models.push(evaluate_model(cfg, corpus, &baseline, &test, coverage_t)?);
    }
    Ok(MetricsFile {
        split: *spec,
        n_train: splits.train.len(),
        n_validation: splits.validation.len(),
        n_test: splits.test.len(),
        n_test_sampled: test.len(),
        coverage_t,
        models,
    })
}

/// One participant id per line; blank lines and `#` comments are ignored.
pub fn read_participants(path: &Path) -> anyhow::Result<Vec<UserId>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(UserId::from)
        .collect())
}

/// Scoring instant for recommendations: configured, or just after the last event.
pub fn recommend_at(cfg: &RunConfig, log: &EventLog) -> anyhow::Result<i64> {
    match (cfg.recommend.at, log.last_ts()) {
        (Some(t), _) => Ok(t),
        (None, Some(last)) => Ok(last + 1),
        (None, None) => Err(usage("the event log is empty")),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchSummary {
    pub batch_id: String,
    pub t: i64,
    pub n_participants: usize,
    /// Requested participants with no eligible source pair at `t`.
    pub skipped: Vec<String>,
    /// Participants whose list ran out before every slot was filled.
    pub short: Vec<String>,
    pub n_sites: usize,
    pub max_site_count: usize,
    pub audit: DraftAudit,
}

/// Scores each participant's candidates at `t`, drafts capped sets and writes the batch directory.
pub fn recommend(
    cfg: &RunConfig,
    corpus: &Corpus,
    model: &ScorerModel,
    participants: Option<Vec<UserId>>,
    t: i64,
    dir: &Path,
) -> anyhow::Result<BatchSummary> {
    let h = corpus.history();
    let participants = match participants {
        Some(p) => p,
        None => {
            let pool: Vec<usize> = h.eligible_active_authors(t).into_iter().map(|u| u as usize).collect();
            subsample(&pool, cfg.recommend.participants, cfg.seed)
                .into_iter()
                .map(|u| h.user_id(u as u32).clone())
                .collect()
        }
    };
    let fx = FeatureExtractor::new(corpus, &model.features)?;
    let ev = Evaluator::new(model, &fx);
    let graph = corpus.graph_at(t);
    let mut lists: BTreeMap<UserId, Vec<RankedSite>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for p in participants {
        let scores = match h.user(&p) {
            Some(u) => ev.site_scores(&graph, u, t)?,
            None => None,
        };
        match scores {
            Some(s) if !s.is_empty() => {
                let by_id: BTreeMap<SiteId, f64> = s.into_iter().map(|(ix, x)| (h.site_id(ix).clone(), x)).collect();
                lists.insert(p, rank_sites(by_id, |site| model.tie_break(site)));
            }
            _ => {
                warn!("participant {p} has no eligible site or no candidates at t={t}; skipped");
                skipped.push(p.to_string());
            }
        }
    }
    if lists.is_empty() {
        bail!("no participant could be scored at t={t}");
    }
    let draft = draft_assign(&lists, &cfg.batch)?;
    let audit = draft_audit(&lists, &draft);
    let assigned: BTreeSet<SiteId> = draft.assigned_sites();
    let pseudo = build_pseudo_control_sets(&lists, &assigned, &cfg.batch.blocklist, cfg.batch.k);
    let metadata = site_metadata_from_log(corpus.log(), t);
    let emails = draft
        .sets
        .values()
        .map(|set| render_email(set, &metadata, &cfg.batch))
        .collect::<recengine_core::Result<Vec<_>>>()?;
    write_batch(dir, &cfg.batch, &draft, &emails, &pseudo, &BTreeSet::new())?;
    let counts = draft.assignment_counts();
    Ok(BatchSummary {
        batch_id: cfg.batch.batch_id.clone(),
        t,
        n_participants: lists.len(),
        skipped,
        short: draft.short.iter().map(ToString::to_string).collect(),
        n_sites: counts.len(),
        max_site_count: counts.values().copied().max().unwrap_or(0),
        audit,
    })
}
