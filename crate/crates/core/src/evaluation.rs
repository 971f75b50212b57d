//! Chronological offline evaluation: splits, competition ranks, MRR/HR and
//! coverage of top-k recommendation sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::batcher::merge_pair_scores_to_sites;
use crate::error::{Error, Result};
use crate::event_log::{HOUR_MS, WEEK_MS};
use crate::features::FeatureExtractor;
use crate::feedback::{Initiation, InteractionGraph, SiteIx, UserIx};
use crate::keyed::Key;
use crate::models::{median, ScorerModel, ScoringContext};

/// Offset after the end of training at which coverage is measured.
pub const COVERAGE_OFFSET_MS: i64 = 12 * HOUR_MS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end_ts: i64,
    pub validation_end_ts: i64,
    pub test_end_ts: i64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_end_ts < self.validation_end_ts && self.validation_end_ts < self.test_end_ts {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "split boundaries must be strictly increasing: {} < {} < {}",
                self.train_end_ts, self.validation_end_ts, self.test_end_ts
            )))
        }
    }

    /// Boundaries at whole days after `start_ms`.
    pub fn from_days(start_ms: i64, train_days: f64, validation_days: f64, test_days: f64) -> Self {
        let day = 24.0 * HOUR_MS as f64;
        let train_end_ts = start_ms + (train_days * day) as i64;
        let validation_end_ts = train_end_ts + (validation_days * day) as i64;
        SplitSpec {
            train_end_ts,
            validation_end_ts,
            test_end_ts: validation_end_ts + (test_days * day) as i64,
        }
    }
}

/// Initiation indices per split. Initiations at or after `test_end_ts` are
/// counted in `n_after_test` and belong to no split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub n_after_test: usize,
}

pub fn chronological_split(initiations: &[Initiation], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut s = Splits::default();
    for (i, init) in initiations.iter().enumerate() {
        let t = init.timestamp_ms;
        if t < spec.train_end_ts {
            s.train.push(i);
        } else if t < spec.validation_end_ts {
            s.validation.push(i);
        } else if t < spec.test_end_ts {
            s.test.push(i);
        } else {
            s.n_after_test += 1;
        }
    }
    for (name, v) in [("train", &s.train), ("validation", &s.validation), ("test", &s.test)] {
        if v.is_empty() {
            warn!("{name} split is empty");
        }
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub initiation: usize,
    /// Competition rank among candidate sites; ties share the worst rank.
    pub rank: usize,
    /// Number of candidate sites.
    pub n_candidates: usize,
    pub timestamp_ms: i64,
}

impl RankResult {
    pub fn reciprocal_rank(&self) -> f64 {
        1.0 / self.rank as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankOutcome {
    Ranked(RankResult),
    /// The source author has no eligible pair at `t`.
    NoSourcePair,
    /// The target site is not among the candidate sites at `t`.
    TargetNotCandidate,
}

/// `#{sites with score >= target}`.
pub fn competition_rank(scores: &[f64], target: f64) -> usize {
    scores.iter().filter(|&&s| s >= target).count()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub results: Vec<RankResult>,
    pub skipped_no_source: usize,
    pub skipped_target_absent: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hr1: f64,
    pub hr5: f64,
    pub n_evaluated: usize,
    pub median_candidates: f64,
}

pub fn compute_metrics(results: &[RankResult]) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::InsufficientData("no ranked initiations to score".into()));
    }
    let n = results.len() as f64;
    let hr = |k: usize| results.iter().filter(|r| r.rank <= k).count() as f64 / n;
    let candidates: Vec<f64> = results.iter().map(|r| r.n_candidates as f64).collect();
    Ok(MetricsReport {
        mrr: results.iter().map(RankResult::reciprocal_rank).sum::<f64>() / n,
        hr1: hr(1),
        hr5: hr(5),
        n_evaluated: results.len(),
        median_candidates: median(&candidates),
    })
}

/// Per-field median over reports, e.g. from runs with different seeds.
pub fn median_metrics(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::InsufficientData("no reports to aggregate".into()));
    }
    let m = |f: fn(&MetricsReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(MetricsReport {
        mrr: m(|r| r.mrr),
        hr1: m(|r| r.hr1),
        hr5: m(|r| r.hr5),
        n_evaluated: m(|r| r.n_evaluated as f64) as usize,
        median_candidates: m(|r| r.median_candidates),
    })
}

/// Deterministic subset of at most `n` items, returned in original order.
pub fn subsample(items: &[usize], n: usize, seed: u64) -> Vec<usize> {
    if items.len() <= n {
        return items.to_vec();
    }
    let mut keyed: Vec<(u64, usize)> = items
        .iter()
        .map(|&i| (Key::new(seed).str("subsample").int(i as i64).finish(), i))
        .collect();
    keyed.sort_unstable();
    let mut out: Vec<usize> = keyed[..n].iter().map(|&(_, i)| i).collect();
    out.sort_unstable();
    out
}

/// Ranks and recommends with one model over one corpus.
pub struct Evaluator<'a, 'c> {
    pub model: &'a ScorerModel,
    pub features: &'a FeatureExtractor<'c>,
}

impl<'a, 'c> Evaluator<'a, 'c> {
    pub fn new(model: &'a ScorerModel, features: &'a FeatureExtractor<'c>) -> Self {
        Evaluator { model, features }
    }

    /// Merged site scores for `source` at `t`, or `None` without an eligible source pair.
    pub fn site_scores(
        &self,
        graph: &InteractionGraph,
        source: UserIx,
        t: i64,
    ) -> Result<Option<BTreeMap<SiteIx, f64>>> {
        let h = self.features.corpus().history();
        let sources = h.eligible_pairs_of_user(source, t);
        if sources.is_empty() {
            return Ok(None);
        }
        let candidates = h.candidate_pairs_ix(Some(source), t);
        let ctx = ScoringContext {
            features: self.features,
            graph,
            t,
        };
        let scores = self.model.score_matrix(&ctx, &sources, &candidates)?;
        let sites: Vec<SiteIx> = candidates.iter().map(|&c| h.pair(c).site).collect();
        Ok(Some(merge_pair_scores_to_sites(&sites, &scores)))
    }

    /// Top `k` sites by merged score; ties broken by the model's keyed site hash.
    pub fn top_k(&self, graph: &InteractionGraph, source: UserIx, t: i64, k: usize) -> Result<Vec<(SiteIx, f64)>> {
        let Some(scores) = self.site_scores(graph, source, t)? else {
            return Ok(Vec::new());
        };
        Ok(self.sorted_sites(scores).into_iter().take(k).collect())
    }

    /// All merged sites, best first.
    pub fn sorted_sites(&self, scores: BTreeMap<SiteIx, f64>) -> Vec<(SiteIx, f64)> {
        let h = self.features.corpus().history();
        let mut v: Vec<(SiteIx, f64, u64)> = scores
            .into_iter()
            .map(|(s, x)| (s, x, self.model.tie_break(h.site_id(s))))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
        v.into_iter().map(|(s, x, _)| (s, x)).collect()
    }

    pub fn rank_target(&self, graph: &InteractionGraph, initiation: usize) -> Result<RankOutcome> {
        let corpus = self.features.corpus();
        let t = corpus.initiations()[initiation].timestamp_ms;
        let (u, target) = corpus.initiation_ix(initiation);
        let Some(scores) = self.site_scores(graph, u, t)? else {
            return Ok(RankOutcome::NoSourcePair);
        };
        let Some(&target_score) = scores.get(&target) else {
            return Ok(RankOutcome::TargetNotCandidate);
        };
        let all: Vec<f64> = scores.values().copied().collect();
        Ok(RankOutcome::Ranked(RankResult {
            initiation,
            rank: competition_rank(&all, target_score),
            n_candidates: all.len(),
            timestamp_ms: t,
        }))
    }

    /// Ranks each initiation with the network replayed up to its timestamp.
    pub fn evaluate(&self, initiations: &[usize]) -> Result<EvalRun> {
        let corpus = self.features.corpus();
        let mut order = initiations.to_vec();
        order.sort_by_key(|&i| (corpus.initiations()[i].timestamp_ms, i));
        let mut cursor = corpus.graph_cursor();
        let mut run = EvalRun::default();
        for i in order {
            let graph = cursor.advance_to(corpus.initiations()[i].timestamp_ms);
            match self.rank_target(graph, i)? {
                RankOutcome::Ranked(r) => run.results.push(r),
                RankOutcome::NoSourcePair => run.skipped_no_source += 1,
                RankOutcome::TargetNotCandidate => run.skipped_target_absent += 1,
            }
        }
        Ok(run)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    pub n_authors: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            n_authors: 1000,
            k: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub t: i64,
    pub n_authors: usize,
    pub k: usize,
    /// Unique recommended sites, |R|.
    pub r_size: usize,
    /// |R| / (n_authors · k).
    pub pct_unique: f64,
    /// Mean over authors of the youngest site age in their set, in weeks.
    pub mmst_weeks: f64,
    /// Share of recommended sites that are siloed.
    pub siloed_pct_recced: f64,
    /// Share of all candidate sites (across sampled authors) that are siloed.
    pub siloed_pct_unrecced: f64,
    pub siloed_ratio: Option<f64>,
}

/// A site none of whose current authors has received an initiation.
pub fn is_siloed(fx: &FeatureExtractor, graph: &InteractionGraph, site: SiteIx, t: i64) -> bool {
    let h = fx.corpus().history();
    h.site_authors_at(site, t).all(|u| graph.indegree(u) == 0)
}

/// Distinct items across `sets` and their share of the `sets.len() · k` slots.
pub fn unique_share<S: Ord>(sets: &[Vec<S>], k: usize) -> (usize, f64) {
    let unique: BTreeSet<&S> = sets.iter().flatten().collect();
    let slots = sets.len() * k;
    let share = if slots == 0 {
        0.0
    } else {
        unique.len() as f64 / slots as f64
    };
    (unique.len(), share)
}

/// Uncapped top-k sets for a sample of eligible, active authors at `t`.
pub fn coverage_eval(
    model: &ScorerModel,
    fx: &FeatureExtractor,
    t: i64,
    cfg: &CoverageConfig,
) -> Result<CoverageReport> {
    if cfg.k == 0 || cfg.n_authors == 0 {
        return Err(Error::InvalidConfig("coverage needs k >= 1 and n_authors >= 1".into()));
    }
    let corpus = fx.corpus();
    let h = corpus.history();
    let pool = h.eligible_active_authors(t);
    if pool.len() < cfg.n_authors {
        warn!(
            "only {} eligible active authors at t; sampling all instead of {}",
            pool.len(),
            cfg.n_authors
        );
    }
    let authors = subsample(
        &pool.iter().map(|&u| u as usize).collect::<Vec<_>>(),
        cfg.n_authors,
        cfg.seed,
    );
    if authors.is_empty() {
        return Err(Error::InsufficientData(
            "no eligible active authors for coverage".into(),
        ));
    }
    let graph = corpus.graph_at(t);
    let ev = Evaluator::new(model, fx);
    let mut sets: Vec<Vec<SiteIx>> = Vec::with_capacity(authors.len());
    let mut candidate_sites: BTreeSet<SiteIx> = BTreeSet::new();
    let mut min_tenures = Vec::new();
    for &u in &authors {
        let Some(scores) = ev.site_scores(&graph, u as UserIx, t)? else {
            sets.push(Vec::new());
            continue;
        };
        candidate_sites.extend(scores.keys().copied());
        let top: Vec<SiteIx> = ev
            .sorted_sites(scores)
            .into_iter()
            .take(cfg.k)
            .map(|(s, _)| s)
            .collect();
        if let Some(min) = top
            .iter()
            .filter_map(|&s| h.site_first_update(s))
            .map(|f| (t - f) as f64 / WEEK_MS as f64)
            .min_by(f64::total_cmp)
        {
            min_tenures.push(min);
        }
        sets.push(top);
    }
    let (r_size, pct_unique) = unique_share(&sets, cfg.k);
    let recommended: BTreeSet<SiteIx> = sets.into_iter().flatten().collect();
    let siloed_share = |sites: &BTreeSet<SiteIx>| {
        if sites.is_empty() {
            0.0
        } else {
            sites.iter().filter(|&&s| is_siloed(fx, &graph, s, t)).count() as f64 / sites.len() as f64
        }
    };
    let recced = siloed_share(&recommended);
    let all = siloed_share(&candidate_sites);
    Ok(CoverageReport {
        t,
        n_authors: authors.len(),
        k: cfg.k,
        r_size,
        pct_unique,
        mmst_weeks: if min_tenures.is_empty() {
            0.0
        } else {
            min_tenures.iter().sum::<f64>() / min_tenures.len() as f64
        },
        siloed_pct_recced: recced,
        siloed_pct_unrecced: all,
        siloed_ratio: (all > 0.0).then(|| recced / all),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeeklyBucket {
    pub week: i64,
    pub mrr: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    /// Two-sided p-value for slope = 0.
    pub p_value: f64,
    pub buckets: Vec<WeeklyBucket>,
}

/// Regresses weekly MRR on weeks since `train_end_ts`.
pub fn drift_check(results: &[RankResult], train_end_ts: i64) -> Result<DriftReport> {
    let mut by_week: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in results {
        let week = (r.timestamp_ms - train_end_ts).div_euclid(WEEK_MS);
        by_week.entry(week).or_default().push(r.reciprocal_rank());
    }
    let buckets: Vec<WeeklyBucket> = by_week
        .into_iter()
        .map(|(week, rr)| WeeklyBucket {
            week,
            mrr: rr.iter().sum::<f64>() / rr.len() as f64,
            n: rr.len(),
        })
        .collect();
    let xs: Vec<f64> = buckets.iter().map(|b| b.week as f64).collect();
    let ys: Vec<f64> = buckets.iter().map(|b| b.mrr).collect();
    let fit = simple_regression(&xs, &ys)?;
    Ok(DriftReport {
        slope: fit.slope,
        intercept: fit.intercept,
        std_err: fit.std_err,
        p_value: fit.p_value,
        buckets,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    pub p_value: f64,
}

/// Least-squares line with a t-test on the slope; needs at least 3 points.
pub fn simple_regression(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return Err(Error::InsufficientData(format!(
            "regression needs >= 3 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("regression x values are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let std_err = (sse / (nf - 2.0) / sxx).sqrt();
    let p_value = if std_err == 0.0 {
        if slope == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = StudentsT::new(0.0, 1.0, nf - 2.0).expect("df > 0");
        2.0 * t.cdf(-(slope / std_err).abs())
    };
    Ok(LineFit {
        slope,
        intercept,
        std_err,
        p_value,
    })
}

/// Aligned text table: model, MRR, HR@1, HR@5 and optional coverage columns.
pub fn format_table(rows: &[(String, MetricsReport, Option<CoverageReport>)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>7} {:>8} {:>8} {:>6} {:>9} {:>11} {:>22}",
        "Model", "MRR", "HR@1", "HR@5", "|R|", "%Unique", "MMST", "Siloed R / U = ratio"
    );
    for (name, m, cov) in rows {
        let _ = write!(
            out,
            "{:<16} {:>7.3} {:>7.2}% {:>7.2}%",
            name,
            m.mrr,
            100.0 * m.hr1,
            100.0 * m.hr5
        );
        match cov {
            Some(c) => {
                let ratio = c.siloed_ratio.map_or("n/a".to_string(), |r| format!("{r:.2}"));
                let _ = writeln!(
                    out,
                    " {:>6} {:>8.2}% {:>5.1} weeks {:>7.1}% / {:.1}% = {}",
                    c.r_size,
                    100.0 * c.pct_unique,
                    c.mmst_weeks,
                    100.0 * c.siloed_pct_recced,
                    100.0 * c.siloed_pct_unrecced,
                    ratio
                );
            }
            None => out.push('\n'),
        }
    }
    out
}
