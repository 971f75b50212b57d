use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recengine_core::evaluation::*;
use recengine_core::event_log::*;
use recengine_core::features::*;
use recengine_core::feedback::*;
use recengine_core::models::*;

fn corpus(n: usize, days: u32, seed: u64) -> Corpus {
    let mut cfg = SyntheticConfig {
        n_authors: n,
        n_sites: n,
        horizon_days: days,
        reciprocity: 1.0,
        seed,
        ..Default::default()
    };
    cfg.rates.journal_update = 0.6;
    cfg.rates.visit = 0.1;
    Corpus::new(generate_synthetic_log(&cfg).unwrap())
}

fn feature_config() -> FeatureConfig {
    FeatureConfig {
        embedder: EmbedderSpec::hashing(16),
        set: FeatureSet::ALL,
    }
}

/// Scores every (source pair, candidate pair) one at a time against a freshly
/// built graph, merges by hand and counts sites scoring at least the target.
fn brute_ranks(model: &ScorerModel, fx: &FeatureExtractor, test: &[usize]) -> Vec<(usize, usize)> {
    let corpus = fx.corpus();
    let h = corpus.history();
    let mut out = Vec::new();
    for &i in test {
        let init = &corpus.initiations()[i];
        let t = init.timestamp_ms;
        let u = h.user(&init.source_author).unwrap();
        let sources: Vec<PairIx> = (0..h.pairs().len() as PairIx)
            .filter(|&p| h.pair(p).author == u && h.pair(p).is_eligible(t))
            .collect();
        if sources.is_empty() {
            continue;
        }
        let graph = corpus.graph_at(t);
        let ctx = ScoringContext {
            features: fx,
            graph: &graph,
            t,
        };
        let mut site_best: BTreeMap<SiteIx, f64> = BTreeMap::new();
        for c in h.candidate_pairs_ix(Some(u), t) {
            let mean = sources.iter().map(|&s| model.score(&ctx, s, c).unwrap()).sum::<f64>() / sources.len() as f64;
            let e = site_best.entry(h.pair(c).site).or_insert(f64::NEG_INFINITY);
            *e = e.max(mean);
        }
        let Some(&target) = site_best.get(&h.site(&init.target_site).unwrap()) else {
            continue;
        };
        out.push((i, site_best.values().filter(|&&s| s >= target).count()));
    }
    out
}

fn chronological(corpus: &Corpus, mut ix: Vec<usize>) -> Vec<usize> {
    ix.sort_by_key(|&i| (corpus.initiations()[i].timestamp_ms, i));
    ix
}

#[test]
fn evaluator_matches_brute_force_ranks() {
    let corpus = corpus(150, 21, 4);
    let fcfg = feature_config();
    let fx = FeatureExtractor::new(&corpus, &fcfg).unwrap();
    let n = corpus.initiations().len();
    let split = n * 2 / 3;
    let set = build_training_samples(&corpus, &(0..split).collect::<Vec<_>>(), 1);
    let cfg = MlpConfig {
        hidden_units: 8,
        epochs: 15,
        ..MlpConfig::study()
    };
    let (mlp, _) = train_mlp(&fx, &fcfg, &set.samples, &cfg).unwrap();
    let test = chronological(&corpus, subsample(&(split..n).collect::<Vec<_>>(), 60, 2));
    for model in [
        mlp,
        ScorerModel::heuristic(ModelKind::PeopleYouKnow, 0).unwrap(),
        ScorerModel::heuristic(ModelKind::Random, 0).unwrap(),
    ] {
        let run = Evaluator::new(&model, &fx).evaluate(&test).unwrap();
        let got: Vec<(usize, usize)> = run.results.iter().map(|r| (r.initiation, r.rank)).collect();
        let oracle = brute_ranks(&model, &fx, &test);
        assert!(oracle.len() >= 20, "{} ranked", oracle.len());
        assert_eq!(got, oracle, "{}", model.kind);
        let m = compute_metrics(&run.results).unwrap();
        let k = oracle.len() as f64;
        assert_eq!(m.mrr, oracle.iter().map(|&(_, r)| 1.0 / r as f64).sum::<f64>() / k);
        assert_eq!(m.hr1, oracle.iter().filter(|&&(_, r)| r == 1).count() as f64 / k);
        assert_eq!(m.hr5, oracle.iter().filter(|&&(_, r)| r <= 5).count() as f64 / k);
    }
}

#[test]
fn random_mrr_matches_harmonic_expectation() {
    let corpus = corpus(300, 21, 8);
    let fx = FeatureExtractor::new(&corpus, &feature_config()).unwrap();
    let n = corpus.initiations().len();
    let test: Vec<usize> = (n / 3..n).collect();
    let model = ScorerModel::heuristic(ModelKind::Random, 5).unwrap();
    let run = Evaluator::new(&model, &fx).evaluate(&test).unwrap();
    let m = compute_metrics(&run.results).unwrap();
    // each rank is uniform on 1..=n_candidates
    let (mut mean, mut var) = (0.0, 0.0);
    for r in &run.results {
        let c = r.n_candidates as f64;
        let h1: f64 = (1..=r.n_candidates).map(|k| 1.0 / k as f64).sum::<f64>() / c;
        let h2: f64 = (1..=r.n_candidates).map(|k| 1.0 / (k * k) as f64).sum::<f64>() / c;
        mean += h1;
        var += h2 - h1 * h1;
    }
    let k = run.results.len() as f64;
    assert!(k >= 200.0, "{k} ranked");
    let (mean, sd) = (mean / k, var.sqrt() / k);
    assert!((m.mrr - mean).abs() <= 3.0 * sd, "mrr {} expected {mean} ± {sd}", m.mrr);
}

#[test]
fn tied_top_pair_shares_rank_two() {
    let scores = [0.9, 0.9, 0.3, 0.1];
    assert_eq!(competition_rank(&scores, 0.9), 2);
    assert!(scores.iter().all(|&s| competition_rank(&scores, s) != 1));
    let r = RankResult {
        initiation: 0,
        rank: competition_rank(&scores, 0.9),
        n_candidates: 4,
        timestamp_ms: 0,
    };
    assert_eq!(r.reciprocal_rank(), 0.5);
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sizes = [7, 6, 5, 1];
    let mut net = Mlp::new(&sizes, &mut rng);
    for p in net.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let xs: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..7).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ys: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for i in 0..xs.len() {
        let (_, grad) = net.loss_and_grad(&xs, &ys, &[i], None);
        for _ in 0..5 {
            let w = rng.random_range(0..net.params().len());
            let orig = net.params()[w];
            net.params_mut()[w] = orig + eps;
            let up = net.loss(&xs, &ys, &[i]);
            net.params_mut()[w] = orig - eps;
            let down = net.loss(&xs, &ys, &[i]);
            net.params_mut()[w] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (grad[w] - numeric).abs() / grad[w].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            probes += 1;
        }
    }
    assert!(probes >= 50);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn planted_winner_is_selected() {
    let grid = default_grid(&MlpConfig::study());
    let planted = grid[13].clone();
    let res = hyperparameter_search(&grid, &[1, 2, 3], |c| {
        let hit = MlpConfig {
            seed: planted.seed,
            ..c.clone()
        } == planted;
        Ok(if hit { 1.0 } else { 0.2 })
    })
    .unwrap();
    assert_eq!(res.best, planted);
}
