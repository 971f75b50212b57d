use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recengine_core::analysis::{
    doubly_robust_effect, required_sample_size, BootstrapConfig, OutcomePanel, PanelRow, PowerRequest,
};
use recengine_core::batcher::{draft_assign, rank_sites, BatchConfig};
use recengine_core::evaluation::{subsample, Evaluator};
use recengine_core::event_log::{generate_synthetic_log, SiteId, SyntheticConfig, UserId};
use recengine_core::features::{EmbedderSpec, FeatureConfig, FeatureExtractor, FeatureSet};
use recengine_core::feedback::{build_training_samples, Corpus};
use recengine_core::keyed::Key;
use recengine_core::models::{train_mlp, MlpConfig, ModelKind, ScorerModel};

fn corpus(n: usize) -> Corpus {
    let cfg = SyntheticConfig {
        n_authors: n,
        n_sites: n,
        horizon_days: 14,
        reciprocity: 1.0,
        seed: 1,
        ..Default::default()
    };
    Corpus::new(generate_synthetic_log(&cfg).unwrap())
}

fn features() -> FeatureConfig {
    FeatureConfig {
        embedder: EmbedderSpec::hashing(32),
        set: FeatureSet::ALL,
    }
}

fn log_and_history(c: &mut Criterion) {
    let cfg = SyntheticConfig {
        n_authors: 500,
        n_sites: 500,
        horizon_days: 14,
        ..Default::default()
    };
    c.bench_function("generate 500-author log", |b| {
        b.iter(|| generate_synthetic_log(black_box(&cfg)).unwrap())
    });
    let log = generate_synthetic_log(&cfg).unwrap();
    c.bench_function("build corpus", |b| b.iter(|| Corpus::new(black_box(log.clone()))));
}

fn scoring(c: &mut Criterion) {
    let corpus = corpus(500);
    let fcfg = features();
    let fx = FeatureExtractor::new(&corpus, &fcfg).unwrap();
    let n = corpus.initiations().len();
    let train: Vec<usize> = (0..n * 7 / 10).collect();
    let set = build_training_samples(&corpus, &train, 0);
    let cfg = MlpConfig {
        hidden_units: 32,
        epochs: 20,
        ..MlpConfig::study()
    };
    let (mlp, _) = train_mlp(&fx, &fcfg, &set.samples, &cfg).unwrap();
    let test = subsample(&(n * 7 / 10..n).collect::<Vec<_>>(), 50, 0);

    let init = &corpus.initiations()[test[0]];
    let t = init.timestamp_ms;
    let graph = corpus.graph_at(t);
    let h = corpus.history();
    let pairs = h.candidate_pairs_ix(None, t);
    c.bench_function("assemble one feature vector", |b| {
        b.iter(|| {
            fx.assemble(&graph, black_box(pairs[0]), black_box(pairs[1]), t)
                .unwrap()
        })
    });
    let u = h.user(&init.source_author).unwrap();
    c.bench_function("MLP site scores for one author", |b| {
        b.iter(|| Evaluator::new(&mlp, &fx).site_scores(&graph, black_box(u), t).unwrap())
    });

    let mut group = c.benchmark_group("evaluate 50 initiations");
    group.sample_size(10);
    for model in [
        mlp.clone(),
        ScorerModel::heuristic(ModelKind::PeopleYouKnow, 0).unwrap(),
        ScorerModel::heuristic(ModelKind::MostInits, 0).unwrap(),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(model.kind), &model, |b, m| {
            b.iter(|| Evaluator::new(m, &fx).evaluate(&test).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("MLP 20 epochs", |b| {
        b.iter(|| train_mlp(&fx, &fcfg, &set.samples, &cfg).unwrap())
    });
    group.finish();
}

fn batching(c: &mut Criterion) {
    let sites: Vec<SiteId> = (0..2000).map(|i| SiteId::from(format!("s{i}"))).collect();
    let lists: BTreeMap<UserId, _> = (0..200)
        .map(|p| {
            let pid = UserId::from(format!("p{p}"));
            let scores = sites
                .iter()
                .map(|s| (s.clone(), Key::new(0).str(pid.as_str()).str(s.as_str()).unit()))
                .collect();
            (pid, rank_sites(scores, |_| 0))
        })
        .collect();
    let cfg = BatchConfig::default();
    c.bench_function("draft 200 participants", |b| {
        b.iter(|| draft_assign(black_box(&lists), &cfg).unwrap())
    });
}

fn analysis(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rows = (0..400)
        .map(|i| {
            let a: f64 = rng.random_range(-2.0..2.0);
            let treated = rng.random::<f64>() < 1.0 / (1.0 + (-a).exp());
            PanelRow {
                unit: format!("u{i}"),
                treated,
                covariates: vec![a, rng.random()],
                outcome: treated as u8 as f64 + a + rng.random::<f64>(),
            }
        })
        .collect();
    let panel = OutcomePanel {
        covariate_names: vec!["a".into(), "b".into()],
        rows,
        pre_weeks: 5,
        post_weeks: 13,
    };
    let mut group = c.benchmark_group("analysis");
    group.sample_size(10);
    group.bench_function("doubly robust, 1000 resamples", |b| {
        b.iter(|| doubly_robust_effect(black_box(&panel), &BootstrapConfig::new(0)).unwrap())
    });
    group.finish();
    c.bench_function("sample size at rho 0.12", |b| {
        b.iter(|| required_sample_size(black_box(&PowerRequest::new(0.12))).unwrap())
    });
}

criterion_group!(benches, log_and_history, scoring, batching, analysis);
criterion_main!(benches);
