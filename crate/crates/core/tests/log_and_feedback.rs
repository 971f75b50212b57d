use std::collections::{BTreeSet, HashMap};

use recengine_core::event_log::*;
use recengine_core::feedback::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const KINDS: [&str; 6] = ["journal_update", "reaction", "comment", "guestbook", "visit", "follow"];

/// Hand-rendered canonical JSON lines, independent of the serializer.
fn fixture_lines() -> Vec<String> {
    (0..50)
        .map(|i| {
            let kind = KINDS[i % 6];
            let mut line = format!(
                "{{\"ts\":{},\"kind\":\"{kind}\",\"actor\":\"u{}\",\"site\":\"s{}\"",
                1_000 + i * 37,
                i % 7,
                i % 5
            );
            if kind == "journal_update" {
                line += &format!(",\"content_ref\":\"c{i}\",\"text\":\"day {i} \\\"ok\\\" é\"");
            } else if kind == "comment" {
                line += &format!(",\"content_ref\":\"c{i}\"");
            }
            line + "}"
        })
        .collect()
}

#[test]
fn fifty_record_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let canonical = fixture_lines().join("\n") + "\n";

    let src = dir.path().join("in.jsonl");
    std::fs::write(&src, &canonical).unwrap();
    let out = dir.path().join("out.jsonl");
    write_event_log(&parse_event_log(&src).unwrap(), &out).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), canonical);

    // shuffled, spaced and with blank lines: canonicalizes to the same bytes
    let mut lines = fixture_lines();
    lines.reverse();
    let messy: String = lines.iter().map(|l| format!("{}\n\n", l.replace(',', ", "))).collect();
    std::fs::write(&src, messy).unwrap();
    let log = parse_event_log(&src).unwrap();
    assert!(log.reordered() > 0);
    write_event_log(&log, &out).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), canonical);
}

#[test]
fn uniform_targeting_passes_chi_square() {
    let n = 40;
    let cfg = SyntheticConfig {
        n_authors: n,
        n_sites: n,
        horizon_days: 40,
        homophily: 0.0,
        popularity_skew: 0.0,
        reciprocity: 0.0,
        revisit: 0.0,
        join_window_days: 0.0,
        rates: EventRates {
            journal_update: 0.5,
            reaction: 3.0,
            comment: 2.0,
            guestbook: 1.0,
            visit: 2.0,
            follow: 0.3,
        },
        seed: 11,
        ..Default::default()
    };
    let log = generate_synthetic_log(&cfg).unwrap();
    let mut observed: HashMap<&SiteId, f64> = HashMap::new();
    let mut expected: HashMap<&SiteId, f64> = HashMap::new();
    let sites: Vec<&SiteId> = log.authorship().keys().collect();
    assert_eq!(sites.len(), n);
    let mut total = 0;
    for r in log.records().iter().filter(|r| r.kind != EventKind::JournalUpdate) {
        *observed.entry(&r.site).or_default() += 1.0;
        // every site is open, the actor's own site is excluded
        for s in &sites {
            if !log.is_author_at(&r.actor, s, i64::MAX) {
                *expected.entry(s).or_default() += 1.0 / (n - 1) as f64;
            }
        }
        total += 1;
    }
    assert!(total >= 10_000, "{total} targeted events");
    let stat: f64 = sites
        .iter()
        .map(|s| {
            let (o, e) = (observed.get(s).copied().unwrap_or(0.0), expected[s]);
            (o - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 = {stat}, p = {p}");
}

fn small_log(n_events_target: usize, seed: u64) -> EventLog {
    let cfg = SyntheticConfig {
        n_authors: 12,
        n_sites: 10,
        horizon_days: 20,
        rates: EventRates {
            journal_update: 0.4,
            reaction: 0.3,
            comment: 0.2,
            guestbook: 0.1,
            visit: 0.2,
            follow: 0.05,
        },
        reciprocity: 1.0,
        seed,
        ..Default::default()
    };
    let log = generate_synthetic_log(&cfg).unwrap();
    let records = log.records()[..n_events_target.min(log.len())].to_vec();
    EventLog::from_records(records).unwrap()
}

#[test]
fn initiations_match_quadratic_scan() {
    let log = small_log(200, 3);
    assert_eq!(log.len(), 200);
    let recs = log.records();
    let updated_before = |actor: &UserId, site: Option<&SiteId>, t: i64| {
        recs.iter().any(|r| {
            r.kind == EventKind::JournalUpdate
                && &r.actor == actor
                && site.is_none_or(|s| &r.site == s)
                && r.timestamp_ms < t
        })
    };
    let qualifies = |i: usize| {
        let r = &recs[i];
        r.kind.is_interaction()
            && updated_before(&r.actor, None, r.timestamp_ms)
            && !updated_before(&r.actor, Some(&r.site), r.timestamp_ms)
    };
    let mut oracle = Vec::new();
    for i in 0..recs.len() {
        if qualifies(i)
            && !(0..i).any(|j| recs[j].actor == recs[i].actor && recs[j].site == recs[i].site && qualifies(j))
        {
            oracle.push((recs[i].actor.clone(), recs[i].site.clone(), recs[i].timestamp_ms));
        }
    }
    let got: Vec<_> = extract_initiations(&log)
        .into_iter()
        .map(|x| (x.source_author, x.target_site, x.timestamp_ms))
        .collect();
    assert!(!oracle.is_empty());
    assert_eq!(got, oracle);
}

#[test]
fn candidates_match_brute_force_filter() {
    let log = small_log(500, 5);
    let recs = log.records().to_vec();
    let history = History::new(log.clone());
    let span = recs.last().unwrap().timestamp_ms - recs[0].timestamp_ms;
    let week = 7 * 24 * 3_600_000;
    let users: BTreeSet<UserId> = recs.iter().map(|r| r.actor.clone()).collect();
    let mut checked = 0;
    for frac in [0.4, 0.7, 1.0] {
        let t = recs[0].timestamp_ms + (span as f64 * frac) as i64;
        for source in &users {
            let mut oracle = BTreeSet::new();
            for author in &users {
                if author == source {
                    continue;
                }
                let active = recs.iter().any(|r| {
                    &r.actor == author && r.kind.is_activity() && r.timestamp_ms > t - week && r.timestamp_ms < t
                });
                if !active {
                    continue;
                }
                let sites: BTreeSet<&SiteId> = recs.iter().filter(|r| &r.actor == author).map(|r| &r.site).collect();
                for site in sites {
                    let n_updates = recs
                        .iter()
                        .filter(|r| {
                            r.kind == EventKind::JournalUpdate
                                && &r.actor == author
                                && &r.site == site
                                && r.timestamp_ms < t
                        })
                        .count();
                    let source_owns = recs.iter().any(|r| {
                        r.kind == EventKind::JournalUpdate
                            && &r.actor == source
                            && &r.site == site
                            && r.timestamp_ms < t
                    });
                    let touched = recs.iter().any(|r| {
                        r.kind.is_interaction() && &r.actor == source && &r.site == site && r.timestamp_ms < t
                    });
                    if n_updates >= 3 && !source_owns && !touched {
                        oracle.insert(AuthorSitePair::new(author.clone(), site.clone()));
                    }
                }
            }
            let got: BTreeSet<AuthorSitePair> = history.candidate_pairs(source, t).into_iter().collect();
            assert_eq!(got, oracle, "source {source} at {t}");
            checked += oracle.len();
        }
    }
    assert!(checked > 0);
}

#[test]
fn dyadic_indicators_match_bfs() {
    let log = small_log(2_000, 9);
    let corpus = Corpus::new(log);
    let t = corpus.log().last_ts().unwrap() + 1;
    let graph = corpus.graph_at(t);
    let h = corpus.history();
    let n = h.n_users();
    let mut adj = vec![BTreeSet::new(); n];
    let mut directed = BTreeSet::new();
    for e in corpus.edges().iter().filter(|e| e.from != e.to) {
        adj[e.from as usize].insert(e.to as usize);
        adj[e.to as usize].insert(e.from as usize);
        directed.insert((e.from as usize, e.to as usize));
    }
    let reach = |a: usize| {
        let mut seen = vec![false; n];
        let mut stack = vec![a];
        seen[a] = true;
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen
    };
    for a in 0..n {
        let r = reach(a);
        for b in 0..n {
            if a == b {
                continue;
            }
            let d = graph.dyadic(a as UserIx, b as UserIx).as_array();
            let fof = adj[a].iter().any(|&m| m != b && adj[m].contains(&b));
            let expect = [
                r[b] as u8 as f64,
                fof as u8 as f64,
                directed.contains(&(b, a)) as u8 as f64,
            ];
            assert_eq!(d, expect, "dyad {a}->{b}");
        }
    }
}
