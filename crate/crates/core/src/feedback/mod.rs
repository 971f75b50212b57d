//! Implicit feedback: initiations, the initiation network, candidate
//! enumeration and labelled training samples.
//!
//! An initiation is the first qualifying interaction (reaction, comment or
//! guestbook) by an author on a site they do not author. Each initiation
//! adds author→author edges to the network and yields positive samples for
//! every (eligible source pair × eligible target pair), each matched with one
//! uniformly drawn candidate pair as the negative.

mod graph;
mod history;

pub use graph::{Dyadic, GraphCursor, InteractionGraph, TimedEdge, UnionFind};
pub use history::{
    count_open, last_before, AuthorSitePair, History, PairInfo, PairIx, SiteIx, UserIx, ACTIVITY_KINDS,
    ELIGIBILITY_UPDATES,
};

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_log::{EventKind, EventLog, SiteId, UserId};
use crate::keyed::stream_rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Initiation {
    pub source_author: UserId,
    pub target_site: SiteId,
    pub timestamp_ms: i64,
    pub kind: EventKind,
}

/// First qualifying interaction per (author, site), in time order.
pub fn extract_initiations(log: &EventLog) -> Vec<Initiation> {
    let mut first_update: std::collections::HashMap<&UserId, i64> = Default::default();
    for authors in log.authorship().values() {
        for a in authors {
            let e = first_update.entry(&a.author).or_insert(a.first_update_ts);
            *e = (*e).min(a.first_update_ts);
        }
    }
    let mut seen: HashSet<(&UserId, &SiteId)> = HashSet::new();
    let mut out = Vec::new();
    for r in log.records() {
        if !r.kind.is_interaction() || seen.contains(&(&r.actor, &r.site)) {
            continue;
        }
        let is_author = matches!(first_update.get(&r.actor), Some(&ts) if ts < r.timestamp_ms);
        if !is_author || log.is_author_at(&r.actor, &r.site, r.timestamp_ms) {
            continue;
        }
        seen.insert((&r.actor, &r.site));
        out.push(Initiation {
            source_author: r.actor.clone(),
            target_site: r.site.clone(),
            timestamp_ms: r.timestamp_ms,
            kind: r.kind,
        });
    }
    out
}

/// A log together with its initiations and the derived initiation network.
#[derive(Debug)]
pub struct Corpus {
    history: History,
    initiations: Vec<Initiation>,
    initiation_ix: Vec<(UserIx, SiteIx)>,
    edges: Arc<Vec<TimedEdge>>,
    site_initiations: Vec<Vec<i64>>,
}

impl Corpus {
    pub fn new(log: EventLog) -> Self {
        let initiations = extract_initiations(&log);
        let history = History::new(log);
        let mut initiation_ix = Vec::with_capacity(initiations.len());
        let mut edges = Vec::new();
        let mut site_initiations = vec![Vec::new(); history.n_sites()];
        for init in &initiations {
            let u = history.user(&init.source_author).expect("initiator appears in log");
            let s = history.site(&init.target_site).expect("target appears in log");
            initiation_ix.push((u, s));
            site_initiations[s as usize].push(init.timestamp_ms);
            for b in history.site_authors_at(s, init.timestamp_ms) {
                edges.push(TimedEdge {
                    ts: init.timestamp_ms,
                    from: u,
                    to: b,
                });
            }
        }
        Corpus {
            history,
            initiations,
            initiation_ix,
            edges: Arc::new(edges),
            site_initiations,
        }
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn log(&self) -> &EventLog {
        self.history.log()
    }

    pub fn initiations(&self) -> &[Initiation] {
        &self.initiations
    }

    /// (source user, target site) indices of initiation `i`.
    pub fn initiation_ix(&self, i: usize) -> (UserIx, SiteIx) {
        self.initiation_ix[i]
    }

    pub fn edges(&self) -> &Arc<Vec<TimedEdge>> {
        &self.edges
    }

    /// Timestamps of initiations received by site `s`, ascending.
    pub fn site_initiations(&self, s: SiteIx) -> &[i64] {
        &self.site_initiations[s as usize]
    }

    pub fn graph_cursor(&self) -> GraphCursor {
        GraphCursor::new(self.history.n_users(), Arc::clone(&self.edges))
    }

    /// Network built from initiations strictly before `t`.
    pub fn graph_at(&self, t: i64) -> InteractionGraph {
        let mut cursor = self.graph_cursor();
        cursor.advance_to(t);
        cursor.graph().clone()
    }

    /// Source/candidate network indicators at `t`.
    pub fn dyadic_features(&self, source: &UserId, candidate: &UserId, t: i64) -> Dyadic {
        match (self.history.user(source), self.history.user(candidate)) {
            (Some(a), Some(b)) => self.graph_at(t).dyadic(a, b),
            _ => Dyadic::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Index into the corpus initiation list.
    pub initiation: usize,
    pub source: AuthorSitePair,
    pub candidate: AuthorSitePair,
    pub label: u8,
    /// Features reflect events strictly before this instant.
    pub timestamp_ms: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<TrainingSample>,
    /// Positives emitted without a negative because no candidate existed.
    pub missing_negatives: usize,
    /// Initiations that produced no samples (no eligible source or target pair).
    pub skipped_initiations: usize,
}

impl SampleSet {
    pub fn n_positive(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }

    pub fn n_negative(&self) -> usize {
        self.samples.len() - self.n_positive()
    }
}

/// Labelled samples for the given initiations (indices into `corpus.initiations()`).
///
/// The negative for each positive is drawn from the stream keyed by
/// `(seed, initiation index)`, so the output does not depend on which other
/// initiations are processed alongside.
pub fn build_training_samples(corpus: &Corpus, initiations: &[usize], seed: u64) -> SampleSet {
    let h = corpus.history();
    let mut set = SampleSet::default();
    for &i in initiations {
        let t = corpus.initiations[i].timestamp_ms;
        let (u, s) = corpus.initiation_ix(i);
        let sources = h.eligible_pairs_of_user(u, t);
        let targets = h.eligible_pairs_of_site(s, t);
        if sources.is_empty() || targets.is_empty() {
            set.skipped_initiations += 1;
            continue;
        }
        let candidates = h.candidate_pairs_ix(Some(u), t);
        let mut rng = stream_rng(seed, i as u64);
        for &sp in &sources {
            for &tp in &targets {
                set.samples.push(TrainingSample {
                    initiation: i,
                    source: h.pair_ids(sp),
                    candidate: h.pair_ids(tp),
                    label: 1,
                    timestamp_ms: t,
                });
                if candidates.is_empty() {
                    set.missing_negatives += 1;
                    continue;
                }
                let neg = candidates[rng.random_range(0..candidates.len())];
                set.samples.push(TrainingSample {
                    initiation: i,
                    source: h.pair_ids(sp),
                    candidate: h.pair_ids(neg),
                    label: 0,
                    timestamp_ms: t,
                });
            }
        }
    }
    set
}

pub const SAMPLE_FILE_FORMAT: &str = "recengine-samples";

/// First line of a training-sample sidecar file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFileHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub log_hash: String,
    pub eligibility_updates: usize,
    pub activity_window_days: u32,
    pub n_initiations: usize,
    pub n_samples: usize,
    pub missing_negatives: usize,
    pub skipped_initiations: usize,
}

impl SampleFileHeader {
    pub fn new(seed: u64, log: &EventLog, n_initiations: usize, set: &SampleSet) -> Self {
        SampleFileHeader {
            format: SAMPLE_FILE_FORMAT.to_owned(),
            version: 1,
            seed,
            log_hash: log.content_hash(),
            eligibility_updates: ELIGIBILITY_UPDATES,
            activity_window_days: 7,
            n_initiations,
            n_samples: set.samples.len(),
            missing_negatives: set.missing_negatives,
            skipped_initiations: set.skipped_initiations,
        }
    }
}

pub fn write_samples(path: impl AsRef<Path>, header: &SampleFileHeader, set: &SampleSet) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer(&mut out, header).map_err(|e| io(e.into()))?;
    out.write_all(b"\n").map_err(io)?;
    for s in &set.samples {
        serde_json::to_writer(&mut out, s).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<(SampleFileHeader, Vec<TrainingSample>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
        line,
        message: e.to_string(),
    };
    let header: SampleFileHeader = match lines.next() {
        Some((_, l)) => serde_json::from_str(&l.map_err(|e| Error::io(path, e))?).map_err(|e| parse_err(1, e))?,
        None => return Err(Error::Format("empty sample file".into())),
    };
    if header.format != SAMPLE_FILE_FORMAT {
        return Err(Error::Format(format!("unexpected format tag `{}`", header.format)));
    }
    let mut samples = Vec::with_capacity(header.n_samples);
    for (i, l) in lines {
        let l = l.map_err(|e| Error::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e))?);
    }
    Ok((header, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{EventKind::*, EventRecord};

    fn rec(ts: i64, kind: EventKind, actor: &str, site: &str) -> EventRecord {
        EventRecord::new(ts, kind, actor, site)
    }

    fn log(records: Vec<EventRecord>) -> EventLog {
        EventLog::from_records(records).unwrap()
    }

    #[test]
    fn repeated_reactions_give_one_initiation() {
        let l = log(vec![
            rec(1, JournalUpdate, "a", "sa"),
            rec(2, JournalUpdate, "b", "sb"),
            rec(3, Reaction, "a", "sb"),
            rec(4, Reaction, "a", "sb"),
        ]);
        let inits = extract_initiations(&l);
        assert_eq!(inits.len(), 1);
        assert_eq!(inits[0].timestamp_ms, 3);
    }

    #[test]
    fn own_site_is_not_an_initiation() {
        let l = log(vec![rec(1, JournalUpdate, "a", "sa"), rec(2, Comment, "a", "sa")]);
        assert!(extract_initiations(&l).is_empty());
    }

    #[test]
    fn non_authors_visits_and_follows_do_not_qualify() {
        let l = log(vec![
            rec(1, JournalUpdate, "b", "sb"),
            rec(2, Reaction, "a", "sb"),
            rec(3, JournalUpdate, "a", "sa"),
            rec(4, Visit, "a", "sb"),
            rec(5, Follow, "a", "sb"),
            rec(6, Guestbook, "a", "sb"),
        ]);
        let inits = extract_initiations(&l);
        assert_eq!(inits.len(), 1);
        assert_eq!(inits[0].kind, Guestbook);
        assert_eq!(inits[0].timestamp_ms, 6);
    }

    fn updates(out: &mut Vec<EventRecord>, who: &str, site: &str, start: i64, n: i64) {
        for k in 0..n {
            out.push(rec(start + k, JournalUpdate, who, site));
        }
    }

    #[test]
    fn ineligible_initiator_yields_no_samples() {
        let mut rs = Vec::new();
        updates(&mut rs, "a", "sa", 0, 2);
        updates(&mut rs, "b", "sb", 10, 3);
        rs.push(rec(100, Reaction, "a", "sb"));
        let corpus = Corpus::new(log(rs));
        let set = build_training_samples(&corpus, &[0], 1);
        assert!(set.samples.is_empty());
        assert_eq!(set.skipped_initiations, 1);
    }

    #[test]
    fn cross_product_of_eligible_pairs() {
        let mut rs = Vec::new();
        updates(&mut rs, "a", "sa1", 0, 3);
        updates(&mut rs, "a", "sa2", 10, 3);
        updates(&mut rs, "b", "sb", 20, 3);
        updates(&mut rs, "c", "sb", 30, 3);
        updates(&mut rs, "d", "sd", 40, 3);
        rs.push(rec(100, Comment, "a", "sb"));
        let corpus = Corpus::new(log(rs));
        let set = build_training_samples(&corpus, &[0], 9);
        assert_eq!(set.n_positive(), 4);
        assert_eq!(set.n_negative(), 4);
        assert_eq!(set.missing_negatives, 0);
        for s in set.samples.iter().filter(|s| s.label == 0) {
            assert_ne!(s.candidate.author.as_str(), "a");
        }
        // the initiation adds a->b and a->c
        let g = corpus.graph_at(101);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(corpus.graph_at(100).n_edges(), 0);
    }

    #[test]
    fn sampling_is_keyed_by_seed() {
        let mut rs = Vec::new();
        updates(&mut rs, "a", "sa", 0, 3);
        for (i, w) in ["b", "c", "d", "e", "f", "g"].iter().enumerate() {
            updates(&mut rs, w, &format!("s{w}"), 10 + 10 * i as i64, 3);
        }
        rs.push(rec(200, Comment, "a", "sb"));
        let corpus = Corpus::new(log(rs));
        let a = build_training_samples(&corpus, &[0], 5);
        let b = build_training_samples(&corpus, &[0], 5);
        assert_eq!(a, b);
    }

    #[test]
    fn sidecar_round_trip() {
        let mut rs = Vec::new();
        updates(&mut rs, "a", "sa", 0, 3);
        updates(&mut rs, "b", "sb", 10, 3);
        updates(&mut rs, "c", "sc", 20, 3);
        rs.push(rec(100, Comment, "a", "sb"));
        let corpus = Corpus::new(log(rs));
        let set = build_training_samples(&corpus, &[0], 3);
        let header = SampleFileHeader::new(3, corpus.log(), 1, &set);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        write_samples(&path, &header, &set).unwrap();
        let (h2, samples) = read_samples(&path).unwrap();
        assert_eq!(h2, header);
        assert_eq!(samples, set.samples);
    }
}
