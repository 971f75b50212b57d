//! The time-ordered community event stream.
//!
//! Events are stored as JSON lines with the field order
//! `ts, kind, actor, site, content_ref, text`. Parsing sorts records by
//! timestamp (stable for ties) and builds the site authorship index.

mod synthetic;

pub use synthetic::{generate_synthetic_log, EventRates, SyntheticConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HOUR_MS: i64 = 3_600_000;
pub const DAY_MS: i64 = 24 * HOUR_MS;
pub const WEEK_MS: i64 = 7 * DAY_MS;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

string_id!(
    /// Opaque user identifier.
    UserId
);
string_id!(
    /// Opaque site (blog) identifier.
    SiteId
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    JournalUpdate,
    Reaction,
    Comment,
    Guestbook,
    Visit,
    Follow,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::JournalUpdate,
        EventKind::Reaction,
        EventKind::Comment,
        EventKind::Guestbook,
        EventKind::Visit,
        EventKind::Follow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::JournalUpdate => "journal_update",
            EventKind::Reaction => "reaction",
            EventKind::Comment => "comment",
            EventKind::Guestbook => "guestbook",
            EventKind::Visit => "visit",
            EventKind::Follow => "follow",
        }
    }

    /// Reactions, comments and guestbooks: the actions that can form an initiation.
    pub fn is_interaction(self) -> bool {
        matches!(self, EventKind::Reaction | EventKind::Comment | EventKind::Guestbook)
    }

    /// Actions that make an author "active".
    pub fn is_activity(self) -> bool {
        self == EventKind::JournalUpdate || self.is_interaction()
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    #[serde(rename = "ts")]
    pub timestamp_ms: i64,
    pub kind: EventKind,
    pub actor: UserId,
    pub site: SiteId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl EventRecord {
    pub fn new(timestamp_ms: i64, kind: EventKind, actor: &str, site: &str) -> Self {
        EventRecord {
            timestamp_ms,
            kind,
            actor: actor.into(),
            site: site.into(),
            content_ref: None,
            text: None,
        }
    }

    pub fn with_content_ref(mut self, content_ref: impl Into<String>) -> Self {
        self.content_ref = Some(content_ref.into());
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp_ms < 0 {
            return Err(format!("negative timestamp {}", self.timestamp_ms));
        }
        if self.actor.0.is_empty() {
            return Err("empty actor".into());
        }
        if self.site.0.is_empty() {
            return Err("empty site".into());
        }
        if self.text.is_some() && self.kind != EventKind::JournalUpdate {
            return Err(format!(
                "text is only allowed on journal_update, found on {}",
                self.kind
            ));
        }
        Ok(())
    }
}

/// One author's publishing history on a site.
#[derive(Clone, Debug, PartialEq)]
pub struct Authorship {
    pub author: UserId,
    pub first_update_ts: i64,
    /// Timestamps of every journal update by this author on the site, ascending.
    pub update_ts: Vec<i64>,
}

impl Authorship {
    /// Number of updates published strictly before `t`.
    pub fn updates_before(&self, t: i64) -> usize {
        self.update_ts.partition_point(|&ts| ts < t)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
    authorship: BTreeMap<SiteId, Vec<Authorship>>,
    reordered: usize,
}

impl EventLog {
    /// Validates and stably sorts `records`, then builds the authorship index.
    pub fn from_records(mut records: Vec<EventRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            r.validate()
                .map_err(|m| Error::InvalidRecord(format!("record {i}: {m}")))?;
        }
        let reordered = records
            .windows(2)
            .filter(|w| w[0].timestamp_ms > w[1].timestamp_ms)
            .count();
        records.sort_by_key(|r| r.timestamp_ms);

        let mut authorship: BTreeMap<SiteId, Vec<Authorship>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.kind == EventKind::JournalUpdate) {
            let authors = authorship.entry(r.site.clone()).or_default();
            match authors.iter_mut().find(|a| a.author == r.actor) {
                Some(a) => a.update_ts.push(r.timestamp_ms),
                None => authors.push(Authorship {
                    author: r.actor.clone(),
                    first_update_ts: r.timestamp_ms,
                    update_ts: vec![r.timestamp_ms],
                }),
            }
        }

        Ok(EventLog {
            records,
            authorship,
            reordered,
        })
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Count of adjacent out-of-order pairs seen in the input before sorting.
    pub fn reordered(&self) -> usize {
        self.reordered
    }

    /// Site → authors in order of first publication.
    pub fn authorship(&self) -> &BTreeMap<SiteId, Vec<Authorship>> {
        &self.authorship
    }

    pub fn authors_of(&self, site: &SiteId) -> &[Authorship] {
        self.authorship.get(site).map(Vec::as_slice).unwrap_or(&[])
    }

    /// True iff `user` published on `site` strictly before `t`.
    pub fn is_author_at(&self, user: &UserId, site: &SiteId, t: i64) -> bool {
        self.authors_of(site)
            .iter()
            .any(|a| &a.author == user && a.first_update_ts < t)
    }

    /// Keeps only records strictly before `t`.
    pub fn truncated_before(&self, t: i64) -> EventLog {
        let end = self.records.partition_point(|r| r.timestamp_ms < t);
        EventLog::from_records(self.records[..end].to_vec()).expect("prefix of a valid log is valid")
    }

    pub fn first_ts(&self) -> Option<i64> {
        self.records.first().map(|r| r.timestamp_ms)
    }

    pub fn last_ts(&self) -> Option<i64> {
        self.records.last().map(|r| r.timestamp_ms)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl_bytes()))
    }
}

/// Parses one JSON-lines event file.
pub fn parse_event_log(path: impl AsRef<Path>) -> Result<EventLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_event_log(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_event_log<R: BufRead>(reader: R) -> Result<EventLog> {
    #[derive(Deserialize)]
    struct RawRecord {
        ts: i64,
        kind: String,
        actor: String,
        site: String,
        #[serde(default)]
        content_ref: Option<String>,
        #[serde(default)]
        text: Option<String>,
    }

    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let kind = raw
            .kind
            .parse::<EventKind>()
            .map_err(|kind| Error::UnknownKind { line: line_no, kind })?;
        let record = EventRecord {
            timestamp_ms: raw.ts,
            kind,
            actor: UserId(raw.actor),
            site: SiteId(raw.site),
            content_ref: raw.content_ref,
            text: raw.text,
        };
        record
            .validate()
            .map_err(|message| Error::Parse { line: line_no, message })?;
        records.push(record);
    }
    EventLog::from_records(records)
}

pub fn write_event_log(log: &EventLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    log.write_jsonl(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(s: &str) -> Result<EventLog> {
        read_event_log(s.as_bytes())
    }

    #[test]
    fn empty_input_gives_empty_log() {
        let log = parse_str("").unwrap();
        assert!(log.is_empty());
        assert!(log.to_jsonl_bytes().is_empty());
    }

    #[test]
    fn unknown_kind_is_rejected_with_line() {
        let input = "{\"ts\":1,\"kind\":\"reaction\",\"actor\":\"a\",\"site\":\"s\"}\n\
                     {\"ts\":2,\"kind\":\"poke\",\"actor\":\"a\",\"site\":\"s\"}\n";
        match parse_str(input) {
            Err(Error::UnknownKind { line, kind }) => {
                assert_eq!(line, 2);
                assert_eq!(kind, "poke");
            }
            other => panic!("expected UnknownKind, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let input = "{\"ts\":1,\"kind\":\"visit\",\"actor\":\"a\",\"site\":\"s\"}\nnot json\n";
        match parse_str(input) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn text_only_on_updates() {
        let input = "{\"ts\":1,\"kind\":\"comment\",\"actor\":\"a\",\"site\":\"s\",\"text\":\"hi\"}\n";
        assert!(matches!(parse_str(input), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unsorted_input_is_sorted_and_counted() {
        let input = "{\"ts\":5,\"kind\":\"visit\",\"actor\":\"a\",\"site\":\"s\"}\n\
                     {\"ts\":3,\"kind\":\"visit\",\"actor\":\"b\",\"site\":\"s\"}\n\
                     {\"ts\":3,\"kind\":\"visit\",\"actor\":\"c\",\"site\":\"s\"}\n";
        let log = parse_str(input).unwrap();
        assert_eq!(log.reordered(), 1);
        let actors: Vec<_> = log.records().iter().map(|r| r.actor.as_str()).collect();
        // ties keep input order
        assert_eq!(actors, ["b", "c", "a"]);
    }

    #[test]
    fn one_record_one_line() {
        let log = EventLog::from_records(vec![EventRecord::new(10, EventKind::Follow, "a", "s")]).unwrap();
        let bytes = log.to_jsonl_bytes();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "{\"ts\":10,\"kind\":\"follow\",\"actor\":\"a\",\"site\":\"s\"}\n"
        );
    }

    #[test]
    fn authorship_index_tracks_updates() {
        let log = EventLog::from_records(vec![
            EventRecord::new(1, EventKind::JournalUpdate, "a", "s"),
            EventRecord::new(2, EventKind::Comment, "b", "s"),
            EventRecord::new(3, EventKind::JournalUpdate, "b", "s"),
            EventRecord::new(4, EventKind::JournalUpdate, "a", "s"),
        ])
        .unwrap();
        let authors = log.authors_of(&"s".into());
        assert_eq!(authors.len(), 2);
        assert_eq!(authors[0].author.as_str(), "a");
        assert_eq!(authors[0].update_ts, vec![1, 4]);
        assert_eq!(authors[1].first_update_ts, 3);
        assert!(log.is_author_at(&"b".into(), &"s".into(), 4));
        assert!(!log.is_author_at(&"b".into(), &"s".into(), 3));
    }
}
