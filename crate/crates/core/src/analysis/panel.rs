//! Building outcome panels from the event log, and their CSV form.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::estimators::{OutcomePanel, PanelRow};
use crate::error::{Error, Result};
use crate::event_log::{EventKind, EventLog, EventRecord, SiteId, UserId, DAY_MS, WEEK_MS};
use crate::feedback::extract_initiations;
use crate::keyed::Key;

pub const DEFAULT_PRE_WEEKS: u32 = 5;
pub const DEFAULT_POST_WEEKS: u32 = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Author,
    Site,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    JournalUpdates,
    PeerFirstVisits,
    PeerRepeatVisits,
    PeerInteractions,
    PeerInitiations,
    SelfSiteInteractions,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 6] = [
        OutcomeKind::JournalUpdates,
        OutcomeKind::PeerFirstVisits,
        OutcomeKind::PeerRepeatVisits,
        OutcomeKind::PeerInteractions,
        OutcomeKind::PeerInitiations,
        OutcomeKind::SelfSiteInteractions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::JournalUpdates => "journal_updates",
            OutcomeKind::PeerFirstVisits => "peer_first_visits",
            OutcomeKind::PeerRepeatVisits => "peer_repeat_visits",
            OutcomeKind::PeerInteractions => "peer_interactions",
            OutcomeKind::PeerInitiations => "peer_initiations",
            OutcomeKind::SelfSiteInteractions => "self_site_interactions",
        }
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OutcomeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown outcome `{s}`")))
    }
}

pub const AUTHOR_COVARIATES: [&str; 8] = [
    "journal_updates",
    "first_visits_to_other_sites",
    "repeat_visits_to_other_sites",
    "unique_days_visiting_other_sites",
    "interactions_on_other_sites",
    "interactions_on_own_sites",
    "own_sites_interacted_with",
    "log_tenure",
];

pub const SITE_COVARIATES: [&str; 12] = [
    "journal_updates",
    "unique_author_visitors_recent",
    "unique_author_visitors_all_time",
    "first_visits_from_peers",
    "repeat_author_visitors",
    "unique_days_peer_visited",
    "interactions_from_peers",
    "initiations_to_site",
    "author_peer_interactions",
    "author_self_site_interactions",
    "author_initiations",
    "log_tenure",
];

pub fn covariate_names(kind: UnitKind) -> Vec<String> {
    let names: &[&str] = match kind {
        UnitKind::Author => &AUTHOR_COVARIATES,
        UnitKind::Site => &SITE_COVARIATES,
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// One unit entering the panel. `event_ts` is the visit or study start time;
/// units without one get a time drawn from the units of the same batch that have one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelUnit {
    pub id: String,
    pub treated: bool,
    pub event_ts: Option<i64>,
    pub batch: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub unit_kind: UnitKind,
    pub outcome: OutcomeKind,
    pub pre_weeks: u32,
    pub post_weeks: u32,
    /// Keep only the latest visit per (user, site, day).
    pub daily_visits: bool,
    pub seed: u64,
}

impl PanelSpec {
    pub fn new(unit_kind: UnitKind, outcome: OutcomeKind, seed: u64) -> Self {
        PanelSpec {
            unit_kind,
            outcome,
            pre_weeks: DEFAULT_PRE_WEEKS,
            post_weeks: DEFAULT_POST_WEEKS,
            daily_visits: false,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelBuildStats {
    /// Units with no events in the log, or no event time available in their batch.
    pub excluded: usize,
    pub excluded_units: Vec<String>,
    pub fabricated_times: usize,
}

/// Log views shared by every unit.
struct Index<'a> {
    records: Vec<&'a EventRecord>,
    by_actor: HashMap<&'a UserId, Vec<usize>>,
    by_site: HashMap<&'a SiteId, Vec<usize>>,
    /// Record index → whether it is the actor's first visit to that site.
    first_visit: HashSet<usize>,
    /// Earliest update per author on any site.
    author_since: HashMap<&'a UserId, i64>,
    initiations_by_actor: HashMap<UserId, Vec<i64>>,
    initiations_by_site: HashMap<SiteId, Vec<i64>>,
    log: &'a EventLog,
}

fn day(ts: i64) -> i64 {
    ts.div_euclid(DAY_MS)
}

impl<'a> Index<'a> {
    fn new(log: &'a EventLog, daily_visits: bool) -> Self {
        let mut records: Vec<&EventRecord> = log.records().iter().collect();
        if daily_visits {
            let mut latest: HashMap<(&UserId, &SiteId, i64), usize> = HashMap::new();
            for (i, r) in records.iter().enumerate() {
                if r.kind == EventKind::Visit {
                    latest.insert((&r.actor, &r.site, day(r.timestamp_ms)), i);
                }
            }
            let keep: HashSet<usize> = latest.into_values().collect();
            records = records
                .into_iter()
                .enumerate()
                .filter(|(i, r)| r.kind != EventKind::Visit || keep.contains(i))
                .map(|(_, r)| r)
                .collect();
        }
        let mut by_actor: HashMap<&UserId, Vec<usize>> = HashMap::new();
        let mut by_site: HashMap<&SiteId, Vec<usize>> = HashMap::new();
        let mut seen: HashSet<(&UserId, &SiteId)> = HashSet::new();
        let mut first_visit = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            by_actor.entry(&r.actor).or_default().push(i);
            by_site.entry(&r.site).or_default().push(i);
            if r.kind == EventKind::Visit && seen.insert((&r.actor, &r.site)) {
                first_visit.insert(i);
            }
        }
        let mut author_since: HashMap<&UserId, i64> = HashMap::new();
        for authors in log.authorship().values() {
            for a in authors {
                let e = author_since.entry(&a.author).or_insert(a.first_update_ts);
                *e = (*e).min(a.first_update_ts);
            }
        }
        let mut initiations_by_actor: HashMap<UserId, Vec<i64>> = HashMap::new();
        let mut initiations_by_site: HashMap<SiteId, Vec<i64>> = HashMap::new();
        for init in extract_initiations(log) {
            initiations_by_actor
                .entry(init.source_author)
                .or_default()
                .push(init.timestamp_ms);
            initiations_by_site
                .entry(init.target_site)
                .or_default()
                .push(init.timestamp_ms);
        }
        Index {
            records,
            by_actor,
            by_site,
            first_visit,
            author_since,
            initiations_by_actor,
            initiations_by_site,
            log,
        }
    }

    fn is_peer_author(&self, user: &UserId, t: i64) -> bool {
        matches!(self.author_since.get(user), Some(&ts) if ts < t)
    }

    fn window<'s>(
        &'s self,
        ixs: Option<&'s Vec<usize>>,
        lo: i64,
        hi: i64,
    ) -> impl Iterator<Item = (usize, &'a EventRecord)> + 's {
        ixs.into_iter()
            .flatten()
            .map(|&i| (i, self.records[i]))
            .filter(move |(_, r)| r.timestamp_ms >= lo && r.timestamp_ms < hi)
    }

    fn author_counts(&self, user: &UserId, lo: i64, hi: i64) -> AuthorCounts {
        let mut c = AuthorCounts::default();
        let mut days = HashSet::new();
        let mut own_sites = HashSet::new();
        for (i, r) in self.window(self.by_actor.get(user), lo, hi) {
            let own = self.log.is_author_at(user, &r.site, r.timestamp_ms);
            match r.kind {
                EventKind::JournalUpdate => c.journal_updates += 1.0,
                EventKind::Visit if !own => {
                    if self.first_visit.contains(&i) {
                        c.first_visits += 1.0;
                    } else {
                        c.repeat_visits += 1.0;
                    }
                    days.insert(day(r.timestamp_ms));
                }
                k if k.is_interaction() && own => {
                    c.own_interactions += 1.0;
                    own_sites.insert(&r.site);
                }
                k if k.is_interaction() => c.peer_interactions += 1.0,
                _ => {}
            }
        }
        c.visit_days = days.len() as f64;
        c.own_sites = own_sites.len() as f64;
        c.initiations = count_in(self.initiations_by_actor.get(user), lo, hi);
        c
    }

    fn site_counts(&self, site: &SiteId, lo: i64, hi: i64) -> SiteCounts {
        let mut c = SiteCounts::default();
        let mut visitors = HashSet::new();
        let mut repeaters = HashSet::new();
        let mut days = HashSet::new();
        for (i, r) in self.window(self.by_site.get(site), lo, hi) {
            let own = self.log.is_author_at(&r.actor, site, r.timestamp_ms);
            let peer = !own && self.is_peer_author(&r.actor, r.timestamp_ms);
            match r.kind {
                EventKind::JournalUpdate => c.journal_updates += 1.0,
                EventKind::Visit if peer => {
                    visitors.insert(&r.actor);
                    days.insert(day(r.timestamp_ms));
                    if self.first_visit.contains(&i) {
                        c.first_visits += 1.0;
                    } else {
                        c.repeat_visits += 1.0;
                        repeaters.insert(&r.actor);
                    }
                }
                k if k.is_interaction() && peer => c.peer_interactions += 1.0,
                _ => {}
            }
        }
        c.unique_visitors = visitors.len() as f64;
        c.repeat_visitors = repeaters.len() as f64;
        c.visit_days = days.len() as f64;
        c.initiations = count_in(self.initiations_by_site.get(site), lo, hi);
        for a in self.log.authors_of(site).iter().filter(|a| a.first_update_ts < hi) {
            let ac = self.author_counts(&a.author, lo, hi);
            c.author_peer_interactions += ac.peer_interactions;
            c.author_initiations += ac.initiations;
        }
        c.author_self_interactions = self
            .window(self.by_site.get(site), lo, hi)
            .filter(|(_, r)| r.kind.is_interaction() && self.log.is_author_at(&r.actor, site, r.timestamp_ms))
            .count() as f64;
        c
    }

    fn all_time_visitors(&self, site: &SiteId, t: i64) -> f64 {
        self.window(self.by_site.get(site), i64::MIN, t)
            .filter(|(_, r)| {
                r.kind == EventKind::Visit
                    && !self.log.is_author_at(&r.actor, site, r.timestamp_ms)
                    && self.is_peer_author(&r.actor, r.timestamp_ms)
            })
            .map(|(_, r)| &r.actor)
            .collect::<HashSet<_>>()
            .len() as f64
    }

    fn first_seen(&self, kind: UnitKind, id: &str) -> Option<i64> {
        let ixs = match kind {
            UnitKind::Author => self.by_actor.get(&UserId::from(id)),
            UnitKind::Site => self.by_site.get(&SiteId::from(id)),
        }?;
        ixs.first().map(|&i| self.records[i].timestamp_ms)
    }
}

fn count_in(ts: Option<&Vec<i64>>, lo: i64, hi: i64) -> f64 {
    ts.map_or(0, |v| v.iter().filter(|&&t| t >= lo && t < hi).count()) as f64
}

#[derive(Default)]
struct AuthorCounts {
    journal_updates: f64,
    first_visits: f64,
    repeat_visits: f64,
    visit_days: f64,
    peer_interactions: f64,
    own_interactions: f64,
    own_sites: f64,
    initiations: f64,
}

#[derive(Default)]
struct SiteCounts {
    journal_updates: f64,
    unique_visitors: f64,
    first_visits: f64,
    repeat_visits: f64,
    repeat_visitors: f64,
    visit_days: f64,
    peer_interactions: f64,
    initiations: f64,
    author_peer_interactions: f64,
    author_self_interactions: f64,
    author_initiations: f64,
}

fn log_tenure_hours(since: Option<i64>, t: i64) -> f64 {
    since.map_or(0.0, |s| (((t - s).max(0) as f64) / 3_600_000.0).ln_1p())
}

/// Covariates from `[t − pre, t)` and the chosen outcome from `[t, t + post)`
/// for every unit. Units with no log events are dropped and counted.
pub fn build_outcome_panel(
    log: &EventLog,
    units: &[PanelUnit],
    spec: &PanelSpec,
) -> Result<(OutcomePanel, PanelBuildStats)> {
    if spec.pre_weeks == 0 || spec.post_weeks == 0 {
        return Err(Error::InvalidConfig("panel windows must be positive".into()));
    }
    let idx = Index::new(log, spec.daily_visits);
    let pre = spec.pre_weeks as i64 * WEEK_MS;
    let post = spec.post_weeks as i64 * WEEK_MS;

    let mut batch_times: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for u in units {
        if let Some(t) = u.event_ts {
            batch_times.entry(&u.batch).or_default().push(t);
        }
    }

    let mut stats = PanelBuildStats::default();
    let mut rows = Vec::with_capacity(units.len());
    for u in units {
        let first = idx.first_seen(spec.unit_kind, &u.id);
        let t = match u.event_ts {
            Some(t) => Some(t),
            None => batch_times.get(u.batch.as_str()).map(|ts| {
                stats.fabricated_times += 1;
                let k = Key::new(spec.seed).str("visit-time").str(&u.batch).str(&u.id).finish();
                ts[(k % ts.len() as u64) as usize]
            }),
        };
        let (Some(_), Some(t)) = (first, t) else {
            stats.excluded += 1;
            stats.excluded_units.push(u.id.clone());
            continue;
        };
        let (covariates, outcome) = match spec.unit_kind {
            UnitKind::Author => {
                let user = UserId::from(u.id.as_str());
                let a = idx.author_counts(&user, t - pre, t);
                let covs = vec![
                    a.journal_updates,
                    a.first_visits,
                    a.repeat_visits,
                    a.visit_days,
                    a.peer_interactions,
                    a.own_interactions,
                    a.own_sites,
                    log_tenure_hours(idx.author_since.get(&user).copied(), t),
                ];
                let o = idx.author_counts(&user, t, t + post);
                let y = match spec.outcome {
                    OutcomeKind::JournalUpdates => o.journal_updates,
                    OutcomeKind::PeerFirstVisits => o.first_visits,
                    OutcomeKind::PeerRepeatVisits => o.repeat_visits,
                    OutcomeKind::PeerInteractions => o.peer_interactions,
                    OutcomeKind::PeerInitiations => o.initiations,
                    OutcomeKind::SelfSiteInteractions => o.own_interactions,
                };
                (covs, y)
            }
            UnitKind::Site => {
                let site = SiteId::from(u.id.as_str());
                let s = idx.site_counts(&site, t - pre, t);
                let since = log.authors_of(&site).iter().map(|a| a.first_update_ts).min();
                let covs = vec![
                    s.journal_updates,
                    s.unique_visitors,
                    idx.all_time_visitors(&site, t),
                    s.first_visits,
                    s.repeat_visitors,
                    s.visit_days,
                    s.peer_interactions,
                    s.initiations,
                    s.author_peer_interactions,
                    s.author_self_interactions,
                    s.author_initiations,
                    log_tenure_hours(since, t),
                ];
                let o = idx.site_counts(&site, t, t + post);
                let y = match spec.outcome {
                    OutcomeKind::JournalUpdates => o.journal_updates,
                    OutcomeKind::PeerFirstVisits => o.first_visits,
                    OutcomeKind::PeerRepeatVisits => o.repeat_visits,
                    OutcomeKind::PeerInteractions => o.peer_interactions,
                    OutcomeKind::PeerInitiations => o.initiations,
                    OutcomeKind::SelfSiteInteractions => o.author_self_interactions,
                };
                (covs, y)
            }
        };
        rows.push(PanelRow {
            unit: u.id.clone(),
            treated: u.treated,
            covariates,
            outcome,
        });
    }
    Ok((
        OutcomePanel {
            covariate_names: covariate_names(spec.unit_kind),
            rows,
            pre_weeks: spec.pre_weeks,
            post_weeks: spec.post_weeks,
        },
        stats,
    ))
}

/// `# pre_weeks=P post_weeks=Q`, then `unit,treated,<covariates…>,outcome`.
pub fn write_panel_csv<W: Write>(panel: &OutcomePanel, out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "# pre_weeks={} post_weeks={}", panel.pre_weeks, panel.post_weeks)
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit".to_string(), "treated".to_string()];
    header.extend(panel.covariate_names.iter().cloned());
    header.push("outcome".into());
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for r in &panel.rows {
        let mut rec = vec![r.unit.clone(), (r.treated as u8).to_string()];
        rec.extend(r.covariates.iter().map(|v| v.to_string()));
        rec.push(r.outcome.to_string());
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn save_panel(panel: &OutcomePanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel_csv(panel, std::io::BufWriter::new(f))
}

pub fn read_panel_csv<R: BufRead>(mut input: R) -> Result<OutcomePanel> {
    let mut meta = String::new();
    input.read_line(&mut meta).map_err(|e| Error::Format(e.to_string()))?;
    let meta_err = || Error::MissingMetadata("panel must start with `# pre_weeks=P post_weeks=Q`".into());
    let body = meta.trim().strip_prefix('#').ok_or_else(meta_err)?;
    let mut pre = None;
    let mut post = None;
    for kv in body.split_whitespace() {
        match kv.split_once('=') {
            Some(("pre_weeks", v)) => pre = v.parse::<u32>().ok(),
            Some(("post_weeks", v)) => post = v.parse::<u32>().ok(),
            _ => {}
        }
    }
    let (Some(pre_weeks), Some(post_weeks)) = (pre, post) else {
        return Err(meta_err());
    };

    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 2,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 3
        || header[0] != "unit"
        || header[1] != "treated"
        || header.last().map(String::as_str) != Some("outcome")
    {
        return Err(Error::Parse {
            line: 2,
            message: "header must be unit,treated,<covariates…>,outcome".into(),
        });
    }
    let covariate_names = header[2..header.len() - 1].to_vec();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        // csv counts from the header line; the metadata line sits above it
        let line = rec.position().map_or(0, |p| p.line() as usize + 1);
        let bad = |message: String| Error::Parse { line, message };
        if rec.len() != header.len() {
            return Err(bad(format!("{} fields, expected {}", rec.len(), header.len())));
        }
        let num = |j: usize| -> Result<f64> {
            let s = rec[j].trim();
            if s.is_empty() {
                return Err(bad(format!("missing value for `{}`", header[j])));
            }
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("bad number `{s}` for `{}`", header[j])))
        };
        let treated = match rec[1].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            "" => return Err(bad("missing value for `treated`".into())),
            other => return Err(bad(format!("treated must be 0 or 1, got `{other}`"))),
        };
        if rec[0].trim().is_empty() {
            return Err(bad("missing unit id".into()));
        }
        rows.push(PanelRow {
            unit: rec[0].to_string(),
            treated,
            covariates: (2..header.len() - 1).map(num).collect::<Result<_>>()?,
            outcome: num(header.len() - 1)?,
        });
    }
    let panel = OutcomePanel {
        covariate_names,
        rows,
        pre_weeks,
        post_weeks,
    };
    panel.validate()?;
    Ok(panel)
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<OutcomePanel> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel_csv(std::io::BufReader::new(f))
}
