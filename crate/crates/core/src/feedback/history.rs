//! Point-in-time queries over an event log.
//!
//! Ids are interned to dense indices. Every query takes an instant `t` and
//! only looks at events strictly before it; activity windows are the open
//! interval `(t - 7d, t)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::event_log::{EventKind, EventLog, SiteId, UserId, WEEK_MS};

pub type UserIx = u32;
pub type SiteIx = u32;
pub type PairIx = u32;

/// Minimum journal updates on a site before an author/site pair is eligible.
pub const ELIGIBILITY_UPDATES: usize = 3;

/// The four activity kinds in feature order.
pub const ACTIVITY_KINDS: [EventKind; 4] = [
    EventKind::JournalUpdate,
    EventKind::Reaction,
    EventKind::Comment,
    EventKind::Guestbook,
];

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AuthorSitePair {
    pub author: UserId,
    pub site: SiteId,
}

impl AuthorSitePair {
    pub fn new(author: impl Into<UserId>, site: impl Into<SiteId>) -> Self {
        AuthorSitePair {
            author: author.into(),
            site: site.into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PairInfo {
    pub author: UserIx,
    pub site: SiteIx,
    pub update_ts: Vec<i64>,
}

impl PairInfo {
    /// Instant after which the pair is eligible (its third update).
    pub fn eligible_from(&self) -> Option<i64> {
        self.update_ts.get(ELIGIBILITY_UPDATES - 1).copied()
    }

    pub fn is_eligible(&self, t: i64) -> bool {
        matches!(self.eligible_from(), Some(ts) if ts < t)
    }

    pub fn is_author(&self, t: i64) -> bool {
        self.update_ts[0] < t
    }
}

/// Number of timestamps in the open interval `(lo, hi)`; `ts` ascending.
pub fn count_open(ts: &[i64], lo: i64, hi: i64) -> usize {
    let end = ts.partition_point(|&x| x < hi);
    let start = ts.partition_point(|&x| x <= lo);
    end.saturating_sub(start)
}

/// Latest timestamp strictly before `t`.
pub fn last_before(ts: &[i64], t: i64) -> Option<i64> {
    let end = ts.partition_point(|&x| x < t);
    end.checked_sub(1).map(|i| ts[i])
}

#[derive(Debug)]
pub struct History {
    log: EventLog,
    users: Vec<UserId>,
    user_ix: HashMap<UserId, UserIx>,
    sites: Vec<SiteId>,
    site_ix: HashMap<SiteId, SiteIx>,
    pairs: Vec<PairInfo>,
    pair_ix: HashMap<(UserIx, SiteIx), PairIx>,
    user_pairs: Vec<Vec<PairIx>>,
    site_pairs: Vec<Vec<PairIx>>,
    user_first_update: Vec<Option<i64>>,
    user_actions: Vec<[Vec<i64>; 4]>,
    user_activity: Vec<Vec<i64>>,
    user_interactions: Vec<Vec<i64>>,
    first_interaction: HashMap<(UserIx, SiteIx), i64>,
    site_updates: Vec<Vec<usize>>,
    site_update_ts: Vec<Vec<i64>>,
}

impl History {
    pub fn new(log: EventLog) -> Self {
        let mut users = Vec::new();
        let mut user_ix = HashMap::new();
        let mut sites = Vec::new();
        let mut site_ix = HashMap::new();
        for r in log.records() {
            user_ix.entry(r.actor.clone()).or_insert_with(|| {
                users.push(r.actor.clone());
                (users.len() - 1) as UserIx
            });
            site_ix.entry(r.site.clone()).or_insert_with(|| {
                sites.push(r.site.clone());
                (sites.len() - 1) as SiteIx
            });
        }
        let n_users = users.len();
        let n_sites = sites.len();

        let mut pairs: Vec<PairInfo> = Vec::new();
        let mut pair_ix = HashMap::new();
        let mut user_pairs = vec![Vec::new(); n_users];
        let mut site_pairs = vec![Vec::new(); n_sites];
        let mut user_first_update: Vec<Option<i64>> = vec![None; n_users];
        let mut user_actions: Vec<[Vec<i64>; 4]> = vec![Default::default(); n_users];
        let mut user_activity = vec![Vec::new(); n_users];
        let mut user_interactions = vec![Vec::new(); n_users];
        let mut first_interaction = HashMap::new();
        let mut site_updates = vec![Vec::new(); n_sites];
        let mut site_update_ts = vec![Vec::new(); n_sites];

        for (i, r) in log.records().iter().enumerate() {
            let u = user_ix[&r.actor];
            let s = site_ix[&r.site];
            let ts = r.timestamp_ms;
            if let Some(k) = ACTIVITY_KINDS.iter().position(|&k| k == r.kind) {
                user_actions[u as usize][k].push(ts);
                user_activity[u as usize].push(ts);
            }
            match r.kind {
                EventKind::JournalUpdate => {
                    user_first_update[u as usize].get_or_insert(ts);
                    let p = *pair_ix.entry((u, s)).or_insert_with(|| {
                        pairs.push(PairInfo {
                            author: u,
                            site: s,
                            update_ts: Vec::new(),
                        });
                        let p = (pairs.len() - 1) as PairIx;
                        user_pairs[u as usize].push(p);
                        site_pairs[s as usize].push(p);
                        p
                    });
                    pairs[p as usize].update_ts.push(ts);
                    site_updates[s as usize].push(i);
                    site_update_ts[s as usize].push(ts);
                }
                k if k.is_interaction() => {
                    user_interactions[u as usize].push(ts);
                    first_interaction.entry((u, s)).or_insert(ts);
                }
                _ => {}
            }
        }

        History {
            log,
            users,
            user_ix,
            sites,
            site_ix,
            pairs,
            pair_ix,
            user_pairs,
            site_pairs,
            user_first_update,
            user_actions,
            user_activity,
            user_interactions,
            first_interaction,
            site_updates,
            site_update_ts,
        }
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn user(&self, id: &UserId) -> Option<UserIx> {
        self.user_ix.get(id).copied()
    }

    pub fn site(&self, id: &SiteId) -> Option<SiteIx> {
        self.site_ix.get(id).copied()
    }

    pub fn user_id(&self, u: UserIx) -> &UserId {
        &self.users[u as usize]
    }

    pub fn site_id(&self, s: SiteIx) -> &SiteId {
        &self.sites[s as usize]
    }

    pub fn pairs(&self) -> &[PairInfo] {
        &self.pairs
    }

    pub fn pair(&self, p: PairIx) -> &PairInfo {
        &self.pairs[p as usize]
    }

    pub fn pair_ix(&self, pair: &AuthorSitePair) -> Option<PairIx> {
        let u = self.user(&pair.author)?;
        let s = self.site(&pair.site)?;
        self.pair_ix.get(&(u, s)).copied()
    }

    pub fn pair_ids(&self, p: PairIx) -> AuthorSitePair {
        let info = self.pair(p);
        AuthorSitePair {
            author: self.user_id(info.author).clone(),
            site: self.site_id(info.site).clone(),
        }
    }

    pub fn pairs_of_user(&self, u: UserIx) -> &[PairIx] {
        &self.user_pairs[u as usize]
    }

    pub fn pairs_of_site(&self, s: SiteIx) -> &[PairIx] {
        &self.site_pairs[s as usize]
    }

    /// ≥3 journal updates on the pair's site strictly before `t`.
    pub fn is_eligible(&self, pair: &AuthorSitePair, t: i64) -> bool {
        self.pair_ix(pair).is_some_and(|p| self.pair(p).is_eligible(t))
    }

    /// Any journal update, reaction, comment or guestbook in `(t - 7d, t)`.
    pub fn is_active(&self, author: &UserId, t: i64) -> bool {
        self.user(author).is_some_and(|u| self.is_active_ix(u, t))
    }

    pub fn is_active_ix(&self, u: UserIx, t: i64) -> bool {
        count_open(&self.user_activity[u as usize], t - WEEK_MS, t) > 0
    }

    /// Published at least one update on any site before `t`.
    pub fn is_author_ix(&self, u: UserIx, t: i64) -> bool {
        matches!(self.user_first_update[u as usize], Some(ts) if ts < t)
    }

    pub fn first_update(&self, u: UserIx) -> Option<i64> {
        self.user_first_update[u as usize]
    }

    pub fn is_site_author_ix(&self, u: UserIx, s: SiteIx, t: i64) -> bool {
        self.pair_ix.get(&(u, s)).is_some_and(|&p| self.pair(p).is_author(t))
    }

    pub fn interacted_before_ix(&self, u: UserIx, s: SiteIx, t: i64) -> bool {
        matches!(self.first_interaction.get(&(u, s)), Some(&ts) if ts < t)
    }

    /// Timestamps of the user's actions of `ACTIVITY_KINDS[k]`, ascending.
    pub fn actions(&self, u: UserIx, k: usize) -> &[i64] {
        &self.user_actions[u as usize][k]
    }

    /// Reactions, comments and guestbooks by the user, ascending.
    pub fn interactions(&self, u: UserIx) -> &[i64] {
        &self.user_interactions[u as usize]
    }

    pub fn site_update_ts(&self, s: SiteIx) -> &[i64] {
        &self.site_update_ts[s as usize]
    }

    pub fn site_first_update(&self, s: SiteIx) -> Option<i64> {
        self.site_update_ts[s as usize].first().copied()
    }

    /// Record indices of the `k` most recent updates on `s` before `t`, oldest first.
    pub fn recent_updates(&self, s: SiteIx, t: i64, k: usize) -> &[usize] {
        let end = self.site_update_ts[s as usize].partition_point(|&x| x < t);
        &self.site_updates[s as usize][end.saturating_sub(k)..end]
    }

    pub fn eligible_pairs_of_user(&self, u: UserIx, t: i64) -> Vec<PairIx> {
        self.user_pairs[u as usize]
            .iter()
            .copied()
            .filter(|&p| self.pair(p).is_eligible(t))
            .collect()
    }

    pub fn eligible_pairs_of_site(&self, s: SiteIx, t: i64) -> Vec<PairIx> {
        self.site_pairs[s as usize]
            .iter()
            .copied()
            .filter(|&p| self.pair(p).is_eligible(t))
            .collect()
    }

    /// Authors of `s` as of `t`.
    pub fn site_authors_at(&self, s: SiteIx, t: i64) -> impl Iterator<Item = UserIx> + '_ {
        self.site_pairs[s as usize]
            .iter()
            .map(|&p| self.pair(p))
            .filter(move |info| info.is_author(t))
            .map(|info| info.author)
    }

    /// Eligible, active pairs whose author is not `source`, on sites the source
    /// neither authors nor interacted with before `t`.
    pub fn candidate_pairs_ix(&self, source: Option<UserIx>, t: i64) -> Vec<PairIx> {
        let mut active_cache: HashMap<UserIx, bool> = HashMap::new();
        let mut out = Vec::new();
        for (p, info) in self.pairs.iter().enumerate() {
            if !info.is_eligible(t) || Some(info.author) == source {
                continue;
            }
            if let Some(src) = source {
                if self.is_site_author_ix(src, info.site, t) || self.interacted_before_ix(src, info.site, t) {
                    continue;
                }
            }
            let active = *active_cache
                .entry(info.author)
                .or_insert_with(|| self.is_active_ix(info.author, t));
            if active {
                out.push(p as PairIx);
            }
        }
        out
    }

    pub fn candidate_pairs(&self, source: &UserId, t: i64) -> Vec<AuthorSitePair> {
        self.candidate_pairs_ix(self.user(source), t)
            .into_iter()
            .map(|p| self.pair_ids(p))
            .collect()
    }

    /// Users with at least one eligible pair who are active at `t`, in index order.
    pub fn eligible_active_authors(&self, t: i64) -> Vec<UserIx> {
        (0..self.users.len() as UserIx)
            .filter(|&u| {
                self.user_pairs[u as usize].iter().any(|&p| self.pair(p).is_eligible(t)) && self.is_active_ix(u, t)
            })
            .collect()
    }
}
