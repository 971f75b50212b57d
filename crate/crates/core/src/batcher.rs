//! Recommendation batches: site-level score merging, the capped draft,
//! pseudo-control sets and email rendering with tracked links.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::error::{Error, Result};
use crate::event_log::{EventKind, EventLog, SiteId, UserId};
use crate::keyed::{stream_rng, Key};

/// Mean over source pairs for each candidate pair, then max per site.
/// `pair_scores[c]` holds candidate `c`'s score under each source pair.
pub fn merge_pair_scores_to_sites<S: Ord + Clone>(sites: &[S], pair_scores: &[Vec<f64>]) -> BTreeMap<S, f64> {
    let mut out: BTreeMap<S, f64> = BTreeMap::new();
    for (site, scores) in sites.iter().zip(pair_scores) {
        if scores.is_empty() {
            continue;
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        out.entry(site.clone())
            .and_modify(|best| *best = best.max(mean))
            .or_insert(mean);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSite {
    pub site: SiteId,
    pub score: f64,
    /// 1-based position in the participant's full model ordering.
    pub model_rank: usize,
}

/// Sorts merged scores best first, breaking ties by `tie_key(site)`.
pub fn rank_sites(scores: BTreeMap<SiteId, f64>, tie_key: impl Fn(&SiteId) -> u64) -> Vec<RankedSite> {
    let mut v: Vec<(SiteId, f64, u64)> = scores
        .into_iter()
        .map(|(s, x)| {
            let k = tie_key(&s);
            (s, x, k)
        })
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    v.into_iter()
        .enumerate()
        .map(|(i, (site, score, _))| RankedSite {
            site,
            score,
            model_rank: i + 1,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    /// Journal links are `{site_base_url}/{site}/journal`.
    pub site_base_url: String,
    pub feedback_url: String,
    pub faq_url: String,
    pub unsubscribe_url: String,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            site_base_url: "https://community.example.org/site".into(),
            feedback_url: "https://community.example.org/feedback".into(),
            faq_url: "https://community.example.org/faq".into(),
            unsubscribe_url: "https://community.example.org/unsubscribe".into(),
        }
    }
}

pub const PREVIEW_CHARS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    pub k: usize,
    pub cap: usize,
    pub rounds: usize,
    pub batch_id: String,
    pub seed: u64,
    pub blocklist: BTreeSet<SiteId>,
    pub links: LinkConfig,
    pub preview_chars: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            k: 5,
            cap: 10,
            rounds: 5,
            batch_id: "batch-1".into(),
            seed: 0,
            blocklist: BTreeSet::new(),
            links: LinkConfig::default(),
            preview_chars: PREVIEW_CHARS,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.cap == 0 || self.rounds != self.k {
            return Err(Error::InvalidConfig(format!(
                "batch needs k >= 1, cap >= 1 and rounds == k (got k={}, cap={}, rounds={})",
                self.k, self.cap, self.rounds
            )));
        }
        if self.batch_id.is_empty() {
            return Err(Error::InvalidConfig("batch_id must not be empty".into()));
        }
        Url::parse(&self.links.site_base_url).map_err(|e| Error::InvalidConfig(format!("site_base_url: {e}")))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSet {
    pub participant: UserId,
    pub sites: Vec<RankedSite>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DraftResult {
    pub sets: BTreeMap<UserId, RecommendationSet>,
    /// Participants whose list ran out before `rounds` picks.
    pub short: BTreeSet<UserId>,
}

impl DraftResult {
    pub fn assignment_counts(&self) -> BTreeMap<SiteId, usize> {
        let mut counts = BTreeMap::new();
        for set in self.sets.values() {
            for r in &set.sites {
                *counts.entry(r.site.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn assigned_sites(&self) -> BTreeSet<SiteId> {
        self.sets
            .values()
            .flat_map(|s| s.sites.iter().map(|r| r.site.clone()))
            .collect()
    }
}

/// Round-based draft. Each round visits participants in a seeded random
/// order; each takes their best remaining site that is below the cap.
pub fn draft_assign(lists: &BTreeMap<UserId, Vec<RankedSite>>, cfg: &BatchConfig) -> Result<DraftResult> {
    cfg.validate()?;
    let participants: Vec<&UserId> = lists.keys().collect();
    let mut counts: HashMap<&SiteId, usize> = HashMap::new();
    let mut held: BTreeMap<&UserId, Vec<RankedSite>> = participants.iter().map(|p| (*p, Vec::new())).collect();
    let mut short = BTreeSet::new();
    let stream_seed = Key::new(cfg.seed).str(&cfg.batch_id).finish();
    for round in 0..cfg.rounds {
        let mut order = participants.clone();
        order.shuffle(&mut stream_rng(stream_seed, round as u64));
        for p in order {
            let mine = held.get_mut(p).expect("participant");
            let pick = lists[p].iter().find(|r| {
                counts.get(&r.site).copied().unwrap_or(0) < cfg.cap
                    && !cfg.blocklist.contains(&r.site)
                    && !mine.iter().any(|h| h.site == r.site)
            });
            match pick {
                Some(r) => {
                    *counts.entry(&r.site).or_insert(0) += 1;
                    mine.push(r.clone());
                }
                None => {
                    short.insert(p.clone());
                }
            }
        }
    }
    let sets = held
        .into_iter()
        .map(|(p, sites)| {
            (
                p.clone(),
                RecommendationSet {
                    participant: p.clone(),
                    sites,
                },
            )
        })
        .collect();
    Ok(DraftResult { sets, short })
}

/// Drafted versus uncapped model ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DraftAudit {
    pub mean_drafted_rank: f64,
    pub mean_uncapped_rank: f64,
    /// Largest `model_rank / list length` over all drafted sites.
    pub max_rank_fraction: f64,
}

pub fn draft_audit(lists: &BTreeMap<UserId, Vec<RankedSite>>, draft: &DraftResult) -> DraftAudit {
    let (mut drafted, mut uncapped, mut n) = (0.0, 0.0, 0usize);
    let mut max_frac: f64 = 0.0;
    for (p, set) in &draft.sets {
        let len = lists[p].len().max(1) as f64;
        for (slot, r) in set.sites.iter().enumerate() {
            drafted += r.model_rank as f64;
            uncapped += (slot + 1) as f64;
            max_frac = max_frac.max(r.model_rank as f64 / len);
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    DraftAudit {
        mean_drafted_rank: drafted / n,
        mean_uncapped_rank: uncapped / n,
        max_rank_fraction: max_frac,
    }
}

/// Per participant, the top `k` sites never recommended to anyone.
pub fn build_pseudo_control_sets(
    lists: &BTreeMap<UserId, Vec<RankedSite>>,
    ever_recommended: &BTreeSet<SiteId>,
    blocklist: &BTreeSet<SiteId>,
    k: usize,
) -> DraftResult {
    let mut out = DraftResult::default();
    for (p, list) in lists {
        let sites: Vec<RankedSite> = list
            .iter()
            .filter(|r| !ever_recommended.contains(&r.site) && !blocklist.contains(&r.site))
            .take(k)
            .cloned()
            .collect();
        if sites.len() < k {
            out.short.insert(p.clone());
        }
        out.sets.insert(
            p.clone(),
            RecommendationSet {
                participant: p.clone(),
                sites,
            },
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteMetadata {
    pub title: String,
    /// Text of the most recent journal update, if any.
    pub latest_update: Option<String>,
}

/// Titles default to the site id; previews come from the latest update before `t`.
pub fn site_metadata_from_log(log: &EventLog, t: i64) -> BTreeMap<SiteId, SiteMetadata> {
    let mut out: BTreeMap<SiteId, SiteMetadata> = BTreeMap::new();
    for r in log.records() {
        if r.timestamp_ms >= t {
            break;
        }
        if r.kind != EventKind::JournalUpdate {
            continue;
        }
        let entry = out.entry(r.site.clone()).or_insert_with(|| SiteMetadata {
            title: r.site.to_string(),
            latest_update: None,
        });
        if r.text.is_some() {
            entry.latest_update = r.text.clone();
        }
    }
    out
}

pub fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// First `limit` characters cut back to a word boundary, with an ellipsis.
pub fn truncate_preview(text: &str, limit: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let end = text.char_indices().nth(limit).map_or(text.len(), |(i, _)| i);
    let head = &text[..end];
    // keep the whole head when the cut already falls between words
    let cut = if text[end..].starts_with(char::is_whitespace) {
        head
    } else {
        head.rfind(char::is_whitespace).map_or(head, |i| &head[..i])
    };
    format!("{}…", cut.trim_end())
}

pub fn tracked_link(cfg: &BatchConfig, participant: &UserId, site: &SiteId) -> Result<String> {
    let base = cfg.links.site_base_url.trim_end_matches('/');
    let mut url = Url::parse(&format!("{base}/{}/journal", site.as_str()))
        .map_err(|e| Error::InvalidConfig(format!("bad link for site `{site}`: {e}")))?;
    url.query_pairs_mut()
        .append_pair("utm_source", "rec-engine")
        .append_pair("utm_medium", "email")
        .append_pair("utm_content", site.as_str())
        .append_pair("utm_campaign", &cfg.batch_id)
        .append_pair("utm_term", participant.as_str());
    Ok(url.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmailDocument {
    pub participant: UserId,
    pub batch_id: String,
    pub html: String,
    pub text: String,
    pub links: Vec<String>,
}

pub fn render_email(
    set: &RecommendationSet,
    metadata: &BTreeMap<SiteId, SiteMetadata>,
    cfg: &BatchConfig,
) -> Result<EmailDocument> {
    let mut html = String::new();
    let mut text = String::new();
    let mut links = Vec::with_capacity(set.sites.len());
    html.push_str("<!DOCTYPE html>\n<html>\n<body>\n<h1>Site Suggestions</h1>\n");
    html.push_str("<p>Here are some sites you might want to visit.</p>\n<ul>\n");
    text.push_str("Site Suggestions\n\nHere are some sites you might want to visit.\n\n");
    for r in &set.sites {
        let meta = metadata
            .get(&r.site)
            .ok_or_else(|| Error::MissingMetadata(r.site.to_string()))?;
        let link = tracked_link(cfg, &set.participant, &r.site)?;
        let preview = meta
            .latest_update
            .as_deref()
            .map(|t| truncate_preview(t, cfg.preview_chars))
            .filter(|p| !p.is_empty());
        html.push_str(&format!(
            "<li><a href=\"{}\">{}</a>",
            html_escape(&link),
            html_escape(&meta.title)
        ));
        text.push_str(&format!("* {}\n  {}\n", meta.title, link));
        if let Some(p) = preview {
            html.push_str(&format!("<p>{}</p>", html_escape(&p)));
            text.push_str(&format!("  {p}\n"));
        }
        html.push_str("</li>\n");
        text.push('\n');
        links.push(link);
    }
    let l = &cfg.links;
    html.push_str(&format!(
        "</ul>\n<p><a href=\"{}\">Give feedback</a> | <a href=\"{}\">FAQ</a> | <a href=\"{}\">Unsubscribe</a></p>\n</body>\n</html>\n",
        html_escape(&l.feedback_url),
        html_escape(&l.faq_url),
        html_escape(&l.unsubscribe_url)
    ));
    text.push_str(&format!(
        "Give feedback: {}\nFAQ: {}\nUnsubscribe: {}\n",
        l.feedback_url, l.faq_url, l.unsubscribe_url
    ));
    Ok(EmailDocument {
        participant: set.participant.clone(),
        batch_id: cfg.batch_id.clone(),
        html,
        text,
        links,
    })
}

fn write_set_csv(path: &Path, batch_id: &str, draft: &DraftResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["participant", "batch", "slot", "site", "score", "model_rank"])
        .map_err(csv_err)?;
    for set in draft.sets.values() {
        for (slot, r) in set.sites.iter().enumerate() {
            w.write_record([
                set.participant.as_str(),
                batch_id,
                &(slot + 1).to_string(),
                r.site.as_str(),
                &r.score.to_string(),
                &r.model_rank.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// File-system safe name for a participant id.
fn file_stem(id: &UserId) -> String {
    id.as_str()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the batch directory: per-participant `.html` and `.txt`,
/// `manifest.csv`, `review.txt` and `pseudo_control.csv`.
///
/// `previously_recommended` lists sites sent in earlier batches; the rest
/// appear in `review.txt` for moderation.
pub fn write_batch(
    dir: &Path,
    cfg: &BatchConfig,
    draft: &DraftResult,
    emails: &[EmailDocument],
    pseudo_control: &DraftResult,
    previously_recommended: &BTreeSet<SiteId>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for doc in emails {
        let stem = file_stem(&doc.participant);
        for (ext, body) in [("html", &doc.html), ("txt", &doc.text)] {
            let p = dir.join(format!("{stem}.{ext}"));
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    write_set_csv(&dir.join("manifest.csv"), &cfg.batch_id, draft)?;
    write_set_csv(&dir.join("pseudo_control.csv"), &cfg.batch_id, pseudo_control)?;
    let mut review = format!("# sites recommended for the first time in batch {}\n", cfg.batch_id);
    for site in draft.assigned_sites().difference(previously_recommended) {
        review.push_str(site.as_str());
        review.push('\n');
    }
    let p = dir.join("review.txt");
    fs::write(&p, review).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(sites: &[&str]) -> Vec<RankedSite> {
        sites
            .iter()
            .enumerate()
            .map(|(i, s)| RankedSite {
                site: (*s).into(),
                score: 1.0 - i as f64 / 100.0,
                model_rank: i + 1,
            })
            .collect()
    }

    #[test]
    fn merge_rules() {
        // one candidate pair scored by two source pairs
        let m = merge_pair_scores_to_sites(&["x"], &[vec![0.6, 0.2]]);
        assert!((m["x"] - 0.4).abs() < 1e-15);
        // two author pairs of one site
        let m = merge_pair_scores_to_sites(&["x", "x"], &[vec![0.9], vec![0.4]]);
        assert_eq!(m["x"], 0.9);
    }

    #[test]
    fn rank_sites_orders_by_score() {
        let scores = BTreeMap::from([("a".into(), 0.1), ("b".into(), 0.7), ("c".into(), 0.4)]);
        let r = rank_sites(scores, |_| 0);
        let order: Vec<&str> = r.iter().map(|x| x.site.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
        assert_eq!(r[2].model_rank, 3);
    }

    #[test]
    fn shared_top_site_is_capped() {
        let mut lists = BTreeMap::new();
        for p in 0..20 {
            let mut sites = vec!["top".to_string()];
            sites.extend((0..10).map(|i| format!("p{p}-{i}")));
            let refs: Vec<&str> = sites.iter().map(String::as_str).collect();
            lists.insert(UserId::from(format!("u{p}")), list(&refs));
        }
        let d = draft_assign(&lists, &BatchConfig::default()).unwrap();
        assert_eq!(d.assignment_counts()[&SiteId::from("top")], 10);
        assert!(d.short.is_empty());
        assert!(d.sets.values().all(|s| s.sites.len() == 5));
    }

    #[test]
    fn disjoint_lists_unchanged() {
        let mut lists = BTreeMap::new();
        for p in ["a", "b", "c"] {
            let sites: Vec<String> = (0..6).map(|i| format!("{p}{i}")).collect();
            let refs: Vec<&str> = sites.iter().map(String::as_str).collect();
            lists.insert(UserId::from(p), list(&refs));
        }
        let d = draft_assign(&lists, &BatchConfig::default()).unwrap();
        for (p, set) in &d.sets {
            assert_eq!(set.sites, lists[p][..5].to_vec());
        }
    }

    #[test]
    fn exhausted_list_is_flagged() {
        let lists = BTreeMap::from([(UserId::from("a"), list(&["x", "y"]))]);
        let d = draft_assign(&lists, &BatchConfig::default()).unwrap();
        assert!(d.short.contains(&UserId::from("a")));
        assert_eq!(d.sets[&UserId::from("a")].sites.len(), 2);
    }

    #[test]
    fn pseudo_control_skips_recommended() {
        let sites: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = sites.iter().map(String::as_str).collect();
        let lists = BTreeMap::from([(UserId::from("a"), list(&refs))]);
        let taken: BTreeSet<SiteId> = sites[..10].iter().map(|s| s.as_str().into()).collect();
        let pc = build_pseudo_control_sets(&lists, &taken, &BTreeSet::new(), 5);
        let ranks: Vec<usize> = pc.sets[&UserId::from("a")].sites.iter().map(|r| r.model_rank).collect();
        assert_eq!(ranks, [11, 12, 13, 14, 15]);
        let none = build_pseudo_control_sets(&lists, &BTreeSet::new(), &BTreeSet::new(), 5);
        assert_eq!(
            none.sets[&UserId::from("a")].sites,
            lists[&UserId::from("a")][..5].to_vec()
        );
    }

    #[test]
    fn preview_truncation() {
        assert_eq!(truncate_preview("short text", 500), "short text");
        assert_eq!(truncate_preview("alpha beta gamma", 8), "alpha…");
        assert_eq!(truncate_preview("alpha beta gamma", 10), "alpha beta…");
        let long = "word ".repeat(200);
        let p = truncate_preview(&long, 500);
        assert!(p.chars().count() <= 501);
        assert!(p.ends_with("word…"));
    }

    #[test]
    fn email_links_and_bullets() {
        let set = RecommendationSet {
            participant: "u1".into(),
            sites: list(&["s1", "s2", "s3", "s4", "s5"]),
        };
        let mut meta: BTreeMap<SiteId, SiteMetadata> = (1..=5)
            .map(|i| {
                (
                    SiteId::from(format!("s{i}")),
                    SiteMetadata {
                        title: format!("Site <{i}>"),
                        latest_update: Some("hello & welcome".into()),
                    },
                )
            })
            .collect();
        meta.get_mut(&SiteId::from("s3")).unwrap().latest_update = None;
        let cfg = BatchConfig {
            batch_id: "b7".into(),
            ..Default::default()
        };
        let doc = render_email(&set, &meta, &cfg).unwrap();
        assert_eq!(doc.html.matches("<li>").count(), 5);
        assert_eq!(doc.links.len(), 5);
        for (i, link) in doc.links.iter().enumerate() {
            assert!(
                link.contains(&format!("utm_content=s{}&utm_campaign=b7&utm_term=u1", i + 1)),
                "{link}"
            );
        }
        assert!(doc.html.find("s1/journal").unwrap() < doc.html.find("s5/journal").unwrap());
        assert!(doc.html.contains("Site &lt;1&gt;"));
        assert!(doc.html.contains("hello &amp; welcome"));
        meta.remove(&SiteId::from("s4"));
        match render_email(&set, &meta, &cfg) {
            Err(Error::MissingMetadata(s)) => assert_eq!(s, "s4"),
            other => panic!("{other:?}"),
        }
    }
}
