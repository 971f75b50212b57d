//! Matrix factorization over author and site ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::optim::{Adam, OneCycle};
use crate::error::{Error, Result};
use crate::event_log::{SiteId, UserId};
use crate::feedback::TrainingSample;
use crate::keyed::{mix64, stream_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub embedding_dim: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Ids seen in fewer training initiations share the reserved embedding.
    pub min_occurrence: usize,
    pub max_lr: f64,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            embedding_dim: 128,
            weight_decay: 1e-4,
            epochs: 100,
            min_occurrence: 2,
            max_lr: 0.01,
            seed: 0,
        }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.epochs == 0 || self.min_occurrence == 0 {
            return Err(Error::InvalidConfig(
                "mf: embedding_dim, epochs and min_occurrence must be >= 1".into(),
            ));
        }
        if !(self.max_lr > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("mf: bad learning rate or weight decay".into()));
        }
        Ok(())
    }
}

/// Row 0 of each table is the reserved embedding for unseen ids.
#[derive(Clone, Debug, PartialEq)]
pub struct MfModel {
    dim: usize,
    authors: Vec<UserId>,
    sites: Vec<SiteId>,
    author_rows: HashMap<UserId, usize>,
    site_rows: HashMap<SiteId, usize>,
    author_emb: Vec<f64>,
    site_emb: Vec<f64>,
}

impl MfModel {
    pub fn from_parts(
        dim: usize,
        authors: Vec<UserId>,
        sites: Vec<SiteId>,
        author_emb: Vec<f64>,
        site_emb: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || author_emb.len() != (authors.len() + 1) * dim || site_emb.len() != (sites.len() + 1) * dim {
            return Err(Error::Model(
                "matrix factorization tables do not match vocabulary".into(),
            ));
        }
        let author_rows = authors.iter().enumerate().map(|(i, a)| (a.clone(), i + 1)).collect();
        let site_rows = sites.iter().enumerate().map(|(i, s)| (s.clone(), i + 1)).collect();
        Ok(MfModel {
            dim,
            authors,
            sites,
            author_rows,
            site_rows,
            author_emb,
            site_emb,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn authors(&self) -> &[UserId] {
        &self.authors
    }

    pub fn sites(&self) -> &[SiteId] {
        &self.sites
    }

    pub fn author_emb(&self) -> &[f64] {
        &self.author_emb
    }

    pub fn site_emb(&self) -> &[f64] {
        &self.site_emb
    }

    pub fn author_row(&self, id: &UserId) -> usize {
        self.author_rows.get(id).copied().unwrap_or(0)
    }

    pub fn site_row(&self, id: &SiteId) -> usize {
        self.site_rows.get(id).copied().unwrap_or(0)
    }

    fn dot_rows(&self, a: usize, s: usize) -> f64 {
        let d = self.dim;
        self.author_emb[a * d..(a + 1) * d]
            .iter()
            .zip(&self.site_emb[s * d..(s + 1) * d])
            .map(|(x, y)| x * y)
            .sum()
    }

    pub fn score(&self, author: &UserId, site: &SiteId) -> f64 {
        self.dot_rows(self.author_row(author), self.site_row(site))
    }
}

fn vocabulary<T: Ord + Clone>(counts: BTreeMap<T, BTreeSet<usize>>, min: usize) -> Vec<T> {
    counts
        .into_iter()
        .filter(|(_, inits)| inits.len() >= min)
        .map(|(id, _)| id)
        .collect()
}

/// Full-batch BCE training on the labelled samples with Adam and the one-cycle schedule.
pub fn train_mf(samples: &[TrainingSample], cfg: &MfConfig) -> Result<MfModel> {
    cfg.validate()?;
    let n_pos = samples.iter().filter(|s| s.label == 1).count();
    if n_pos == 0 || n_pos == samples.len() {
        return Err(Error::InsufficientData(
            "matrix factorization needs positive and negative samples".into(),
        ));
    }
    let mut author_inits: BTreeMap<UserId, BTreeSet<usize>> = BTreeMap::new();
    let mut site_inits: BTreeMap<SiteId, BTreeSet<usize>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.label == 1) {
        author_inits
            .entry(s.source.author.clone())
            .or_default()
            .insert(s.initiation);
        site_inits
            .entry(s.candidate.site.clone())
            .or_default()
            .insert(s.initiation);
    }
    let authors = vocabulary(author_inits, cfg.min_occurrence);
    let sites = vocabulary(site_inits, cfg.min_occurrence);
    let d = cfg.embedding_dim;
    let mut rng = stream_rng(mix64(cfg.seed), 1);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let author_emb = (0..(authors.len() + 1) * d).map(|_| normal.sample(&mut rng)).collect();
    let site_emb = (0..(sites.len() + 1) * d).map(|_| normal.sample(&mut rng)).collect();
    let mut model = MfModel::from_parts(d, authors, sites, author_emb, site_emb)?;

    let rows: Vec<(usize, usize, f64)> = samples
        .iter()
        .map(|s| {
            (
                model.author_row(&s.source.author),
                model.site_row(&s.candidate.site),
                f64::from(s.label),
            )
        })
        .collect();
    let n_author_params = model.author_emb.len();
    let mut params: Vec<f64> = model.author_emb.iter().chain(&model.site_emb).copied().collect();
    let mut opt = Adam::new(params.len(), cfg.weight_decay);
    let schedule = OneCycle::new(cfg.max_lr, cfg.epochs);
    let scale = 1.0 / rows.len() as f64;
    for epoch in 0..cfg.epochs {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        {
            let (ua, sa) = params.split_at(n_author_params);
            for &(a, s, y) in &rows {
                let (ur, sr) = (&ua[a * d..(a + 1) * d], &sa[s * d..(s + 1) * d]);
                let z: f64 = ur.iter().zip(sr).map(|(x, y)| x * y).sum();
                loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                let g = (1.0 / (1.0 + (-z).exp()) - y) * scale;
                for k in 0..d {
                    grad[a * d + k] += g * sr[k];
                    grad[n_author_params + s * d + k] += g * ur[k];
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1, loss });
        }
        opt.step(&mut params, &grad, schedule.lr(epoch));
    }
    model.author_emb = params[..n_author_params].to_vec();
    model.site_emb = params[n_author_params..].to_vec();
    Ok(model)
}
