//! Raw, regression-adjusted and doubly robust treatment effects with
//! stratified percentile-bootstrap intervals.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{least_squares, weighted_least_squares, Matrix};
use crate::error::{Error, Result};
use crate::keyed::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub unit: String,
    pub treated: bool,
    pub covariates: Vec<f64>,
    pub outcome: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomePanel {
    pub covariate_names: Vec<String>,
    pub rows: Vec<PanelRow>,
    pub pre_weeks: u32,
    pub post_weeks: u32,
}

impl OutcomePanel {
    pub fn n_treated(&self) -> usize {
        self.rows.iter().filter(|r| r.treated).count()
    }

    pub fn n_control(&self) -> usize {
        self.rows.len() - self.n_treated()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.covariate_names.len();
        for r in &self.rows {
            if r.covariates.len() != p {
                return Err(Error::InvalidRecord(format!(
                    "unit {}: {} covariates, expected {p}",
                    r.unit,
                    r.covariates.len()
                )));
            }
            if !r.outcome.is_finite() || r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRecord(format!("unit {}: non-finite value", r.unit)));
            }
        }
        if self.n_treated() == 0 || self.n_control() == 0 {
            return Err(Error::InsufficientData("treatment indicator is constant".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMethod {
    Raw,
    Ols,
    DoublyRobust,
}

impl EffectMethod {
    pub const ALL: [EffectMethod; 3] = [EffectMethod::Raw, EffectMethod::Ols, EffectMethod::DoublyRobust];

    pub fn as_str(self) -> &'static str {
        match self {
            EffectMethod::Raw => "raw",
            EffectMethod::Ols => "ols",
            EffectMethod::DoublyRobust => "doubly_robust",
        }
    }
}

impl fmt::Display for EffectMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: EffectMethod,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_bootstrap: usize,
    /// Resamples whose fit failed (rank deficiency, one-sided arm); dropped from the interval.
    pub n_failed: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_bootstrap: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        BootstrapConfig {
            n_bootstrap: 1000,
            confidence: 0.95,
            seed,
        }
    }
}

pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);
pub const IRLS_MAX_ITER: usize = 100;

fn mean_of(rows: &[&PanelRow], treated: bool) -> f64 {
    let (s, n) = rows
        .iter()
        .filter(|r| r.treated == treated)
        .fold((0.0, 0usize), |(s, n), r| (s + r.outcome, n + 1));
    s / n as f64
}

fn check_arms(rows: &[&PanelRow]) -> Result<()> {
    let t = rows.iter().filter(|r| r.treated).count();
    if t == 0 || t == rows.len() {
        return Err(Error::InsufficientData("treatment indicator is constant".into()));
    }
    Ok(())
}

fn raw_point(rows: &[&PanelRow]) -> Result<f64> {
    check_arms(rows)?;
    Ok(mean_of(rows, true) - mean_of(rows, false))
}

fn ols_point(rows: &[&PanelRow], names: &[String]) -> Result<f64> {
    check_arms(rows)?;
    let x = Matrix::from_rows(
        &rows
            .iter()
            .map(|r| {
                let mut v = Vec::with_capacity(names.len() + 2);
                v.push(1.0);
                v.push(if r.treated { 1.0 } else { 0.0 });
                v.extend_from_slice(&r.covariates);
                v
            })
            .collect::<Vec<_>>(),
    );
    let y: Vec<f64> = rows.iter().map(|r| r.outcome).collect();
    let mut cols = vec!["intercept".to_string(), "treated".to_string()];
    cols.extend(names.iter().cloned());
    Ok(least_squares(&x, &y, &cols)?[1])
}

fn covariate_design(rows: &[&PanelRow]) -> Matrix {
    Matrix::from_rows(
        &rows
            .iter()
            .map(|r| std::iter::once(1.0).chain(r.covariates.iter().copied()).collect())
            .collect::<Vec<Vec<f64>>>(),
    )
}

fn design_names(names: &[String]) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain(names.iter().cloned())
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression of `t` on `x` by iteratively reweighted least squares.
/// Fitted probabilities are clipped into [`PROPENSITY_CLIP`] at every step, so
/// separable data settles instead of diverging.
pub fn logistic_irls(x: &Matrix, t: &[f64], names: &[String]) -> Result<Vec<f64>> {
    let (lo, hi) = PROPENSITY_CLIP;
    let mut beta = vec![0.0; x.cols];
    let mut mu = vec![0.5; x.rows];
    let mut grad_norm = f64::INFINITY;
    for _ in 0..IRLS_MAX_ITER {
        let eta = x.mul_vec(&beta);
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let z: Vec<f64> = (0..x.rows).map(|i| eta[i] + (t[i] - mu[i]) / w[i]).collect();
        beta = weighted_least_squares(x, &z, &w, names)?;
        let new_mu: Vec<f64> = x.mul_vec(&beta).into_iter().map(|e| sigmoid(e).clamp(lo, hi)).collect();
        let delta = mu.iter().zip(&new_mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        mu = new_mu;
        grad_norm = (0..x.cols)
            .map(|j| (0..x.rows).map(|i| x.get(i, j) * (t[i] - mu[i])).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        if delta < 1e-10 || grad_norm < 1e-8 {
            return Ok(mu);
        }
    }
    Err(Error::NoConvergence {
        iterations: IRLS_MAX_ITER,
        grad_norm,
    })
}

/// Clipped propensity scores `e(A)` for every row.
pub fn fit_propensity(panel: &OutcomePanel) -> Result<Vec<f64>> {
    let rows: Vec<&PanelRow> = panel.rows.iter().collect();
    propensity(&rows, &panel.covariate_names)
}

fn propensity(rows: &[&PanelRow], names: &[String]) -> Result<Vec<f64>> {
    let t: Vec<f64> = rows.iter().map(|r| if r.treated { 1.0 } else { 0.0 }).collect();
    logistic_irls(&covariate_design(rows), &t, &design_names(names))
}

/// Least-squares outcome model fitted on one arm, predicted for all rows.
fn arm_predictions(rows: &[&PanelRow], names: &[String], treated: bool) -> Result<Vec<f64>> {
    let arm: Vec<&PanelRow> = rows.iter().copied().filter(|r| r.treated == treated).collect();
    let y: Vec<f64> = arm.iter().map(|r| r.outcome).collect();
    let beta = least_squares(&covariate_design(&arm), &y, &design_names(names))?;
    Ok(covariate_design(rows).mul_vec(&beta))
}

fn dr_point(rows: &[&PanelRow], names: &[String]) -> Result<f64> {
    check_arms(rows)?;
    let e = propensity(rows, names)?;
    let m1 = arm_predictions(rows, names, true)?;
    let m0 = arm_predictions(rows, names, false)?;
    let n = rows.len() as f64;
    let (mut a1, mut a0) = (0.0, 0.0);
    for (i, r) in rows.iter().enumerate() {
        let t = if r.treated { 1.0 } else { 0.0 };
        a1 += t * (r.outcome - m1[i]) / e[i] + m1[i];
        a0 += (1.0 - t) * (r.outcome - m0[i]) / (1.0 - e[i]) + m0[i];
    }
    Ok(a1 / n - a0 / n)
}

fn point_estimate(method: EffectMethod, rows: &[&PanelRow], names: &[String]) -> Result<f64> {
    match method {
        EffectMethod::Raw => raw_point(rows),
        EffectMethod::Ols => ols_point(rows, names),
        EffectMethod::DoublyRobust => dr_point(rows, names),
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bootstrap replicates of `method`, resampling each arm with replacement.
/// Iteration `b` draws from its own stream keyed by `(seed, b)`.
pub fn bootstrap_replicates(panel: &OutcomePanel, method: EffectMethod, cfg: &BootstrapConfig) -> Vec<Result<f64>> {
    let treated: Vec<&PanelRow> = panel.rows.iter().filter(|r| r.treated).collect();
    let control: Vec<&PanelRow> = panel.rows.iter().filter(|r| !r.treated).collect();
    (0..cfg.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(cfg.seed, b as u64);
            let mut sample = Vec::with_capacity(panel.rows.len());
            for arm in [&treated, &control] {
                for _ in 0..arm.len() {
                    sample.push(arm[rng.random_range(0..arm.len())]);
                }
            }
            point_estimate(method, &sample, &panel.covariate_names)
        })
        .collect()
}

pub fn estimate_effect(panel: &OutcomePanel, method: EffectMethod, cfg: &BootstrapConfig) -> Result<EffectEstimate> {
    panel.validate()?;
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) || cfg.n_bootstrap < 2 {
        return Err(Error::InvalidConfig(
            "bootstrap needs ≥ 2 iterations and confidence in (0, 1)".into(),
        ));
    }
    let rows: Vec<&PanelRow> = panel.rows.iter().collect();
    let point = point_estimate(method, &rows, &panel.covariate_names)?;
    let reps = bootstrap_replicates(panel, method, cfg);
    let mut ok: Vec<f64> = reps.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failed = reps.len() - ok.len();
    if ok.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{n_failed} of {} bootstrap fits failed",
            reps.len()
        )));
    }
    ok.sort_by(f64::total_cmp);
    let tail = (1.0 - cfg.confidence) / 2.0;
    Ok(EffectEstimate {
        method,
        point,
        ci_low: quantile_sorted(&ok, tail),
        ci_high: quantile_sorted(&ok, 1.0 - tail),
        n_treated: panel.n_treated(),
        n_control: panel.n_control(),
        n_bootstrap: cfg.n_bootstrap,
        n_failed,
        seed: cfg.seed,
    })
}

pub fn raw_effect(panel: &OutcomePanel, cfg: &BootstrapConfig) -> Result<EffectEstimate> {
    estimate_effect(panel, EffectMethod::Raw, cfg)
}

pub fn ols_effect(panel: &OutcomePanel, cfg: &BootstrapConfig) -> Result<EffectEstimate> {
    estimate_effect(panel, EffectMethod::Ols, cfg)
}

pub fn doubly_robust_effect(panel: &OutcomePanel, cfg: &BootstrapConfig) -> Result<EffectEstimate> {
    estimate_effect(panel, EffectMethod::DoublyRobust, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(rows: &[(bool, f64, &[f64])], names: &[&str]) -> OutcomePanel {
        OutcomePanel {
            covariate_names: names.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (t, y, a))| PanelRow {
                    unit: format!("u{i}"),
                    treated: *t,
                    covariates: a.to_vec(),
                    outcome: *y,
                })
                .collect(),
            pre_weeks: 5,
            post_weeks: 13,
        }
    }

    fn cfg() -> BootstrapConfig {
        BootstrapConfig {
            n_bootstrap: 200,
            ..BootstrapConfig::new(7)
        }
    }

    #[test]
    fn raw_difference_of_means() {
        let p = panel(
            &[(true, 2.0, &[]), (true, 4.0, &[]), (false, 1.0, &[]), (false, 1.0, &[])],
            &[],
        );
        let e = raw_effect(&p, &cfg()).unwrap();
        assert_eq!(e.point, 2.0);
        assert_eq!((e.n_treated, e.n_control), (2, 2));
        let same = panel(
            &[(true, 1.0, &[]), (true, 2.0, &[]), (false, 1.0, &[]), (false, 2.0, &[])],
            &[],
        );
        assert_eq!(raw_effect(&same, &cfg()).unwrap().point, 0.0);
    }

    #[test]
    fn constant_treatment_rejected() {
        let p = panel(&[(true, 2.0, &[]), (true, 4.0, &[])], &[]);
        assert!(raw_effect(&p, &cfg()).is_err());
    }

    #[test]
    fn ols_without_covariates_is_raw() {
        let p = panel(
            &[
                (true, 2.5, &[]),
                (true, 4.0, &[]),
                (true, 3.0, &[]),
                (false, 1.0, &[]),
                (false, 0.5, &[]),
            ],
            &[],
        );
        let raw = raw_effect(&p, &cfg()).unwrap();
        let ols = ols_effect(&p, &cfg()).unwrap();
        assert!((raw.point - ols.point).abs() < 1e-12);
    }

    #[test]
    fn duplicated_covariate_names_columns() {
        let rows: Vec<(bool, f64, Vec<f64>)> = (0..20)
            .map(|i| (i % 2 == 0, i as f64, vec![(i * 3 % 7) as f64, (i * 3 % 7) as f64]))
            .collect();
        let p = OutcomePanel {
            covariate_names: vec!["a".into(), "a_copy".into()],
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(i, (t, y, a))| PanelRow {
                    unit: i.to_string(),
                    treated: t,
                    covariates: a,
                    outcome: y,
                })
                .collect(),
            pre_weeks: 5,
            post_weeks: 13,
        };
        match ols_effect(&p, &cfg()).unwrap_err() {
            Error::RankDeficient { columns } => assert_eq!(columns, ["a", "a_copy"]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn separable_propensity_terminates_clipped() {
        let rows: Vec<(bool, f64, [f64; 1])> = (0..30).map(|i| (i >= 15, 1.0, [i as f64])).collect();
        let p = OutcomePanel {
            covariate_names: vec!["a".into()],
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (t, y, a))| PanelRow {
                    unit: i.to_string(),
                    treated: *t,
                    covariates: a.to_vec(),
                    outcome: *y,
                })
                .collect(),
            pre_weeks: 5,
            post_weeks: 13,
        };
        let e = fit_propensity(&p).unwrap();
        assert!(e.iter().all(|&v| (0.01..=0.99).contains(&v)));
        assert!(e
            .iter()
            .all(|&v| 1.0 / v <= 100.0 + 1e-9 && 1.0 / (1.0 - v) <= 100.0 + 1e-9));
    }

    #[test]
    fn dr_balanced_identical_arms_is_zero() {
        let p = panel(
            &[(true, 1.0, &[]), (true, 3.0, &[]), (false, 1.0, &[]), (false, 3.0, &[])],
            &[],
        );
        let e = fit_propensity(&p).unwrap();
        assert!(e.iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(doubly_robust_effect(&p, &cfg()).unwrap().point.abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let rows: Vec<(bool, f64, [f64; 0])> = (0..40).map(|i| (i % 3 == 0, (i as f64).sin(), [])).collect();
        let p = OutcomePanel {
            covariate_names: vec![],
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (t, y, _))| PanelRow {
                    unit: i.to_string(),
                    treated: *t,
                    covariates: vec![],
                    outcome: *y,
                })
                .collect(),
            pre_weeks: 5,
            post_weeks: 13,
        };
        let a = raw_effect(&p, &cfg()).unwrap();
        let b = raw_effect(&p, &cfg()).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low < a.ci_high);
    }

    #[test]
    fn quantile_type7() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
    }
}
