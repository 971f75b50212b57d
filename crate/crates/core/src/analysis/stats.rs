//! Group comparisons: Mann-Whitney U, common-language effect size, Welch's
//! t-test and Cohen's d.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::models::median;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// U statistic for `a` from midranks of the pooled sample.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> f64 {
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&x| (x, true))
        .chain(b.iter().map(|&x| (x, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum_a = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum_a += midrank * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let n1 = a.len() as f64;
    rank_sum_a - n1 * (n1 + 1.0) / 2.0
}

/// P(a > b) + ½ P(a = b) for random draws, as `U / (n₁ n₂)`.
pub fn cles(a: &[f64], b: &[f64]) -> f64 {
    mann_whitney_u(a, b) / (a.len() * b.len()) as f64
}

/// Two-sided Welch's t-test p-value for a difference in means.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_sd(a).powi(2) / na, sample_sd(b).powi(2) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 || na < 2.0 || nb < 2.0 {
        return if diff == 0.0 { 1.0 } else { 0.0 };
    }
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let t = diff / se2.sqrt();
    2.0 * StudentsT::new(0.0, 1.0, df).expect("positive df").cdf(-t.abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDifference {
    pub metric: String,
    pub median_a: f64,
    pub median_b: f64,
    pub mean_a: f64,
    pub sd_a: f64,
    pub mean_b: f64,
    pub sd_b: f64,
    /// mean_a − mean_b.
    pub mean_difference: f64,
    pub welch_p: f64,
    /// Probability a random unit of `a` exceeds one of `b` (ties ½).
    pub cles: f64,
}

/// One row per metric; `metrics` holds `(name, group a values, group b values)`.
pub fn group_difference_report(metrics: &[(String, Vec<f64>, Vec<f64>)]) -> Result<Vec<GroupDifference>> {
    metrics
        .iter()
        .map(|(name, a, b)| {
            if a.is_empty() || b.is_empty() {
                return Err(Error::InsufficientData(format!("metric `{name}` has an empty group")));
            }
            Ok(GroupDifference {
                metric: name.clone(),
                median_a: median(a),
                median_b: median(b),
                mean_a: mean(a),
                sd_a: sample_sd(a),
                mean_b: mean(b),
                sd_b: sample_sd(b),
                mean_difference: mean(a) - mean(b),
                welch_p: welch_p_value(a, b),
                cles: cles(a, b),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EffectSizeInput {
    /// `d = M / SD` for behaviours only possible under treatment.
    Simple { mean: f64, sd: f64 },
    /// `d = ((C_before − C_after) − (P_before − P_after)) / SD_pooled`.
    DiffInDiff {
        control_before: f64,
        control_after: f64,
        treated_before: f64,
        treated_after: f64,
        sd_pooled: f64,
    },
}

/// Cohen's d.
pub fn effect_size(input: &EffectSizeInput) -> Result<f64> {
    let (num, sd) = match *input {
        EffectSizeInput::Simple { mean, sd } => (mean, sd),
        EffectSizeInput::DiffInDiff {
            control_before,
            control_after,
            treated_before,
            treated_after,
            sd_pooled,
        } => (
            (control_before - control_after) - (treated_before - treated_after),
            sd_pooled,
        ),
    };
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::InvalidConfig(format!("effect size needs SD > 0, got {sd}")));
    }
    Ok(num / sd)
}

/// Pooled SD of two groups from their sizes and SDs.
pub fn pooled_sd(n1: usize, sd1: f64, n2: usize, sd2: f64) -> f64 {
    let (n1, n2) = (n1 as f64, n2 as f64);
    (((n1 - 1.0) * sd1 * sd1 + (n2 - 1.0) * sd2 * sd2) / (n1 + n2 - 2.0)).sqrt()
}
