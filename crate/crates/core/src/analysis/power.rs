//! Sample-size calculation for a one-tailed point-biserial correlation test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRequest {
    pub effect_size_rho: f64,
    pub alpha: f64,
    pub power: f64,
    pub tails: u8,
}

impl PowerRequest {
    pub fn new(rho: f64) -> Self {
        PowerRequest {
            effect_size_rho: rho,
            alpha: 0.05,
            power: 0.8,
            tails: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.effect_size_rho;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidConfig(format!("effect size must be in (0, 1), got {r}")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.power > 0.0 && self.power < 1.0) {
            return Err(Error::InvalidConfig("alpha and power must be in (0, 1)".into()));
        }
        if !matches!(self.tails, 1 | 2) {
            return Err(Error::InvalidConfig("tails must be 1 or 2".into()));
        }
        Ok(())
    }
}

const NCT_ERRMAX: f64 = 1e-12;
const NCT_ITRMAX: usize = 10_000;

/// CDF of the noncentral t distribution, `P(T ≤ t)` with `df` degrees of
/// freedom and noncentrality `delta` (Lenth's series, Applied Statistics
/// algorithm 243).
pub fn noncentral_t_cdf(t: f64, df: f64, delta: f64) -> f64 {
    let (tt, del, negate) = if t < 0.0 { (-t, -delta, true) } else { (t, delta, false) };
    let mut tnc = 0.0;
    let x = tt * tt / (tt * tt + df);
    if x > 0.0 {
        let lambda = del * del;
        let mut p = 0.5 * (-0.5 * lambda).exp();
        let mut q = (2.0 / std::f64::consts::PI).sqrt() * p * del;
        let mut s = 0.5 - p;
        let mut a = 0.5;
        let b = 0.5 * df;
        let rxb = (1.0 - x).powf(b);
        let albeta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        let mut xodd = beta_reg(a, b, x);
        let mut godd = 2.0 * rxb * (a * x.ln() - albeta).exp();
        let mut xeven = 1.0 - rxb;
        let mut geven = b * x * rxb;
        tnc = p * xodd + q * xeven;
        let mut en = 1.0;
        for _ in 0..NCT_ITRMAX {
            a += 1.0;
            xodd -= godd;
            xeven -= geven;
            godd *= x * (a + b - 1.0) / a;
            geven *= x * (a + b - 0.5) / (a + 0.5);
            p *= lambda / (2.0 * en);
            q *= lambda / (2.0 * en + 1.0);
            s -= p;
            en += 1.0;
            tnc += p * xodd + q * xeven;
            if 2.0 * s * (xodd - godd) <= NCT_ERRMAX {
                break;
            }
        }
    }
    let normal = Normal::standard();
    tnc += normal.cdf(-del);
    let out = if negate { 1.0 - tnc } else { tnc };
    out.clamp(0.0, 1.0)
}

/// Power of the correlation test with `n` units.
pub fn power_at(req: &PowerRequest, n: u64) -> f64 {
    let df = n as f64 - 2.0;
    let rho = req.effect_size_rho;
    let delta = rho * (n as f64).sqrt() / (1.0 - rho * rho).sqrt();
    let alpha = if req.tails == 2 { req.alpha / 2.0 } else { req.alpha };
    let crit = StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(1.0 - alpha);
    1.0 - noncentral_t_cdf(crit, df, delta)
}

pub const MIN_SAMPLE: u64 = 4;
pub const MAX_SAMPLE: u64 = 10_000_000;

/// Smallest `n` in `[4, 10⁷]` reaching the requested power, by bisection.
pub fn required_sample_size(req: &PowerRequest) -> Result<u64> {
    req.validate()?;
    if power_at(req, MIN_SAMPLE) >= req.power {
        return Ok(MIN_SAMPLE);
    }
    if power_at(req, MAX_SAMPLE) < req.power {
        return Err(Error::InsufficientData(format!(
            "power {} not reachable below n = {MAX_SAMPLE}",
            req.power
        )));
    }
    let (mut lo, mut hi) = (MIN_SAMPLE, MAX_SAMPLE);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if power_at(req, mid) >= req.power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_case_matches_students_t() {
        let st = StudentsT::new(0.0, 1.0, 7.0).unwrap();
        for t in [-2.5, -0.3, 0.0, 0.8, 3.1] {
            assert!((noncentral_t_cdf(t, 7.0, 0.0) - st.cdf(t)).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn monotone_in_effect() {
        let n = |r| required_sample_size(&PowerRequest::new(r)).unwrap();
        assert!(n(0.9) < n(0.5) && n(0.5) < n(0.1));
        assert!(n(0.95) >= MIN_SAMPLE);
        assert!(required_sample_size(&PowerRequest::new(1.0)).is_err());
        assert!(required_sample_size(&PowerRequest::new(0.0)).is_err());
    }
}
