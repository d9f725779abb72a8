//! Poisson laws, count distributions and total-variation distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};

/// Tolerance on `sum(pmf) + tail_mass` around 1.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Exact,
    Empirical,
}

/// Probability mass function over nonnegative counts, plus mass above the
/// largest stored count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistribution {
    pub kind: DistributionKind,
    pub pmf: BTreeMap<u64, f64>,
    pub tail_mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<u64>,
}

impl CountDistribution {
    pub fn exact(pmf: BTreeMap<u64, f64>, tail_mass: f64) -> Result<Self> {
        let d = Self {
            kind: DistributionKind::Exact,
            pmf,
            tail_mass,
            sample_size: None,
        };
        d.validate()?;
        Ok(d)
    }

    /// Exact law from a dense vector `probs[k] = P(S = k)`; zero entries are dropped.
    pub fn from_dense(probs: &[f64]) -> Result<Self> {
        let pmf = probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(k, p)| (k as u64, *p))
            .collect();
        Self::exact(pmf, 0.0)
    }

    pub fn point_mass(k: u64) -> Self {
        Self {
            kind: DistributionKind::Exact,
            pmf: BTreeMap::from([(k, 1.0)]),
            tail_mass: 0.0,
            sample_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((k, p)) = self.pmf.iter().find(|(_, p)| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::validation(format!("pmf({k}) = {p} is not a probability")));
        }
        if !(self.tail_mass >= 0.0) {
            return Err(Error::validation("tail mass must be nonnegative"));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::validation(format!(
                "total mass {total} differs from 1 by more than {MASS_TOLERANCE}"
            )));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.pmf.values().sum::<f64>() + self.tail_mass
    }

    pub fn prob(&self, k: u64) -> f64 {
        self.pmf.get(&k).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().map(|(k, p)| *k as f64 * p).sum()
    }

    pub fn max_count(&self) -> u64 {
        self.pmf.keys().next_back().copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("count distribution serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonLaw {
    lambda: f64,
}

impl PoissonLaw {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::validation(format!("Poisson parameter must be > 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Largest count stored before the remainder goes to the tail.
    pub fn truncation_point(&self) -> u64 {
        (self.lambda + 40.0 * self.lambda.sqrt() + 40.0).floor() as u64
    }

    /// Truncated law with the remainder summed into `tail_mass`.
    pub fn to_distribution(&self) -> CountDistribution {
        let kmax = self.truncation_point();
        let pmf: BTreeMap<u64, f64> = (0..=kmax).map(|k| (k, poisson_pmf(self, k))).collect();
        let mut tail = 0.0;
        let mut k = kmax + 1;
        loop {
            let p = poisson_pmf(self, k);
            tail += p;
            if p < 1e-300 || p < tail * 1e-17 {
                break;
            }
            k += 1;
        }
        CountDistribution {
            kind: DistributionKind::Exact,
            pmf,
            tail_mass: tail,
            sample_size: None,
        }
    }
}

/// `e^{-lambda} lambda^k / k!`, evaluated in log space.
pub fn poisson_pmf(law: &PoissonLaw, k: u64) -> f64 {
    let lambda = law.lambda;
    if k == 0 {
        return (-lambda).exp();
    }
    let kf = k as f64;
    (kf * lambda.ln() - lambda - ln_factorial(k)).exp()
}

fn ln_factorial(k: u64) -> f64 {
    if k < 64 {
        (2..=k).map(|i| (i as f64).ln()).sum()
    } else {
        // Stirling series; relative error below 1e-15 for k >= 64.
        let x = k as f64;
        x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3))
            + 1.0 / (1260.0 * x.powi(5))
    }
}

/// `sup_G |d1(G) - d2(G)| = 1/2 sum_k |p1(k) - p2(k)|`, with both tail
/// masses added to the L1 sum.
pub fn tv_distance(d1: &CountDistribution, d2: &CountDistribution) -> f64 {
    let mut l1 = d1.tail_mass + d2.tail_mass;
    let mut a = d1.pmf.iter().peekable();
    let mut b = d2.pmf.iter().peekable();
    loop {
        match (a.peek(), b.peek()) {
            (Some((ka, pa)), Some((kb, pb))) => {
                if ka == kb {
                    l1 += (**pa - **pb).abs();
                    a.next();
                    b.next();
                } else if ka < kb {
                    l1 += **pa;
                    a.next();
                } else {
                    l1 += **pb;
                    b.next();
                }
            }
            (Some((_, pa)), None) => {
                l1 += **pa;
                a.next();
            }
            (None, Some((_, pb))) => {
                l1 += **pb;
                b.next();
            }
            (None, None) => break,
        }
    }
    (0.5 * l1).clamp(0.0, 1.0)
}

/// `(2 ell^2 + 1) p_n + 2 |lambda - lambda_n| e^{max(lambda, lambda_n)}`.
pub fn theorem21_bound(ell: usize, p_n: f64, lambda: f64, lambda_n: f64) -> f64 {
    let l2 = (ell * ell) as f64;
    (2.0 * l2 + 1.0) * p_n + poisson_shift_bound(lambda, lambda_n)
}

/// `2 |lambda - lambda_n| e^{max(lambda, lambda_n)}`.
pub fn poisson_shift_bound(lambda: f64, lambda_n: f64) -> f64 {
    2.0 * (lambda - lambda_n).abs() * lambda.max(lambda_n).exp()
}

/// Relative-frequency law of a sample of counts.
pub fn empirical_distribution(samples: &[u64]) -> Result<CountDistribution> {
    if samples.is_empty() {
        return Err(Error::validation("empirical distribution of an empty sample"));
    }
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for &s in samples {
        *counts.entry(s).or_default() += 1;
    }
    let n = samples.len() as f64;
    Ok(CountDistribution {
        kind: DistributionKind::Empirical,
        pmf: counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect(),
        tail_mass: 0.0,
        sample_size: Some(samples.len() as u64),
    })
}

/// Binomial standard error `sqrt(p (1 - p) / n)`.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Per-bin comparison of an empirical law with a reference law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinCheck {
    pub k: u64,
    pub reference: f64,
    pub empirical: f64,
    pub sigma: f64,
    pub z: f64,
    /// Clopper-Pearson interval for the empirical proportion at 3-sigma coverage.
    pub ci: (f64, f64),
    pub within_ci: bool,
}

/// Bins `0..=max(both supports)` with `|empirical - reference| / sigma`;
/// sigma uses the reference probability. Zero-probability reference bins
/// report `z = inf` if the empirical law puts mass there.
pub fn bin_checks(empirical: &CountDistribution, reference: &CountDistribution) -> Vec<BinCheck> {
    let n = empirical.sample_size.unwrap_or(1);
    let kmax = empirical.max_count().max(reference.max_count());
    (0..=kmax)
        .map(|k| {
            let p = reference.prob(k);
            let e = empirical.prob(k);
            let sigma = binomial_sigma(p, n);
            let z = if sigma > 0.0 {
                (e - p).abs() / sigma
            } else if e == p {
                0.0
            } else {
                f64::INFINITY
            };
            let ci = clopper_pearson((e * n as f64).round() as u64, n, THREE_SIGMA_ALPHA);
            BinCheck {
                k,
                reference: p,
                empirical: e,
                sigma,
                z,
                ci,
                within_ci: ci.0 <= p && p <= ci.1,
            }
        })
        .collect()
}

/// Two-sided tail mass outside `+-3` standard normal deviations.
pub const THREE_SIGMA_ALPHA: f64 = 0.002_699_796_063_260_186_6;

/// Exact binomial confidence interval for `successes` out of `trials` with
/// two-sided miss probability `alpha`.
pub fn clopper_pearson(successes: u64, trials: u64, alpha: f64) -> (f64, f64) {
    let (k, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).expect("positive shapes").inverse_cdf(alpha / 2.0)
    };
    let hi = if successes >= trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).expect("positive shapes").inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(l: f64) -> PoissonLaw {
        PoissonLaw::new(l).unwrap()
    }

    #[test]
    fn pmf_closed_forms() {
        assert!((poisson_pmf(&law(1.0), 0) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((poisson_pmf(&law(2.0), 2) - 0.270_670_566_473_225_4).abs() < 1e-15);
        assert!((poisson_pmf(&law(0.5), 0) - 0.606_530_659_712_633_4).abs() < 1e-15);
        // Large k goes through Stirling; compare with the product form.
        let direct: f64 = (1..=80).fold((-30f64).exp(), |acc, i| acc * 30.0 / i as f64);
        assert!((poisson_pmf(&law(30.0), 80) / direct - 1.0).abs() < 1e-12);
        assert!(PoissonLaw::new(0.0).is_err());
    }

    #[test]
    fn truncated_law_has_unit_mass() {
        for l in [0.01, 0.5, 1.0, 7.3, 50.0] {
            let d = law(l).to_distribution();
            assert!(d.tail_mass < 1e-12);
            assert!((d.total_mass() - 1.0).abs() < 1e-12, "lambda={l}");
        }
    }

    #[test]
    fn tv_examples() {
        let d = law(1.3).to_distribution();
        assert!(tv_distance(&d, &d) < 1e-12);
        let a = CountDistribution::point_mass(0);
        let b = CountDistribution::point_mass(1);
        assert_eq!(tv_distance(&a, &b), 1.0);
        // Bernoulli(p) against Poisson(p), p = 0.1:
        // 1/2 (|(1-p) - e^-p| + |p - p e^-p| + (1 - e^-p - p e^-p)).
        let p: f64 = 0.1;
        let bern = CountDistribution::from_dense(&[1.0 - p, p]).unwrap();
        let e = (-p).exp();
        let expected = 0.5 * (((1.0 - p) - e).abs() + (p - p * e).abs() + (1.0 - e - p * e));
        assert!((expected - 0.009_516_258_196_404).abs() < 1e-12);
        assert!((tv_distance(&bern, &law(p).to_distribution()) - expected).abs() < 1e-12);
    }

    #[test]
    fn bound_examples() {
        assert!((theorem21_bound(1, 0.02, 1.0, 1.0) - 0.06).abs() < 1e-15);
        assert!((theorem21_bound(2, 0.01, 1.0, 1.0) - 0.09).abs() < 1e-15);
        assert!((theorem21_bound(2, 0.01, 1.0, 1.1) - 0.690_833_2).abs() < 1e-6);
        assert_eq!(poisson_shift_bound(1.0, 1.0), 0.0);
        assert!((poisson_shift_bound(1.0, 1.05) - 0.285_765_1).abs() < 1e-6);
        // Truncated-series oracle: TV(Poisson(1), Poisson(1.05)).
        let tv = tv_distance(&law(1.0).to_distribution(), &law(1.05).to_distribution());
        let mut oracle = 0.0;
        let (mut pa, mut pb) = ((-1f64).exp(), (-1.05f64).exp());
        for k in 0..60 {
            if k > 0 {
                pa *= 1.0 / k as f64;
                pb *= 1.05 / k as f64;
            }
            oracle += (pa - pb).abs();
        }
        assert!((tv - 0.5 * oracle).abs() < 1e-12);
        assert!((tv - 0.018_386_496_665_016).abs() < 1e-12, "tv={tv}");
        assert!(tv <= poisson_shift_bound(1.0, 1.05));
    }

    #[test]
    fn empirical_examples() {
        let d = empirical_distribution(&[0, 0, 1, 1]).unwrap();
        assert_eq!(d.pmf, BTreeMap::from([(0, 0.5), (1, 0.5)]));
        assert_eq!(d.sample_size, Some(4));
        let d = empirical_distribution(&[3]).unwrap();
        assert_eq!(d.pmf, BTreeMap::from([(3, 1.0)]));
        assert!(empirical_distribution(&[]).is_err());
    }

    #[test]
    fn json_shape() {
        let d = empirical_distribution(&[0, 2]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.to_json()).unwrap();
        assert_eq!(v["kind"], "empirical");
        assert_eq!(v["pmf"]["2"], 0.5);
        assert_eq!(v["tail_mass"], 0.0);
        assert_eq!(v["sample_size"], 2);
        let e = law(1.0).to_distribution();
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert!(v.get("sample_size").is_none());
        let back: CountDistribution = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn clopper_pearson_matches_beta_quantiles() {
        let cases = [
            (25, 100_000, 0.00012617992744284805, 0.0004397985222624251),
            (0, 50, 0.0, 0.12379441055154984),
            (7, 20, 0.09070952213284206, 0.6984274136027171),
            (20, 20, 0.7186460588690817, 1.0),
        ];
        for (k, n, lo, hi) in cases {
            let (a, b) = clopper_pearson(k, n, THREE_SIGMA_ALPHA);
            assert!((a - lo).abs() <= 1e-9 * lo.max(1e-12), "{k}/{n}: {a} vs {lo}");
            assert!((b - hi).abs() <= 1e-9 * hi, "{k}/{n}: {b} vs {hi}");
        }
    }
}
