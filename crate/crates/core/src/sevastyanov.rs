//! Numerical check of the hypotheses of Sevastyanov's Poisson limit theorem
//! for models with an exact `b`-coefficient oracle.
//!
//! For each grid point the checker reports `max_i b_i`, `sum_i b_i`, the sums
//! of `b_{i_1..i_r}` and of `b_{i_1} ... b_{i_r}` over rare tuples, and the
//! range of `b_{i_1..i_r} / (b_{i_1} ... b_{i_r})` over non-rare tuples.
//! Tuples are unordered; sums are over ascending index sets.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bernoulli::BernoulliScheme;
use crate::error::{Error, Result};
use crate::markov::MarkovArrival;
use crate::schedule::{binomial, for_each_subset, partition_with_positions, classify_partition, QSchedule, DEFAULT_ENUMERATION_BUDGET};
use crate::seeding::{stream_rng, tags};
use crate::subshift::SubshiftArrival;
use crate::table::{num, opt, Table};

/// Exact joint probabilities `b_{i_1 .. i_r}` for tuples of `1..=terms()`.
pub trait CoefficientOracle: Sync {
    fn terms(&self) -> u64;
    fn b(&self, tuple: &[u64]) -> Result<f64>;
}

impl CoefficientOracle for BernoulliScheme {
    fn terms(&self) -> u64 {
        self.n()
    }

    fn b(&self, tuple: &[u64]) -> Result<f64> {
        Ok(BernoulliScheme::b(self, tuple))
    }
}

impl CoefficientOracle for MarkovArrival {
    fn terms(&self) -> u64 {
        self.n()
    }

    fn b(&self, tuple: &[u64]) -> Result<f64> {
        self.exact_b(tuple, DEFAULT_ENUMERATION_BUDGET)
    }
}

impl CoefficientOracle for SubshiftArrival {
    fn terms(&self) -> u64 {
        SubshiftArrival::terms(self)
    }

    fn b(&self, tuple: &[u64]) -> Result<f64> {
        self.exact_b(tuple, DEFAULT_ENUMERATION_BUDGET)
    }
}

/// Cluster threshold and smallest-index cutoff defining the rare tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RareParams {
    pub threshold: u64,
    pub cutoff: u64,
}

/// One `n` of the grid: its oracle, schedule and rare-set rule.
pub struct GridPoint<'a> {
    pub n: u64,
    pub oracle: &'a dyn CoefficientOracle,
    pub schedule: &'a QSchedule,
    pub rare: RareParams,
    /// Known upper bound on `r!` times the rare joint sum, if any.
    pub rare_envelope: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckSettings {
    pub r: usize,
    pub lambda: f64,
    /// Largest number of `r`-subsets enumerated in full.
    pub budget: u128,
    /// Uniformly sampled tuples per grid point in stratified mode.
    pub sample_size: u64,
    pub seed: u64,
}

impl CheckSettings {
    pub fn new(r: usize, lambda: f64) -> Self {
        Self {
            r,
            lambda,
            budget: DEFAULT_ENUMERATION_BUDGET,
            sample_size: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRow {
    pub n: u64,
    pub terms: u64,
    pub rare: RareParams,
    pub mode: Mode,
    pub max_b: f64,
    pub sum_b: f64,
    pub rare_sum_joint: f64,
    pub rare_sum_product: f64,
    pub rare_envelope: Option<f64>,
    /// `(min, max)` of the ratio over evaluated non-rare tuples with a
    /// positive denominator; `None` when there are none.
    pub ratio_band: Option<(f64, f64)>,
    pub zero_denominator: u64,
    pub rare_tuples: u64,
    pub nonrare_evaluated: u64,
    /// Fraction of all `r`-subsets that were evaluated.
    pub coverage: f64,
}

impl ConditionRow {
    pub fn ratio_width(&self) -> Option<f64> {
        self.ratio_band.map(|(lo, hi)| hi - lo)
    }

    /// Largest `|ratio - 1|`; infinite when a zero denominator meets a
    /// positive numerator is not possible here, so only the band counts.
    pub fn ratio_deviation(&self) -> Option<f64> {
        self.ratio_band.map(|(lo, hi)| (1.0 - lo).max(hi - 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub r: usize,
    pub lambda: f64,
    pub rows: Vec<ConditionRow>,
}

/// Direction checks across the grid, each allowing a relative `slack`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendCheck {
    pub max_b_decreasing: bool,
    pub rare_sums_decreasing: bool,
    pub ratio_band_shrinking: bool,
    pub sum_b_near_lambda: bool,
}

impl ConditionReport {
    pub fn trends(&self, slack: f64) -> TrendCheck {
        let dec = |v: Vec<f64>| v.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack) + 1e-300);
        let widths: Vec<f64> = self.rows.iter().filter_map(|r| r.ratio_width()).collect();
        let sum_dev: Vec<f64> = self.rows.iter().map(|r| (r.sum_b - self.lambda).abs()).collect();
        TrendCheck {
            max_b_decreasing: dec(self.rows.iter().map(|r| r.max_b).collect()),
            rare_sums_decreasing: dec(self.rows.iter().map(|r| r.rare_sum_joint).collect())
                && dec(self.rows.iter().map(|r| r.rare_sum_product).collect()),
            ratio_band_shrinking: dec(widths),
            sum_b_near_lambda: sum_dev.last().is_some_and(|d| *d <= slack * self.lambda),
        }
    }

    /// `(n, condition, value, envelope, margin)` rows. Margins are positive
    /// when the condition is met: `envelope - value` for upper bounds,
    /// `tol - |value - lambda|` for the sum and `tol - |value - 1|` for ratios.
    /// The verdict at the largest `n` follows as `verdict_<condition>` rows.
    pub fn table(&self, tol: &Tolerances) -> Table {
        let mut t = Table::new(&["n", "condition", "value", "envelope", "margin"]);
        let mut row = |n: u64, name: &str, value: f64, env: Option<f64>, margin: Option<f64>| {
            t.push(vec![n.to_string(), name.to_string(), num(value), opt(env), opt(margin)]);
        };
        for r in &self.rows {
            row(r.n, "max_b", r.max_b, Some(tol.max_b), Some(tol.max_b - r.max_b));
            row(r.n, "sum_b", r.sum_b, Some(self.lambda), Some(tol.sum_b - (r.sum_b - self.lambda).abs()));
            row(r.n, "rare_sum_joint", r.rare_sum_joint, Some(tol.rare), Some(tol.rare - r.rare_sum_joint));
            if let Some(env) = r.rare_envelope {
                let ordered = factorial(self.r) * r.rare_sum_joint;
                row(r.n, "rare_sum_joint_ordered", ordered, Some(env), Some(env - ordered));
            }
            row(r.n, "rare_sum_product", r.rare_sum_product, Some(tol.rare), Some(tol.rare - r.rare_sum_product));
            if let Some((lo, hi)) = r.ratio_band {
                row(r.n, "ratio_min", lo, Some(1.0), Some(tol.ratio - (lo - 1.0).abs()));
                row(r.n, "ratio_max", hi, Some(1.0), Some(tol.ratio - (hi - 1.0).abs()));
            }
            row(r.n, "zero_denominator", r.zero_denominator as f64, None, None);
            row(r.n, "coverage", r.coverage, None, None);
        }
        if let Ok(v) = theorem31_verdict(self, tol) {
            for m in &v.margins {
                row(v.n, &format!("verdict_{}", m.condition), m.value, Some(m.limit), Some(m.margin));
            }
            row(v.n, "verdict", if v.pass { 1.0 } else { 0.0 }, None, None);
        }
        t
    }
}

fn factorial(r: usize) -> f64 {
    (1..=r).map(|i| i as f64).product()
}

/// `p_n sum_{k=1}^{r-1} lambda_n^k (r! ell^{2r})^k` for Bernoulli arrays.
pub fn bernoulli_rare_envelope(p_n: f64, lambda_n: f64, r: usize, ell: usize) -> f64 {
    let base = factorial(r) * (ell as f64).powi(2 * r as i32);
    p_n * (1..r).map(|k| (lambda_n * base).powi(k as i32)).sum::<f64>()
}

fn attach(e: Error, tuple: &[u64]) -> Error {
    match e {
        Error::Resource {
            module,
            what,
            needed,
            cap,
        } => Error::Resource {
            module,
            what: format!("{what} (tuple {tuple:?})"),
            needed,
            cap,
        },
        other => other,
    }
}

#[derive(Default)]
struct Acc {
    rare_joint: f64,
    rare_product: f64,
    rare_tuples: u64,
    lo: f64,
    hi: f64,
    nonrare: u64,
    zero_den: u64,
}

impl Acc {
    fn new() -> Self {
        Self {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    fn add(&mut self, rare: bool, joint: f64, product: f64) {
        if rare {
            self.rare_joint += joint;
            self.rare_product += product;
            self.rare_tuples += 1;
        } else {
            self.nonrare += 1;
            if product > 0.0 {
                let ratio = joint / product;
                self.lo = self.lo.min(ratio);
                self.hi = self.hi.max(ratio);
            } else {
                self.zero_den += 1;
            }
        }
    }
}

const CHUNK: usize = 1 << 14;

pub fn check_conditions(points: &[GridPoint<'_>], settings: &CheckSettings) -> Result<ConditionReport> {
    let r = settings.r;
    if r < 1 {
        return Err(Error::validation("tuple order r must be >= 1"));
    }
    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        rows.push(check_point(point, settings)?);
    }
    Ok(ConditionReport {
        r,
        lambda: settings.lambda,
        rows,
    })
}

fn check_point(point: &GridPoint<'_>, settings: &CheckSettings) -> Result<ConditionRow> {
    let r = settings.r;
    let terms = point.oracle.terms();
    if (r as u64) > terms {
        return Err(Error::validation(format!("r={r} exceeds the {terms} terms at n={}", point.n)));
    }
    let singles: Vec<f64> = (1..=terms)
        .into_par_iter()
        .map(|l| point.oracle.b(&[l]).map_err(|e| attach(e, &[l])))
        .collect::<Result<_>>()?;
    let max_b = singles.iter().copied().fold(0.0, f64::max);
    let sum_b: f64 = singles.iter().sum();
    let positions: Vec<Vec<u64>> = (1..=terms)
        .map(|l| point.schedule.positions(l))
        .collect::<Result<_>>()?;
    let RareParams { threshold, cutoff } = point.rare;
    let is_rare = |tuple: &[u64]| -> bool {
        classify_partition(&partition_with_positions(tuple, &positions, threshold), cutoff).rare
    };
    let evaluate = |tuple: &[u64]| -> Result<(bool, f64, f64)> {
        let joint = point.oracle.b(tuple).map_err(|e| attach(e, tuple))?;
        let product: f64 = tuple.iter().map(|&l| singles[(l - 1) as usize]).product();
        Ok((is_rare(tuple), joint, product))
    };
    let total = binomial(terms, r as u64);
    let mut acc = Acc::new();
    let mode;
    let evaluated: u128;
    if total <= settings.budget {
        mode = Mode::Full;
        let mut chunk: Vec<Vec<u64>> = Vec::with_capacity(CHUNK);
        let mut failure: Option<Error> = None;
        let flush = |chunk: &mut Vec<Vec<u64>>, acc: &mut Acc| -> Result<()> {
            let results: Vec<(bool, f64, f64)> = chunk.par_iter().map(|t| evaluate(t)).collect::<Result<_>>()?;
            for (rare, j, p) in results {
                acc.add(rare, j, p);
            }
            chunk.clear();
            Ok(())
        };
        for_each_subset(terms, r, |t| {
            if failure.is_some() {
                return;
            }
            chunk.push(t.to_vec());
            if chunk.len() == CHUNK {
                if let Err(e) = flush(&mut chunk, &mut acc) {
                    failure = Some(e);
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        flush(&mut chunk, &mut acc)?;
        evaluated = total;
    } else {
        if r != 2 {
            return Err(Error::resource(
                "sevastyanov_checker",
                format!("full enumeration of {r}-subsets of 1..={terms} (stratified mode supports r = 2)"),
                total,
                settings.budget,
            ));
        }
        mode = Mode::Stratified;
        // Pairs starting at or below the cutoff are rare; so are pairs within
        // the cluster threshold. All rare pairs are evaluated. Non-rare pairs
        // with rho <= wide form the boundary stratum, evaluated on every
        // `stride`-th row. Pairs are streamed in chunks.
        let wide = threshold.saturating_mul(2).saturating_add(2);
        let head: u128 = (1..=cutoff.min(terms)).map(|i| (terms - i) as u128).sum();
        if head > settings.budget {
            return Err(Error::resource(
                "sevastyanov_checker",
                format!("pairs below the cutoff {cutoff} at n={}", point.n),
                head,
                settings.budget,
            ));
        }
        let rho = |i: u64, j: u64| {
            crate::schedule::rho_of_positions(&positions[(i - 1) as usize], &positions[(j - 1) as usize])
        };
        let stride = ((terms - cutoff.min(terms)) / settings.sample_size.max(1)).max(1);
        let mut listed: u128 = 0;
        let mut buf: Vec<[u64; 2]> = Vec::with_capacity(CHUNK);
        let flush = |buf: &mut Vec<[u64; 2]>, acc: &mut Acc| -> Result<()> {
            let results: Vec<(bool, f64, f64)> = buf.par_iter().map(|t| evaluate(t)).collect::<Result<_>>()?;
            for (rare, j, p) in results {
                acc.add(rare, j, p);
            }
            buf.clear();
            Ok(())
        };
        for i in 1..terms {
            if i <= cutoff {
                for j in i + 1..=terms {
                    buf.push([i, j]);
                    if buf.len() == CHUNK {
                        flush(&mut buf, &mut acc)?;
                    }
                }
                listed += (terms - i) as u128;
            } else {
                let boundary_row = (i - cutoff - 1) % stride == 0;
                for j in point.schedule.neighbors_within(i, wide, terms)? {
                    if j > i && (boundary_row || rho(i, j) <= threshold) {
                        buf.push([i, j]);
                        listed += 1;
                        if buf.len() == CHUNK {
                            flush(&mut buf, &mut acc)?;
                        }
                    }
                }
                if listed > settings.budget {
                    return Err(Error::resource(
                        "sevastyanov_checker",
                        format!("rare and boundary pairs at n={}", point.n),
                        listed,
                        settings.budget,
                    ));
                }
            }
        }
        flush(&mut buf, &mut acc)?;
        let mut rng = stream_rng(settings.seed, tags::TUPLE_SAMPLING, point.n);
        let mut sampled: Vec<[u64; 2]> = Vec::with_capacity(settings.sample_size as usize);
        let mut draws = 0u64;
        while (sampled.len() as u64) < settings.sample_size && draws < settings.sample_size.saturating_mul(20) {
            draws += 1;
            let a = rng.random_range(1..=terms);
            let b = rng.random_range(1..=terms);
            if a == b {
                continue;
            }
            let (i, j) = (a.min(b), a.max(b));
            if i <= cutoff || rho(i, j) <= wide {
                continue;
            }
            sampled.push([i, j]);
        }
        for chunk in sampled.chunks(CHUNK) {
            buf.extend_from_slice(chunk);
            flush(&mut buf, &mut acc)?;
        }
        evaluated = listed + sampled.len() as u128;
    }
    Ok(ConditionRow {
        n: point.n,
        terms,
        rare: point.rare,
        mode,
        max_b,
        sum_b,
        rare_sum_joint: acc.rare_joint,
        rare_sum_product: acc.rare_product,
        rare_envelope: point.rare_envelope,
        ratio_band: (acc.lo <= acc.hi).then_some((acc.lo, acc.hi)),
        zero_denominator: acc.zero_den,
        rare_tuples: acc.rare_tuples,
        nonrare_evaluated: acc.nonrare,
        coverage: evaluated as f64 / total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub max_b: f64,
    pub sum_b: f64,
    pub rare: f64,
    pub ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            max_b: 0.05,
            sum_b: 0.05,
            rare: 0.05,
            ratio: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionMargin {
    pub condition: &'static str,
    pub value: f64,
    pub limit: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub n: u64,
    pub margins: Vec<ConditionMargin>,
}

impl Verdict {
    pub fn failed(&self) -> Vec<&'static str> {
        self.margins.iter().filter(|m| !m.pass).map(|m| m.condition).collect()
    }
}

/// Pass iff, at the largest grid point, `max_b <= tol`, `|sum_b - lambda| <= tol`,
/// both rare sums `<= tol` and the ratio band lies in `[1 - tol, 1 + tol]`.
/// An empty ratio band fails.
pub fn theorem31_verdict(report: &ConditionReport, tol: &Tolerances) -> Result<Verdict> {
    let last = report
        .rows
        .last()
        .ok_or_else(|| Error::validation("condition report has no rows"))?;
    let mut margins = Vec::new();
    let mut push = |condition: &'static str, value: f64, limit: f64| {
        let margin = limit - value;
        margins.push(ConditionMargin {
            condition,
            value,
            limit,
            margin,
            pass: margin >= 0.0,
        });
    };
    push("max_b", last.max_b, tol.max_b);
    push("sum_b", (last.sum_b - report.lambda).abs(), tol.sum_b);
    push("rare_sum_joint", last.rare_sum_joint, tol.rare);
    push("rare_sum_product", last.rare_sum_product, tol.rare);
    push("ratio_band", last.ratio_deviation().unwrap_or(f64::INFINITY), tol.ratio);
    let pass = margins.iter().all(|m| m.pass);
    Ok(Verdict {
        pass,
        n: last.n,
        margins,
    })
}
