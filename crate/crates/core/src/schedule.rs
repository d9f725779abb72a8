//! Index functions `q_1(l) < ... < q_ell(l)`, the proximity metric between
//! indices, cluster decomposition of index tuples and rare-set classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::union_find::UnionFind;

/// Horizon up to which a schedule is validated on construction.
pub const DEFAULT_VALIDATION_HORIZON: u64 = 10_000;

/// Default cap on the number of tuples an enumeration may visit.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 10_000_000;

/// Built-in index-function families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScheduleFamily {
    /// `q_j(l) = j * l`.
    Linear,
    /// `q_j(l) = l + (j - 1) * max(1, ceil(c * (ln l)^(1 + gamma)))`.
    ArithmeticGap { c: f64, gamma: f64 },
    /// `q_j(l) = l + (j - 1) * l^power`.
    Polynomial { power: u32 },
    /// `q_j(l) = l * base^(j - 1)`.
    ExponentialGap { base: u64 },
    /// Explicit values; `values[l - 1][j - 1] = q_j(l)`.
    Table { values: Vec<Vec<u64>> },
}

/// Constants of the logarithmic gap condition
/// `q_{i+1}(l) - q_i(l) >= c * (ln l)^(1 + gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    pub c: f64,
    pub gamma: f64,
}

impl GapParams {
    pub fn required_gap(&self, l: u64) -> f64 {
        self.c * (l as f64).ln().powf(1.0 + self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QSchedule {
    ell: usize,
    family: ScheduleFamily,
    gap_params: Option<GapParams>,
    validated_to: u64,
}

impl QSchedule {
    /// Builds and validates a schedule up to [`DEFAULT_VALIDATION_HORIZON`]
    /// (or the table length for explicit tables).
    pub fn new(ell: usize, family: ScheduleFamily, gap_params: Option<GapParams>) -> Result<Self> {
        Self::with_horizon(ell, family, gap_params, DEFAULT_VALIDATION_HORIZON)
    }

    pub fn with_horizon(
        ell: usize,
        family: ScheduleFamily,
        gap_params: Option<GapParams>,
        horizon: u64,
    ) -> Result<Self> {
        if ell == 0 {
            return Err(Error::validation("schedule needs ell >= 1"));
        }
        match &family {
            ScheduleFamily::ArithmeticGap { c, gamma } => {
                if !(*c > 0.0 && *gamma > 0.0 && c.is_finite() && gamma.is_finite()) {
                    return Err(Error::validation("arithmetic_gap needs c > 0 and gamma > 0"));
                }
            }
            ScheduleFamily::Polynomial { power } if *power == 0 => {
                return Err(Error::validation("polynomial schedule needs power >= 1"));
            }
            ScheduleFamily::ExponentialGap { base } if *base < 2 => {
                return Err(Error::validation("exponential_gap schedule needs base >= 2"));
            }
            ScheduleFamily::Table { values } => {
                if values.is_empty() {
                    return Err(Error::validation("table schedule is empty"));
                }
                if let Some((i, row)) = values.iter().enumerate().find(|(_, r)| r.len() != ell) {
                    return Err(Error::validation(format!(
                        "table row for l={} has {} entries, expected ell={ell}",
                        i + 1,
                        row.len()
                    )));
                }
            }
            _ => {}
        }
        if let Some(g) = gap_params {
            if !(g.c > 0.0 && g.gamma > 0.0) {
                return Err(Error::validation("gap params need c > 0 and gamma > 0"));
            }
        }
        let gap_params = gap_params.or(match family {
            ScheduleFamily::ArithmeticGap { c, gamma } => Some(GapParams { c, gamma }),
            _ => None,
        });
        let horizon = match &family {
            ScheduleFamily::Table { values } => values.len() as u64,
            _ => horizon.max(1),
        };
        let schedule = Self {
            ell,
            family,
            gap_params,
            validated_to: horizon,
        };
        for l in 1..=horizon {
            schedule.evaluate(l)?;
        }
        Ok(schedule)
    }

    pub fn linear(ell: usize) -> Self {
        Self::new(ell, ScheduleFamily::Linear, None).expect("linear schedule is valid")
    }

    pub fn arithmetic_gap(ell: usize, c: f64, gamma: f64) -> Result<Self> {
        Self::new(ell, ScheduleFamily::ArithmeticGap { c, gamma }, None)
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn family(&self) -> &ScheduleFamily {
        &self.family
    }

    pub fn gap_params(&self) -> Option<GapParams> {
        self.gap_params
    }

    pub fn validated_to(&self) -> u64 {
        self.validated_to
    }

    /// `q_j(l)` for `j` in `1..=ell`, without ordering checks.
    pub fn q(&self, j: usize, l: u64) -> Result<u64> {
        debug_assert!(j >= 1 && j <= self.ell);
        let overflow = || Error::validation(format!("q_{j}({l}) overflows u64"));
        let jm = (j - 1) as u64;
        match &self.family {
            ScheduleFamily::Linear => (j as u64).checked_mul(l).ok_or_else(overflow),
            ScheduleFamily::ArithmeticGap { c, gamma } => {
                let gap = arithmetic_gap(*c, *gamma, l);
                jm.checked_mul(gap)
                    .and_then(|g| g.checked_add(l))
                    .ok_or_else(overflow)
            }
            ScheduleFamily::Polynomial { power } => l
                .checked_pow(*power)
                .and_then(|p| p.checked_mul(jm))
                .and_then(|g| g.checked_add(l))
                .ok_or_else(overflow),
            ScheduleFamily::ExponentialGap { base } => base
                .checked_pow(jm as u32)
                .and_then(|b| b.checked_mul(l))
                .ok_or_else(overflow),
            ScheduleFamily::Table { values } => values
                .get((l as usize).wrapping_sub(1))
                .map(|row| row[j - 1])
                .ok_or_else(|| {
                    Error::validation(format!(
                        "l={l} is outside the explicit table (1..={})",
                        values.len()
                    ))
                }),
        }
    }

    /// `(q_1(l), ..., q_ell(l))`, checked for ordering, `q_1(l) >= l`,
    /// monotonicity against `l - 1` and the gap condition when declared.
    pub fn evaluate(&self, l: u64) -> Result<Vec<u64>> {
        if l == 0 {
            return Err(Error::validation("schedule index l must be >= 1"));
        }
        let qs = self.positions(l)?;
        if qs[0] < l {
            return Err(Error::validation(format!(
                "schedule violation at (j=1, l={l}): q_1(l)={} < l",
                qs[0]
            )));
        }
        for j in 1..self.ell {
            if qs[j] <= qs[j - 1] {
                return Err(Error::validation(format!(
                    "schedule violation at (j={}, l={l}): q_{}(l)={} <= q_{}(l)={}",
                    j + 1,
                    j + 1,
                    qs[j],
                    j,
                    qs[j - 1]
                )));
            }
            if let Some(g) = self.gap_params {
                let need = g.required_gap(l);
                if ((qs[j] - qs[j - 1]) as f64) < need - 1e-9 {
                    return Err(Error::validation(format!(
                        "gap violation at (j={}, l={l}): q_{}(l)-q_{}(l)={} < c(ln l)^(1+gamma)={need:.4}",
                        j + 1,
                        j + 1,
                        j,
                        qs[j] - qs[j - 1]
                    )));
                }
            }
        }
        if l > 1 {
            let prev = self.positions(l - 1)?;
            if let Some(j) = (0..self.ell).find(|&j| qs[j] <= prev[j]) {
                return Err(Error::validation(format!(
                    "schedule violation at (j={}, l={l}): q_j is not strictly increasing in l",
                    j + 1
                )));
            }
        }
        Ok(qs)
    }

    /// `(q_1(l), ..., q_ell(l))` without validation.
    pub fn positions(&self, l: u64) -> Result<Vec<u64>> {
        (1..=self.ell).map(|j| self.q(j, l)).collect()
    }

    /// `rho(l, l2) = min_{i,j} |q_i(l) - q_j(l2)|`.
    pub fn rho(&self, l: u64, l2: u64) -> Result<u64> {
        let a = self.positions(l)?;
        let b = self.positions(l2)?;
        Ok(rho_of_positions(&a, &b))
    }

    /// All `m != l` in `1..=max_index` with `rho(l, m) <= threshold`, ascending.
    pub fn neighbors_within(&self, l: u64, threshold: u64, max_index: u64) -> Result<Vec<u64>> {
        let own = self.positions(l)?;
        let mut out = Vec::new();
        for &p in &own {
            let lo = p.saturating_sub(threshold);
            let hi = p.saturating_add(threshold);
            for j in 1..=self.ell {
                // q_j is increasing in m: locate m with q_j(m) in [lo, hi].
                let first = self.first_index_at_least(j, lo, max_index)?;
                let mut m = first;
                while m <= max_index {
                    if self.q(j, m)? > hi {
                        break;
                    }
                    if m != l {
                        out.push(m);
                    }
                    m += 1;
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Smallest `m` in `1..=max_index` with `q_j(m) >= target` (or `max_index + 1`).
    fn first_index_at_least(&self, j: usize, target: u64, max_index: u64) -> Result<u64> {
        let (mut lo, mut hi) = (1u64, max_index + 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.q(j, mid)? >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(lo)
    }

    /// Cluster threshold and cutoff `a(n) = min(ln n, min_i (q_{i+1}(n) - q_i(n)))`
    /// used for Markov chains.
    pub fn markov_a(&self, n: u64) -> Result<f64> {
        let qs = self.positions(n)?;
        let min_gap = qs
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64)
            .fold(f64::INFINITY, f64::min);
        Ok((n as f64).ln().min(min_gap))
    }
}

fn arithmetic_gap(c: f64, gamma: f64, l: u64) -> u64 {
    let raw = c * (l as f64).ln().powf(1.0 + gamma);
    (raw.ceil() as u64).max(1)
}

pub(crate) fn rho_of_positions(a: &[u64], b: &[u64]) -> u64 {
    let mut best = u64::MAX;
    for &x in a {
        for &y in b {
            best = best.min(x.abs_diff(y));
        }
    }
    best
}

/// `a(n) = floor((ln n)^(1 + eps))`, the short-return range for subshifts.
pub fn subshift_a(n: u64, eps: f64) -> u64 {
    if n <= 1 {
        return 0;
    }
    (n as f64).ln().powf(1.0 + eps).floor() as u64
}

/// `L(n) = min{ k : c (ln k)^(1 + gamma) > 2 (n + a(n)) }`.
pub fn subshift_l(n: u64, a_n: u64, gap: GapParams) -> u64 {
    let rhs = 2.0 * (n + a_n) as f64;
    let exceeds = |k: u64| gap.c * (k as f64).ln().powf(1.0 + gap.gamma) > rhs;
    let estimate = (rhs / gap.c).powf(1.0 / (1.0 + gap.gamma)).exp().floor() as u64 + 1;
    let mut k = estimate.max(1);
    while k > 1 && exceeds(k - 1) {
        k -= 1;
    }
    while !exceeds(k) {
        k += 1;
    }
    k
}

/// Partition of an index tuple into maximal clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterPartition {
    pub tuple: Vec<u64>,
    pub threshold: u64,
    /// Clusters ordered by their smallest member; members ascending.
    pub clusters: Vec<Vec<u64>>,
}

impl ClusterPartition {
    pub fn has_non_singleton(&self) -> bool {
        self.clusters.iter().any(|c| c.len() > 1)
    }
}

/// Connected components of the graph on `tuple` with an edge between `l`
/// and `m` whenever `rho(l, m) <= threshold`.
pub fn cluster_partition(
    schedule: &QSchedule,
    tuple: &[u64],
    threshold: u64,
) -> Result<ClusterPartition> {
    check_distinct(tuple)?;
    let positions: Vec<Vec<u64>> = tuple
        .iter()
        .map(|&l| schedule.positions(l))
        .collect::<Result<_>>()?;
    let mut uf = UnionFind::new(tuple.len());
    for a in 0..tuple.len() {
        for b in a + 1..tuple.len() {
            if rho_of_positions(&positions[a], &positions[b]) <= threshold {
                uf.union(a, b);
            }
        }
    }
    let mut clusters: Vec<Vec<u64>> = uf
        .groups()
        .into_iter()
        .map(|g| {
            let mut c: Vec<u64> = g.into_iter().map(|i| tuple[i]).collect();
            c.sort_unstable();
            c
        })
        .collect();
    clusters.sort_by_key(|c| c[0]);
    Ok(ClusterPartition {
        tuple: tuple.to_vec(),
        threshold,
        clusters,
    })
}

fn check_distinct(tuple: &[u64]) -> Result<()> {
    if tuple.contains(&0) {
        return Err(Error::validation("tuple entries must be positive"));
    }
    let mut sorted = tuple.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::validation(format!("duplicate tuple entry {}", w[0])));
    }
    Ok(())
}

/// Number of maximal clusters `k` and how many of them start at or below
/// the cutoff (`l_flag`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RareSetClass {
    pub k: usize,
    pub l_flag: usize,
    pub cutoff: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TupleClassification {
    pub class: RareSetClass,
    pub rare: bool,
}

/// Rare iff some cluster is not a singleton or the smallest index is at or
/// below the cutoff. Threshold 0 and cutoff 0 give the dissociated-family rule.
pub fn classify_tuple(
    schedule: &QSchedule,
    tuple: &[u64],
    threshold: u64,
    cutoff: u64,
) -> Result<TupleClassification> {
    let partition = cluster_partition(schedule, tuple, threshold)?;
    Ok(classify_partition(&partition, cutoff))
}

pub(crate) fn classify_partition(partition: &ClusterPartition, cutoff: u64) -> TupleClassification {
    let l_flag = partition
        .clusters
        .iter()
        .filter(|c| c[0] <= cutoff)
        .count();
    let i_min = partition.tuple.iter().copied().min().unwrap_or(u64::MAX);
    TupleClassification {
        class: RareSetClass {
            k: partition.clusters.len(),
            l_flag,
            cutoff,
        },
        rare: partition.has_non_singleton() || i_min <= cutoff,
    }
}

/// `binomial(n, r)` as u128, saturating.
pub fn binomial(n: u64, r: u64) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Unordered r-subsets of `1..=n` grouped by rare-set class.
///
/// Tuples are stored ascending and each subset appears once; ordered counts
/// are `r!` times the stored cardinalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEnumeration {
    pub r: usize,
    pub n: u64,
    pub threshold: u64,
    pub cutoff: u64,
    pub classes: BTreeMap<RareSetClass, Vec<Vec<u64>>>,
    /// Rare flag per class (all tuples in a class share it except for
    /// classes with `k == r`, which are split by the cutoff rule).
    pub rare: BTreeMap<RareSetClass, bool>,
}

impl ClassEnumeration {
    pub fn total(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }
}

pub fn enumerate_classes(
    schedule: &QSchedule,
    r: usize,
    n: u64,
    threshold: u64,
    cutoff: u64,
    budget: u128,
) -> Result<ClassEnumeration> {
    if r == 0 || r as u64 > n {
        return Err(Error::validation(format!("need 1 <= r <= n, got r={r}, n={n}")));
    }
    let count = binomial(n, r as u64);
    if count > budget {
        return Err(Error::resource(
            "index_schedule",
            format!("enumeration of {r}-subsets of 1..={n}"),
            count,
            budget,
        ));
    }
    let positions: Vec<Vec<u64>> = (1..=n)
        .map(|l| schedule.positions(l))
        .collect::<Result<_>>()?;
    let mut classes: BTreeMap<RareSetClass, Vec<Vec<u64>>> = BTreeMap::new();
    let mut rare = BTreeMap::new();
    for_each_subset(n, r, |tuple| {
        let part = partition_with_positions(tuple, &positions, threshold);
        let c = classify_partition(&part, cutoff);
        rare.insert(c.class, c.rare);
        classes.entry(c.class).or_default().push(tuple.to_vec());
    });
    Ok(ClassEnumeration {
        r,
        n,
        threshold,
        cutoff,
        classes,
        rare,
    })
}

/// Partition using precomputed positions (`positions[l - 1]`).
pub(crate) fn partition_with_positions(
    tuple: &[u64],
    positions: &[Vec<u64>],
    threshold: u64,
) -> ClusterPartition {
    let mut uf = UnionFind::new(tuple.len());
    for a in 0..tuple.len() {
        for b in a + 1..tuple.len() {
            let pa = &positions[(tuple[a] - 1) as usize];
            let pb = &positions[(tuple[b] - 1) as usize];
            if rho_of_positions(pa, pb) <= threshold {
                uf.union(a, b);
            }
        }
    }
    let mut clusters: Vec<Vec<u64>> = uf
        .groups()
        .into_iter()
        .map(|g| {
            let mut c: Vec<u64> = g.into_iter().map(|i| tuple[i]).collect();
            c.sort_unstable();
            c
        })
        .collect();
    clusters.sort_by_key(|c| c[0]);
    ClusterPartition {
        tuple: tuple.to_vec(),
        threshold,
        clusters,
    }
}

/// Visits every ascending r-subset of `1..=n` in lexicographic order.
pub fn for_each_subset(n: u64, r: usize, mut f: impl FnMut(&[u64])) {
    if r == 0 || r as u64 > n {
        return;
    }
    let mut idx: Vec<u64> = (1..=r as u64).collect();
    loop {
        f(&idx);
        let mut i = r;
        while i > 0 && idx[i - 1] == n - (r - i) as u64 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for t in i..r {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

/// Cardinality envelopes for rare-set classes (ordered-tuple counts).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountingEnvelope {
    /// `#I_r^(k) <= (r! n ell^(2r))^k`.
    Dissociated { ell: usize, n: u64 },
    /// `#I_r^(k,l) <= (2^(r^2) ell^(r(r+1)) r!)^k a(n)^(k r^2 + l) n^(k - l)`.
    Markov { ell: usize, n: u64, a_n: f64 },
    /// `#I_r^(k,l) <= (2^(r^2) ell^(r(r+1)) r!)^k (n + a(n))^(k r^2) L(n)^l N^(k - l)`.
    Subshift {
        ell: usize,
        block: u64,
        a_n: u64,
        l_n: u64,
        horizon: u64,
    },
}

fn factorial(r: usize) -> f64 {
    (1..=r).map(|i| i as f64).product()
}

impl CountingEnvelope {
    /// Bound on the ordered count of tuples in class `(k, l_flag)` of order `r`.
    pub fn ordered_bound(&self, r: usize, k: usize, l_flag: usize) -> f64 {
        let rf = factorial(r);
        let (k_f, l_f, r2) = (k as f64, l_flag as f64, (r * r) as f64);
        match *self {
            CountingEnvelope::Dissociated { ell, n } => {
                (rf * n as f64 * (ell as f64).powi(2 * r as i32)).powf(k_f)
            }
            CountingEnvelope::Markov { ell, n, a_n } => {
                let base = 2f64.powf(r2) * (ell as f64).powi((r * (r + 1)) as i32) * rf;
                base.powf(k_f) * a_n.powf(k_f * r2 + l_f) * (n as f64).powf(k_f - l_f)
            }
            CountingEnvelope::Subshift {
                ell,
                block,
                a_n,
                l_n,
                horizon,
            } => {
                let base = 2f64.powf(r2) * (ell as f64).powi((r * (r + 1)) as i32) * rf;
                base.powf(k_f)
                    * ((block + a_n) as f64).powf(k_f * r2)
                    * (l_n as f64).powf(l_f)
                    * (horizon as f64).powf(k_f - l_f)
            }
        }
    }
}

/// A rare class whose ordered count exceeds its envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeViolation {
    pub class: RareSetClass,
    pub ordered_count: f64,
    pub bound: f64,
}

/// Checks every rare class of an enumeration against the counting envelope.
pub fn check_counting_envelope(
    enumeration: &ClassEnumeration,
    envelope: CountingEnvelope,
) -> Vec<EnvelopeViolation> {
    let rf = factorial(enumeration.r);
    let mut out = Vec::new();
    for (class, tuples) in &enumeration.classes {
        if !enumeration.rare.get(class).copied().unwrap_or(false) {
            continue;
        }
        let ordered = rf * tuples.len() as f64;
        let bound = envelope.ordered_bound(enumeration.r, class.k, class.l_flag);
        if ordered > bound * (1.0 + 1e-12) {
            out.push(EnvelopeViolation {
                class: *class,
                ordered_count: ordered,
                bound,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin2() -> QSchedule {
        QSchedule::linear(2)
    }

    #[test]
    fn evaluate_families() {
        assert_eq!(lin2().evaluate(3).unwrap(), vec![3, 6]);
        let exp = QSchedule::new(3, ScheduleFamily::ExponentialGap { base: 2 }, None).unwrap();
        assert_eq!(exp.evaluate(5).unwrap(), vec![5, 10, 20]);
        let ag = QSchedule::arithmetic_gap(2, 4.0, 0.5).unwrap();
        // ln 1 = 0 so the gap floor of 1 applies at l = 1.
        assert_eq!(ag.evaluate(1).unwrap(), vec![1, 2]);
        let g = ag.gap_params().unwrap();
        for l in [2u64, 10, 1000, 65536] {
            let q = ag.evaluate(l).unwrap();
            assert!((q[1] - q[0]) as f64 >= g.required_gap(l));
        }
        let poly = QSchedule::new(3, ScheduleFamily::Polynomial { power: 2 }, None).unwrap();
        assert_eq!(poly.evaluate(3).unwrap(), vec![3, 12, 21]);
    }

    #[test]
    fn table_validation_names_offender() {
        let bad = ScheduleFamily::Table {
            values: vec![vec![1, 3], vec![2, 2]],
        };
        let err = QSchedule::new(2, bad, None).unwrap_err().to_string();
        assert!(err.contains("j=2, l=2"), "{err}");
        let non_monotone = ScheduleFamily::Table {
            values: vec![vec![2, 5], vec![2, 6]],
        };
        let err = QSchedule::new(2, non_monotone, None).unwrap_err().to_string();
        assert!(err.contains("j=1, l=2"), "{err}");
        let ok = QSchedule::new(
            1,
            ScheduleFamily::Table {
                values: vec![vec![3], vec![6]],
            },
            None,
        )
        .unwrap();
        assert!(ok.evaluate(3).is_err());
    }

    #[test]
    fn gap_params_are_enforced() {
        let err = QSchedule::new(2, ScheduleFamily::Linear, Some(GapParams { c: 4.0, gamma: 0.5 }))
            .unwrap_err();
        assert!(err.to_string().contains("gap violation"));
    }

    #[test]
    fn rho_examples() {
        let s = lin2();
        assert_eq!(s.rho(1, 2).unwrap(), 0);
        assert_eq!(s.rho(1, 3).unwrap(), 1);
        assert_eq!(s.rho(7, 7).unwrap(), 0);
    }

    #[test]
    fn cluster_examples() {
        let s = lin2();
        let p = cluster_partition(&s, &[1, 2, 5], 0).unwrap();
        assert_eq!(p.clusters, vec![vec![1, 2], vec![5]]);
        let p = cluster_partition(&s, &[9], 3).unwrap();
        assert_eq!(p.clusters, vec![vec![9]]);
        let p = cluster_partition(&s, &[1, 2, 4], 0).unwrap();
        assert_eq!(p.clusters, vec![vec![1, 2, 4]]);
        assert!(cluster_partition(&s, &[1, 2, 1], 0).is_err());
    }

    #[test]
    fn classify_examples() {
        let s = lin2();
        let c = classify_tuple(&s, &[1, 2], 0, 0).unwrap();
        assert_eq!(c.class.k, 1);
        assert!(c.rare);
        let c = classify_tuple(&s, &[3, 7], 0, 0).unwrap();
        assert_eq!((c.class.k, c.class.l_flag), (2, 0));
        assert!(!c.rare);
        let c = classify_tuple(&s, &[1, 50], 0, 10).unwrap();
        assert!(c.rare);
        assert_eq!(c.class.l_flag, 1);
    }

    #[test]
    fn enumerate_examples() {
        let s = lin2();
        let e = enumerate_classes(&s, 1, 6, 0, 2, 1000).unwrap();
        assert_eq!(e.total(), 6);
        for (class, tuples) in &e.classes {
            assert_eq!(class.k, 1);
            for t in tuples {
                assert_eq!(class.l_flag == 1, t[0] <= 2);
            }
        }
        let e = enumerate_classes(&s, 2, 3, 0, 0, 1000).unwrap();
        assert_eq!(e.total(), 3);
        let find = |t: &[u64]| {
            let c = classify_tuple(&s, t, 0, 0).unwrap();
            assert!(e.classes[&c.class].contains(&t.to_vec()));
            c.rare
        };
        assert!(find(&[1, 2]));
        assert!(!find(&[2, 3]));
        let e = enumerate_classes(&s, 3, 9, 0, 0, 1000).unwrap();
        assert_eq!(e.total() as u128, binomial(9, 3));
        assert!(matches!(
            enumerate_classes(&s, 3, 100, 0, 0, 1000),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn neighbors_match_brute_force() {
        let schedules = [
            lin2(),
            QSchedule::arithmetic_gap(2, 4.0, 0.5).unwrap(),
            QSchedule::new(3, ScheduleFamily::ExponentialGap { base: 3 }, None).unwrap(),
        ];
        for s in &schedules {
            for threshold in [0u64, 2, 7] {
                for l in [1u64, 5, 17, 40] {
                    let fast = s.neighbors_within(l, threshold, 60).unwrap();
                    let slow: Vec<u64> = (1..=60)
                        .filter(|&m| m != l && s.rho(l, m).unwrap() <= threshold)
                        .collect();
                    assert_eq!(fast, slow, "l={l} threshold={threshold}");
                }
            }
        }
    }

    #[test]
    fn l_cutoff_matches_definition() {
        let g = GapParams { c: 4.0, gamma: 0.5 };
        let a8 = subshift_a(8, 0.25);
        assert_eq!(a8, 2);
        let l = subshift_l(8, a8, g);
        assert_eq!(l, 19);
        assert!(g.c * ((l - 1) as f64).ln().powf(1.5) <= 20.0);
        assert!(g.c * (l as f64).ln().powf(1.5) > 20.0);
    }

    #[test]
    fn markov_a_uses_min_gap() {
        let s = lin2();
        assert!((s.markov_a(100).unwrap() - 100f64.ln()).abs() < 1e-12);
        assert!((s.markov_a(2).unwrap() - 2f64.ln()).abs() < 1e-12);
        let one = QSchedule::linear(1);
        assert!((one.markov_a(8).unwrap() - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dissociated_counts_respect_envelope() {
        for ell in 1..=3 {
            let s = QSchedule::linear(ell);
            for r in 2..=3 {
                let n = 14;
                let e = enumerate_classes(&s, r, n, 0, 0, 1_000_000).unwrap();
                let v = check_counting_envelope(&e, CountingEnvelope::Dissociated { ell, n });
                assert!(v.is_empty(), "{v:?}");
            }
        }
    }
}
