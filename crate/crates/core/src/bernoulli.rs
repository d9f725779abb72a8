//! I.i.d. Bernoulli arrays: `S_n = sum_{l=1}^n xi_{q_1(l)} ... xi_{q_ell(l)}`
//! with `P(xi_i = 1) = p_n`.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poisson::{theorem21_bound, tv_distance, CountDistribution, PoissonLaw};
use crate::schedule::QSchedule;
use crate::union_find::UnionFind;

/// Default cap on distinct indices inside one dependency component.
pub const DEFAULT_COMPONENT_BITS: u32 = 25;

#[derive(Debug, Clone)]
pub struct BernoulliScheme {
    n: u64,
    p_n: f64,
    schedule: QSchedule,
    /// Index sets of the `n` product terms, `terms[l - 1]`.
    terms: Vec<Vec<u64>>,
}

impl BernoulliScheme {
    pub fn new(schedule: QSchedule, n: u64, p_n: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("Bernoulli scheme needs n >= 1"));
        }
        if !(p_n > 0.0 && p_n < 1.0) {
            return Err(Error::validation(format!("p_n must lie in (0, 1), got {p_n}")));
        }
        let terms = (1..=n)
            .map(|l| schedule.evaluate(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            p_n,
            schedule,
            terms,
        })
    }

    /// `p_n = (lambda / n)^(1 / ell)`, so that `n p_n^ell = lambda`.
    pub fn from_lambda(schedule: QSchedule, n: u64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || n == 0 {
            return Err(Error::validation("need lambda > 0 and n >= 1"));
        }
        let p = (lambda / n as f64).powf(1.0 / schedule.ell() as f64);
        Self::new(schedule, n, p)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.schedule.ell()
    }

    pub fn p_n(&self) -> f64 {
        self.p_n
    }

    pub fn lambda_n(&self) -> f64 {
        self.n as f64 * self.p_n.powi(self.ell() as i32)
    }

    pub fn schedule(&self) -> &QSchedule {
        &self.schedule
    }

    pub fn terms(&self) -> &[Vec<u64>] {
        &self.terms
    }

    /// Sorted union of all indices read by the sum.
    pub fn required_indices(&self) -> Vec<u64> {
        let mut all: Vec<u64> = self.terms.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// `b_{i_1 ... i_r} = p^(#distinct indices over the terms i_1..i_r)`.
    pub fn b(&self, tuple: &[u64]) -> f64 {
        let mut idx: Vec<u64> = tuple
            .iter()
            .flat_map(|&l| self.terms[(l - 1) as usize].iter().copied())
            .collect();
        idx.sort_unstable();
        idx.dedup();
        self.p_n.powi(idx.len() as i32)
    }

    /// Term indices grouped into components linked by shared `xi` indices,
    /// together with the distinct indices of each component.
    fn components(&self) -> Vec<(Vec<usize>, Vec<u64>)> {
        let mut uf = UnionFind::new(self.terms.len());
        let mut owner: HashMap<u64, usize> = HashMap::new();
        for (t, idx) in self.terms.iter().enumerate() {
            for i in idx {
                if let Some(&o) = owner.get(i) {
                    uf.union(o, t);
                } else {
                    owner.insert(*i, t);
                }
            }
        }
        uf.groups()
            .into_iter()
            .map(|g| {
                let mut idx: Vec<u64> = g.iter().flat_map(|&t| self.terms[t].iter().copied()).collect();
                idx.sort_unstable();
                idx.dedup();
                (g, idx)
            })
            .collect()
    }
}

/// One draw of `S_n`; only the indices the sum reads are sampled, in
/// ascending index order.
pub fn simulate_sum<R: Rng + ?Sized>(scheme: &BernoulliScheme, rng: &mut R) -> u64 {
    let idx = scheme.required_indices();
    let values: HashMap<u64, bool> = idx
        .iter()
        .map(|&i| (i, rng.random::<f64>() < scheme.p_n))
        .collect();
    scheme
        .terms
        .iter()
        .filter(|t| t.iter().all(|i| values[i]))
        .count() as u64
}

/// Exact law of `S_n`: enumerate each dependency component, then convolve.
pub fn exact_distribution(scheme: &BernoulliScheme, max_component_bits: u32) -> Result<CountDistribution> {
    let p = scheme.p_n;
    let mut law = vec![1.0];
    for (terms, idx) in scheme.components() {
        let m = idx.len();
        if m as u32 > max_component_bits {
            return Err(Error::resource(
                "bernoulli_model",
                format!("component with {} terms over {m} indices", terms.len()),
                1u128 << m.min(127),
                1u128 << max_component_bits,
            ));
        }
        let pos: HashMap<u64, usize> = idx.iter().enumerate().map(|(k, i)| (*i, k)).collect();
        let masks: Vec<u64> = terms
            .iter()
            .map(|&t| scheme.terms[t].iter().fold(0u64, |acc, i| acc | 1 << pos[i]))
            .collect();
        // by_ones[c][w]: number of assignments with count c and w ones.
        let mut by_ones = vec![vec![0u64; m + 1]; terms.len() + 1];
        for assignment in 0u64..(1u64 << m) {
            let c = masks.iter().filter(|&&mk| assignment & mk == mk).count();
            by_ones[c][assignment.count_ones() as usize] += 1;
        }
        let weight: Vec<f64> = (0..=m)
            .map(|w| p.powi(w as i32) * (1.0 - p).powi((m - w) as i32))
            .collect();
        let comp: Vec<f64> = by_ones
            .iter()
            .map(|row| row.iter().zip(&weight).map(|(k, w)| *k as f64 * w).sum())
            .collect();
        law = convolve(&law, &comp);
    }
    CountDistribution::from_dense(&law)
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Chen-Stein quantities for the dissociated family `X_J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChenSteinTerms {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub bound: f64,
    /// `n ell^2 p^(2 ell)`.
    pub i2_envelope: f64,
    /// `n ell^2 p^(ell + 1)`.
    pub i3_envelope: f64,
}

impl ChenSteinTerms {
    pub fn within_envelopes(&self) -> bool {
        let slack = 1.0 + 1e-12;
        self.i2 <= self.i2_envelope * slack && self.i3 <= self.i3_envelope * slack
    }
}

/// `I_1 = sum_J p_J^2`, `I_2 = sum_J sum_{K != J, K ~ J} p_J p_K`,
/// `I_3 = sum_J sum_{K != J, K ~ J} E X_J X_K` over ordered pairs of
/// intersecting index sets, and `min(1, 1/lambda_n) (I_1 + I_2 + I_3)`.
pub fn chen_stein_terms(scheme: &BernoulliScheme) -> ChenSteinTerms {
    let p = scheme.p_n;
    let ell = scheme.ell() as i32;
    let n = scheme.n as f64;
    let p_j = p.powi(ell);
    let mut users: HashMap<u64, Vec<usize>> = HashMap::new();
    for (t, idx) in scheme.terms.iter().enumerate() {
        for i in idx {
            users.entry(*i).or_default().push(t);
        }
    }
    let i1 = scheme.terms.len() as f64 * p_j * p_j;
    let (mut i2, mut i3) = (0.0, 0.0);
    for (t, idx) in scheme.terms.iter().enumerate() {
        let mut partners: Vec<usize> = idx
            .iter()
            .flat_map(|i| users[i].iter().copied())
            .filter(|&u| u != t)
            .collect();
        partners.sort_unstable();
        partners.dedup();
        for u in partners {
            let mut joint: Vec<u64> = idx.iter().chain(&scheme.terms[u]).copied().collect();
            joint.sort_unstable();
            joint.dedup();
            i2 += p_j * p_j;
            i3 += p.powi(joint.len() as i32);
        }
    }
    let lambda_n = scheme.lambda_n();
    let l2 = (ell * ell) as f64;
    ChenSteinTerms {
        i1,
        i2,
        i3,
        bound: (1.0f64).min(1.0 / lambda_n) * (i1 + i2 + i3),
        i2_envelope: n * l2 * p.powi(2 * ell),
        i3_envelope: n * l2 * p.powi(ell + 1),
    }
}

/// Exact total variation to `Poisson(lambda)` against the explicit bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem21Report {
    pub n: u64,
    pub ell: usize,
    pub p_n: f64,
    pub lambda: f64,
    pub lambda_n: f64,
    pub tv: f64,
    pub bound: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub holds: bool,
}

impl Theorem21Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn margin(&self) -> f64 {
        self.bound - self.tv
    }
}

pub fn verify_theorem21(scheme: &BernoulliScheme, lambda: f64, max_component_bits: u32) -> Result<Theorem21Report> {
    let law = exact_distribution(scheme, max_component_bits)?;
    let tv = tv_distance(&law, &PoissonLaw::new(lambda)?.to_distribution());
    let bound = theorem21_bound(scheme.ell(), scheme.p_n, lambda, scheme.lambda_n());
    let cs = chen_stein_terms(scheme);
    Ok(Theorem21Report {
        n: scheme.n,
        ell: scheme.ell(),
        p_n: scheme.p_n,
        lambda,
        lambda_n: scheme.lambda_n(),
        tv,
        bound,
        i1: cs.i1,
        i2: cs.i2,
        i3: cs.i3,
        holds: tv <= bound + 1e-10,
    })
}

/// Binomial(n, p) law as a dense vector.
pub fn binomial_law(n: u64, p: f64) -> Vec<f64> {
    let mut law = vec![1.0];
    for _ in 0..n {
        law = convolve(&law, &[1.0 - p, p]);
    }
    law
}
