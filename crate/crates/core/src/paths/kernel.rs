use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

/// Number of cached squarings `P^(2^k)`; covers exponents below `2^48`.
const POWER_LEVELS: usize = 48;

/// Row-stochastic transition matrix on a finite alphabet with cached
/// binary powers and cumulative rows for sampling.
#[derive(Debug, Clone)]
pub struct ChainKernel {
    m: usize,
    rows: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
    powers: Vec<Vec<Vec<f64>>>,
}

impl ChainKernel {
    pub fn new(p: &DMatrix<f64>) -> Result<Self> {
        let m = p.nrows();
        if m == 0 || p.ncols() != m {
            return Err(Error::validation("transition matrix must be square and nonempty"));
        }
        if m > u8::MAX as usize + 1 {
            return Err(Error::validation("alphabets above 256 symbols are not supported"));
        }
        let rows: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| p[(i, j)]).collect()).collect();
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::validation(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::validation(format!("row {i} sums to {s}, not 1")));
            }
        }
        let cumulative = rows
            .iter()
            .map(|r| {
                let mut acc = 0.0;
                r.iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut powers = Vec::with_capacity(POWER_LEVELS);
        powers.push(rows.clone());
        for k in 1..POWER_LEVELS {
            let prev = &powers[k - 1];
            powers.push(mat_mul(prev, prev));
        }
        Ok(Self {
            m,
            rows,
            cumulative,
            powers,
        })
    }

    pub fn states(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn p(&self, a: usize, b: usize) -> f64 {
        self.rows[a][b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.rows[a]
    }

    /// `v P^steps`.
    pub fn propagate(&self, v: &[f64], steps: u64) -> Vec<f64> {
        assert!(steps < 1u64 << POWER_LEVELS, "exponent {steps} exceeds cached powers");
        let mut out = v.to_vec();
        let mut e = steps;
        let mut k = 0;
        while e > 0 {
            if e & 1 == 1 {
                out = vec_mat(&out, &self.powers[k]);
            }
            e >>= 1;
            k += 1;
        }
        out
    }

    /// Row `a` of `P^steps`.
    pub fn power_row(&self, a: usize, steps: u64) -> Vec<f64> {
        let mut e = vec![0.0; self.m];
        e[a] = 1.0;
        self.propagate(&e, steps)
    }

    /// Product of transitions along a word.
    pub fn word_weight(&self, word: &[u8]) -> f64 {
        word.windows(2)
            .map(|w| self.p(w[0] as usize, w[1] as usize))
            .product()
    }

    /// Draws the successor of `a`.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, a: usize, rng: &mut R) -> usize {
        sample_cumulative(&self.cumulative[a], rng)
    }
}

/// Index drawn from a cumulative distribution vector.
#[inline]
pub fn sample_cumulative<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let last = cum.len() - 1;
    for (i, c) in cum[..last].iter().enumerate() {
        if u < *c {
            return i;
        }
    }
    // Skip trailing zero-probability states when rounding leaves u above the sum.
    (0..=last)
        .rev()
        .find(|&i| i == 0 || cum[i] > cum[i - 1])
        .unwrap_or(last)
}

pub fn cumulative(dist: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    dist.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

pub(crate) fn vec_mat(v: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut out = vec![0.0; n];
    for (i, vi) in v.iter().enumerate() {
        if *vi == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(&m[i]) {
            *o += vi * x;
        }
    }
    out
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().map(|row| vec_mat(row, b)).collect()
}
