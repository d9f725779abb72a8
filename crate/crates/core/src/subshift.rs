//! One-sided subshifts of finite type with stationary Markov measures,
//! cylinder targets `B_n` around a reference word, and the arrival sum
//! `S_n = sum_{l=1}^{N_n} prod_j 1_{B_n}(T^{q_j(l)} w)`.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{fit_envelope, stationary_distribution, FIT_FLOOR};
use crate::paths::{cumulative, sample_word, ArrivalProcess, BlockSet, ChainKernel, HitPlan, Scratch};
use crate::poisson::CountDistribution;
use crate::schedule::{subshift_a, QSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct SubshiftSFT {
    iota: usize,
    a: Vec<Vec<u8>>,
    wp: u32,
}

impl SubshiftSFT {
    pub fn new(a: Vec<Vec<u8>>) -> Result<Self> {
        let iota = a.len();
        if iota == 0 || iota > 256 || a.iter().any(|r| r.len() != iota) {
            return Err(Error::validation("adjacency matrix must be square with 1..=256 symbols"));
        }
        if a.iter().flatten().any(|x| *x > 1) {
            return Err(Error::validation("adjacency matrix entries must be 0 or 1"));
        }
        for i in 0..iota {
            if a[i].iter().all(|x| *x == 0) {
                return Err(Error::validation(format!("adjacency row {i} is zero")));
            }
            if (0..iota).all(|r| a[r][i] == 0) {
                return Err(Error::validation(format!("adjacency column {i} is zero")));
            }
        }
        let bound = ((iota - 1) * (iota - 1) + 1) as u32;
        let mut power = a.clone();
        for wp in 1..=bound {
            if wp > 1 {
                power = bool_mul(&power, &a);
            }
            if power.iter().flatten().all(|x| *x == 1) {
                return Ok(Self { iota, a, wp });
            }
        }
        Err(Error::validation("adjacency matrix is not primitive (no positive power)"))
    }

    pub fn full_shift(iota: usize) -> Self {
        Self::new(vec![vec![1; iota]; iota]).expect("full shift is primitive")
    }

    pub fn golden_mean() -> Self {
        Self::new(vec![vec![1, 1], vec![1, 0]]).expect("golden mean shift is primitive")
    }

    pub fn iota(&self) -> usize {
        self.iota
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.a
    }

    /// Smallest power with `A^wp > 0`.
    pub fn mixing_power(&self) -> u32 {
        self.wp
    }

    #[inline]
    pub fn allowed(&self, x: u8, y: u8) -> bool {
        self.a[x as usize][y as usize] == 1
    }

    pub fn admissible(&self, word: &[u8]) -> bool {
        word.iter().all(|x| (*x as usize) < self.iota) && word.windows(2).all(|w| self.allowed(w[0], w[1]))
    }

    /// Whether `(A^k)_{x, y} > 0`.
    fn reachable_in(&self, x: u8, y: u8, k: u64) -> bool {
        let mut cur = vec![false; self.iota];
        cur[x as usize] = true;
        // Reachability sets cycle with period at most 2^iota; k up to a(n) is small.
        for _ in 0..k {
            let mut next = vec![false; self.iota];
            for (s, on) in cur.iter().enumerate() {
                if *on {
                    for (t, nx) in next.iter_mut().enumerate() {
                        *nx |= self.a[s][t] == 1;
                    }
                }
            }
            cur = next;
        }
        cur[y as usize]
    }

    /// All admissible words of length `len`, in lexicographic order.
    pub fn words(&self, len: usize) -> Vec<Vec<u8>> {
        let mut out: Vec<Vec<u8>> = (0..self.iota as u8).map(|x| vec![x]).collect();
        if len == 0 {
            return vec![Vec::new()];
        }
        for _ in 1..len {
            out = out
                .into_iter()
                .flat_map(|w| {
                    let last = *w.last().unwrap();
                    (0..self.iota as u8).filter(move |y| self.allowed(last, *y)).map(move |y| {
                        let mut v = w.clone();
                        v.push(y);
                        v
                    })
                })
                .collect();
        }
        out
    }
}

fn bool_mul(x: &[Vec<u8>], y: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let m = x.len();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| (0..m).any(|k| x[i][k] == 1 && y[k][j] == 1) as u8)
                .collect()
        })
        .collect()
}

/// Stationary Markov measure supported on the admissible sequences.
#[derive(Debug, Clone)]
pub struct MarkovGibbsMeasure {
    sft: SubshiftSFT,
    q: DMatrix<f64>,
    kernel: ChainKernel,
    pi: Vec<f64>,
    entropy: f64,
}

impl MarkovGibbsMeasure {
    pub fn new(sft: SubshiftSFT, q_rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = sft.iota();
        if q_rows.len() != m || q_rows.iter().any(|r| r.len() != m) {
            return Err(Error::validation("Q must have the shape of the adjacency matrix"));
        }
        for i in 0..m {
            for j in 0..m {
                if (q_rows[i][j] > 0.0) != sft.allowed(i as u8, j as u8) {
                    return Err(Error::validation(format!(
                        "Q[{i}][{j}] = {} but A[{i}][{j}] = {}",
                        q_rows[i][j], sft.a[i][j]
                    )));
                }
            }
        }
        let q = DMatrix::from_row_slice(m, m, &q_rows.concat());
        let kernel = ChainKernel::new(&q)?;
        let pi = stationary_distribution(&q)?;
        let entropy = -(0..m)
            .map(|i| {
                pi[i] * (0..m)
                    .map(|j| q[(i, j)])
                    .filter(|x| *x > 0.0)
                    .map(|x| x * x.ln())
                    .sum::<f64>()
            })
            .sum::<f64>();
        Ok(Self {
            sft,
            q,
            kernel,
            pi,
            entropy,
        })
    }

    /// Uniform transitions over allowed successors.
    pub fn uniform(sft: SubshiftSFT) -> Result<Self> {
        let rows = sft
            .adjacency()
            .iter()
            .map(|r| {
                let k = r.iter().filter(|x| **x == 1).count() as f64;
                r.iter().map(|x| *x as f64 / k).collect()
            })
            .collect();
        Self::new(sft, rows)
    }

    pub fn sft(&self) -> &SubshiftSFT {
        &self.sft
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn kernel(&self) -> &ChainKernel {
        &self.kernel
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `h = -sum_i pi_i sum_j Q_ij ln Q_ij`.
    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    /// `P([a_0 .. a_{n-1}]) = pi_{a_0} prod Q_{a_i a_{i+1}}`.
    pub fn cylinder_prob(&self, word: &[u8]) -> Result<f64> {
        if word.is_empty() {
            return Ok(1.0);
        }
        if !self.sft.admissible(word) {
            return Err(Error::validation(format!("word {word:?} is not admissible")));
        }
        Ok(self.pi[word[0] as usize] * self.kernel.word_weight(word))
    }

    /// Second largest eigenvalue modulus of `Q`.
    pub fn second_eigenvalue_modulus(&self) -> f64 {
        let mut moduli: Vec<f64> = self.q.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.total_cmp(a));
        moduli.get(1).copied().unwrap_or(0.0)
    }
}

/// Gibbs ratio bounds `C^{-1} <= P([w]) / exp(sum_{i<n} phi(T^i w)) <= C` with
/// `phi(w) = ln Q_{w_0 w_1}`. The Birkhoff sum is evaluated on the periodic
/// extension `w_n = w_0` when that transition is allowed and otherwise on the
/// smallest allowed successor of `w_{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsReport {
    pub c: f64,
    /// Largest `max(ratio, 1/ratio)` per word length `1..=n_max`.
    pub per_length: Vec<f64>,
    /// Whether the per-length maxima stop growing over the second half.
    pub bounded: bool,
    pub convention: &'static str,
}

pub fn gibbs_constant(measure: &MarkovGibbsMeasure, n_max: usize) -> Result<GibbsReport> {
    if n_max < 1 {
        return Err(Error::validation("gibbs_constant needs n_max >= 1"));
    }
    let sft = measure.sft();
    let mut per_length = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut worst: f64 = 1.0;
        for w in sft.words(n) {
            let first = w[0];
            let last = *w.last().unwrap();
            let next = if sft.allowed(last, first) {
                first
            } else {
                (0..sft.iota() as u8).find(|y| sft.allowed(last, *y)).unwrap()
            };
            let ratio = measure.pi[first as usize] / measure.q[(last as usize, next as usize)];
            worst = worst.max(ratio).max(1.0 / ratio);
        }
        per_length.push(worst);
    }
    let half = per_length[(n_max - 1) / 2];
    let c = per_length.iter().copied().fold(0.0, f64::max);
    Ok(GibbsReport {
        c,
        bounded: *per_length.last().unwrap() <= half * (1.0 + 1e-12),
        per_length,
        convention: "periodic_extension",
    })
}

/// Exhaustive check of `|P(U & T^{-n} V) - P(U) P(V)| <= C e^{-beta (n - l)} P(U) P(V)`
/// over cylinders `U` of length `l + 1 <= l_max`, `V` of length `<= l_max`,
/// and gaps `n - l` in `1..=gap_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiMixingReport {
    pub c: f64,
    pub beta: f64,
    /// `-ln |lambda_2(Q)|`.
    pub spectral_beta: f64,
    /// Largest relative error per gap `1..=gap_max`.
    pub worst_by_gap: Vec<f64>,
    /// `(U, V, n)` attaining the largest relative error.
    pub worst_pair: Option<(Vec<u8>, Vec<u8>, u64)>,
    pub triples: u64,
    pub violations: u64,
}

impl PsiMixingReport {
    /// Relative distance between the fitted and spectral rates.
    pub fn rate_error(&self) -> f64 {
        if self.beta.is_infinite() && self.spectral_beta.is_infinite() {
            0.0
        } else {
            (self.beta - self.spectral_beta).abs() / self.spectral_beta
        }
    }
}

pub fn psi_mixing_check(measure: &MarkovGibbsMeasure, l_max: usize, gap_max: u64) -> Result<PsiMixingReport> {
    if l_max < 1 || gap_max < 2 {
        return Err(Error::validation("psi_mixing_check needs l_max >= 1 and gap_max >= 2"));
    }
    let sft = measure.sft();
    let cylinders: Vec<(Vec<u8>, f64)> = (1..=l_max)
        .flat_map(|len| sft.words(len))
        .map(|w| {
            let p = measure.cylinder_prob(&w).expect("enumerated words are admissible");
            (w, p)
        })
        .collect();
    let m = sft.iota();
    let rows: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|a| (1..=gap_max).map(|g| measure.kernel.power_row(a, g)).collect())
        .collect();
    let rel = |u_last: u8, v0: u8, g: u64| -> f64 {
        let joint_over_product = rows[u_last as usize][(g - 1) as usize][v0 as usize] / measure.pi[v0 as usize];
        (joint_over_product - 1.0).abs()
    };
    let mut worst_by_gap = vec![0.0f64; gap_max as usize];
    let mut worst: Option<(f64, Vec<u8>, Vec<u8>, u64)> = None;
    let mut triples = 0u64;
    for (u, _) in &cylinders {
        let l = (u.len() - 1) as u64;
        for (v, _) in &cylinders {
            for g in 1..=gap_max {
                triples += 1;
                let e = rel(*u.last().unwrap(), v[0], g);
                let slot = &mut worst_by_gap[(g - 1) as usize];
                *slot = slot.max(e);
                if worst.as_ref().is_none_or(|w| e > w.0) {
                    worst = Some((e, u.clone(), v.clone(), l + g));
                }
            }
        }
    }
    let (c, beta) = fit_envelope(&worst_by_gap);
    let mut violations = 0u64;
    for (u, _) in &cylinders {
        for (v, _) in &cylinders {
            for g in 1..=gap_max {
                let e = rel(*u.last().unwrap(), v[0], g);
                let env = if beta.is_infinite() { 0.0 } else { c * (-beta * g as f64).exp() };
                if e > env * (1.0 + 1e-9) + FIT_FLOOR * 1e-3 {
                    violations += 1;
                }
            }
        }
    }
    let lam2 = measure.second_eigenvalue_modulus();
    Ok(PsiMixingReport {
        c,
        beta,
        spectral_beta: if lam2 > 0.0 { -lam2.ln() } else { f64::INFINITY },
        worst_by_gap,
        worst_pair: worst.map(|w| (w.1, w.2, w.3)),
        triples,
        violations,
    })
}

/// `C_n(w) & T^{-i} C_n(w) = {}` for every `i = 1..=a_n`. Shifts below `n`
/// need a period `i` of the word; shifts `i >= n` need a path of `i - n + 1`
/// steps from the last symbol back to the first.
pub fn short_return_check(sft: &SubshiftSFT, word: &[u8], a_n: u64) -> bool {
    let n = word.len() as u64;
    (1..=a_n).all(|i| {
        let overlaps = if i < n {
            let i = i as usize;
            (0..word.len() - i).all(|k| word[k + i] == word[k])
        } else {
            sft.reachable_in(*word.last().unwrap(), word[0], i - n + 1)
        };
        !overlaps
    })
}

/// Draws `w_0 ~ pi` and then steps by `Q`.
pub fn sample_point<R: Rng + ?Sized>(measure: &MarkovGibbsMeasure, length: usize, rng: &mut R) -> Vec<u8> {
    sample_word(&measure.kernel, &cumulative(&measure.pi), length, rng)
}

/// `|(1/n) ln P([w]) + h|`.
pub fn aep_deviation(measure: &MarkovGibbsMeasure, word: &[u8]) -> Result<f64> {
    let p = measure.cylinder_prob(word)?;
    Ok((p.ln() / word.len() as f64 + measure.entropy).abs())
}

/// Reference word: explicit symbols or a seeded draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OmegaStar {
    Word(Vec<u8>),
    Sample { seed: u64 },
}

impl TryFrom<String> for OmegaStar {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        if let Some(seed) = s.strip_prefix("sample:") {
            return seed
                .trim()
                .parse()
                .map(|seed| OmegaStar::Sample { seed })
                .map_err(|_| format!("invalid omega_star seed in {s:?}"));
        }
        let word: Option<Vec<u8>> = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .flat_map(|t| {
                if s.contains(',') || s.contains(' ') {
                    vec![t.parse::<u8>().ok()]
                } else {
                    t.chars().map(|c| c.to_digit(10).map(|d| d as u8)).collect()
                }
            })
            .collect();
        match word {
            Some(w) if !w.is_empty() => Ok(OmegaStar::Word(w)),
            _ => Err(format!("omega_star {s:?} is neither a word nor sample:<seed>")),
        }
    }
}

impl From<OmegaStar> for String {
    fn from(o: OmegaStar) -> String {
        match o {
            OmegaStar::Word(w) if w.iter().all(|x| *x < 10) => w.iter().map(|x| x.to_string()).collect(),
            OmegaStar::Word(w) => w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            OmegaStar::Sample { seed } => format!("sample:{seed}"),
        }
    }
}

/// Rejection-samples a word of `length` symbols whose prefix of every length
/// `n` in `checks` passes `short_return_check` with the paired `a(n)`.
pub fn sample_omega_star(
    measure: &MarkovGibbsMeasure,
    length: usize,
    checks: &[(u64, u64)],
    seed: u64,
    max_tries: u32,
) -> Result<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_tries {
        let w = sample_point(measure, length, &mut rng);
        if checks
            .iter()
            .all(|&(n, a)| short_return_check(measure.sft(), &w[..n as usize], a))
        {
            return Ok(w);
        }
    }
    Err(Error::validation(format!(
        "no short-return-clear reference word found in {max_tries} draws"
    )))
}

/// Optional seeded thinning of the extensions of `C_n(w*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub seed: u64,
    /// Probability of keeping each extension block other than the one of `w*`.
    pub keep: f64,
}

/// Target `B_n`: a union of admissible cylinders of length `n + floor(s ln n)`
/// inside `C_n(w*)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderTarget {
    pub omega_star: Vec<u8>,
    pub n: u64,
    pub s: f64,
    pub block_len: usize,
    pub blocks: Vec<Vec<u8>>,
    pub prob: f64,
    pub a_n: u64,
    pub short_return_clear: bool,
    pub refinement: Option<Refinement>,
}

impl CylinderTarget {
    pub fn new(
        measure: &MarkovGibbsMeasure,
        omega_star: &[u8],
        n: u64,
        s: f64,
        eps: f64,
        refinement: Option<Refinement>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("cylinder target needs n >= 1"));
        }
        if !(s >= 0.0) {
            return Err(Error::validation("s must be nonnegative"));
        }
        let block_len = n as usize + (s * (n as f64).ln()).floor() as usize;
        if omega_star.len() < block_len {
            return Err(Error::validation(format!(
                "reference word has {} symbols, target needs {block_len}",
                omega_star.len()
            )));
        }
        let own = &omega_star[..block_len];
        if !measure.sft().admissible(own) {
            return Err(Error::validation("reference word is not admissible"));
        }
        let prefix = &omega_star[..n as usize];
        let extra = block_len - n as usize;
        let mut blocks: Vec<Vec<u8>> = vec![prefix.to_vec()];
        for _ in 0..extra {
            blocks = blocks
                .into_iter()
                .flat_map(|w| {
                    let last = *w.last().unwrap();
                    (0..measure.sft().iota() as u8)
                        .filter(move |y| measure.sft().allowed(last, *y))
                        .map(move |y| {
                            let mut v = w.clone();
                            v.push(y);
                            v
                        })
                })
                .collect();
        }
        if let Some(r) = refinement {
            if !(0.0..=1.0).contains(&r.keep) {
                return Err(Error::validation("refinement keep probability must lie in [0, 1]"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
            blocks.retain(|b| {
                let draw: f64 = rng.random();
                b[..] == own[..] || draw < r.keep
            });
        }
        let prob = blocks
            .iter()
            .map(|b| measure.cylinder_prob(b))
            .sum::<Result<f64>>()?;
        let a_n = subshift_a(n, eps);
        Ok(Self {
            omega_star: omega_star.to_vec(),
            n,
            s,
            block_len,
            blocks,
            prob,
            a_n,
            short_return_clear: short_return_check(measure.sft(), prefix, a_n),
            refinement,
        })
    }

    /// Arbitrary union of equal-length cylinders, without a reference word.
    pub fn from_blocks(measure: &MarkovGibbsMeasure, blocks: Vec<Vec<u8>>) -> Result<Self> {
        let block_len = blocks.first().map(Vec::len).unwrap_or(0);
        if block_len == 0 || blocks.iter().any(|b| b.len() != block_len) {
            return Err(Error::validation("blocks must be nonempty and of equal length"));
        }
        let prob = blocks
            .iter()
            .map(|b| measure.cylinder_prob(b))
            .sum::<Result<f64>>()?;
        Ok(Self {
            omega_star: blocks[0].clone(),
            n: block_len as u64,
            s: 0.0,
            block_len,
            blocks,
            prob,
            a_n: 0,
            short_return_clear: true,
            refinement: None,
        })
    }
}

/// One draw of a hitting-time simulation, scaled by `P(B_n)^ell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingSample {
    pub scaled: f64,
    pub censored: bool,
}

/// Arrival sum and hitting time for one target.
#[derive(Debug, Clone)]
pub struct SubshiftArrival {
    process: ArrivalProcess,
    schedule: QSchedule,
    plan: HitPlan,
    p_ell: f64,
    terms: u64,
    iota: usize,
    block_len: usize,
}

impl SubshiftArrival {
    /// `terms = round(lambda / P(B_n)^ell)`; fails when the path would exceed
    /// `path_budget` symbols or the target is not short-return clear.
    pub fn new(
        measure: &MarkovGibbsMeasure,
        schedule: &QSchedule,
        target: &CylinderTarget,
        lambda: f64,
        path_budget: u64,
    ) -> Result<Self> {
        let p_ell = target.prob.powi(schedule.ell() as i32);
        let terms = ((lambda / p_ell).round() as u64).max(1);
        Self::with_terms(measure, schedule, target, terms, path_budget)
    }

    pub fn with_terms(
        measure: &MarkovGibbsMeasure,
        schedule: &QSchedule,
        target: &CylinderTarget,
        terms: u64,
        path_budget: u64,
    ) -> Result<Self> {
        if !target.short_return_clear {
            return Err(Error::validation(format!(
                "reference word fails short_return_check at n={} with a(n)={}",
                target.n, target.a_n
            )));
        }
        let len = schedule.q(schedule.ell(), terms)? + target.block_len as u64;
        if len > path_budget {
            return Err(Error::resource(
                "subshift_model",
                format!("path for N_n={terms} terms"),
                len as u128,
                path_budget as u128,
            ));
        }
        let blocks = BlockSet::new(measure.sft().iota(), target.block_len, target.blocks.clone())?;
        let process = ArrivalProcess::new(measure.kernel.clone(), measure.pi.clone(), blocks)?;
        Ok(Self {
            process,
            schedule: schedule.clone(),
            plan: HitPlan::new(schedule, terms)?,
            p_ell: target.prob.powi(schedule.ell() as i32),
            terms,
            iota: measure.sft().iota(),
            block_len: target.block_len,
        })
    }

    /// `N_n`.
    pub fn terms(&self) -> u64 {
        self.terms
    }

    /// `N_n P(B_n)^ell`.
    pub fn realized_lambda(&self) -> f64 {
        self.terms as f64 * self.p_ell
    }

    pub fn p_ell(&self) -> f64 {
        self.p_ell
    }

    pub fn uses_fair_bits(&self) -> bool {
        self.process.uses_fair_bits()
    }

    pub fn sample_sum<R: RngCore + ?Sized>(&self, scratch: &mut Scratch, rng: &mut R) -> u64 {
        self.process.sample_count(&self.plan, scratch, rng)
    }

    /// `P(B_n)^ell tau`, searched over the plan's terms; censored beyond them.
    pub fn sample_hitting<R: RngCore + ?Sized>(&self, scratch: &mut Scratch, rng: &mut R) -> HittingSample {
        let chunk = ((0.25 / self.p_ell).ceil() as u64).max(64);
        let out = self.process.sample_first_hit(&self.plan, chunk, scratch, rng);
        match out.tau {
            Some(t) => HittingSample {
                scaled: t as f64 * self.p_ell,
                censored: false,
            },
            None => HittingSample {
                scaled: out.examined as f64 * self.p_ell,
                censored: true,
            },
        }
    }

    /// `P(T^{q_j(i)} w in B_n for all j and all i in tuple)` under the
    /// stationary measure.
    pub fn exact_b(&self, tuple: &[u64], budget: u128) -> Result<f64> {
        let states = (self.iota as u128).checked_pow(self.block_len as u32).unwrap_or(u128::MAX);
        if states > budget {
            return Err(Error::resource(
                "subshift_model",
                format!("word lift of order {}", self.block_len),
                states,
                budget,
            ));
        }
        let mut times = Vec::with_capacity(tuple.len() * self.schedule.ell());
        for &l in tuple {
            times.extend(self.schedule.positions(l)?);
        }
        times.sort_unstable();
        times.dedup();
        Ok(self.process.joint_probability(&times))
    }

    pub fn exact_law(&self, path_cap: u128) -> Result<CountDistribution> {
        self.process.exact_count_law(&self.plan, path_cap)
    }
}

/// One draw of `(S, N_n)`.
pub fn simulate_nonconventional<R: RngCore + ?Sized>(
    measure: &MarkovGibbsMeasure,
    schedule: &QSchedule,
    target: &CylinderTarget,
    lambda: f64,
    path_budget: u64,
    rng: &mut R,
) -> Result<(u64, u64)> {
    let arrival = SubshiftArrival::new(measure, schedule, target, lambda, path_budget)?;
    Ok((arrival.sample_sum(&mut Scratch::default(), rng), arrival.terms()))
}

/// One scaled hitting time, censored at `cap / P(B_n)^ell` terms.
pub fn hitting_time<R: RngCore + ?Sized>(
    measure: &MarkovGibbsMeasure,
    schedule: &QSchedule,
    target: &CylinderTarget,
    cap: f64,
    path_budget: u64,
    rng: &mut R,
) -> Result<HittingSample> {
    let arrival = SubshiftArrival::new(measure, schedule, target, cap, path_budget)?;
    Ok(arrival.sample_hitting(&mut Scratch::default(), rng))
}

pub fn exact_b_subshift(
    measure: &MarkovGibbsMeasure,
    schedule: &QSchedule,
    target: &CylinderTarget,
    tuple: &[u64],
    budget: u128,
) -> Result<f64> {
    let terms = tuple.iter().copied().max().unwrap_or(1);
    SubshiftArrival::with_terms(measure, schedule, target, terms, u64::MAX)?.exact_b(tuple, budget)
}
