//! Finite Markov chains under the Doeblin condition with the uniform
//! reference measure, and arrival sums `S_n = sum_l prod_j 1_G(X_{q_j(l)})`.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{ArrivalProcess, BlockSet, ChainKernel, HitPlan, Scratch};
use crate::poisson::CountDistribution;
use crate::schedule::QSchedule;

/// Values of `d(n)` below this are treated as numerically zero when fitting rates.
pub const FIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FiniteMarkovChain {
    p: DMatrix<f64>,
    kernel: ChainKernel,
    nu: Vec<f64>,
    mu: Vec<f64>,
    n0: u32,
    c: f64,
}

/// Doeblin data for the uniform reference measure `m`:
/// `P(x, G) <= C m(G)` and `P^{n0}(x, G) >= m(G) / C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoeblinCertificate {
    pub n0: u32,
    pub c: f64,
}

/// `d(n) = max_{x,y} |M P^n(x, y) - M mu(y)|` and its envelope `C1 e^{-beta n}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingFit {
    pub c1: f64,
    /// `f64::INFINITY` when `d` vanishes on the fitted range.
    pub beta: f64,
    pub d: Vec<f64>,
    pub eventually_decreasing: bool,
}

/// Named chain constructors accepted by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ChainSpec {
    TwoState { a: f64, b: f64 },
    RandomStochastic { seed: u64, states: usize, min_entry: f64 },
    Matrix { rows: Vec<Vec<f64>> },
}

impl ChainSpec {
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            ChainSpec::TwoState { a, b } => {
                if !(0.0..=1.0).contains(a) || !(0.0..=1.0).contains(b) {
                    return Err(Error::validation("two_state needs a, b in [0, 1]"));
                }
                Ok(DMatrix::from_row_slice(2, 2, &[1.0 - a, *a, *b, 1.0 - b]))
            }
            ChainSpec::RandomStochastic {
                seed,
                states,
                min_entry,
            } => {
                let m = *states;
                if m < 1 || !(*min_entry >= 0.0) || min_entry * m as f64 >= 1.0 {
                    return Err(Error::validation(
                        "random_stochastic needs states >= 1 and 0 <= min_entry < 1/states",
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let free = 1.0 - min_entry * m as f64;
                let mut data = Vec::with_capacity(m * m);
                for _ in 0..m {
                    let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let s: f64 = raw.iter().sum();
                    data.extend(raw.iter().map(|x| min_entry + free * x / s));
                }
                Ok(DMatrix::from_row_slice(m, m, &data))
            }
            ChainSpec::Matrix { rows } => {
                let m = rows.len();
                if m == 0 || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::validation("transition matrix must be square and nonempty"));
                }
                Ok(DMatrix::from_row_slice(m, m, &rows.concat()))
            }
        }
    }
}

impl FiniteMarkovChain {
    /// Certifies the Doeblin condition; `nu = None` starts from the invariant law.
    pub fn new(p: DMatrix<f64>, nu: Option<Vec<f64>>) -> Result<Self> {
        let kernel = ChainKernel::new(&p)?;
        let m = p.nrows();
        let cert = doeblin_certificate(&p, wielandt_bound(m))?;
        let mu = stationary_distribution(&p)?;
        let nu = match nu {
            Some(v) => {
                let s: f64 = v.iter().sum();
                if v.len() != m || v.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                    return Err(Error::validation("initial distribution must be a probability vector on the states"));
                }
                v
            }
            None => mu.clone(),
        };
        Ok(Self {
            p,
            kernel,
            nu,
            mu,
            n0: cert.n0,
            c: cert.c,
        })
    }

    pub fn from_spec(spec: &ChainSpec, nu: Option<Vec<f64>>) -> Result<Self> {
        Self::new(spec.matrix()?, nu)
    }

    pub fn states(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn kernel(&self) -> &ChainKernel {
        &self.kernel
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn certificate(&self) -> DoeblinCertificate {
        DoeblinCertificate {
            n0: self.n0,
            c: self.c,
        }
    }

    pub fn invariant_measure(&self) -> &[f64] {
        &self.mu
    }

    /// `mu(w) = mu(w_0) prod P(w_i, w_{i+1})`.
    pub fn word_mass(&self, word: &[u8]) -> f64 {
        self.mu[word[0] as usize] * self.kernel.word_weight(word)
    }

    /// Second largest eigenvalue modulus of `P`.
    pub fn second_eigenvalue_modulus(&self) -> f64 {
        let mut moduli: Vec<f64> = self.p.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.total_cmp(a));
        moduli.get(1).copied().unwrap_or(0.0)
    }

    pub fn mixing_rate(&self, horizon: usize) -> MixingFit {
        let m = self.states();
        let mut d = Vec::with_capacity(horizon);
        let mut pn = self.p.clone();
        for n in 1..=horizon {
            if n > 1 {
                pn = &pn * &self.p;
            }
            let mut worst: f64 = 0.0;
            for x in 0..m {
                for y in 0..m {
                    worst = worst.max((pn[(x, y)] - self.mu[y]).abs() * m as f64);
                }
            }
            d.push(worst);
        }
        let (c1, beta) = fit_envelope(&d);
        let tail = &d[d.len() / 2..];
        let eventually_decreasing = tail
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-9) || w[0] < FIT_FLOOR);
        MixingFit {
            c1,
            beta,
            d,
            eventually_decreasing,
        }
    }

    /// Bound on `|b / mu(G)^ell - 1|` for ell target visits separated (and
    /// started) at least `steps` transitions apart, from the mixing envelope:
    /// each transition law is within a factor `1 +- delta` of `mu`, with
    /// `delta = C1 e^{-beta steps} / (M min mu)`.
    pub fn deviation_envelope(&self, fit: &MixingFit, ell: usize, steps: u64) -> f64 {
        if fit.beta.is_infinite() {
            return 0.0;
        }
        let m = self.states() as f64;
        let mu_min = self.mu.iter().copied().fold(f64::INFINITY, f64::min);
        let delta = fit.c1 * (-fit.beta * steps as f64).exp() / (m * mu_min);
        (1.0 + delta).powi(ell as i32) - 1.0
    }
}

/// `(M - 1)^2 + 1`, the largest exponent a primitive matrix can need.
fn wielandt_bound(m: usize) -> u32 {
    ((m - 1) * (m - 1) + 1) as u32
}

/// Smallest `n0 <= n0_max` with `P^{n0} > 0` and
/// `C = max(M max P, 1 / (M min P^{n0}))`.
pub fn doeblin_certificate(p: &DMatrix<f64>, n0_max: u32) -> Result<DoeblinCertificate> {
    let m = p.nrows() as f64;
    let max_p = p.iter().copied().fold(0.0, f64::max);
    let mut pn = p.clone();
    for n0 in 1..=n0_max.max(1) {
        if n0 > 1 {
            pn = &pn * p;
        }
        let min = pn.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            return Ok(DoeblinCertificate {
                n0,
                c: (m * max_p).max(1.0 / (m * min)),
            });
        }
    }
    Err(Error::Certification(format!(
        "no power P^n with n <= {n0_max} is entrywise positive (reducible or periodic chain)"
    )))
}

/// Left fixed vector of an irreducible stochastic matrix.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Certification("invariant measure is not unique".into()))?;
    let mut mu: Vec<f64> = sol.iter().map(|x| x.max(0.0)).collect();
    // A few power steps remove the residual of the direct solve.
    for _ in 0..4 {
        let next: Vec<f64> = (0..m).map(|y| (0..m).map(|x| mu[x] * p[(x, y)]).sum()).collect();
        let s: f64 = next.iter().sum();
        mu = next.into_iter().map(|x| x / s).collect();
    }
    let residual = (0..m)
        .map(|y| ((0..m).map(|x| mu[x] * p[(x, y)]).sum::<f64>() - mu[y]).abs())
        .fold(0.0, f64::max);
    if residual > 1e-12 {
        return Err(Error::Certification(format!(
            "invariant measure residual {residual:e} exceeds 1e-12"
        )));
    }
    Ok(mu)
}

/// Tightest `C e^{-beta n}` over `d[n - 1]`, `n = 1..=len`, with `beta` from a
/// least-squares fit of `ln d` over the second half of the range.
pub(crate) fn fit_envelope(d: &[f64]) -> (f64, f64) {
    let start = d.len() / 2;
    let pts: Vec<(f64, f64)> = d
        .iter()
        .enumerate()
        .skip(start)
        .filter(|(_, v)| **v >= FIT_FLOOR)
        .map(|(i, v)| ((i + 1) as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        let c = d.iter().copied().fold(0.0, f64::max);
        return (c, f64::INFINITY);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let beta = -sxy / sxx;
    let c = d
        .iter()
        .enumerate()
        .map(|(i, v)| v * (beta * (i + 1) as f64).exp())
        .fold(0.0, f64::max);
    (c, beta)
}

/// A target `G` given as a set of words of length `lift`; `lift = 1` is a
/// plain subset of states, larger values are cylinders of the word chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovTarget {
    pub lift: usize,
    pub words: Vec<Vec<u8>>,
}

impl MarkovTarget {
    pub fn states(states: &[u8]) -> Self {
        Self {
            lift: 1,
            words: states.iter().map(|s| vec![*s]).collect(),
        }
    }

    pub fn block_set(&self, chain: &FiniteMarkovChain) -> Result<BlockSet> {
        BlockSet::new(chain.states(), self.lift, self.words.clone())
    }

    pub fn mu_mass(&self, chain: &FiniteMarkovChain) -> f64 {
        self.words.iter().map(|w| chain.word_mass(w)).sum()
    }
}

/// The arrival sum for one `n`: chain, schedule, target and term count.
#[derive(Debug, Clone)]
pub struct MarkovArrival {
    process: ArrivalProcess,
    plan: HitPlan,
    schedule: QSchedule,
    n: u64,
}

impl MarkovArrival {
    pub fn new(chain: &FiniteMarkovChain, schedule: &QSchedule, target: &MarkovTarget, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("arrival sum needs n >= 1"));
        }
        let blocks = target.block_set(chain)?;
        let process = ArrivalProcess::new(chain.kernel.clone(), chain.nu.clone(), blocks)?;
        let plan = HitPlan::new(schedule, n)?;
        Ok(Self {
            process,
            plan,
            schedule: schedule.clone(),
            n,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn sample<R: RngCore + ?Sized>(&self, scratch: &mut Scratch, rng: &mut R) -> u64 {
        self.process.sample_count(&self.plan, scratch, rng)
    }

    /// `P_nu(every X_{q_j(i)}, i in tuple, lies in G)` by restricted matrix products.
    pub fn exact_b(&self, tuple: &[u64], budget: u128) -> Result<f64> {
        let mut times = Vec::with_capacity(tuple.len() * self.schedule.ell());
        for &l in tuple {
            times.extend(self.schedule.positions(l)?);
        }
        let needed = times.len() as u128;
        if needed > budget {
            return Err(Error::resource("markov_model", "indices in b-coefficient", needed, budget));
        }
        times.sort_unstable();
        times.dedup();
        Ok(self.process.joint_probability(&times))
    }

    pub fn exact_law(&self, path_cap: u128) -> Result<CountDistribution> {
        self.process.exact_count_law(&self.plan, path_cap)
    }
}

pub fn simulate_arrival_sum<R: RngCore + ?Sized>(
    chain: &FiniteMarkovChain,
    schedule: &QSchedule,
    target: &MarkovTarget,
    n: u64,
    rng: &mut R,
) -> Result<u64> {
    let arrival = MarkovArrival::new(chain, schedule, target, n)?;
    Ok(arrival.sample(&mut Scratch::default(), rng))
}

pub fn exact_b(
    chain: &FiniteMarkovChain,
    schedule: &QSchedule,
    target: &MarkovTarget,
    tuple: &[u64],
    budget: u128,
) -> Result<f64> {
    let n = tuple.iter().copied().max().unwrap_or(1);
    MarkovArrival::new(chain, schedule, target, n)?.exact_b(tuple, budget)
}

pub fn exact_sum_distribution(
    chain: &FiniteMarkovChain,
    schedule: &QSchedule,
    target: &MarkovTarget,
    n: u64,
    path_cap: u128,
) -> Result<CountDistribution> {
    MarkovArrival::new(chain, schedule, target, n)?.exact_law(path_cap)
}

/// One entry of a target-set sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetChoice {
    pub n: u64,
    pub target: MarkovTarget,
    pub mu_mass: f64,
    pub lambda_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSetSequence {
    pub lambda: f64,
    pub ell: usize,
    pub tolerance: f64,
    pub entries: Vec<TargetChoice>,
}

/// For each `n`, the shortest word length `k <= max_lift` admitting a set of
/// `k`-words with `|n mu(G)^ell - lambda| <= tolerance * lambda`. Words are
/// added greedily in decreasing mass (lexicographic among ties) while the
/// mass stays below the upper end of the band.
pub fn choose_target_sets(
    chain: &FiniteMarkovChain,
    ell: usize,
    lambda: f64,
    n_grid: &[u64],
    tolerance: f64,
    max_lift: usize,
) -> Result<TargetSetSequence> {
    if chain.states() < 2 {
        return Err(Error::validation("target selection needs at least two states"));
    }
    let mut entries = Vec::new();
    for &n in n_grid {
        let target_mass = (lambda / n as f64).powf(1.0 / ell as f64);
        if target_mass > 1.0 {
            return Err(Error::validation(format!(
                "lambda={lambda} is unreachable at n={n}, ell={ell}: n mu(G)^ell <= n"
            )));
        }
        let hi = (lambda * (1.0 + tolerance) / n as f64).powf(1.0 / ell as f64);
        let mut found = None;
        for k in 1..=max_lift {
            let count = (chain.states() as u128).pow(k as u32);
            if count > 1 << 22 {
                break;
            }
            let mut words: Vec<(Vec<u8>, f64)> = all_words(chain.states(), k)
                .into_iter()
                .map(|w| {
                    let m = chain.word_mass(&w);
                    (w, m)
                })
                .filter(|(_, m)| *m > 0.0)
                .collect();
            words.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let mut chosen = Vec::new();
            let mut mass = 0.0;
            for (w, m) in words {
                if mass + m <= hi * (1.0 + 1e-12) {
                    mass += m;
                    chosen.push(w);
                }
            }
            let lambda_n = n as f64 * mass.powi(ell as i32);
            if (lambda_n - lambda).abs() <= (tolerance + 1e-12) * lambda {
                chosen.sort();
                found = Some(TargetChoice {
                    n,
                    target: MarkovTarget { lift: k, words: chosen },
                    mu_mass: mass,
                    lambda_n,
                });
                break;
            }
        }
        match found {
            Some(c) => entries.push(c),
            None => {
                return Err(Error::validation(format!(
                    "no target set with word length <= {max_lift} realizes n mu(G)^ell within {tolerance} of {lambda} at n={n}; increase the word lift"
                )))
            }
        }
    }
    Ok(TargetSetSequence {
        lambda,
        ell,
        tolerance,
        entries,
    })
}

fn all_words(m: usize, k: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|w| {
                (0..m as u8).map(move |x| {
                    let mut v = w.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    out
}
