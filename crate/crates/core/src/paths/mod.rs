//! Path engine shared by the Markov and subshift models.
//!
//! A [`ArrivalProcess`] couples a finite chain with a target set of words.
//! Position `t` of a path is a hit when the word starting at `t` lies in the
//! target, and term `l` of a nonconventional sum counts when every position
//! `q_j(l)` is a hit.

mod bits;
mod blocks;
mod kernel;

pub use bits::Bits;
pub use blocks::{encode, BlockSet};
pub use kernel::{cumulative, sample_cumulative, ChainKernel};

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::poisson::CountDistribution;
use crate::schedule::QSchedule;

/// Terms `1..=terms` of a schedule grouped into runs along which every
/// `q_j` advances by one, so hits can be counted 64 terms at a time.
#[derive(Debug, Clone)]
pub struct HitPlan {
    ell: usize,
    terms: u64,
    run_l0: Vec<u64>,
    run_len: Vec<u64>,
    starts: Vec<u64>,
}

impl HitPlan {
    pub fn new(schedule: &QSchedule, terms: u64) -> Result<Self> {
        let ell = schedule.ell();
        let mut plan = Self {
            ell,
            terms,
            run_l0: Vec::new(),
            run_len: Vec::new(),
            starts: Vec::new(),
        };
        let mut prev: Option<Vec<u64>> = None;
        for l in 1..=terms {
            let pos = schedule.positions(l)?;
            let extends = prev
                .as_ref()
                .is_some_and(|p| p.iter().zip(&pos).all(|(a, b)| a + 1 == *b));
            if extends {
                *plan.run_len.last_mut().unwrap() += 1;
            } else {
                plan.run_l0.push(l);
                plan.run_len.push(1);
                plan.starts.extend_from_slice(&pos);
            }
            prev = Some(pos);
        }
        Ok(plan)
    }

    pub fn terms(&self) -> u64 {
        self.terms
    }

    pub fn runs(&self) -> usize {
        self.run_l0.len()
    }

    /// `q_ell(terms)`, the last position any term reads.
    pub fn max_position(&self) -> u64 {
        self.max_position_upto(self.terms)
    }

    /// `q_ell(l)` for `l <= terms`.
    pub fn max_position_upto(&self, l: u64) -> u64 {
        if l == 0 || self.run_l0.is_empty() {
            return 0;
        }
        let r = self.run_of(l);
        self.starts[r * self.ell + self.ell - 1] + (l - self.run_l0[r])
    }

    fn run_of(&self, l: u64) -> usize {
        self.run_l0.partition_point(|&l0| l0 <= l) - 1
    }

    /// Number of terms whose positions are all hits.
    pub fn count(&self, occ: &Bits) -> u64 {
        let mut total = 0u64;
        for r in 0..self.run_l0.len() {
            let starts = &self.starts[r * self.ell..(r + 1) * self.ell];
            let len = self.run_len[r];
            let mut off = 0u64;
            while off < len {
                let mut w = u64::MAX;
                for &s in starts {
                    w &= occ.get64((s + off) as usize);
                    if w == 0 {
                        break;
                    }
                }
                let valid = (len - off).min(64);
                if valid < 64 {
                    w &= (1u64 << valid) - 1;
                }
                total += w.count_ones() as u64;
                off += 64;
            }
        }
        total
    }

    /// Smallest term `l` in `from..=to` whose positions are all hits.
    pub fn first_hit(&self, occ: &Bits, from: u64, to: u64) -> Option<u64> {
        let to = to.min(self.terms);
        if from == 0 || from > to {
            return None;
        }
        let mut r = self.run_of(from);
        while r < self.run_l0.len() && self.run_l0[r] <= to {
            let l0 = self.run_l0[r];
            let starts = &self.starts[r * self.ell..(r + 1) * self.ell];
            let lo = from.max(l0) - l0;
            let hi = (to - l0 + 1).min(self.run_len[r]);
            let mut off = lo;
            while off < hi {
                let mut w = u64::MAX;
                for &s in starts {
                    w &= occ.get64((s + off) as usize);
                    if w == 0 {
                        break;
                    }
                }
                let valid = (hi - off).min(64);
                if valid < 64 {
                    w &= (1u64 << valid) - 1;
                }
                if w != 0 {
                    return Some(l0 + off + w.trailing_zeros() as u64);
                }
                off += 64;
            }
            r += 1;
        }
        None
    }
}

/// A stationary or started chain together with a word target.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    kernel: ChainKernel,
    init: Vec<f64>,
    init_cum: Vec<f64>,
    target: BlockSet,
    fair_bits: bool,
}

/// Reusable buffers for repeated path sampling.
#[derive(Debug, Default)]
pub struct Scratch {
    symbols: Vec<u8>,
    bits: Bits,
    occ: Bits,
}

/// Outcome of a hitting-time simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitOutcome {
    /// First term index with a simultaneous hit, if found before the cap.
    pub tau: Option<u64>,
    /// Largest term index examined.
    pub examined: u64,
}

impl ArrivalProcess {
    pub fn new(kernel: ChainKernel, init: Vec<f64>, target: BlockSet) -> Result<Self> {
        let m = kernel.states();
        if init.len() != m {
            return Err(Error::validation(format!(
                "initial distribution has {} entries, chain has {m} states",
                init.len()
            )));
        }
        let total: f64 = init.iter().sum();
        if init.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::validation("initial distribution must be a probability vector"));
        }
        if target.alphabet() != m {
            return Err(Error::validation("target alphabet differs from chain state count"));
        }
        let fair_bits = m == 2
            && (0..2).all(|a| (0..2).all(|b| kernel.p(a, b) == 0.5))
            && init.iter().all(|p| *p == 0.5);
        let init_cum = cumulative(&init);
        Ok(Self {
            kernel,
            init,
            init_cum,
            target,
            fair_bits,
        })
    }

    pub fn kernel(&self) -> &ChainKernel {
        &self.kernel
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn target(&self) -> &BlockSet {
        &self.target
    }

    /// Whether paths are drawn as packed fair coin flips.
    pub fn uses_fair_bits(&self) -> bool {
        self.fair_bits
    }

    /// `P(word at t is in the target for every t in times)`.
    pub fn joint_probability(&self, times: &[u64]) -> f64 {
        self.target.joint_probability(&self.kernel, &self.init, times)
    }

    /// Path length needed to evaluate every term of `plan`.
    pub fn path_len(&self, plan: &HitPlan) -> u64 {
        plan.max_position() + self.target.block_len() as u64
    }

    /// Extends the path to at least `len` symbols and marks occurrences at
    /// every newly determined position.
    fn grow<R: RngCore + ?Sized>(&self, s: &mut Scratch, len: usize, rng: &mut R) {
        let block = self.target.block_len();
        if self.fair_bits {
            let old = s.bits.len();
            while s.bits.len() < len {
                s.bits.push_word(rng.next_u64());
            }
            let from = (old + 1).saturating_sub(block);
            let from = if old == 0 { 0 } else { from };
            self.target.mark_occurrences_bits(&s.bits, from, &mut s.occ);
        } else {
            let old = s.symbols.len();
            if old >= len {
                return;
            }
            s.symbols.reserve(len - old);
            let mut prev = match s.symbols.last() {
                Some(&x) => x as usize,
                None => {
                    let x = sample_cumulative(&self.init_cum, rng);
                    s.symbols.push(x as u8);
                    x
                }
            };
            while s.symbols.len() < len {
                prev = self.kernel.step(prev, rng);
                s.symbols.push(prev as u8);
            }
            let from = if old == 0 { 0 } else { (old + 1).saturating_sub(block) };
            self.target.mark_occurrences(&s.symbols, from, &mut s.occ);
        }
    }

    fn reset(s: &mut Scratch) {
        s.symbols.clear();
        s.bits.clear();
        s.occ.clear();
    }

    /// One draw of the sum over all terms of `plan`.
    pub fn sample_count<R: RngCore + ?Sized>(
        &self,
        plan: &HitPlan,
        s: &mut Scratch,
        rng: &mut R,
    ) -> u64 {
        Self::reset(s);
        self.grow(s, self.path_len(plan) as usize, rng);
        plan.count(&s.occ)
    }

    /// First term with a simultaneous hit. The path is generated in chunks
    /// of `chunk` terms that double in size until `plan.terms()` is reached.
    pub fn sample_first_hit<R: RngCore + ?Sized>(
        &self,
        plan: &HitPlan,
        chunk: u64,
        s: &mut Scratch,
        rng: &mut R,
    ) -> HitOutcome {
        Self::reset(s);
        let block = self.target.block_len() as u64;
        let mut done = 0u64;
        let mut step = chunk.max(1);
        while done < plan.terms() {
            let upto = (done + step).min(plan.terms());
            self.grow(s, (plan.max_position_upto(upto) + block) as usize, rng);
            if let Some(l) = plan.first_hit(&s.occ, done + 1, upto) {
                return HitOutcome {
                    tau: Some(l),
                    examined: l,
                };
            }
            done = upto;
            step = step.saturating_mul(2);
        }
        HitOutcome {
            tau: None,
            examined: done,
        }
    }

    /// Number of positive-probability paths of length `len` (saturating).
    pub fn admissible_paths(&self, len: u64) -> u128 {
        let m = self.kernel.states();
        let mut c: Vec<u128> = self.init.iter().map(|p| (*p > 0.0) as u128).collect();
        for _ in 1..len {
            let mut next = vec![0u128; m];
            for (x, cx) in c.iter().enumerate() {
                if *cx == 0 {
                    continue;
                }
                for (y, ny) in next.iter_mut().enumerate() {
                    if self.kernel.p(x, y) > 0.0 {
                        *ny = ny.saturating_add(*cx);
                    }
                }
            }
            c = next;
        }
        c.into_iter().fold(0u128, |a, b| a.saturating_add(b))
    }

    /// Exact law of the sum over the terms of `plan`, by enumeration of every
    /// positive-probability path. Fails when the path count exceeds `cap`.
    pub fn exact_count_law(&self, plan: &HitPlan, cap: u128) -> Result<CountDistribution> {
        let len = self.path_len(plan);
        let paths = self.admissible_paths(len);
        if paths > cap {
            return Err(Error::resource(
                "paths",
                format!("exact law over paths of length {len}"),
                paths,
                cap,
            ));
        }
        let block = self.target.block_len();
        let ell = plan.ell;
        // terms_done_at[t]: positions of terms whose last hit position is settled
        // once symbol t is placed.
        let mut done_at: Vec<Vec<Vec<u64>>> = vec![Vec::new(); len as usize];
        for r in 0..plan.run_l0.len() {
            for off in 0..plan.run_len[r] {
                let pos: Vec<u64> = plan.starts[r * ell..(r + 1) * ell]
                    .iter()
                    .map(|s| s + off)
                    .collect();
                let t = pos[ell - 1] as usize + block - 1;
                done_at[t].push(pos);
            }
        }
        let mut dfs = Dfs {
            proc: self,
            done_at: &done_at,
            path: vec![0u8; len as usize],
            occ: vec![false; len as usize],
            law: vec![0.0; plan.terms as usize + 1],
        };
        for x in 0..self.kernel.states() {
            if self.init[x] > 0.0 {
                dfs.path[0] = x as u8;
                dfs.visit(0, self.init[x], 0);
            }
        }
        let total: f64 = dfs.law.iter().sum();
        let probs: Vec<f64> = dfs.law.iter().map(|p| p / total).collect();
        CountDistribution::from_dense(&probs)
    }
}

struct Dfs<'a> {
    proc: &'a ArrivalProcess,
    done_at: &'a [Vec<Vec<u64>>],
    path: Vec<u8>,
    occ: Vec<bool>,
    law: Vec<f64>,
}

impl Dfs<'_> {
    fn visit(&mut self, t: usize, weight: f64, count: usize) {
        let block = self.proc.target.block_len();
        let mut count = count;
        if t + 1 >= block {
            let start = t + 1 - block;
            self.occ[start] = self.proc.target.contains(&self.path[start..=t]);
            for pos in &self.done_at[t] {
                if pos.iter().all(|&p| self.occ[p as usize]) {
                    count += 1;
                }
            }
        }
        if t + 1 == self.path.len() {
            self.law[count] += weight;
            return;
        }
        let x = self.path[t] as usize;
        for y in 0..self.proc.kernel.states() {
            let p = self.proc.kernel.p(x, y);
            if p > 0.0 {
                self.path[t + 1] = y as u8;
                self.visit(t + 1, weight * p, count);
            }
        }
    }
}

/// Draws a word of length `len` from the chain started at `init_cum`.
pub fn sample_word<R: Rng + ?Sized>(kernel: &ChainKernel, init_cum: &[f64], len: usize, rng: &mut R) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    let mut x = sample_cumulative(init_cum, rng);
    out.push(x as u8);
    while out.len() < len {
        x = kernel.step(x, rng);
        out.push(x as u8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleFamily;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_count(plan_schedule: &QSchedule, terms: u64, occ: &Bits) -> u64 {
        (1..=terms)
            .filter(|&l| {
                plan_schedule
                    .positions(l)
                    .unwrap()
                    .iter()
                    .all(|&p| occ.get(p as usize))
            })
            .count() as u64
    }

    #[test]
    fn hit_plan_counts_match_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let schedules = [
            QSchedule::linear(2),
            QSchedule::arithmetic_gap(3, 2.0, 0.5).unwrap(),
            QSchedule::new(2, ScheduleFamily::Polynomial { power: 1 }, None).unwrap(),
        ];
        for sched in &schedules {
            let terms = 700;
            let plan = HitPlan::new(sched, terms).unwrap();
            let len = plan.max_position() as usize + 1;
            let mut occ = Bits::zeros(len);
            for t in 0..len {
                occ.set(t, rng.random_bool(0.7));
            }
            assert_eq!(plan.count(&occ), brute_count(sched, terms, &occ));
            let first = (1..=terms).find(|&l| {
                sched.positions(l).unwrap().iter().all(|&p| occ.get(p as usize))
            });
            assert_eq!(plan.first_hit(&occ, 1, terms), first);
            if let Some(f) = first {
                assert_eq!(plan.first_hit(&occ, 1, f - 1), None);
                assert_eq!(plan.first_hit(&occ, f, f), Some(f));
            }
        }
        let ag = QSchedule::arithmetic_gap(2, 4.0, 0.5).unwrap();
        assert!(HitPlan::new(&ag, 1 << 16).unwrap().runs() < 200);
    }

    #[test]
    fn exact_law_mean_is_sum_of_marginals() {
        let p = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.1, 0.9]);
        let kernel = ChainKernel::new(&p).unwrap();
        let target = BlockSet::new(2, 2, vec![vec![0, 1], vec![1, 1]]).unwrap();
        let proc = ArrivalProcess::new(kernel, vec![0.5, 0.5], target).unwrap();
        let sched = QSchedule::linear(2);
        let plan = HitPlan::new(&sched, 4).unwrap();
        let law = proc.exact_count_law(&plan, 1 << 20).unwrap();
        let mean: f64 = (1..=4)
            .map(|l| proc.joint_probability(&sched.positions(l).unwrap()))
            .sum();
        assert!((law.mean() - mean).abs() < 1e-12);
        assert!(proc.exact_count_law(&plan, 10).is_err());
    }

    #[test]
    fn fair_bits_and_symbol_paths_have_the_same_law() {
        let half = DMatrix::from_element(2, 2, 0.5);
        let target = BlockSet::new(2, 3, vec![vec![1, 0, 1]]).unwrap();
        let fast = ArrivalProcess::new(ChainKernel::new(&half).unwrap(), vec![0.5, 0.5], target.clone())
            .unwrap();
        assert!(fast.uses_fair_bits());
        let sched = QSchedule::arithmetic_gap(2, 1.0, 0.5).unwrap();
        let plan = HitPlan::new(&sched, 40).unwrap();
        let exact = fast.exact_count_law(&plan, 1 << 24);
        // Path length exceeds the cap, so compare first moments instead.
        assert!(exact.is_err());
        let mean: f64 = (1..=40)
            .map(|l| fast.joint_probability(&sched.positions(l).unwrap()))
            .sum();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = Scratch::default();
        let reps = 20_000;
        let total: u64 = (0..reps).map(|_| fast.sample_count(&plan, &mut s, &mut rng)).sum();
        let emp = total as f64 / reps as f64;
        assert!((emp - mean).abs() < 0.05 * mean.max(0.1), "emp={emp} mean={mean}");
    }

    #[test]
    fn chunked_hitting_time_finds_the_first_hit() {
        let p = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.3, 0.7]);
        let target = BlockSet::new(2, 2, vec![vec![0, 0]]).unwrap();
        let proc = ArrivalProcess::new(ChainKernel::new(&p).unwrap(), vec![0.3, 0.7], target).unwrap();
        let sched = QSchedule::arithmetic_gap(2, 1.0, 0.5).unwrap();
        let plan = HitPlan::new(&sched, 5000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = Scratch::default();
        for _ in 0..50 {
            let out = proc.sample_first_hit(&plan, 3, &mut s, &mut rng);
            let tau = out.tau.expect("hit well before the cap");
            assert_eq!(plan.first_hit(&s.occ, 1, plan.terms()), Some(tau));
        }
    }
}
