use std::collections::HashSet;

use crate::error::{Error, Result};

use super::bits::Bits;
use super::kernel::ChainKernel;

/// Code spaces up to this size use a dense membership table.
const DENSE_CODES: u64 = 1 << 22;

/// A target set of equal-length words over an alphabet of size `alphabet`.
///
/// A position `t` of a path is a hit when the word `x_t .. x_{t+len-1}` is in
/// the set. With `len == 1` this is a plain subset of states.
#[derive(Debug, Clone)]
pub struct BlockSet {
    alphabet: usize,
    len: usize,
    blocks: Vec<Vec<u8>>,
    membership: Membership,
    /// `alphabet^(len - 1)`, used to drop the oldest symbol of a rolling code.
    high: u64,
}

#[derive(Debug, Clone)]
enum Membership {
    Dense(Bits),
    Sparse(HashSet<u64>),
}

impl BlockSet {
    pub fn new(alphabet: usize, len: usize, mut blocks: Vec<Vec<u8>>) -> Result<Self> {
        if alphabet < 1 || len < 1 {
            return Err(Error::validation("block set needs alphabet >= 1 and length >= 1"));
        }
        let bits_needed = (alphabet as f64).log2() * len as f64;
        if bits_needed > 63.0 {
            return Err(Error::validation(format!(
                "blocks of length {len} over {alphabet} symbols do not fit a 64-bit code"
            )));
        }
        for b in &blocks {
            if b.len() != len {
                return Err(Error::validation(format!(
                    "block {b:?} has length {}, expected {len}",
                    b.len()
                )));
            }
            if let Some(x) = b.iter().find(|x| **x as usize >= alphabet) {
                return Err(Error::validation(format!("symbol {x} outside alphabet {alphabet}")));
            }
        }
        blocks.sort();
        blocks.dedup();
        let space = (alphabet as u64).pow(len as u32);
        let codes = blocks.iter().map(|b| encode(b, alphabet));
        let membership = if space <= DENSE_CODES {
            let mut bits = Bits::zeros(space as usize);
            for c in codes {
                bits.set(c as usize, true);
            }
            Membership::Dense(bits)
        } else {
            Membership::Sparse(codes.collect())
        };
        Ok(Self {
            alphabet,
            len,
            blocks,
            membership,
            high: (alphabet as u64).pow(len as u32 - 1),
        })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn block_len(&self) -> usize {
        self.len
    }

    pub fn blocks(&self) -> &[Vec<u8>] {
        &self.blocks
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    #[inline]
    pub fn contains_code(&self, code: u64) -> bool {
        match &self.membership {
            Membership::Dense(bits) => bits.get(code as usize),
            Membership::Sparse(set) => set.contains(&code),
        }
    }

    pub fn contains(&self, word: &[u8]) -> bool {
        word.len() == self.len && self.contains_code(encode(word, self.alphabet))
    }

    /// Hit indicators for `t in from..=path.len() - len`, written into `occ`
    /// (which is grown as needed).
    pub fn mark_occurrences(&self, path: &[u8], from: usize, occ: &mut Bits) {
        if path.len() < self.len {
            return;
        }
        let last = path.len() - self.len;
        if occ.len() < last + 1 {
            occ.resize(last + 1);
        }
        if from > last {
            return;
        }
        let a = self.alphabet as u64;
        let mut code = encode(&path[from..from + self.len], self.alphabet);
        occ.set(from, self.contains_code(code));
        for t in from + 1..=last {
            code = (code % self.high) * a + path[t + self.len - 1] as u64;
            occ.set(t, self.contains_code(code));
        }
    }

    /// Hit indicators for a binary path stored as packed bits, computed one
    /// 64-bit word at a time. Positions `from..=path.len() - len` are written.
    pub fn mark_occurrences_bits(&self, path: &Bits, from: usize, occ: &mut Bits) {
        debug_assert_eq!(self.alphabet, 2);
        if path.len() < self.len {
            return;
        }
        let last = path.len() - self.len;
        if occ.len() < last + 1 {
            occ.resize(last + 1);
        }
        if from > last {
            return;
        }
        // Word-parallel matching needs from aligned; rewrite the partial word.
        let start = from & !63;
        let masks: Vec<Vec<u64>> = self
            .blocks
            .iter()
            .map(|b| b.iter().map(|&x| if x == 1 { u64::MAX } else { 0 }).collect())
            .collect();
        let mut pos = start;
        while pos <= last {
            let mut hit = 0u64;
            for block in &masks {
                let mut m = u64::MAX;
                for (k, mask) in block.iter().enumerate() {
                    m &= !(path.get64(pos + k) ^ mask);
                    if m == 0 {
                        break;
                    }
                }
                hit |= m;
            }
            let valid = (last + 1 - pos).min(64);
            if valid < 64 {
                hit &= (1u64 << valid) - 1;
            }
            if pos < from {
                // keep earlier bits of this word untouched
                let keep = (1u64 << (from - pos)) - 1;
                let old = occ.words()[pos >> 6] & keep;
                hit = (hit & !keep) | old;
            }
            occ.set_aligned(pos, hit, valid);
            pos += 64;
        }
    }

    /// `P(Y_t in set for every t in times)` where `Y_t = (X_t, ..., X_{t+len-1})`
    /// and `X` is the chain started from `init`. `times` must be ascending and
    /// distinct.
    pub fn joint_probability(&self, kernel: &ChainKernel, init: &[f64], times: &[u64]) -> f64 {
        if times.is_empty() {
            return 1.0;
        }
        if self.blocks.is_empty() {
            return 0.0;
        }
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        let m = kernel.states();
        let weights: Vec<f64> = self.blocks.iter().map(|b| kernel.word_weight(b)).collect();
        let start = kernel.propagate(init, times[0]);
        let mut v: Vec<f64> = self
            .blocks
            .iter()
            .zip(&weights)
            .map(|(b, w)| start[b[0] as usize] * w)
            .collect();
        let len = self.len as u64;
        for w in times.windows(2) {
            let gap = w[1] - w[0];
            let mut next = vec![0.0; self.blocks.len()];
            if gap >= len {
                let steps = gap - len + 1;
                let mut by_last: Vec<Option<Vec<f64>>> = vec![None; m];
                for (i, u) in self.blocks.iter().enumerate() {
                    if v[i] == 0.0 {
                        continue;
                    }
                    let a = *u.last().unwrap() as usize;
                    let row = by_last[a].get_or_insert_with(|| kernel.power_row(a, steps));
                    for (j, u2) in self.blocks.iter().enumerate() {
                        next[j] += v[i] * row[u2[0] as usize] * weights[j];
                    }
                }
            } else {
                let d = gap as usize;
                for (i, u) in self.blocks.iter().enumerate() {
                    if v[i] == 0.0 {
                        continue;
                    }
                    for (j, u2) in self.blocks.iter().enumerate() {
                        if u[d..] != u2[..self.len - d] {
                            continue;
                        }
                        let fresh = kernel.word_weight(&u2[self.len - d - 1..]);
                        next[j] += v[i] * fresh;
                    }
                }
            }
            v = next;
        }
        v.iter().sum()
    }
}

pub fn encode(word: &[u8], alphabet: usize) -> u64 {
    word.iter()
        .fold(0u64, |acc, &x| acc * alphabet as u64 + x as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn occurrences_symbol_and_bit_paths_agree() {
        let path: Vec<u8> = (0..300u32).map(|i| ((i * 7 + i / 5) % 3 % 2) as u8).collect();
        let bits = {
            let mut b = Bits::new();
            for &x in &path {
                b.push(x == 1);
            }
            b
        };
        for blocks in [vec![vec![0, 1, 1]], vec![vec![1, 0, 1, 1, 0], vec![0, 0, 0, 0, 1]]] {
            let set = BlockSet::new(2, blocks[0].len(), blocks.clone()).unwrap();
            let mut occ_a = Bits::new();
            set.mark_occurrences(&path, 0, &mut occ_a);
            let mut occ_b = Bits::new();
            set.mark_occurrences_bits(&bits, 0, &mut occ_b);
            assert_eq!(occ_a, occ_b);
            for t in 0..occ_a.len() {
                assert_eq!(occ_a.get(t), blocks.iter().any(|b| path[t..t + b.len()] == b[..]));
            }
            // Incremental marking from an unaligned start reproduces the full pass.
            let mut occ_c = Bits::new();
            set.mark_occurrences_bits(&bits, 0, &mut occ_c);
            occ_c.resize(101);
            set.mark_occurrences_bits(&bits, 101, &mut occ_c);
            assert_eq!(occ_a, occ_c);
        }
    }

    fn brute_joint(p: &DMatrix<f64>, init: &[f64], set: &BlockSet, times: &[u64]) -> f64 {
        let m = p.nrows();
        let h = (*times.last().unwrap() as usize) + set.block_len();
        let mut total = 0.0;
        let mut path = vec![0u8; h];
        let count = m.pow(h as u32);
        for code in 0..count {
            let mut c = code;
            for x in path.iter_mut().rev() {
                *x = (c % m) as u8;
                c /= m;
            }
            let mut w = init[path[0] as usize];
            for t in 1..h {
                w *= p[(path[t - 1] as usize, path[t] as usize)];
            }
            if w > 0.0 && times.iter().all(|&t| set.contains(&path[t as usize..t as usize + set.block_len()])) {
                total += w;
            }
        }
        total
    }

    #[test]
    fn joint_probability_matches_path_enumeration() {
        let p = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.1, 0.9]);
        let k = ChainKernel::new(&p).unwrap();
        let init = [0.6, 0.4];
        let single = BlockSet::new(2, 1, vec![vec![0]]).unwrap();
        let pairs = BlockSet::new(2, 3, vec![vec![0, 1, 1], vec![1, 1, 0], vec![0, 0, 0]]).unwrap();
        for (set, times) in [
            (&single, vec![1u64, 2]),
            (&single, vec![0, 3, 4, 9]),
            (&pairs, vec![1, 2]),
            (&pairs, vec![0, 1, 5]),
            (&pairs, vec![2, 4, 5, 9]),
        ] {
            let fast = set.joint_probability(&k, &init, &times);
            let slow = brute_joint(&p, &init, set, &times);
            assert!((fast - slow).abs() < 1e-14, "times={times:?} fast={fast} slow={slow}");
        }
        let golden = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, 1.0 / 3.0, 1.0, 0.0]);
        let kg = ChainKernel::new(&golden).unwrap();
        let set = BlockSet::new(2, 3, vec![vec![0, 1, 0], vec![0, 0, 1]]).unwrap();
        for times in [vec![0u64, 2], vec![1, 2, 6], vec![0, 4, 7]] {
            let fast = set.joint_probability(&kg, &[0.75, 0.25], &times);
            let slow = brute_joint(&golden, &[0.75, 0.25], &set, &times);
            assert!((fast - slow).abs() < 1e-14);
        }
    }
}
