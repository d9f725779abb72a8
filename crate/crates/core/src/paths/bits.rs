/// Growable packed bit vector, least significant bit first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Self {
        debug_assert!(words.len() * 64 >= len);
        let mut b = Self { words, len };
        b.clear_tail();
        b
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        i < self.len && (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        let w = &mut self.words[i >> 6];
        if v {
            *w |= 1 << (i & 63);
        } else {
            *w &= !(1 << (i & 63));
        }
    }

    pub fn push(&mut self, v: bool) {
        if self.len == self.words.len() * 64 {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, v);
    }

    /// Appends a full 64-bit word; requires `len % 64 == 0`.
    pub fn push_word(&mut self, w: u64) {
        debug_assert_eq!(self.len % 64, 0);
        self.words.push(w);
        self.len += 64;
    }

    pub fn resize(&mut self, len: usize) {
        self.words.resize(len.div_ceil(64), 0);
        self.len = len;
        self.clear_tail();
    }

    /// Overwrites bits `pos..pos + valid` with the low bits of `word`;
    /// `pos` must be a multiple of 64.
    #[inline]
    pub fn set_aligned(&mut self, pos: usize, word: u64, valid: usize) {
        debug_assert_eq!(pos & 63, 0);
        debug_assert!(pos + valid <= self.len);
        let mask = if valid >= 64 { u64::MAX } else { (1u64 << valid) - 1 };
        let w = &mut self.words[pos >> 6];
        *w = (*w & !mask) | (word & mask);
    }

    /// Empties the vector, keeping its allocation.
    pub fn clear(&mut self) {
        self.words.clear();
        self.len = 0;
    }

    /// Bits `pos..pos + 64`, with positions past the end read as zero.
    #[inline]
    pub fn get64(&self, pos: usize) -> u64 {
        let wi = pos >> 6;
        let s = pos & 63;
        let lo = self.words.get(wi).copied().unwrap_or(0);
        if s == 0 {
            lo
        } else {
            let hi = self.words.get(wi + 1).copied().unwrap_or(0);
            (lo >> s) | (hi << (64 - s))
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn clear_tail(&mut self) {
        let r = self.len & 63;
        if r != 0 {
            if let Some(last) = self.words.get_mut(self.len >> 6) {
                *last &= (1u64 << r) - 1;
            }
        }
        self.words.truncate(self.len.div_ceil(64));
    }
}
