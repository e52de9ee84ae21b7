//! Canonical Huffman coding over 16-bit symbols.
//!
//! Only code lengths are stored; codes are rebuilt by assigning consecutive
//! values in `(length, symbol)` order. Bits are packed MSB first and the last
//! byte is zero padded.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};

pub const MAX_CODE_LEN: u8 = 63;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HuffmanTable {
    /// `(symbol, length)` sorted by `(length, symbol)`.
    lengths: Vec<(u16, u8)>,
    /// Code and length per symbol value; length 0 marks an absent symbol.
    codes: Vec<(u64, u8)>,
    // canonical decoding tables, indexed by length
    first_code: Vec<u64>,
    first_index: Vec<usize>,
    count: Vec<usize>,
}

/// Symbol frequencies of a code array.
pub fn frequencies(symbols: &[u16]) -> BTreeMap<u16, u64> {
    let mut f = BTreeMap::new();
    for &s in symbols {
        *f.entry(s).or_insert(0) += 1;
    }
    f
}

impl HuffmanTable {
    /// Optimal prefix code for the positive-count symbols in `freqs`.
    /// A single-symbol alphabet gets a one-bit code.
    pub fn build(freqs: &BTreeMap<u16, u64>) -> Result<Self> {
        let syms: Vec<(u16, u64)> = freqs.iter().filter(|(_, &c)| c > 0).map(|(&s, &c)| (s, c)).collect();
        if syms.is_empty() {
            return Err(Error::Data("cannot build a Huffman table from an empty frequency map".into()));
        }
        if syms.len() == 1 {
            return Self::from_lengths(vec![(syms[0].0, 1)]);
        }
        // nodes 0..n are leaves; ties resolve on node id for determinism
        let n = syms.len();
        let mut parent = vec![usize::MAX; 2 * n - 1];
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
            syms.iter().enumerate().map(|(i, &(_, c))| Reverse((c, i))).collect();
        let mut next = n;
        while heap.len() > 1 {
            let Reverse((wa, a)) = heap.pop().unwrap();
            let Reverse((wb, b)) = heap.pop().unwrap();
            parent[a] = next;
            parent[b] = next;
            heap.push(Reverse((wa + wb, next)));
            next += 1;
        }
        let root = next - 1;
        let mut depth = vec![0u32; 2 * n - 1];
        for node in (0..root).rev() {
            depth[node] = depth[parent[node]] + 1;
        }
        let mut lengths = Vec::with_capacity(n);
        for (i, &(s, _)) in syms.iter().enumerate() {
            if depth[i] > MAX_CODE_LEN as u32 {
                return Err(Error::Data(format!("Huffman code length {} exceeds {MAX_CODE_LEN}", depth[i])));
            }
            lengths.push((s, depth[i] as u8));
        }
        Self::from_lengths(lengths)
    }

    /// Rebuild the canonical code from `(symbol, length)` pairs.
    pub fn from_lengths(mut lengths: Vec<(u16, u8)>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Data("Huffman table has no symbols".into()));
        }
        lengths.sort_by_key(|&(s, l)| (l, s));
        if lengths.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Data("Huffman table lists a symbol twice".into()));
        }
        let max_len = lengths.last().unwrap().1;
        if lengths[0].1 == 0 || max_len > MAX_CODE_LEN {
            return Err(Error::Data(format!("Huffman code lengths must lie in 1..={MAX_CODE_LEN}")));
        }
        let kraft: f64 = lengths.iter().map(|&(_, l)| (-(l as f64)).exp2()).sum();
        if kraft > 1.0 + 1e-12 {
            return Err(Error::Data(format!("code lengths violate the Kraft inequality (sum {kraft})")));
        }
        let max_sym = lengths.iter().map(|&(s, _)| s).max().unwrap() as usize;
        let mut codes = vec![(0u64, 0u8); max_sym + 1];
        let levels = max_len as usize + 1;
        let mut first_code = vec![0u64; levels];
        let mut first_index = vec![0usize; levels];
        let mut count = vec![0usize; levels];
        let mut code = 0u64;
        let mut prev_len = lengths[0].1;
        first_code[prev_len as usize] = 0;
        for (i, &(s, l)) in lengths.iter().enumerate() {
            if l != prev_len {
                code <<= l - prev_len;
                prev_len = l;
                first_code[l as usize] = code;
                first_index[l as usize] = i;
            }
            codes[s as usize] = (code, l);
            count[l as usize] += 1;
            code += 1;
        }
        Ok(Self { lengths, codes, first_code, first_index, count })
    }

    /// `(symbol, length)` pairs in canonical order.
    pub fn lengths(&self) -> &[(u16, u8)] {
        &self.lengths
    }

    pub fn code_length(&self, symbol: u16) -> Option<u8> {
        match self.codes.get(symbol as usize) {
            Some(&(_, l)) if l > 0 => Some(l),
            _ => None,
        }
    }

    pub fn kraft_sum(&self) -> f64 {
        self.lengths.iter().map(|&(_, l)| (-(l as f64)).exp2()).sum()
    }

    /// Total encoded size in bits.
    pub fn encoded_bits(&self, symbols: &[u16]) -> Result<u64> {
        symbols.iter().try_fold(0u64, |acc, &s| {
            self.code_length(s)
                .map(|l| acc + l as u64)
                .ok_or_else(|| Error::Data(format!("symbol {s} is not in the Huffman table")))
        })
    }

    pub fn encode(&self, symbols: &[u16]) -> Result<Vec<u8>> {
        let bits = self.encoded_bits(symbols)?;
        let mut out = Vec::with_capacity(bits.div_ceil(8) as usize);
        let mut acc = 0u8;
        let mut filled = 0u8;
        for &s in symbols {
            let (code, len) = self.codes[s as usize];
            for k in (0..len).rev() {
                acc = (acc << 1) | ((code >> k) & 1) as u8;
                filled += 1;
                if filled == 8 {
                    out.push(acc);
                    acc = 0;
                    filled = 0;
                }
            }
        }
        if filled > 0 {
            out.push(acc << (8 - filled));
        }
        Ok(out)
    }

    pub fn decode(&self, bytes: &[u8], count: usize) -> Result<Vec<u16>> {
        let mut out = Vec::with_capacity(count);
        let total_bits = bytes.len() * 8;
        let mut pos = 0usize;
        let max_len = self.count.len() - 1;
        while out.len() < count {
            let mut code = 0u64;
            let mut len = 0usize;
            loop {
                if pos >= total_bits {
                    return Err(Error::corrupt(
                        "bitstream",
                        format!("stream ended after {} of {count} symbols", out.len()),
                    ));
                }
                let bit = (bytes[pos / 8] >> (7 - pos % 8)) & 1;
                pos += 1;
                code = (code << 1) | bit as u64;
                len += 1;
                if len > max_len {
                    return Err(Error::corrupt("bitstream", "bit pattern matches no code"));
                }
                let n = self.count[len];
                if n > 0 && code >= self.first_code[len] && code - self.first_code[len] < n as u64 {
                    out.push(self.lengths[self.first_index[len] + (code - self.first_code[len]) as usize].0);
                    break;
                }
            }
        }
        Ok(out)
    }
}

/// Empirical entropy in bits per symbol.
pub fn entropy(freqs: &BTreeMap<u16, u64>) -> f64 {
    let total: u64 = freqs.values().sum();
    if total == 0 {
        return 0.0;
    }
    freqs
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}
