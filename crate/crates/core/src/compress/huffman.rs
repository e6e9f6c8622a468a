//! Canonical Huffman coding over bytes.
//!
//! ```text
//! u8 mode (0 = stored, 1 = huffman)
//! mode 0: the bytes as-is
//! mode 1: u16 m | m × (u8 symbol, u8 length) | MSB-first code bits
//! ```
//!
//! A single distinct symbol has an empty code and no payload bits. Stored
//! mode is used whenever it is not larger.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::CompressError;

pub const MAX_CODE_LEN: u8 = 15;

/// Huffman code lengths for the symbols with non-zero frequency, limited
/// to [`MAX_CODE_LEN`] by flattening the histogram until they fit.
fn code_lengths(freq: &[u64; 256]) -> Vec<(u8, u8)> {
    let mut f: Vec<(u8, u64)> = (0..256)
        .filter(|&s| freq[s] > 0)
        .map(|s| (s as u8, freq[s]))
        .collect();
    if f.len() == 1 {
        return vec![(f[0].0, 0)];
    }
    loop {
        // nodes: (weight, id); leaves 0..n, internal nodes after
        let n = f.len();
        let mut parent = vec![usize::MAX; 2 * n];
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> = f.iter().enumerate().map(|(i, (_, w))| Reverse((*w, i))).collect();
        let mut next = n;
        while heap.len() > 1 {
            let Reverse((wa, a)) = heap.pop().unwrap();
            let Reverse((wb, b)) = heap.pop().unwrap();
            parent[a] = next;
            parent[b] = next;
            heap.push(Reverse((wa + wb, next)));
            next += 1;
        }
        let depth = |mut i: usize| {
            let mut d = 0u32;
            while parent[i] != usize::MAX {
                i = parent[i];
                d += 1;
            }
            d
        };
        let lens: Vec<u32> = (0..n).map(depth).collect();
        if lens.iter().all(|&l| l <= MAX_CODE_LEN as u32) {
            return f.iter().zip(lens).map(|((s, _), l)| (*s, l as u8)).collect();
        }
        for e in &mut f {
            e.1 = e.1.div_ceil(2);
        }
    }
}

/// Canonical codes: sorted by (length, symbol), consecutive values.
fn canonical(lengths: &[(u8, u8)]) -> Vec<(u8, u8, u16)> {
    let mut sorted = lengths.to_vec();
    sorted.sort_by_key(|&(s, l)| (l, s));
    let mut code: u32 = 0;
    let mut prev = sorted.first().map(|e| e.1).unwrap_or(0);
    let mut out = Vec::with_capacity(sorted.len());
    for (i, &(s, l)) in sorted.iter().enumerate() {
        if i > 0 {
            code = (code + 1) << (l - prev);
        }
        prev = l;
        out.push((s, l, code as u16));
    }
    out
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    n: u32,
}

impl BitWriter {
    fn put(&mut self, code: u16, len: u8) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | ((code >> i) & 1) as u32;
            self.n += 1;
            if self.n == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.n = 0;
            }
        }
    }
    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.out.push((self.acc << (8 - self.n)) as u8);
        }
        self.out
    }
}

pub fn encode(data: &[u8]) -> Vec<u8> {
    let mut freq = [0u64; 256];
    for &b in data {
        freq[b as usize] += 1;
    }
    let stored = || {
        let mut v = Vec::with_capacity(data.len() + 1);
        v.push(0);
        v.extend_from_slice(data);
        v
    };
    if data.is_empty() {
        return stored();
    }
    let lengths = code_lengths(&freq);
    let bits: u64 = lengths.iter().map(|&(s, l)| freq[s as usize] * l as u64).sum();
    let size = 1 + 2 + 2 * lengths.len() as u64 + bits.div_ceil(8);
    if size > data.len() as u64 {
        return stored();
    }
    let codes = canonical(&lengths);
    let mut table = [(0u16, 0u8); 256];
    for &(s, l, c) in &codes {
        table[s as usize] = (c, l);
    }
    let mut w = BitWriter {
        out: Vec::with_capacity(size as usize),
        acc: 0,
        n: 0,
    };
    w.out.push(1);
    w.out.extend_from_slice(&(lengths.len() as u16).to_le_bytes());
    for &(s, l) in &lengths {
        w.out.push(s);
        w.out.push(l);
    }
    for &b in data {
        let (c, l) = table[b as usize];
        w.put(c, l);
    }
    w.finish()
}

/// Decodes exactly `n` symbols.
pub fn decode(bytes: &[u8], n: usize) -> Result<Vec<u8>, CompressError> {
    let trunc = |what: &str| CompressError::Truncated(format!("huffman {what}"));
    let (&mode, rest) = bytes.split_first().ok_or_else(|| trunc("mode"))?;
    match mode {
        0 => {
            if rest.len() < n {
                return Err(trunc("stored payload"));
            }
            Ok(rest[..n].to_vec())
        }
        1 => {
            let m = u16::from_le_bytes(rest.get(..2).ok_or_else(|| trunc("table size"))?.try_into().unwrap()) as usize;
            let table = rest.get(2..2 + 2 * m).ok_or_else(|| trunc("table"))?;
            let lengths: Vec<(u8, u8)> = table.chunks(2).map(|c| (c[0], c[1])).collect();
            if m == 0 {
                return Err(CompressError::Corrupt("empty huffman table".into()));
            }
            if m == 1 {
                return Ok(vec![lengths[0].0; n]);
            }
            if lengths.iter().any(|&(_, l)| l == 0 || l > MAX_CODE_LEN) {
                return Err(CompressError::Corrupt("invalid code length".into()));
            }
            let codes = canonical(&lengths);
            // per length: first code, index of first symbol, count
            let mut first = [0u32; 16];
            let mut start = [0usize; 16];
            let mut count = [0usize; 16];
            for (i, &(_, l, c)) in codes.iter().enumerate() {
                let l = l as usize;
                if count[l] == 0 {
                    first[l] = c as u32;
                    start[l] = i;
                }
                count[l] += 1;
            }
            let payload = &rest[2 + 2 * m..];
            let mut out = Vec::with_capacity(n);
            let mut bit = 0usize;
            while out.len() < n {
                let mut code = 0u32;
                let mut len = 0usize;
                loop {
                    let byte = *payload.get(bit / 8).ok_or_else(|| trunc("payload"))?;
                    code = (code << 1) | ((byte >> (7 - bit % 8)) & 1) as u32;
                    bit += 1;
                    len += 1;
                    if len > MAX_CODE_LEN as usize {
                        return Err(CompressError::Corrupt("invalid huffman code".into()));
                    }
                    if count[len] > 0 && code >= first[len] && code < first[len] + count[len] as u32 {
                        out.push(codes[start[len] + (code - first[len]) as usize].0);
                        break;
                    }
                }
            }
            Ok(out)
        }
        other => Err(CompressError::Corrupt(format!("unknown entropy mode {other}"))),
    }
}
