//! Adaptive arithmetic coding over a fixed alphabet.
//!
//! Both sides maintain the same symbol-frequency model (a Fenwick tree
//! updated after every symbol), so the stream carries no side tables.
//! 32-bit range arithmetic with the usual underflow expansion.

use crate::error::{Error, Result};

const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
const THREE_QUARTERS: u64 = 3 << 30;
const MASK: u64 = (1 << 32) - 1;
const INCREMENT: u32 = 32;
const TOTAL_LIMIT: u64 = 1 << 24;

struct AdaptiveModel {
    tree: Vec<u64>,
    counts: Vec<u32>,
    total: u64,
}

impl AdaptiveModel {
    fn new(alphabet: usize) -> Self {
        let mut model = AdaptiveModel {
            tree: vec![0; alphabet + 1],
            counts: vec![1; alphabet],
            total: 0,
        };
        model.rebuild();
        model
    }

    fn rebuild(&mut self) {
        self.tree.iter_mut().for_each(|v| *v = 0);
        self.total = 0;
        for i in 0..self.counts.len() {
            self.add(i, self.counts[i] as u64);
        }
    }

    fn add(&mut self, index: usize, delta: u64) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
        self.total += delta;
    }

    /// Sum of counts for symbols strictly below `index`.
    fn prefix(&self, index: usize) -> u64 {
        let mut sum = 0;
        let mut i = index;
        while i > 0 {
            sum += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        sum
    }

    fn interval(&self, symbol: usize) -> (u64, u64) {
        let lo = self.prefix(symbol);
        (lo, lo + self.counts[symbol] as u64)
    }

    /// Symbol whose cumulative interval contains `target`.
    fn locate(&self, target: u64) -> usize {
        let mut pos = 0usize;
        let mut remaining = target;
        let mut step = self.tree.len().next_power_of_two() >> 1;
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= remaining {
                remaining -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(self.counts.len() - 1)
    }

    fn update(&mut self, symbol: usize) {
        self.counts[symbol] += INCREMENT;
        self.add(symbol, INCREMENT as u64);
        if self.total > TOTAL_LIMIT {
            for c in &mut self.counts {
                *c = (*c >> 1).max(1);
            }
            self.rebuild();
        }
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    cur: u8,
    filled: u8,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        self.cur = (self.cur << 1) | bit as u8;
        self.filled += 1;
        if self.filled == 8 {
            self.bytes.push(self.cur);
            self.cur = 0;
            self.filled = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        while self.filled != 0 {
            self.push(false);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    /// Reads past the end as zeros; the decoder stops by symbol count.
    fn next(&mut self) -> u64 {
        let byte = self.pos / 8;
        if byte >= self.bytes.len() {
            self.pos += 1;
            return 0;
        }
        let bit = (self.bytes[byte] >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        bit as u64
    }
}

pub fn entropy_encode(symbols: &[u16], alphabet: usize) -> Result<Vec<u8>> {
    if alphabet < 2 || alphabet > 1 << 16 {
        return Err(Error::validation(format!(
            "alphabet size {alphabet} out of range 2..=65536"
        )));
    }
    if let Some(bad) = symbols.iter().find(|&&s| s as usize >= alphabet) {
        return Err(Error::validation(format!(
            "symbol {bad} outside alphabet of {alphabet}"
        )));
    }
    let mut model = AdaptiveModel::new(alphabet);
    let mut writer = BitWriter::default();
    let mut low: u64 = 0;
    let mut high: u64 = MASK;
    let mut pending = 0usize;
    let emit = |writer: &mut BitWriter, bit: bool, pending: &mut usize| {
        writer.push(bit);
        for _ in 0..*pending {
            writer.push(!bit);
        }
        *pending = 0;
    };
    for &sym in symbols {
        let (cum_lo, cum_hi) = model.interval(sym as usize);
        let total = model.total;
        let range = high - low + 1;
        high = low + range * cum_hi / total - 1;
        low += range * cum_lo / total;
        loop {
            if high < HALF {
                emit(&mut writer, false, &mut pending);
            } else if low >= HALF {
                emit(&mut writer, true, &mut pending);
                low -= HALF;
                high -= HALF;
            } else if low >= QUARTER && high < THREE_QUARTERS {
                pending += 1;
                low -= QUARTER;
                high -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
        }
        model.update(sym as usize);
    }
    pending += 1;
    if low < QUARTER {
        emit(&mut writer, false, &mut pending);
    } else {
        emit(&mut writer, true, &mut pending);
    }
    Ok(writer.finish())
}

pub fn entropy_decode(bytes: &[u8], alphabet: usize, count: usize) -> Result<Vec<u16>> {
    if alphabet < 2 || alphabet > 1 << 16 {
        return Err(Error::validation(format!(
            "alphabet size {alphabet} out of range 2..=65536"
        )));
    }
    let mut model = AdaptiveModel::new(alphabet);
    let mut reader = BitReader { bytes, pos: 0 };
    let mut low: u64 = 0;
    let mut high: u64 = MASK;
    let mut code: u64 = 0;
    for _ in 0..32 {
        code = (code << 1) | reader.next();
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total = model.total;
        let range = high - low + 1;
        let target = ((code - low + 1) * total - 1) / range;
        let sym = model.locate(target);
        let (cum_lo, cum_hi) = model.interval(sym);
        high = low + range * cum_hi / total - 1;
        low += range * cum_lo / total;
        loop {
            if high < HALF || low >= HALF {
                if low >= HALF {
                    low -= HALF;
                    high -= HALF;
                    code -= HALF;
                }
            } else if low >= QUARTER && high < THREE_QUARTERS {
                low -= QUARTER;
                high -= QUARTER;
                code -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
            code = (code << 1) | reader.next();
        }
        model.update(sym);
        out.push(sym as u16);
    }
    Ok(out)
}
