//! Level bookkeeping: which species-count tuples exist and how a level
//! tensor maps particle slots onto flat storage.

use crate::error::{Error, Result};

/// Upper bound on tensor rank; enforced through the state-space cap.
pub const MAX_RANK: usize = 24;

/// Default cap on the total number of stored tensor entries.
pub const DEFAULT_STATE_CAP: usize = 10_000_000;

/// Box of species-count tuples `0..=caps[s]` per species.
///
/// Single-species hierarchies use `caps = [Nmax]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    caps: Vec<usize>,
}

impl Layout {
    pub fn single(nmax: usize) -> Self {
        Self { caps: vec![nmax] }
    }

    pub fn multi(caps: Vec<usize>) -> Result<Self> {
        if caps.is_empty() {
            return Err(Error::DimensionMismatch("layout needs at least one species".into()));
        }
        Ok(Self { caps })
    }

    pub fn species(&self) -> usize {
        self.caps.len()
    }

    pub fn caps(&self) -> &[usize] {
        &self.caps
    }

    pub fn n_levels(&self) -> usize {
        self.caps.iter().map(|c| c + 1).product()
    }

    /// Counts of level `idx` (mixed radix, species 0 most significant).
    pub fn counts(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.caps.len()];
        let mut rest = idx;
        for s in (0..self.caps.len()).rev() {
            out[s] = rest % (self.caps[s] + 1);
            rest /= self.caps[s] + 1;
        }
        out
    }

    pub fn index_of(&self, counts: &[usize]) -> Option<usize> {
        if counts.len() != self.caps.len() {
            return None;
        }
        let mut idx = 0;
        for (c, cap) in counts.iter().zip(&self.caps) {
            if c > cap {
                return None;
            }
            idx = idx * (cap + 1) + c;
        }
        Some(idx)
    }

    /// Level index reached by adding `delta` particles to species counts.
    pub fn shifted(&self, idx: usize, delta: &[isize]) -> Option<usize> {
        let counts = self.counts(idx);
        let mut out = Vec::with_capacity(counts.len());
        for (c, d) in counts.iter().zip(delta) {
            let v = *c as isize + d;
            if v < 0 {
                return None;
            }
            out.push(v as usize);
        }
        self.index_of(&out)
    }

    pub fn shape(&self, idx: usize, cells: usize) -> LevelShape {
        LevelShape::new(self.counts(idx), cells)
    }

    /// Total stored entries for `cells` one-particle cells.
    pub fn total_entries(&self, cells: usize) -> Option<usize> {
        let mut total: usize = 0;
        for idx in 0..self.n_levels() {
            let rank: usize = self.counts(idx).iter().sum();
            let len = checked_pow(cells, rank)?;
            total = total.checked_add(len)?;
        }
        Some(total)
    }

    pub fn check_cap(&self, cells: usize, cap: usize) -> Result<usize> {
        match self.total_entries(cells) {
            Some(entries) if entries <= cap => Ok(entries),
            Some(entries) => Err(Error::StateSpaceTooLarge { entries, cap }),
            None => Err(Error::StateSpaceTooLarge { entries: usize::MAX, cap }),
        }
    }
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

/// Shape of one level tensor: species blocks laid out in order, each slot
/// ranging over the `cells` one-particle cells, slot 0 most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelShape {
    counts: Vec<usize>,
    cells: usize,
    rank: usize,
    len: usize,
    block_start: Vec<usize>,
}

impl LevelShape {
    pub fn new(counts: Vec<usize>, cells: usize) -> Self {
        let rank: usize = counts.iter().sum();
        assert!(rank <= MAX_RANK, "rank {rank} exceeds MAX_RANK");
        let mut block_start = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for c in &counts {
            block_start.push(acc);
            acc += c;
        }
        let len = cells.pow(rank as u32);
        Self { counts, cells, rank, len, block_start }
    }

    pub fn single(n: usize, cells: usize) -> Self {
        Self::new(vec![n], cells)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Slot range of species `s`.
    pub fn block(&self, s: usize) -> std::ops::Range<usize> {
        self.block_start[s]..self.block_start[s] + self.counts[s]
    }

    pub fn species_of_slot(&self, slot: usize) -> usize {
        (0..self.counts.len())
            .rev()
            .find(|&s| self.counts[s] > 0 && slot >= self.block_start[s])
            .unwrap_or(0)
    }

    /// Flat-index stride of `slot`.
    pub fn stride(&self, slot: usize) -> usize {
        self.cells.pow((self.rank - 1 - slot) as u32)
    }

    pub fn decode(&self, mut idx: usize, digits: &mut [usize; MAX_RANK]) {
        for slot in (0..self.rank).rev() {
            digits[slot] = idx % self.cells;
            idx /= self.cells;
        }
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        digits[..self.rank].iter().fold(0, |acc, d| acc * self.cells + d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_indices_round_trip() {
        let l = Layout::multi(vec![2, 1, 3]).unwrap();
        assert_eq!(l.n_levels(), 3 * 2 * 4);
        for idx in 0..l.n_levels() {
            assert_eq!(l.index_of(&l.counts(idx)), Some(idx));
        }
        assert_eq!(l.index_of(&[3, 0, 0]), None);
        let i = l.index_of(&[1, 1, 0]).unwrap();
        assert_eq!(l.shifted(i, &[-1, -1, 1]), l.index_of(&[0, 0, 1]));
        assert_eq!(l.shifted(i, &[-2, 0, 0]), None);
    }

    #[test]
    fn state_cap_is_enforced() {
        let l = Layout::single(6);
        assert_eq!(l.total_entries(4), Some(5461));
        assert!(l.check_cap(16, 10_000_000).is_err());
        assert!(l.check_cap(4, 10_000).is_ok());
    }

    #[test]
    fn shape_blocks() {
        let s = LevelShape::new(vec![2, 0, 1], 3);
        assert_eq!(s.rank(), 3);
        assert_eq!(s.len(), 27);
        assert_eq!(s.block(0), 0..2);
        assert_eq!(s.block(2), 2..3);
        assert_eq!(s.species_of_slot(0), 0);
        assert_eq!(s.species_of_slot(2), 2);
        let mut d = [0; MAX_RANK];
        s.decode(14, &mut d);
        assert_eq!(&d[..3], &[1, 1, 2]);
        assert_eq!(s.encode(&d), 14);
    }
}
