//! Dense generator of the hierarchy restricted to block-symmetric tensors.
//!
//! Basis vector `k` is the indicator of one orbit of slot permutations
//! (within species blocks). The generator maps symmetric tensors to
//! symmetric tensors, so its matrix in this basis is read off at one
//! representative entry per orbit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fockspace::{FockDensity, PhaseGrid, MAX_RANK};

/// Default cap on the dimension of the dense symmetric generator.
pub const DEFAULT_DENSE_CAP: usize = 3000;

#[derive(Debug, Clone)]
pub(crate) struct SymBasis {
    /// `(level, representative flat index)` per basis vector.
    reps: Vec<(usize, usize)>,
    /// Flat indices of each orbit.
    members: Vec<Vec<usize>>,
    /// Integration weight of each basis vector: orbit size × cell measure^rank.
    weights: Vec<f64>,
    /// Basis id of every entry of the included levels (`usize::MAX` elsewhere).
    id_of: Vec<usize>,
}

impl SymBasis {
    pub(crate) fn new(template: &FockDensity, grid: &PhaseGrid, levels: &[usize], cap: usize) -> Result<Self> {
        let mut reps = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut weights = Vec::new();
        let mut id_of = vec![usize::MAX; template.len()];
        let w = grid.cell_measure();
        let mut digits = [0usize; MAX_RANK];
        for &lvl in levels {
            let shape = template.shape(lvl);
            let range = template.level_range(lvl);
            let mut local = vec![usize::MAX; shape.len()];
            for idx in 0..shape.len() {
                shape.decode(idx, &mut digits);
                for s in 0..shape.counts().len() {
                    digits[shape.block(s)].sort_unstable();
                }
                let rep = shape.encode(&digits);
                if local[rep] == usize::MAX {
                    local[rep] = reps.len();
                    reps.push((lvl, range.start + rep));
                    members.push(Vec::new());
                    weights.push(0.0);
                    if reps.len() > cap {
                        return Err(Error::StateSpaceTooLarge { entries: reps.len(), cap });
                    }
                }
                let id = local[rep];
                members[id].push(range.start + idx);
                id_of[range.start + idx] = id;
                weights[id] += w.powi(shape.rank() as i32);
            }
        }
        Ok(Self { reps, members, weights, id_of })
    }

    pub(crate) fn dim(&self) -> usize {
        self.reps.len()
    }

    pub(crate) fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Coefficients of a symmetric density (read at representatives).
    pub(crate) fn coefficients(&self, f: &FockDensity) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.reps.iter().map(|&(_, flat)| f.data()[flat]))
    }

    /// Writes `c` back into a density; entries outside the basis are zeroed.
    pub(crate) fn expand(&self, c: &DVector<f64>, out: &mut FockDensity) {
        for (x, &id) in out.data_mut().iter_mut().zip(&self.id_of) {
            *x = if id == usize::MAX { 0.0 } else { c[id] };
        }
    }

    /// Dense matrix of `rhs` so that `coefficients(rhs(f)) = A coefficients(f)`.
    pub(crate) fn materialize(
        &self,
        template: &FockDensity,
        rhs: impl Fn(&FockDensity) -> Result<FockDensity>,
    ) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        let mut probe = template.zeros_like();
        for k in 0..d {
            for &flat in &self.members[k] {
                probe.data_mut()[flat] = 1.0;
            }
            let out = rhs(&probe)?;
            for (row, &(_, flat)) in self.reps.iter().enumerate() {
                a[(row, k)] = out.data()[flat];
            }
            for &flat in &self.members[k] {
                probe.data_mut()[flat] = 0.0;
            }
        }
        Ok(a)
    }
}
