use nalgebra::DMatrix;

use super::spec::{TransportMode, TransportSpec};
use super::stencil::Stencil;
use crate::error::{Error, Result};
use crate::fockspace::{LevelShape, PhaseGrid};

/// Default cap on materialised generator rows.
pub const DEFAULT_GENERATOR_CAP: usize = 1 << 20;

/// Sparse row-compressed generator of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    pub mode: TransportMode,
    pub counts: Vec<usize>,
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl GeneratorMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n: usize,
        mut triplets: Vec<(usize, usize, f64)>,
        mode: TransportMode,
        counts: Vec<usize>,
    ) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { mode, counts, n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for (c, v) in self.cols.iter().zip(&self.vals) {
            sums[*c] += v;
        }
        sums
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        (self.row_ptr[row]..self.row_ptr[row + 1])
            .find(|&k| self.cols[k] == col)
            .map_or(0.0, |k| self.vals[k])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }
}

/// Materialises the level-`shape` transport generator from its outgoing
/// cell-to-cell rates.
pub fn assemble_generator(
    shape: &LevelShape,
    grid: &PhaseGrid,
    spec: &TransportSpec,
    mode: TransportMode,
    cap: usize,
) -> Result<GeneratorMatrix> {
    let n = shape.len();
    if n > cap {
        return Err(Error::StateSpaceTooLarge { entries: n, cap });
    }
    let mut triplets = Vec::new();
    if mode != TransportMode::None {
        let stencil = Stencil::new(grid, spec, shape, mode)?;
        for from in 0..n {
            let mut exit = 0.0;
            stencil.outgoing(from, mode, &mut |to, rate| {
                if rate != 0.0 {
                    triplets.push((to, from, rate));
                    exit += rate;
                }
            });
            if exit != 0.0 {
                triplets.push((from, from, -exit));
            }
        }
    }
    Ok(GeneratorMatrix::from_triplets(n, triplets, mode, shape.counts().to_vec()))
}
