use super::grid::PhaseGrid;
use super::layout::{Layout, LevelShape, DEFAULT_STATE_CAP, MAX_RANK};
use crate::error::{Error, Result};

/// Truncated family of symmetric n-particle cell-average densities.
///
/// Levels are stored back to back in one flat buffer; level `i` holds the
/// tensor for species counts `layout.counts(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensity {
    layout: Layout,
    cells: usize,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl FockDensity {
    pub fn zeros(layout: Layout, grid: &PhaseGrid) -> Result<Self> {
        Self::zeros_with_cap(layout, grid, DEFAULT_STATE_CAP)
    }

    pub fn zeros_with_cap(layout: Layout, grid: &PhaseGrid, cap: usize) -> Result<Self> {
        let cells = grid.one_particle_cells();
        let total = layout.check_cap(cells, cap)?;
        let mut offsets = Vec::with_capacity(layout.n_levels() + 1);
        let mut acc = 0;
        for idx in 0..layout.n_levels() {
            offsets.push(acc);
            acc += layout.shape(idx, cells).len();
        }
        offsets.push(acc);
        debug_assert_eq!(acc, total);
        Ok(Self { layout, cells, offsets, data: vec![0.0; total] })
    }

    /// All probability in the empty level.
    pub fn vacuum(layout: Layout, grid: &PhaseGrid) -> Result<Self> {
        let mut f = Self::zeros(layout, grid)?;
        f.data[0] = 1.0;
        Ok(f)
    }

    /// Probability `prob` spread uniformly over the level with `counts`.
    pub fn uniform(layout: Layout, grid: &PhaseGrid, counts: &[usize], prob: f64) -> Result<Self> {
        let mut f = Self::zeros(layout, grid)?;
        f.set_uniform(grid, counts, prob)?;
        Ok(f)
    }

    pub fn set_uniform(&mut self, grid: &PhaseGrid, counts: &[usize], prob: f64) -> Result<()> {
        let idx = self
            .layout
            .index_of(counts)
            .ok_or_else(|| Error::DimensionMismatch(format!("counts {counts:?} outside layout")))?;
        let rank: usize = counts.iter().sum();
        let measure = grid.cell_measure().powi(rank as i32);
        let len = self.level(idx).len() as f64;
        let value = prob / (len * measure);
        self.level_mut(idx).iter_mut().for_each(|x| *x = value);
        Ok(())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// One-particle cell count the tensors are built on.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn n_levels(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn shape(&self, idx: usize) -> LevelShape {
        self.layout.shape(idx, self.cells)
    }

    pub fn level(&self, idx: usize) -> &[f64] {
        &self.data[self.offsets[idx]..self.offsets[idx + 1]]
    }

    pub fn level_mut(&mut self, idx: usize) -> &mut [f64] {
        let (a, b) = (self.offsets[idx], self.offsets[idx + 1]);
        &mut self.data[a..b]
    }

    pub fn level_range(&self, idx: usize) -> std::ops::Range<usize> {
        self.offsets[idx]..self.offsets[idx + 1]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same layout, zero entries.
    pub fn zeros_like(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            cells: self.cells,
            offsets: self.offsets.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn from_flat(template: &Self, data: Vec<f64>) -> Result<Self> {
        if data.len() != template.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "flat length {} vs {}",
                data.len(),
                template.data.len()
            )));
        }
        Ok(Self { data, ..template.zeros_like() })
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= a);
        out
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn check_grid(&self, grid: &PhaseGrid) -> Result<()> {
        if grid.one_particle_cells() != self.cells {
            return Err(Error::DimensionMismatch(format!(
                "density built on {} one-particle cells, grid has {}",
                self.cells,
                grid.one_particle_cells()
            )));
        }
        Ok(())
    }
}

/// `Σ_n Σ_cells f_n · (cell measure)^n`.
pub fn total_mass(f: &FockDensity, grid: &PhaseGrid) -> Result<f64> {
    Ok(marginal_copy_number(f, grid)?.iter().sum())
}

/// `p_n = ∫ f_n` for every level, in layout order.
pub fn marginal_copy_number(f: &FockDensity, grid: &PhaseGrid) -> Result<Vec<f64>> {
    f.check_grid(grid)?;
    let w = grid.cell_measure();
    Ok((0..f.n_levels())
        .map(|idx| {
            let rank = f.shape(idx).rank();
            f.level(idx).iter().sum::<f64>() * w.powi(rank as i32)
        })
        .collect())
}

/// Volume integral of one level tensor.
pub fn level_mass(shape: &LevelShape, data: &[f64], grid: &PhaseGrid) -> f64 {
    data.iter().sum::<f64>() * grid.cell_measure().powi(shape.rank() as i32)
}

/// Expected particle density per one-particle cell, one field per species:
/// `Σ_n n ∫ f_n(x, rest) d rest`.
pub fn marginal_density_field(f: &FockDensity, grid: &PhaseGrid) -> Result<Vec<Vec<f64>>> {
    f.check_grid(grid)?;
    let m = f.cells();
    let w = grid.cell_measure();
    let species = f.layout().species();
    let mut fields = vec![vec![0.0; m]; species];
    let mut digits = [0usize; MAX_RANK];
    for idx in 0..f.n_levels() {
        let shape = f.shape(idx);
        if shape.rank() == 0 {
            continue;
        }
        let rest = w.powi(shape.rank() as i32 - 1);
        for (flat, &value) in f.level(idx).iter().enumerate() {
            if value == 0.0 {
                continue;
            }
            shape.decode(flat, &mut digits);
            for (slot, &cell) in digits.iter().enumerate().take(shape.rank()) {
                fields[shape.species_of_slot(slot)][cell] += value * rest;
            }
        }
    }
    Ok(fields)
}

/// Sums a one-particle field over velocity cells, leaving a per-volume
/// spatial density.
pub fn spatial_density(field: &[f64], grid: &PhaseGrid) -> Vec<f64> {
    let gv = grid.velocity_count();
    let dv = grid.velocity().map_or(1.0, |v| v.width());
    field.chunks(gv).map(|c| c.iter().sum::<f64>() * dv).collect()
}

/// Average over all slot permutations within each species block.
pub fn symmetrize(shape: &LevelShape, data: &[f64]) -> Vec<f64> {
    let mut out = data.to_vec();
    for s in 0..shape.counts().len() {
        let block = shape.block(s);
        if block.len() < 2 {
            continue;
        }
        out = symmetrize_block(shape, &out, block);
    }
    out
}

fn symmetrize_block(shape: &LevelShape, data: &[f64], block: std::ops::Range<usize>) -> Vec<f64> {
    let perms = permutations(block.len());
    let norm = 1.0 / perms.len() as f64;
    let mut digits = [0usize; MAX_RANK];
    let mut permuted = [0usize; MAX_RANK];
    let mut out = vec![0.0; data.len()];
    for (flat, slot) in out.iter_mut().enumerate() {
        shape.decode(flat, &mut digits);
        permuted[..shape.rank()].copy_from_slice(&digits[..shape.rank()]);
        let mut acc = 0.0;
        for p in &perms {
            for (k, &src) in p.iter().enumerate() {
                permuted[block.start + k] = digits[block.start + src];
            }
            acc += data[shape.encode(&permuted)];
        }
        *slot = acc * norm;
    }
    out
}

/// All permutations of `0..k` in lexicographic order.
pub(crate) fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // next permutation
        let Some(i) = (0..k.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            break;
        };
        let j = (i + 1..k).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
    out
}

/// Largest deviation of a level from its symmetrized version.
pub fn symmetry_defect(shape: &LevelShape, data: &[f64]) -> f64 {
    symmetrize(shape, data)
        .iter()
        .zip(data)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Total-variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
