//! Conservative finite-volume stencils for the n-particle transport
//! generators.
//!
//! Every stencil is a set of non-negative face rates: mass crosses a face
//! from cell `a` to cell `b` at rate `r(a→b)` per unit density. Diffusion is
//! central, drift and advection are first-order upwind, so each generator
//! is a Markov generator on the flattened level and conserves mass exactly.

use super::spec::{distance, TransportMode, TransportSpec};
use crate::error::{Error, Result};
use crate::fockspace::{BoundaryKind, LevelShape, PhaseGrid, Side, MAX_DIM, MAX_RANK};

pub(crate) struct Stencil<'a> {
    grid: &'a PhaseGrid,
    spec: &'a TransportSpec,
    shape: &'a LevelShape,
    centers: Vec<[f64; MAX_DIM]>,
    /// Friction multiplier: 1 for Klein–Kramers, 0 for Liouville.
    noise: f64,
}

impl<'a> Stencil<'a> {
    pub(crate) fn new(
        grid: &'a PhaseGrid,
        spec: &'a TransportSpec,
        shape: &'a LevelShape,
        mode: TransportMode,
    ) -> Result<Self> {
        if shape.cells() != grid.one_particle_cells() {
            return Err(Error::DimensionMismatch(format!(
                "level built on {} cells, grid has {}",
                shape.cells(),
                grid.one_particle_cells()
            )));
        }
        match mode {
            TransportMode::Diffusion if grid.has_velocity() => return Err(Error::UnexpectedVelocityGrid),
            TransportMode::KleinKramers | TransportMode::Liouville if !grid.has_velocity() => {
                return Err(Error::MissingVelocityGrid)
            }
            _ => {}
        }
        spec.validate(grid, shape.counts().len())?;
        let centers = (0..grid.spatial_count()).map(|s| grid.spatial_center(s)).collect();
        let noise = if mode == TransportMode::Liouville { 0.0 } else { 1.0 };
        Ok(Self { grid, spec, shape, centers, noise })
    }

    fn spatial_of(&self, cell: usize) -> usize {
        self.grid.split_cell(cell).0
    }

    /// Pair energy of slot `slot` placed at `spatial` against all other slots.
    fn pair_energy(&self, digits: &[usize; MAX_RANK], slot: usize, spatial: usize) -> f64 {
        if self.spec.pair.is_none() {
            return 0.0;
        }
        let x = &self.centers[spatial];
        (0..self.shape.rank())
            .filter(|&l| l != slot)
            .map(|l| {
                let y = &self.centers[self.spatial_of(digits[l])];
                self.spec.pair.value(distance(x, y, self.grid.dim()))
            })
            .sum()
    }

    fn pair_force(&self, digits: &[usize; MAX_RANK], slot: usize, spatial: usize) -> f64 {
        if self.spec.pair.is_none() {
            return 0.0;
        }
        let x = &self.centers[spatial];
        (0..self.shape.rank())
            .filter(|&l| l != slot)
            .map(|l| {
                let y = &self.centers[self.spatial_of(digits[l])];
                self.spec.pair.force(x, y, self.grid.dim())[0]
            })
            .sum()
    }

    fn extra_force(&self, spatial: usize) -> f64 {
        self.spec.extra_force.as_ref().map_or(0.0, |f| f[spatial])
    }

    /// Forward and backward rates across the face between spatial cells
    /// `lo` and `hi = lo + e_axis` for slot `slot`.
    fn diffusion_face(
        &self,
        digits: &[usize; MAX_RANK],
        slot: usize,
        axis: usize,
        lo: usize,
        hi: usize,
    ) -> (f64, f64) {
        let species = self.shape.species_of_slot(slot);
        let d = self.spec.diffusion_of(species).along(axis);
        let dx = self.grid.cell_width();
        let base = d / (dx * dx);
        let mut du = self.spec.potential.value(self.grid, hi) - self.spec.potential.value(self.grid, lo);
        du += self.pair_energy(digits, slot, hi) - self.pair_energy(digits, slot, lo);
        if axis == 0 {
            du -= 0.5 * (self.extra_force(lo) + self.extra_force(hi)) * dx;
        }
        let drift = -self.spec.beta() * d * du / dx;
        (base + drift.max(0.0) / dx, base + (-drift).max(0.0) / dx)
    }

    /// Rates across the velocity face between cells `j` and `j + 1` at a
    /// fixed spatial cell.
    fn velocity_face(&self, digits: &[usize; MAX_RANK], slot: usize, spatial: usize, j: usize) -> (f64, f64) {
        let axis = self.grid.velocity().expect("velocity grid");
        let dv = axis.width();
        let v_face = (j as f64 + 1.0 - axis.cells as f64 / 2.0) * dv;
        let m = self.spec.mass;
        let eta = self.noise * self.spec.friction.at(spatial);
        let force = self.spec.potential.force(self.grid, spatial, 0)
            + self.extra_force(spatial)
            + self.pair_force(digits, slot, spatial);
        let c = force / m - eta / m * v_face;
        let dvv = eta * self.spec.kt / (m * m) / (dv * dv);
        (c.max(0.0) / dv + dvv, (-c).max(0.0) / dv + dvv)
    }

    fn velocity_of(&self, cell: usize) -> f64 {
        self.grid.velocity_center(self.grid.split_cell(cell).1)
    }

    /// Matrix-free `out = A f` with each face visited once.
    pub(crate) fn apply_diffusion(&self, f: &[f64]) -> Vec<f64> {
        let shape = self.shape;
        let mut out = vec![0.0; f.len()];
        let mut digits = [0usize; MAX_RANK];
        let g = self.grid.cells_per_axis();
        for idx in 0..f.len() {
            shape.decode(idx, &mut digits);
            for slot in 0..shape.rank() {
                let cell = digits[slot];
                let ax = self.grid.axis_indices(cell);
                for axis in 0..self.grid.dim() {
                    if ax[axis] + 1 >= g {
                        continue;
                    }
                    let step = self.grid.axis_stride(axis);
                    let nb = idx + step * shape.stride(slot);
                    let (fw, bw) = self.diffusion_face(&digits, slot, axis, cell, cell + step);
                    let flux = fw * f[idx] - bw * f[nb];
                    out[idx] -= flux;
                    out[nb] += flux;
                }
            }
        }
        out
    }

    pub(crate) fn apply_phase(&self, f: &[f64]) -> Vec<f64> {
        let shape = self.shape;
        let grid = self.grid;
        let axis = grid.velocity().expect("velocity grid").clone();
        let gv = axis.cells;
        let g = grid.cells_per_axis();
        let dx = grid.cell_width();
        let mut out = vec![0.0; f.len()];
        let mut digits = [0usize; MAX_RANK];
        for idx in 0..f.len() {
            shape.decode(idx, &mut digits);
            for slot in 0..shape.rank() {
                let cell = digits[slot];
                let (s, j) = grid.split_cell(cell);
                let stride = shape.stride(slot);
                let v = axis.center(j);
                if s + 1 < g {
                    let nb = idx + gv * stride;
                    let v_nb = v;
                    let flux = v.max(0.0) / dx * f[idx] - (-v_nb).max(0.0) / dx * f[nb];
                    out[idx] -= flux;
                    out[nb] += flux;
                }
                if let Some(rate) = self.wall_rate(s, v) {
                    let mirror = idx - j * stride + axis.mirror(j) * stride;
                    let flux = rate * f[idx];
                    out[idx] -= flux;
                    out[mirror] += flux;
                }
                if j + 1 < gv {
                    let nb = idx + stride;
                    let (fw, bw) = self.velocity_face(&digits, slot, s, j);
                    let flux = fw * f[idx] - bw * f[nb];
                    out[idx] -= flux;
                    out[nb] += flux;
                }
            }
        }
        out
    }

    /// Specular reflection rate at a closed wall, if the cell faces one.
    fn wall_rate(&self, spatial: usize, v: f64) -> Option<f64> {
        let g = self.grid.cells_per_axis();
        let dx = self.grid.cell_width();
        let side = if spatial == g - 1 && v > 0.0 {
            Side::Upper
        } else if spatial == 0 && v < 0.0 {
            Side::Lower
        } else {
            return None;
        };
        (self.grid.face(0, side) == BoundaryKind::Reflecting).then(|| v.abs() / dx)
    }

    /// Outgoing transitions `(target index, rate)` from flat index `idx`.
    pub(crate) fn outgoing(&self, idx: usize, mode: TransportMode, sink: &mut impl FnMut(usize, f64)) {
        let shape = self.shape;
        let mut digits = [0usize; MAX_RANK];
        shape.decode(idx, &mut digits);
        match mode {
            TransportMode::None => {}
            TransportMode::Diffusion => {
                let g = self.grid.cells_per_axis();
                for slot in 0..shape.rank() {
                    let cell = digits[slot];
                    let ax = self.grid.axis_indices(cell);
                    for axis in 0..self.grid.dim() {
                        let step = self.grid.axis_stride(axis);
                        let jump = step * shape.stride(slot);
                        if ax[axis] + 1 < g {
                            let (fw, _) = self.diffusion_face(&digits, slot, axis, cell, cell + step);
                            sink(idx + jump, fw);
                        }
                        if ax[axis] > 0 {
                            let (_, bw) = self.diffusion_face(&digits, slot, axis, cell - step, cell);
                            sink(idx - jump, bw);
                        }
                    }
                }
            }
            TransportMode::KleinKramers | TransportMode::Liouville => {
                let axis = self.grid.velocity().expect("velocity grid").clone();
                let gv = axis.cells;
                let g = self.grid.cells_per_axis();
                let dx = self.grid.cell_width();
                for slot in 0..shape.rank() {
                    let cell = digits[slot];
                    let (s, j) = self.grid.split_cell(cell);
                    let stride = shape.stride(slot);
                    let v = self.velocity_of(cell);
                    if v > 0.0 && s + 1 < g {
                        sink(idx + gv * stride, v / dx);
                    }
                    if v < 0.0 && s > 0 {
                        sink(idx - gv * stride, -v / dx);
                    }
                    if let Some(rate) = self.wall_rate(s, v) {
                        sink(idx - j * stride + axis.mirror(j) * stride, rate);
                    }
                    if j + 1 < gv {
                        let (fw, _) = self.velocity_face(&digits, slot, s, j);
                        sink(idx + stride, fw);
                    }
                    if j > 0 {
                        let (_, bw) = self.velocity_face(&digits, slot, s, j - 1);
                        sink(idx - stride, bw);
                    }
                }
            }
        }
    }
}
