//! Cell-centred discretisation of the one-particle state space.
//!
//! One-particle cells are indexed spatial-major: `cell = spatial * Gv + j`,
//! where `spatial` is the row-major index over the spatial axes (axis 0 most
//! significant) and `j` the velocity cell. Without a velocity grid `Gv = 1`.

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Kind of one face of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Reflecting,
    OpenWithReservoir,
}

/// Which end of an axis a face sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    /// Outward normal of the face along its axis.
    pub fn normal(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

/// Symmetric velocity axis `[-Vmax, Vmax]` split into `cells` equal cells.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityAxis {
    pub cells: usize,
    pub cutoff: f64,
}

impl VelocityAxis {
    pub fn width(&self) -> f64 {
        2.0 * self.cutoff / self.cells as f64
    }

    /// Centre of velocity cell `j`. Mirror cells give bitwise-negated values.
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - self.cells as f64 / 2.0) * self.width()
    }

    /// Index of the cell holding `-v_j`.
    pub fn mirror(&self, j: usize) -> usize {
        self.cells - 1 - j
    }

    /// Discrete Maxwell–Boltzmann cell masses for thermal variance `kt / m`.
    pub fn maxwell_masses(&self, kt_over_m: f64) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.cells)
            .map(|j| {
                let v = self.center(j);
                (-0.5 * v * v / kt_over_m).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    dim: usize,
    spatial_cells: usize,
    cell_width: f64,
    velocity: Option<VelocityAxis>,
    lower: [BoundaryKind; MAX_DIM],
    upper: [BoundaryKind; MAX_DIM],
}

impl PhaseGrid {
    /// Position-only grid with `cells` cells per axis, all faces reflecting.
    pub fn new(dim: usize, cells: usize, cell_width: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if cells < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 cells, got {cells}")));
        }
        if !(cell_width > 0.0 && cell_width.is_finite()) {
            return Err(Error::InvalidGrid(format!("cell width {cell_width} must be positive")));
        }
        Ok(Self {
            dim,
            spatial_cells: cells,
            cell_width,
            velocity: None,
            lower: [BoundaryKind::Reflecting; MAX_DIM],
            upper: [BoundaryKind::Reflecting; MAX_DIM],
        })
    }

    /// Adds a velocity axis. Phase-space grids are one-dimensional.
    pub fn with_velocity(mut self, cells: usize, cutoff: f64) -> Result<Self> {
        if self.dim != 1 {
            return Err(Error::InvalidGrid("velocity grids require dim = 1".into()));
        }
        if cells < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 velocity cells, got {cells}")));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::InvalidGrid(format!("velocity cutoff {cutoff} must be positive")));
        }
        self.velocity = Some(VelocityAxis { cells, cutoff });
        Ok(self)
    }

    pub fn with_face(mut self, axis: usize, side: Side, kind: BoundaryKind) -> Result<Self> {
        if axis >= self.dim {
            return Err(Error::InvalidGrid(format!("axis {axis} out of range")));
        }
        match side {
            Side::Lower => self.lower[axis] = kind,
            Side::Upper => self.upper[axis] = kind,
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per spatial axis.
    pub fn cells_per_axis(&self) -> usize {
        self.spatial_cells
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn velocity(&self) -> Option<&VelocityAxis> {
        self.velocity.as_ref()
    }

    pub fn has_velocity(&self) -> bool {
        self.velocity.is_some()
    }

    pub fn face(&self, axis: usize, side: Side) -> BoundaryKind {
        match side {
            Side::Lower => self.lower[axis],
            Side::Upper => self.upper[axis],
        }
    }

    /// Open faces as `(axis, side)` pairs.
    pub fn open_faces(&self) -> Vec<(usize, Side)> {
        let mut faces = Vec::new();
        for axis in 0..self.dim {
            for side in [Side::Lower, Side::Upper] {
                if self.face(axis, side) == BoundaryKind::OpenWithReservoir {
                    faces.push((axis, side));
                }
            }
        }
        faces
    }

    /// Side length of the cubic domain.
    pub fn length(&self) -> f64 {
        self.spatial_cells as f64 * self.cell_width
    }

    pub fn spatial_count(&self) -> usize {
        self.spatial_cells.pow(self.dim as u32)
    }

    pub fn velocity_count(&self) -> usize {
        self.velocity.as_ref().map_or(1, |v| v.cells)
    }

    /// Number of one-particle cells `M`.
    pub fn one_particle_cells(&self) -> usize {
        self.spatial_count() * self.velocity_count()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_width.powi(self.dim as i32)
    }

    /// Measure of one one-particle cell (volume times velocity width).
    pub fn cell_measure(&self) -> f64 {
        self.cell_volume() * self.velocity.as_ref().map_or(1.0, |v| v.width())
    }

    /// `|X|`, the spatial domain volume.
    pub fn domain_volume(&self) -> f64 {
        self.length().powi(self.dim as i32)
    }

    pub fn split_cell(&self, cell: usize) -> (usize, usize) {
        let gv = self.velocity_count();
        (cell / gv, cell % gv)
    }

    pub fn join_cell(&self, spatial: usize, velocity: usize) -> usize {
        spatial * self.velocity_count() + velocity
    }

    /// Per-axis indices of a spatial cell.
    pub fn axis_indices(&self, spatial: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rest = spatial;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.spatial_cells;
            rest /= self.spatial_cells;
        }
        out
    }

    pub fn spatial_from_axes(&self, idx: &[usize; MAX_DIM]) -> usize {
        (0..self.dim).fold(0, |acc, axis| acc * self.spatial_cells + idx[axis])
    }

    /// Stride of `axis` in the spatial index.
    pub fn axis_stride(&self, axis: usize) -> usize {
        self.spatial_cells.pow((self.dim - 1 - axis) as u32)
    }

    pub fn spatial_center(&self, spatial: usize) -> [f64; MAX_DIM] {
        let idx = self.axis_indices(spatial);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = (idx[axis] as f64 + 0.5) * self.cell_width;
        }
        x
    }

    pub fn velocity_center(&self, velocity: usize) -> f64 {
        self.velocity.as_ref().map_or(0.0, |v| v.center(velocity))
    }

    /// Spatial cell containing `x`, clamped onto the grid.
    pub fn locate(&self, x: &[f64; MAX_DIM]) -> usize {
        let mut idx = [0; MAX_DIM];
        for axis in 0..self.dim {
            let i = (x[axis] / self.cell_width).floor();
            idx[axis] = (i.max(0.0) as usize).min(self.spatial_cells - 1);
        }
        self.spatial_from_axes(&idx)
    }

    /// Velocity cell containing `v`, clamped.
    pub fn locate_velocity(&self, v: f64) -> usize {
        match &self.velocity {
            None => 0,
            Some(axis) => {
                let j = ((v + axis.cutoff) / axis.width()).floor();
                (j.max(0.0) as usize).min(axis.cells - 1)
            }
        }
    }

    pub fn contains(&self, x: &[f64; MAX_DIM]) -> bool {
        let len = self.length();
        (0..self.dim).all(|axis| x[axis] >= 0.0 && x[axis] <= len)
    }
}

/// Mass of a centred Maxwell–Boltzmann velocity law outside `[-vmax, vmax]`.
pub fn maxwell_tail_mass(vmax: f64, kt_over_m: f64) -> f64 {
    statrs::function::erf::erfc(vmax / (2.0 * kt_over_m).sqrt())
}
