//! Single-particle insertion and deletion, the grand-canonical exchange
//! kernel built from them, and the open-boundary reservoir terms.

use super::reaction::RateField;
use crate::error::{Error, Result};
use crate::fockspace::{LevelShape, PhaseGrid, Side, MAX_RANK};
use crate::transport::{PairPotential, TransportSpec};

/// Removal of one particle of `species` at per-particle rate `κ(x)`.
#[derive(Debug, Clone)]
pub(crate) struct DeathOp {
    pub(crate) species: usize,
    kappa: Vec<f64>,
    cell_measure: f64,
}

impl DeathOp {
    pub(crate) fn new(species: usize, rate: &RateField, grid: &PhaseGrid) -> Self {
        let gv = grid.velocity_count();
        Self {
            species,
            kappa: (0..grid.one_particle_cells()).map(|c| rate.at(c / gv)).collect(),
            cell_measure: grid.cell_measure(),
        }
    }

    pub(crate) fn max_rate(&self) -> f64 {
        self.kappa.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.kappa.iter().all(|k| *k == 0.0)
    }

    pub(crate) fn loss(&self, shape: &LevelShape, f: &[f64], out: &mut [f64], scale: f64) {
        let block = shape.block(self.species);
        if block.is_empty() || self.is_zero() {
            return;
        }
        let mut digits = [0usize; MAX_RANK];
        for (idx, (o, &v)) in out.iter_mut().zip(f).enumerate() {
            if v == 0.0 {
                continue;
            }
            shape.decode(idx, &mut digits);
            let rate: f64 = block.clone().map(|k| self.kappa[digits[k]]).sum();
            *o += scale * v * rate;
        }
    }

    /// Gain into `tgt` from `src = tgt + e_species`, summed over every
    /// insertion position of the removed particle.
    pub(crate) fn gain(&self, src: &LevelShape, f: &[f64], tgt: &LevelShape, out: &mut [f64], scale: f64) {
        if self.is_zero() || f.iter().all(|x| *x == 0.0) {
            return;
        }
        let m = tgt.cells();
        let start = tgt.block(self.species).start;
        let positions = tgt.counts()[self.species] + 1;
        let w = self.cell_measure;
        let mut digits = [0usize; MAX_RANK];
        let mut sd = [0usize; MAX_RANK];
        for (q, o) in out.iter_mut().enumerate() {
            tgt.decode(q, &mut digits);
            let mut acc = 0.0;
            for p in 0..positions {
                let at = start + p;
                sd[..at].copy_from_slice(&digits[..at]);
                sd[at + 1..=tgt.rank()].copy_from_slice(&digits[at..tgt.rank()]);
                for z in 0..m {
                    let k = self.kappa[z];
                    if k == 0.0 {
                        continue;
                    }
                    sd[at] = z;
                    acc += k * f[src.encode(&sd[..src.rank()])];
                }
            }
            *o += scale * w * acc;
        }
    }
}

/// Creation of one particle of `species` with density `β(cell)` per cell
/// measure; `total = ∫ β`.
#[derive(Debug, Clone)]
pub(crate) struct BirthOp {
    pub(crate) species: usize,
    intensity: Vec<f64>,
    total: f64,
}

impl BirthOp {
    /// `b(x)` per unit volume; on phase grids the velocity is drawn from the
    /// discrete Maxwellian of variance `kt_over_m`.
    pub(crate) fn new(species: usize, rate: &RateField, grid: &PhaseGrid, kt_over_m: f64) -> Self {
        let gv = grid.velocity_count();
        let (masses, dv) = match grid.velocity() {
            Some(axis) => (axis.maxwell_masses(kt_over_m), axis.width()),
            None => (vec![1.0], 1.0),
        };
        let intensity = (0..grid.one_particle_cells())
            .map(|c| rate.at(c / gv) * masses[c % gv] / dv)
            .collect();
        Self { species, intensity, total: rate.integral(grid) }
    }

    pub(crate) fn total(&self) -> f64 {
        self.total
    }

    pub(crate) fn loss(&self, f: &[f64], out: &mut [f64], scale: f64) {
        if self.total == 0.0 {
            return;
        }
        for (o, v) in out.iter_mut().zip(f) {
            *o += scale * self.total * v;
        }
    }

    /// Gain into `tgt` from `src = tgt - e_species`.
    pub(crate) fn gain(&self, src: &LevelShape, f: &[f64], tgt: &LevelShape, out: &mut [f64], scale: f64) {
        if self.total == 0.0 || f.iter().all(|x| *x == 0.0) {
            return;
        }
        let block = tgt.block(self.species);
        let c = block.len() as f64;
        let mut digits = [0usize; MAX_RANK];
        let mut rd = [0usize; MAX_RANK];
        for (q, o) in out.iter_mut().enumerate() {
            tgt.decode(q, &mut digits);
            let mut acc = 0.0;
            for k in block.clone() {
                let b = self.intensity[digits[k]];
                if b == 0.0 {
                    continue;
                }
                rd[..k].copy_from_slice(&digits[..k]);
                rd[k..tgt.rank() - 1].copy_from_slice(&digits[k + 1..tgt.rank()]);
                acc += b * f[src.encode(&rd[..src.rank()])];
            }
            *o += scale * acc / c;
        }
    }
}

/// Single-particle exchange with an implicit reservoir: deletion at rate
/// `κ_out(x)` per particle, insertion with intensity `κ_in(x)` per volume.
#[derive(Debug, Clone, PartialEq)]
pub struct BlKernel {
    pub species: usize,
    pub kappa_out: RateField,
    pub kappa_in: RateField,
    /// Inverse reservoir temperature.
    pub beta: f64,
    /// Reservoir chemical potential.
    pub mu: f64,
    /// Particle mass, used for the velocities of inserted particles.
    pub mass: f64,
}

impl BlKernel {
    pub fn new(kappa_out: RateField, kappa_in: RateField, beta: f64, mu: f64) -> Self {
        Self { species: 0, kappa_out, kappa_in, beta, mu, mass: 1.0 }
    }

    /// Kernel whose insertion intensity satisfies the flux balance for
    /// `H = Σ U(x_i) + m v_i² / 2` at `β = 1 / k_BT` of `spec`:
    /// `κ_in(x) = κ_out e^{βμ} e^{-βU(x)} Z_v`, `Z_v = Σ_j e^{-βm v_j²/2} dv`.
    pub fn balanced(grid: &PhaseGrid, spec: &TransportSpec, kappa_out: f64, mu: f64) -> Self {
        let beta = spec.beta();
        let zv = thermal_velocity_factor(grid, beta, spec.mass);
        let kappa_in = (0..grid.spatial_count())
            .map(|s| kappa_out * (beta * mu).exp() * (-beta * spec.potential.value(grid, s)).exp() * zv)
            .collect();
        Self {
            species: 0,
            kappa_out: RateField::Constant(kappa_out),
            kappa_in: RateField::PerCell(kappa_in),
            beta,
            mu,
            mass: spec.mass,
        }
    }

    pub fn with_species(mut self, species: usize) -> Self {
        self.species = species;
        self
    }

    pub fn kt_over_m(&self) -> f64 {
        1.0 / (self.beta * self.mass)
    }

    pub(crate) fn validate(&self, grid: &PhaseGrid) -> Result<()> {
        let wrap = |e: Error| Error::InvalidExchange(e.to_string());
        self.kappa_out.validate(grid, "kappa_out").map_err(wrap)?;
        self.kappa_in.validate(grid, "kappa_in").map_err(wrap)?;
        if !(self.beta.is_finite() && self.beta > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidExchange("beta must be positive and mu finite".into()));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidExchange("mass must be positive".into()));
        }
        Ok(())
    }
}

/// `Σ_j e^{-βm v_j²/2} dv`, or 1 without a velocity grid.
fn thermal_velocity_factor(grid: &PhaseGrid, beta: f64, mass: f64) -> f64 {
    grid.velocity().map_or(1.0, |axis| {
        (0..axis.cells)
            .map(|j| (-0.5 * beta * mass * axis.center(j).powi(2)).exp())
            .sum::<f64>()
            * axis.width()
    })
}

/// Conditional law of a reservoir particle given the system particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairModel {
    /// Reservoir particles ignore the system: `f°₂(X_out | X_in) = f°₁(X_out)`.
    #[default]
    Independence,
}

/// Reservoir behind the open faces of a one-dimensional phase grid:
/// `f°₁(q, v) = ρ_res · MB(v; k_BT_res, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryReservoir {
    pub density: f64,
    pub kt: f64,
    pub mass: f64,
    /// Reservoir depth behind each open face for the mean-field integral;
    /// defaults to the range of the pair potential.
    pub width: Option<f64>,
    pub pair_model: PairModel,
}

impl BoundaryReservoir {
    pub fn new(density: f64, kt: f64, mass: f64) -> Self {
        Self { density, kt, mass, width: None, pair_model: PairModel::Independence }
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = Some(width);
        self
    }

    /// `f°₁` on velocity cell `j` (density per unit velocity).
    fn one_body(&self, grid: &PhaseGrid) -> Vec<f64> {
        let axis = grid.velocity().expect("velocity grid");
        axis.maxwell_masses(self.kt / self.mass)
            .into_iter()
            .map(|p| self.density * p / axis.width())
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(self.density.is_finite() && self.density >= 0.0) || !pos(self.kt) || !pos(self.mass) {
            return Err(Error::InvalidExchange(
                "reservoir needs density >= 0 and positive temperature and mass".into(),
            ));
        }
        if let Some(w) = self.width {
            if !pos(w) {
                return Err(Error::InvalidExchange("reservoir width must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Exchange of particles with an environment.
#[derive(Debug, Clone, PartialEq)]
pub enum ExchangeModel {
    BlKernel(BlKernel),
    BoundaryFlux(BoundaryReservoir),
}

impl ExchangeModel {
    pub(crate) fn validate(&self, grid: &PhaseGrid) -> Result<()> {
        match self {
            ExchangeModel::BlKernel(k) => k.validate(grid),
            ExchangeModel::BoundaryFlux(r) => {
                r.validate()?;
                boundary_faces(grid).map(|_| ())
            }
        }
    }
}

fn boundary_faces(grid: &PhaseGrid) -> Result<Vec<Side>> {
    if !grid.has_velocity() {
        return Err(Error::MissingVelocityGrid);
    }
    let faces: Vec<Side> = grid.open_faces().into_iter().map(|(_, side)| side).collect();
    if faces.is_empty() {
        return Err(Error::NoOpenFace);
    }
    Ok(faces)
}

/// Open-boundary flux term of level `n`; the last slot of level `n+1`
/// holds the particle on the boundary.
#[derive(Debug, Clone)]
pub(crate) struct BoundaryOp {
    /// `(boundary cell, |v · n̂| dv)` for outgoing velocity cells.
    outgoing: Vec<(usize, f64)>,
    /// `Σ (v · n̂) f°₁(q, -v) dv` over all open faces.
    influx: f64,
}

impl BoundaryOp {
    pub(crate) fn new(res: &BoundaryReservoir, grid: &PhaseGrid) -> Result<Self> {
        let faces = boundary_faces(grid)?;
        let axis = grid.velocity().expect("velocity grid");
        let f1 = res.one_body(grid);
        let dv = axis.width();
        let g = grid.cells_per_axis();
        let mut outgoing = Vec::new();
        let mut influx = 0.0;
        for side in faces {
            let s = match side {
                Side::Lower => 0,
                Side::Upper => g - 1,
            };
            for j in 0..axis.cells {
                let vn = axis.center(j) * side.normal();
                if vn > 0.0 {
                    outgoing.push((grid.join_cell(s, j), vn * dv));
                    influx += vn * f1[axis.mirror(j)] * dv;
                }
            }
        }
        Ok(Self { outgoing, influx })
    }

    pub(crate) fn influx(&self) -> f64 {
        self.influx
    }

    /// Adds `scale (n+1) Σ (v·n̂) f_{n+1}(·, (q, v)) dv`.
    pub(crate) fn gain(&self, n: usize, f_np1: &[f64], m: usize, out: &mut [f64], scale: f64) {
        let k = (n + 1) as f64;
        for (x, o) in out.iter_mut().enumerate() {
            let acc: f64 = self.outgoing.iter().map(|&(c, w)| w * f_np1[x * m + c]).sum();
            *o += scale * k * acc;
        }
    }

    /// Adds `scale (n+1) f_n Σ (v·n̂) f°₁(q, -v) dv`.
    pub(crate) fn loss(&self, n: usize, f_n: &[f64], out: &mut [f64], scale: f64) {
        let k = (n + 1) as f64 * self.influx;
        for (o, v) in out.iter_mut().zip(f_n) {
            *o += scale * k * v;
        }
    }
}

/// Boundary flux `Φ_n` for level `n` of a single-species hierarchy.
pub fn boundary_flux(
    shape_n: &LevelShape,
    f_n: &[f64],
    f_np1: &[f64],
    ex: &ExchangeModel,
    grid: &PhaseGrid,
) -> Result<Vec<f64>> {
    let ExchangeModel::BoundaryFlux(res) = ex else {
        return Err(Error::InvalidExchange("boundary_flux needs a boundary-flux model".into()));
    };
    res.validate()?;
    let op = BoundaryOp::new(res, grid)?;
    let m = grid.one_particle_cells();
    if shape_n.cells() != m || f_n.len() != shape_n.len() || f_np1.len() != shape_n.len() * m {
        return Err(Error::DimensionMismatch("boundary_flux level sizes do not match the grid".into()));
    }
    let n = shape_n.rank();
    let mut out = vec![0.0; f_n.len()];
    op.gain(n, f_np1, m, &mut out, 1.0);
    op.loss(n, f_n, &mut out, -1.0);
    Ok(out)
}

/// Five-point Gauss–Legendre rule on `[-1, 1]`.
const GAUSS_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];
const PANELS: usize = 32;

fn integrate(a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            GAUSS_NODES
                .iter()
                .zip(GAUSS_WEIGHTS)
                .map(|(x, w)| w * f(mid + 0.5 * h * x))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

/// `∫_a^b V'(r) dr` split at the potential cut-off so each piece is smooth.
fn integrate_derivative(v: &PairPotential, a: f64, b: f64) -> f64 {
    let dv = |r: f64| v.derivative(r);
    match v.range() {
        Some(cut) if cut > a && cut < b => integrate(a, cut, &dv) + integrate(cut, b, &dv),
        _ => integrate(a, b, &dv),
    }
}

/// Mean force of the reservoir particles on a system particle at each
/// spatial cell centre, `F(q) = -∫ ∇V(q - x) f°₂(x | q) dx` over the
/// reservoir slabs behind the open faces.
pub fn mean_field_force(ex: &ExchangeModel, grid: &PhaseGrid, pair: &PairPotential) -> Result<Vec<f64>> {
    let ExchangeModel::BoundaryFlux(res) = ex else {
        return Err(Error::InvalidExchange("mean_field_force needs a boundary-flux model".into()));
    };
    res.validate()?;
    if grid.dim() != 1 {
        return Err(Error::InvalidGrid("reservoir force is defined on one-dimensional domains".into()));
    }
    let faces: Vec<Side> = grid.open_faces().into_iter().map(|(_, s)| s).collect();
    if faces.is_empty() {
        return Err(Error::NoOpenFace);
    }
    let n = grid.spatial_count();
    if pair.is_none() || res.density == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let width = res.width.or(pair.range()).ok_or_else(|| {
        Error::InvalidExchange("pair potential has no finite range; set the reservoir width".into())
    })?;
    let len = grid.length();
    let rho = res.density;
    Ok((0..n)
        .map(|s| {
            let q = grid.spatial_center(s)[0];
            faces
                .iter()
                .map(|side| match side {
                    // Slab [-W, 0]: distance r = q - x runs over [q, q + W].
                    Side::Lower => -rho * integrate_derivative(pair, q, q + width),
                    // Slab [L, L + W]: the force points back into the domain.
                    Side::Upper => rho * integrate_derivative(pair, len - q, len - q + width),
                })
                .sum()
        })
        .collect())
}

/// Flux-balance residual of a bl-kernel against the grand-canonical state
/// `ρ_n ∝ z^n / n! Π e^{-βh(x_i)}`, `z = e^{βμ}`, `h = U + m v² / 2`, on
/// levels `0..=nmax`. Returns the largest pointwise mismatch between the
/// insertion flux `n → n+1` and the deletion flux `n+1 → n`.
pub fn check_gc_balance(ex: &ExchangeModel, grid: &PhaseGrid, spec: &TransportSpec, nmax: usize) -> Result<f64> {
    let ExchangeModel::BlKernel(k) = ex else {
        return Err(Error::InvalidExchange("check_gc_balance needs a bl-kernel".into()));
    };
    k.validate(grid)?;
    let m = grid.one_particle_cells();
    let w = grid.cell_measure();
    let h: Vec<f64> = (0..m)
        .map(|c| {
            let (s, j) = grid.split_cell(c);
            spec.potential.value(grid, s) + 0.5 * k.mass * grid.velocity_center(j).powi(2)
        })
        .collect();
    let boltz: Vec<f64> = h.iter().map(|x| (-k.beta * x).exp()).collect();
    let z = (k.beta * k.mu).exp();
    let z1: f64 = boltz.iter().sum::<f64>() * w;
    let mut xi = 0.0;
    let mut term = 1.0;
    for n in 0..=nmax {
        if n > 0 {
            term *= z * z1 / n as f64;
        }
        xi += term;
    }
    let level = |n: usize| -> Vec<f64> {
        let shape = LevelShape::single(n, m);
        let mut digits = [0usize; MAX_RANK];
        let mut fact = 1.0;
        for i in 1..=n {
            fact *= i as f64;
        }
        (0..shape.len())
            .map(|idx| {
                shape.decode(idx, &mut digits);
                z.powi(n as i32) / fact * digits[..n].iter().map(|&c| boltz[c]).product::<f64>() / xi
            })
            .collect()
    };
    let birth = BirthOp::new(0, &k.kappa_in, grid, k.kt_over_m());
    let death = DeathOp::new(0, &k.kappa_out, grid);
    let mut worst: f64 = 0.0;
    let mut lower = level(0);
    for n in 0..nmax {
        let upper = level(n + 1);
        let src = LevelShape::single(n, m);
        let tgt = LevelShape::single(n + 1, m);
        let mut diff = vec![0.0; tgt.len()];
        birth.gain(&src, &lower, &tgt, &mut diff, 1.0);
        death.loss(&tgt, &upper, &mut diff, -1.0);
        worst = diff.iter().fold(worst, |acc, d| acc.max(d.abs()));
        lower = upper;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{level_mass, symmetrize, symmetry_defect, BoundaryKind};
    use crate::transport::ExternalPotential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn open_grid() -> PhaseGrid {
        PhaseGrid::new(1, 4, 0.25)
            .unwrap()
            .with_velocity(6, 4.0)
            .unwrap()
            .with_face(0, Side::Lower, BoundaryKind::OpenWithReservoir)
            .unwrap()
            .with_face(0, Side::Upper, BoundaryKind::OpenWithReservoir)
            .unwrap()
    }

    #[test]
    fn death_and_birth_balance_on_random_input() {
        let g = PhaseGrid::new(1, 3, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kappa = RateField::PerCell(vec![0.3, 1.1, 0.7]);
        let death = DeathOp::new(0, &kappa, &g);
        let birth = BirthOp::new(0, &kappa, &g, 1.0);
        for n in 1..=3 {
            let src = LevelShape::single(n, 3);
            let tgt = LevelShape::single(n - 1, 3);
            let f: Vec<f64> = (0..src.len()).map(|_| rng.random()).collect();
            let mut loss = vec![0.0; src.len()];
            death.loss(&src, &f, &mut loss, 1.0);
            let mut gain = vec![0.0; tgt.len()];
            death.gain(&src, &f, &tgt, &mut gain, 1.0);
            assert!((level_mass(&src, &loss, &g) - level_mass(&tgt, &gain, &g)).abs() < 1e-13);

            let fb: Vec<f64> = (0..tgt.len()).map(|_| rng.random()).collect();
            let mut loss = vec![0.0; tgt.len()];
            birth.loss(&fb, &mut loss, 1.0);
            let mut gain = vec![0.0; src.len()];
            birth.gain(&tgt, &fb, &src, &mut gain, 1.0);
            assert!((level_mass(&tgt, &loss, &g) - level_mass(&src, &gain, &g)).abs() < 1e-13);
        }
    }

    #[test]
    fn gains_preserve_symmetry() {
        let g = PhaseGrid::new(1, 3, 0.5).unwrap();
        let kappa = RateField::PerCell(vec![0.3, 1.1, 0.7]);
        let death = DeathOp::new(0, &kappa, &g);
        let birth = BirthOp::new(0, &kappa, &g, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s3 = LevelShape::single(3, 3);
        let s2 = LevelShape::single(2, 3);
        let f3 = symmetrize(&s3, &(0..27).map(|_| rng.random()).collect::<Vec<f64>>());
        let f2 = symmetrize(&s2, &(0..9).map(|_| rng.random()).collect::<Vec<f64>>());
        let mut out = vec![0.0; 9];
        death.gain(&s3, &f3, &s2, &mut out, 1.0);
        assert!(symmetry_defect(&s2, &out) < 1e-14);
        let mut out = vec![0.0; 27];
        birth.gain(&s2, &f2, &s3, &mut out, 1.0);
        assert!(symmetry_defect(&s3, &out) < 1e-14);
    }

    #[test]
    fn balanced_kernel_passes_gc_check() {
        for g in [PhaseGrid::new(1, 4, 0.25).unwrap(), PhaseGrid::new(1, 3, 0.5).unwrap().with_velocity(6, 4.0).unwrap()] {
            let spec = TransportSpec::langevin(1.0, 1.3, 0.8)
                .with_potential(ExternalPotential::Harmonic { stiffness: 2.0, center: [0.4, 0.0, 0.0] });
            let ex = ExchangeModel::BlKernel(BlKernel::balanced(&g, &spec, 0.7, -0.4));
            assert!(check_gc_balance(&ex, &g, &spec, 4).unwrap() < 1e-12);
        }
    }

    #[test]
    fn one_way_or_zero_kernels() {
        let g = PhaseGrid::new(1, 4, 0.25).unwrap();
        let spec = TransportSpec::default();
        let one_way = ExchangeModel::BlKernel(BlKernel::new(RateField::Constant(0.0), RateField::Constant(1.0), 1.0, 0.0));
        assert!(check_gc_balance(&one_way, &g, &spec, 3).unwrap() > 0.0);
        let zero = ExchangeModel::BlKernel(BlKernel::new(RateField::Constant(0.0), RateField::Constant(0.0), 1.0, 0.0));
        assert_eq!(check_gc_balance(&zero, &g, &spec, 3).unwrap(), 0.0);
    }

    #[test]
    fn boundary_flux_vanishes_on_factorised_input() {
        let g = open_grid();
        let res = BoundaryReservoir::new(0.8, 1.2, 1.0);
        let ex = ExchangeModel::BoundaryFlux(res.clone());
        let f1 = res.one_body(&g);
        let m = g.one_particle_cells();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 0..=2 {
            let shape = LevelShape::single(n, m);
            let f_n = symmetrize(&shape, &(0..shape.len()).map(|_| rng.random()).collect::<Vec<f64>>());
            let mut f_np1 = vec![0.0; shape.len() * m];
            for (x, v) in f_n.iter().enumerate() {
                for c in 0..m {
                    f_np1[x * m + c] = v * f1[g.split_cell(c).1];
                }
            }
            let out = boundary_flux(&shape, &f_n, &f_np1, &ex, &g).unwrap();
            assert!(out.iter().all(|x| x.abs() < 1e-14), "{out:?}");
        }
    }

    #[test]
    fn boundary_flux_pure_loss_and_pure_gain() {
        let g = open_grid();
        let res = BoundaryReservoir::new(0.5, 1.0, 1.0);
        let ex = ExchangeModel::BoundaryFlux(res.clone());
        let axis = g.velocity().unwrap().clone();
        let f1 = res.one_body(&g);
        let m = g.one_particle_cells();
        let shape = LevelShape::single(1, m);
        let f_n: Vec<f64> = (0..m).map(|c| 1.0 + c as f64).collect();
        let out = boundary_flux(&shape, &f_n, &vec![0.0; m * m], &ex, &g).unwrap();
        // Two open faces, each sums (v·n) f°₁(-v) dv over its outgoing cells.
        let per_face: f64 = (0..axis.cells)
            .filter(|&j| axis.center(j) > 0.0)
            .map(|j| axis.center(j) * f1[axis.mirror(j)] * axis.width())
            .sum();
        for (o, v) in out.iter().zip(&f_n) {
            assert!((o + v * 2.0 * 2.0 * per_face).abs() < 1e-13);
        }
        let zero = ExchangeModel::BoundaryFlux(BoundaryReservoir::new(0.0, 1.0, 1.0));
        let f_np1: Vec<f64> = (0..m * m).map(|i| (i % 7) as f64).collect();
        let out = boundary_flux(&shape, &f_n, &f_np1, &zero, &g).unwrap();
        assert!(out.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn boundary_flux_needs_open_face_and_velocity() {
        let ex = ExchangeModel::BoundaryFlux(BoundaryReservoir::new(1.0, 1.0, 1.0));
        let closed = PhaseGrid::new(1, 4, 0.25).unwrap().with_velocity(4, 3.0).unwrap();
        let shape = LevelShape::single(0, 16);
        assert!(matches!(boundary_flux(&shape, &[1.0], &[0.0; 16], &ex, &closed), Err(Error::NoOpenFace)));
        let plain = PhaseGrid::new(1, 4, 0.25).unwrap();
        let shape = LevelShape::single(0, 4);
        assert!(matches!(boundary_flux(&shape, &[1.0], &[0.0; 4], &ex, &plain), Err(Error::MissingVelocityGrid)));
    }

    #[test]
    fn mean_field_force_cases() {
        let g = PhaseGrid::new(1, 9, 1.0 / 9.0)
            .unwrap()
            .with_face(0, Side::Lower, BoundaryKind::OpenWithReservoir)
            .unwrap()
            .with_face(0, Side::Upper, BoundaryKind::OpenWithReservoir)
            .unwrap();
        let ex = ExchangeModel::BoundaryFlux(BoundaryReservoir::new(2.0, 1.0, 1.0));
        assert!(mean_field_force(&ex, &g, &PairPotential::None).unwrap().iter().all(|x| *x == 0.0));
        let v = PairPotential::SoftRepulsive { strength: 1.5, range: 0.3 };
        let f = mean_field_force(&ex, &g, &v).unwrap();
        assert!(f[4].abs() < 1e-12);
        assert!(f[0] > 0.0 && f[8] < 0.0);
        // Closed form: -ρ ∫_q^{q+W} V'(r) dr = ρ (V(q) - V(q + W)), W = range.
        let one = PhaseGrid::new(1, 9, 1.0 / 9.0)
            .unwrap()
            .with_face(0, Side::Lower, BoundaryKind::OpenWithReservoir)
            .unwrap();
        let f = mean_field_force(&ex, &one, &v).unwrap();
        for (s, fs) in f.iter().enumerate() {
            let q = one.spatial_center(s)[0];
            let want = 2.0 * (v.value(q) - v.value(q + 0.3));
            assert!((fs - want).abs() < 1e-12, "{s}: {fs} vs {want}");
            if q > 0.3 {
                assert!(fs.abs() < 1e-10);
            }
        }
        let gauss = PairPotential::Gaussian { strength: 1.0, width: 0.1 };
        assert!(matches!(mean_field_force(&ex, &one, &gauss), Err(Error::InvalidExchange(_))));
        let wide = ExchangeModel::BoundaryFlux(BoundaryReservoir::new(2.0, 1.0, 1.0).with_width(1.0));
        let f = mean_field_force(&wide, &one, &gauss).unwrap();
        let q = one.spatial_center(2)[0];
        assert!((f[2] - 2.0 * (gauss.value(q) - gauss.value(q + 1.0))).abs() < 1e-10);
    }
}
