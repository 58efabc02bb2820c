use crate::error::{Error, Result};
use crate::fockspace::{PhaseGrid, MAX_DIM};

/// Per-species diffusion tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum Diffusion {
    Isotropic(f64),
    Diagonal([f64; MAX_DIM]),
    /// Full symmetric matrix; the stencils only take its diagonal, so
    /// off-diagonal entries must vanish.
    Matrix([[f64; MAX_DIM]; MAX_DIM]),
}

impl Diffusion {
    pub fn along(&self, axis: usize) -> f64 {
        match self {
            Diffusion::Isotropic(d) => *d,
            Diffusion::Diagonal(d) => d[axis],
            Diffusion::Matrix(m) => m[axis][axis],
        }
    }

    pub fn max(&self) -> f64 {
        (0..MAX_DIM).map(|a| self.along(a)).fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Diffusion::Isotropic(d) if *d < 0.0 || !d.is_finite() => {
                Err(Error::InvalidTransport(format!("diffusion {d} is not positive semidefinite")))
            }
            Diffusion::Diagonal(d) if d.iter().any(|x| *x < 0.0 || !x.is_finite()) => {
                Err(Error::InvalidTransport(format!("diffusion {d:?} is not positive semidefinite")))
            }
            Diffusion::Matrix(m) => {
                for i in 0..MAX_DIM {
                    for j in 0..MAX_DIM {
                        if (m[i][j] - m[j][i]).abs() > 1e-14 * (1.0 + m[i][j].abs()) {
                            return Err(Error::InvalidTransport("diffusion matrix not symmetric".into()));
                        }
                    }
                }
                if (0..MAX_DIM).any(|i| m[i][i] < 0.0) || !psd3(m) {
                    return Err(Error::InvalidTransport("diffusion matrix not positive semidefinite".into()));
                }
                if (0..MAX_DIM).any(|i| (0..MAX_DIM).any(|j| i != j && m[i][j] != 0.0)) {
                    return Err(Error::InvalidTransport(
                        "off-diagonal diffusion is not supported by the finite-volume stencil".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Sylvester-style check on the principal minors of a symmetric 3x3 matrix.
fn psd3(m: &[[f64; 3]; 3]) -> bool {
    let tol = -1e-14;
    let m2 = |a: usize, b: usize| m[a][a] * m[b][b] - m[a][b] * m[b][a];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    m2(0, 1) >= tol && m2(0, 2) >= tol && m2(1, 2) >= tol && det >= tol
}

/// One-body potential `U(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ExternalPotential {
    Zero,
    Harmonic { stiffness: f64, center: [f64; MAX_DIM] },
    /// Values per spatial cell.
    Tabulated(Vec<f64>),
}

impl ExternalPotential {
    pub fn value(&self, grid: &PhaseGrid, spatial: usize) -> f64 {
        match self {
            ExternalPotential::Zero => 0.0,
            ExternalPotential::Harmonic { stiffness, center } => {
                let x = grid.spatial_center(spatial);
                0.5 * stiffness
                    * (0..grid.dim()).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>()
            }
            ExternalPotential::Tabulated(values) => values[spatial],
        }
    }

    /// `-∂U/∂x_axis` at the centre of a spatial cell.
    pub fn force(&self, grid: &PhaseGrid, spatial: usize, axis: usize) -> f64 {
        match self {
            ExternalPotential::Zero => 0.0,
            ExternalPotential::Harmonic { stiffness, center } => {
                let x = grid.spatial_center(spatial);
                -stiffness * (x[axis] - center[axis])
            }
            ExternalPotential::Tabulated(values) => {
                let idx = grid.axis_indices(spatial);
                let stride = grid.axis_stride(axis);
                let g = grid.cells_per_axis();
                let dx = grid.cell_width();
                let i = idx[axis];
                if i == 0 {
                    -(values[spatial + stride] - values[spatial]) / dx
                } else if i == g - 1 {
                    -(values[spatial] - values[spatial - stride]) / dx
                } else {
                    -(values[spatial + stride] - values[spatial - stride]) / (2.0 * dx)
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ExternalPotential::Zero)
    }
}

/// Isotropic two-body potential `V(r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairPotential {
    None,
    /// `ε (1 - r/R)^2` for `r < R`, zero beyond.
    SoftRepulsive { strength: f64, range: f64 },
    /// `ε exp(-r^2 / (2 w^2))`.
    Gaussian { strength: f64, width: f64 },
}

impl PairPotential {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            PairPotential::None => 0.0,
            PairPotential::SoftRepulsive { strength, range } => {
                if r < range {
                    strength * (1.0 - r / range).powi(2)
                } else {
                    0.0
                }
            }
            PairPotential::Gaussian { strength, width } => {
                strength * (-0.5 * r * r / (width * width)).exp()
            }
        }
    }

    /// `dV/dr`.
    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            PairPotential::None => 0.0,
            PairPotential::SoftRepulsive { strength, range } => {
                if r < range {
                    -2.0 * strength / range * (1.0 - r / range)
                } else {
                    0.0
                }
            }
            PairPotential::Gaussian { strength, width } => {
                -strength * r / (width * width) * (-0.5 * r * r / (width * width)).exp()
            }
        }
    }

    /// Cut-off beyond which `V` vanishes identically, if any.
    pub fn range(&self) -> Option<f64> {
        match *self {
            PairPotential::None => Some(0.0),
            PairPotential::SoftRepulsive { range, .. } => Some(range),
            PairPotential::Gaussian { .. } => None,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, PairPotential::None)
    }

    /// Force on a particle at `xi` from one at `xj`.
    pub fn force(&self, xi: &[f64; MAX_DIM], xj: &[f64; MAX_DIM], dim: usize) -> [f64; MAX_DIM] {
        let mut d = [0.0; MAX_DIM];
        let mut r2 = 0.0;
        for a in 0..dim {
            d[a] = xi[a] - xj[a];
            r2 += d[a] * d[a];
        }
        let r = r2.sqrt();
        let mut out = [0.0; MAX_DIM];
        if r == 0.0 {
            return out;
        }
        let dv = self.derivative(r);
        for a in 0..dim {
            out[a] = -dv * d[a] / r;
        }
        out
    }
}

pub(crate) fn distance(a: &[f64; MAX_DIM], b: &[f64; MAX_DIM], dim: usize) -> f64 {
    (0..dim).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Friction coefficient `η`. Position dependence is accepted but only the
/// constant case has a closed-form check.
#[derive(Debug, Clone, PartialEq)]
pub enum Friction {
    Constant(f64),
    PerCell(Vec<f64>),
}

impl Friction {
    pub fn at(&self, spatial: usize) -> f64 {
        match self {
            Friction::Constant(eta) => *eta,
            Friction::PerCell(values) => values[spatial],
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Friction::Constant(eta) => *eta,
            Friction::PerCell(values) => values.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Which n-particle transport generator evolves each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    None,
    Diffusion,
    KleinKramers,
    Liouville,
}

/// Drift, diffusion and friction data shared by the solver and sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSpec {
    /// One entry per species; a single entry applies to all species.
    pub diffusion: Vec<Diffusion>,
    pub potential: ExternalPotential,
    pub pair: PairPotential,
    pub friction: Friction,
    pub mass: f64,
    pub kt: f64,
    /// Additional force per spatial cell (axis 0), e.g. a reservoir mean field.
    pub extra_force: Option<Vec<f64>>,
}

impl Default for TransportSpec {
    fn default() -> Self {
        Self {
            diffusion: vec![Diffusion::Isotropic(1.0)],
            potential: ExternalPotential::Zero,
            pair: PairPotential::None,
            friction: Friction::Constant(1.0),
            mass: 1.0,
            kt: 1.0,
            extra_force: None,
        }
    }
}

impl TransportSpec {
    pub fn diffusive(d: f64) -> Self {
        Self { diffusion: vec![Diffusion::Isotropic(d)], ..Self::default() }
    }

    pub fn langevin(friction: f64, mass: f64, kt: f64) -> Self {
        Self { friction: Friction::Constant(friction), mass, kt, ..Self::default() }
    }

    pub fn with_potential(mut self, potential: ExternalPotential) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_pair(mut self, pair: PairPotential) -> Self {
        self.pair = pair;
        self
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.kt
    }

    pub fn diffusion_of(&self, species: usize) -> &Diffusion {
        if self.diffusion.len() == 1 {
            &self.diffusion[0]
        } else {
            &self.diffusion[species]
        }
    }

    pub fn max_diffusion(&self) -> f64 {
        self.diffusion.iter().map(Diffusion::max).fold(0.0, f64::max)
    }

    pub fn validate(&self, grid: &PhaseGrid, species: usize) -> Result<()> {
        if self.diffusion.is_empty() {
            return Err(Error::InvalidTransport("no diffusion entries".into()));
        }
        if self.diffusion.len() != 1 && self.diffusion.len() < species {
            return Err(Error::InvalidTransport(format!(
                "{} diffusion entries for {species} species",
                self.diffusion.len()
            )));
        }
        for d in &self.diffusion {
            d.validate()?;
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidTransport(format!("mass {} must be positive", self.mass)));
        }
        if !(self.kt > 0.0 && self.kt.is_finite()) {
            return Err(Error::InvalidTransport(format!("k_BT {} must be positive", self.kt)));
        }
        let eta_ok = match &self.friction {
            Friction::Constant(eta) => *eta >= 0.0 && eta.is_finite(),
            Friction::PerCell(v) => v.len() == grid.spatial_count() && v.iter().all(|e| *e >= 0.0),
        };
        if !eta_ok {
            return Err(Error::InvalidTransport("friction must be non-negative per spatial cell".into()));
        }
        if let ExternalPotential::Tabulated(values) = &self.potential {
            if values.len() != grid.spatial_count() {
                return Err(Error::InvalidTransport(format!(
                    "tabulated potential has {} values for {} cells",
                    values.len(),
                    grid.spatial_count()
                )));
            }
        }
        if let Some(force) = &self.extra_force {
            if force.len() != grid.spatial_count() {
                return Err(Error::InvalidTransport("extra force must have one value per cell".into()));
            }
        }
        Ok(())
    }
}
