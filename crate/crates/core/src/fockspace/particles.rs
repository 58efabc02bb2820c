use super::grid::{PhaseGrid, MAX_DIM};

/// One particle: identity tag, species, position and (optional) velocity.
///
/// Unused trailing coordinates are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub id: u64,
    pub species: usize,
    pub position: [f64; MAX_DIM],
    pub velocity: Option<[f64; MAX_DIM]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleConfiguration {
    pub particles: Vec<Particle>,
    pub time: f64,
}

impl ParticleConfiguration {
    pub fn new(particles: Vec<Particle>) -> Self {
        Self { particles, time: 0.0 }
    }

    pub fn count(&self, species: usize) -> usize {
        self.particles.iter().filter(|p| p.species == species).count()
    }

    pub fn counts(&self, n_species: usize) -> Vec<usize> {
        let mut out = vec![0; n_species];
        for p in &self.particles {
            if p.species < n_species {
                out[p.species] += 1;
            }
        }
        out
    }

    /// Positions inside the domain and all coordinates finite.
    pub fn is_valid(&self, grid: &PhaseGrid) -> bool {
        self.particles.iter().all(|p| {
            grid.contains(&p.position)
                && p.velocity.is_none_or(|v| v.iter().all(|x| x.is_finite()))
        })
    }

    pub fn next_id(&self) -> u64 {
        self.particles.iter().map(|p| p.id + 1).max().unwrap_or(0)
    }
}
