//! n-particle transport generators: Brownian diffusion, Klein–Kramers
//! (Langevin) and the Liouville operator as its zero-friction limit.

mod generator;
mod spec;
mod stencil;

pub use generator::{assemble_generator, GeneratorMatrix, DEFAULT_GENERATOR_CAP};
pub use spec::{
    Diffusion, ExternalPotential, Friction, PairPotential, TransportMode, TransportSpec,
};
pub(crate) use spec::distance;

use crate::error::{Error, Result};
use crate::fockspace::{LevelShape, PhaseGrid};
use stencil::Stencil;

fn check_len(shape: &LevelShape, f: &[f64]) -> Result<()> {
    if f.len() != shape.len() {
        return Err(Error::DimensionMismatch(format!(
            "level tensor has {} entries, shape expects {}",
            f.len(),
            shape.len()
        )));
    }
    Ok(())
}

/// `D_n f_n`: drift-diffusion with no-flux faces.
pub fn apply_diffusion(
    shape: &LevelShape,
    f: &[f64],
    grid: &PhaseGrid,
    spec: &TransportSpec,
) -> Result<Vec<f64>> {
    check_len(shape, f)?;
    Ok(Stencil::new(grid, spec, shape, TransportMode::Diffusion)?.apply_diffusion(f))
}

/// `K_n f_n` on a one-dimensional phase-space grid.
pub fn apply_klein_kramers(
    shape: &LevelShape,
    f: &[f64],
    grid: &PhaseGrid,
    spec: &TransportSpec,
) -> Result<Vec<f64>> {
    check_len(shape, f)?;
    Ok(Stencil::new(grid, spec, shape, TransportMode::KleinKramers)?.apply_phase(f))
}

/// `Λ_n f_n`: the Klein–Kramers generator with friction and noise removed.
pub fn apply_liouville(
    shape: &LevelShape,
    f: &[f64],
    grid: &PhaseGrid,
    spec: &TransportSpec,
) -> Result<Vec<f64>> {
    check_len(shape, f)?;
    Ok(Stencil::new(grid, spec, shape, TransportMode::Liouville)?.apply_phase(f))
}

/// Dispatches on `mode`; `TransportMode::None` returns zeros.
pub fn apply_transport(
    shape: &LevelShape,
    f: &[f64],
    grid: &PhaseGrid,
    spec: &TransportSpec,
    mode: TransportMode,
) -> Result<Vec<f64>> {
    match mode {
        TransportMode::None => {
            check_len(shape, f)?;
            Ok(vec![0.0; f.len()])
        }
        TransportMode::Diffusion => apply_diffusion(shape, f, grid, spec),
        TransportMode::KleinKramers => apply_klein_kramers(shape, f, grid, spec),
        TransportMode::Liouville => apply_liouville(shape, f, grid, spec),
    }
}

/// Integrated stationarity residual `∫ |A f|` of a level tensor, i.e. the
/// initial rate at which `f` drifts away in total variation.
pub fn stationarity_residual(
    shape: &LevelShape,
    f: &[f64],
    grid: &PhaseGrid,
    spec: &TransportSpec,
    mode: TransportMode,
) -> Result<f64> {
    let out = apply_transport(shape, f, grid, spec, mode)?;
    Ok(out.iter().map(|x| x.abs()).sum::<f64>() * grid.cell_measure().powi(shape.rank() as i32))
}

/// Largest total outgoing rate of any entry of a level, i.e. the largest
/// diagonal magnitude of the level generator.
pub fn max_exit_rate(shape: &LevelShape, grid: &PhaseGrid, spec: &TransportSpec, mode: TransportMode) -> Result<f64> {
    if mode == TransportMode::None {
        return Ok(0.0);
    }
    let stencil = Stencil::new(grid, spec, shape, mode)?;
    let mut worst = 0.0f64;
    for idx in 0..shape.len() {
        let mut total = 0.0;
        stencil.outgoing(idx, mode, &mut |_, r| total += r);
        worst = worst.max(total);
    }
    Ok(worst)
}

/// Largest explicit transport time step for rk4 (before the safety factor):
/// `min(dx²/(2 d D_max), dx/V_max, dv²/(2 D_v), dv/a_max)`.
pub fn transport_time_limit(grid: &PhaseGrid, spec: &TransportSpec, mode: TransportMode) -> f64 {
    let dx = grid.cell_width();
    let mut limit = f64::INFINITY;
    match mode {
        TransportMode::None => {}
        TransportMode::Diffusion => {
            let d = spec.max_diffusion();
            if d > 0.0 {
                limit = limit.min(dx * dx / (2.0 * grid.dim() as f64 * d));
            }
        }
        TransportMode::KleinKramers | TransportMode::Liouville => {
            let axis = grid.velocity().expect("velocity grid");
            let dv = axis.width();
            limit = limit.min(dx / axis.cutoff);
            let eta = if mode == TransportMode::Liouville { 0.0 } else { spec.friction.max() };
            let dvv = eta * spec.kt / (spec.mass * spec.mass);
            if dvv > 0.0 {
                limit = limit.min(dv * dv / (2.0 * dvv));
            }
            let force = (0..grid.spatial_count())
                .map(|s| {
                    (spec.potential.force(grid, s, 0)
                        + spec.extra_force.as_ref().map_or(0.0, |f| f[s]))
                    .abs()
                })
                .fold(0.0, f64::max);
            let accel = force / spec.mass + eta / spec.mass * axis.cutoff;
            if accel > 0.0 {
                limit = limit.min(dv / accel);
            }
        }
    }
    limit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{level_mass, symmetrize, symmetry_defect, BoundaryKind, Side};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_level(shape: &LevelShape, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..shape.len()).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn constant_is_annihilated_without_drift() {
        let g = PhaseGrid::new(2, 3, 0.5).unwrap();
        let shape = LevelShape::single(2, g.one_particle_cells());
        let out = apply_diffusion(&shape, &vec![0.7; shape.len()], &g, &TransportSpec::diffusive(1.3)).unwrap();
        assert!(out.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn two_cell_stencil() {
        let g = PhaseGrid::new(1, 2, 1.0).unwrap();
        let shape = LevelShape::single(1, 2);
        let out = apply_diffusion(&shape, &[1.0, 0.0], &g, &TransportSpec::diffusive(1.0)).unwrap();
        assert_eq!(out, vec![-1.0, 1.0]);
    }

    #[test]
    fn diffusion_conserves_and_keeps_symmetry() {
        let g = PhaseGrid::new(1, 5, 0.2).unwrap();
        let spec = TransportSpec::diffusive(0.8)
            .with_potential(ExternalPotential::Harmonic { stiffness: 4.0, center: [0.4, 0.0, 0.0] })
            .with_pair(PairPotential::SoftRepulsive { strength: 1.0, range: 0.5 });
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=3 {
            let shape = LevelShape::single(n, 5);
            let f = symmetrize(&shape, &random_level(&shape, &mut rng));
            let out = apply_diffusion(&shape, &f, &g, &spec).unwrap();
            assert!(level_mass(&shape, &out, &g).abs() < 1e-12);
            assert!(symmetry_defect(&shape, &out) < 1e-12);
        }
    }

    #[test]
    fn diffusion_rejects_velocity_grid() {
        let g = PhaseGrid::new(1, 4, 1.0).unwrap().with_velocity(4, 3.0).unwrap();
        let shape = LevelShape::single(1, g.one_particle_cells());
        let f = vec![0.0; shape.len()];
        assert!(matches!(
            apply_diffusion(&shape, &f, &g, &TransportSpec::default()),
            Err(Error::UnexpectedVelocityGrid)
        ));
        let plain = PhaseGrid::new(1, 4, 1.0).unwrap();
        let shape = LevelShape::single(1, 4);
        assert!(matches!(
            apply_klein_kramers(&shape, &[0.0; 4], &plain, &TransportSpec::default()),
            Err(Error::MissingVelocityGrid)
        ));
    }

    #[test]
    fn ballistic_single_cell_flux() {
        let g = PhaseGrid::new(1, 4, 0.5).unwrap().with_velocity(4, 2.0).unwrap();
        let spec = TransportSpec::langevin(0.0, 1.0, 1.0);
        let shape = LevelShape::single(1, g.one_particle_cells());
        let j = 3; // v = 1.5
        let v = g.velocity_center(j);
        let mut f = vec![0.0; shape.len()];
        let src = g.join_cell(1, j);
        f[src] = 2.0;
        let out = apply_klein_kramers(&shape, &f, &g, &spec).unwrap();
        let dst = g.join_cell(2, j);
        assert_eq!(out[src], -v / 0.5 * 2.0);
        assert_eq!(out[dst], v / 0.5 * 2.0);
        assert_eq!(out.iter().filter(|x| **x != 0.0).count(), 2);
    }

    #[test]
    fn kk_conserves_mass_with_walls_and_open_faces() {
        let g = PhaseGrid::new(1, 4, 0.25)
            .unwrap()
            .with_velocity(6, 3.0)
            .unwrap()
            .with_face(0, Side::Upper, BoundaryKind::OpenWithReservoir)
            .unwrap();
        let spec = TransportSpec::langevin(1.5, 1.0, 0.5)
            .with_potential(ExternalPotential::Harmonic { stiffness: 2.0, center: [0.5, 0.0, 0.0] });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=2 {
            let shape = LevelShape::single(n, g.one_particle_cells());
            let f = random_level(&shape, &mut rng);
            let kk = apply_klein_kramers(&shape, &f, &g, &spec).unwrap();
            let lv = apply_liouville(&shape, &f, &g, &spec).unwrap();
            assert!(level_mass(&shape, &kk, &g).abs() < 1e-12);
            assert!(level_mass(&shape, &lv, &g).abs() < 1e-12);
        }
    }

    #[test]
    fn liouville_is_frictionless_klein_kramers() {
        let g = PhaseGrid::new(1, 4, 0.25).unwrap().with_velocity(8, 4.0).unwrap();
        let spec = TransportSpec::langevin(2.0, 1.0, 1.0)
            .with_potential(ExternalPotential::Harmonic { stiffness: 1.0, center: [0.3, 0.0, 0.0] });
        let frictionless = TransportSpec { friction: Friction::Constant(0.0), ..spec.clone() };
        let shape = LevelShape::single(1, g.one_particle_cells());
        let f = random_level(&shape, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(
            apply_liouville(&shape, &f, &g, &spec).unwrap(),
            apply_klein_kramers(&shape, &f, &g, &frictionless).unwrap()
        );
    }

    #[test]
    fn free_streaming_keeps_velocity_moments() {
        let g = PhaseGrid::new(1, 6, 0.2).unwrap().with_velocity(8, 4.0).unwrap();
        let spec = TransportSpec::langevin(0.0, 1.0, 1.0);
        let shape = LevelShape::single(1, g.one_particle_cells());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let moments = |out: &[f64], k: i32| -> f64 {
            (0..out.len()).map(|c| out[c] * g.velocity_center(g.split_cell(c).1).powi(k)).sum()
        };
        // Arbitrary density: even moments are untouched by specular walls.
        let f = random_level(&shape, &mut rng);
        let out = apply_liouville(&shape, &f, &g, &spec).unwrap();
        for k in [0, 2, 4, 6] {
            assert!(moments(&out, k).abs() < 1e-11, "moment {k}");
        }
        // Away from the walls every moment is conserved.
        let mut interior = f.clone();
        for j in 0..8 {
            interior[g.join_cell(0, j)] = 0.0;
            interior[g.join_cell(5, j)] = 0.0;
        }
        let out = apply_liouville(&shape, &interior, &g, &spec).unwrap();
        for k in 0..6 {
            assert!(moments(&out, k).abs() < 1e-11, "moment {k}");
        }
    }

    /// `∫ |A ρ|` for the discretised Boltzmann density of a harmonic well.
    fn boltzmann_residual(cells: usize) -> f64 {
        let g = PhaseGrid::new(1, cells, 1.0 / cells as f64).unwrap();
        let spec = TransportSpec::diffusive(1.0)
            .with_potential(ExternalPotential::Harmonic { stiffness: 8.0, center: [0.4, 0.0, 0.0] });
        let shape = LevelShape::single(1, cells);
        let raw: Vec<f64> = (0..cells).map(|s| (-spec.beta() * spec.potential.value(&g, s)).exp()).collect();
        let z: f64 = raw.iter().sum::<f64>() * g.cell_volume();
        let rho: Vec<f64> = raw.iter().map(|x| x / z).collect();
        stationarity_residual(&shape, &rho, &g, &spec, TransportMode::Diffusion).unwrap()
    }

    #[test]
    fn boltzmann_residual_shrinks_under_refinement() {
        let coarse = boltzmann_residual(16);
        let fine = boltzmann_residual(32);
        assert!(coarse > 0.0);
        assert!(fine / coarse < 0.6, "ratio {}", fine / coarse);
    }

    /// `∫ |K ρ|` for uniform-in-space Maxwell–Boltzmann at resolution `cells`.
    pub(crate) fn maxwell_residual(cells: usize, vcells: usize) -> f64 {
        let kt = 1.0;
        let g = PhaseGrid::new(1, cells, 1.0 / cells as f64).unwrap().with_velocity(vcells, 6.0).unwrap();
        let spec = TransportSpec::langevin(1.0, 1.0, kt);
        let shape = LevelShape::single(1, g.one_particle_cells());
        let dv = g.velocity().unwrap().width();
        let mut f = vec![0.0; shape.len()];
        for c in 0..f.len() {
            let v = g.velocity_center(g.split_cell(c).1);
            f[c] = (-0.5 * v * v / kt).exp();
        }
        let z: f64 = f.iter().sum::<f64>() * g.cell_volume() * dv;
        f.iter_mut().for_each(|x| *x /= z);
        stationarity_residual(&shape, &f, &g, &spec, TransportMode::KleinKramers).unwrap()
    }

    #[test]
    fn maxwell_residual_shrinks_under_refinement() {
        let coarse = maxwell_residual(8, 16);
        let fine = maxwell_residual(16, 32);
        assert!(fine / coarse < 0.6, "{coarse} -> {fine}");
    }
}
