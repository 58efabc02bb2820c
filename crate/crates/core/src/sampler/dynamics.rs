//! Particle transport integrators.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dynamics;
use crate::error::{Error, Result};
use crate::fockspace::{Particle, PhaseGrid, MAX_DIM};
use crate::transport::{ExternalPotential, TransportSpec};

/// Folds `x` back into `[0, len]` by mirror reflections; the flag is set
/// when an odd number of walls was hit.
pub(crate) fn reflect(x: f64, len: f64) -> (f64, bool) {
    if (0.0..=len).contains(&x) {
        return (x, false);
    }
    let k = (x / len).floor();
    let rest = x - k * len;
    if (k as i64).rem_euclid(2) == 0 {
        (rest, false)
    } else {
        (len - rest, true)
    }
}

/// One-body force along `axis` at `x`, including any extra per-cell force.
fn external_force(spec: &TransportSpec, grid: &PhaseGrid, x: &[f64; MAX_DIM], axis: usize) -> f64 {
    let base = match &spec.potential {
        ExternalPotential::Zero => 0.0,
        ExternalPotential::Harmonic { stiffness, center } => -stiffness * (x[axis] - center[axis]),
        tab => tab.force(grid, grid.locate(x), axis),
    };
    let extra = match (&spec.extra_force, axis) {
        (Some(f), 0) => f[grid.locate(x)],
        _ => 0.0,
    };
    base + extra
}

/// Total force on every particle.
fn forces(particles: &[Particle], spec: &TransportSpec, grid: &PhaseGrid) -> Vec<[f64; MAX_DIM]> {
    let dim = grid.dim();
    let mut out: Vec<[f64; MAX_DIM]> = particles
        .iter()
        .map(|p| {
            let mut f = [0.0; MAX_DIM];
            for (axis, fa) in f.iter_mut().enumerate().take(dim) {
                *fa = external_force(spec, grid, &p.position, axis);
            }
            f
        })
        .collect();
    if !spec.pair.is_none() {
        for i in 0..particles.len() {
            for j in i + 1..particles.len() {
                let fij = spec.pair.force(&particles[i].position, &particles[j].position, dim);
                for a in 0..dim {
                    out[i][a] += fij[a];
                    out[j][a] -= fij[a];
                }
            }
        }
    }
    out
}

fn check(p: &Particle, grid: &PhaseGrid) -> Result<()> {
    let finite = p.position.iter().all(|x| x.is_finite());
    if !finite || !grid.contains(&p.position) {
        return Err(Error::ParticleEscaped { id: p.id, position: p.position });
    }
    Ok(())
}

/// Advances every particle by one transport step of length `dt`.
///
/// Brownian: Euler–Maruyama `x += β D F dt + √(2 D dt) ξ`, folded at the
/// walls. Langevin: BAOAB splitting (half kick, half drift, exact
/// Ornstein–Uhlenbeck, half drift, half kick); a wall hit mirrors the
/// position and flips the velocity. Ballistic: the same splitting with the
/// friction switched off.
pub(crate) fn advance(
    particles: &mut [Particle],
    dynamics: Dynamics,
    spec: &TransportSpec,
    grid: &PhaseGrid,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    let dim = grid.dim();
    let len = grid.length();
    match dynamics {
        Dynamics::Brownian => {
            let f = forces(particles, spec, grid);
            let beta = spec.beta();
            for (p, fp) in particles.iter_mut().zip(&f) {
                let d = spec.diffusion_of(p.species);
                for a in 0..dim {
                    let da = d.along(a);
                    let z: f64 = StandardNormal.sample(rng);
                    let x = p.position[a] + beta * da * fp[a] * dt + (2.0 * da * dt).sqrt() * z;
                    p.position[a] = reflect(x, len).0;
                }
                check(p, grid)?;
            }
        }
        Dynamics::Langevin | Dynamics::Ballistic => {
            let m = spec.mass;
            let drift = |p: &mut Particle, h: f64| {
                let v = p.velocity.as_mut().expect("checked velocities");
                let (x, flip) = reflect(p.position[0] + h * v[0], len);
                p.position[0] = x;
                if flip {
                    v[0] = -v[0];
                }
            };
            let f = forces(particles, spec, grid);
            for (p, fp) in particles.iter_mut().zip(&f) {
                p.velocity.as_mut().expect("checked velocities")[0] += 0.5 * dt * fp[0] / m;
                drift(p, 0.5 * dt);
            }
            if dynamics == Dynamics::Langevin {
                for p in particles.iter_mut() {
                    let eta = spec.friction.at(grid.locate(&p.position));
                    let c = (-eta * dt / m).exp();
                    let z: f64 = StandardNormal.sample(rng);
                    let v = p.velocity.as_mut().expect("checked velocities");
                    v[0] = c * v[0] + ((1.0 - c * c) * spec.kt / m).sqrt() * z;
                }
            }
            for p in particles.iter_mut() {
                drift(p, 0.5 * dt);
            }
            let f = forces(particles, spec, grid);
            for (p, fp) in particles.iter_mut().zip(&f) {
                p.velocity.as_mut().expect("checked velocities")[0] += 0.5 * dt * fp[0] / m;
                check(p, grid)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_and_reports_parity() {
        assert_eq!(reflect(0.3, 1.0), (0.3, false));
        let (x, f) = reflect(1.2, 1.0);
        assert!((x - 0.8).abs() < 1e-15 && f);
        let (x, f) = reflect(-0.25, 1.0);
        assert!((x - 0.25).abs() < 1e-15 && f);
        let (x, f) = reflect(2.5, 1.0);
        assert!((x - 0.5).abs() < 1e-15 && !f);
    }
}
