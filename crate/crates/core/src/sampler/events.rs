//! Poisson-clock reaction and exchange events with per-step thinning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coupling::{
    CouplingSpec, ExchangeModel, Placement, RateField, RateForm, Template, VelocityPolicy,
};
use crate::error::{Error, Result};
use crate::fockspace::{Particle, PhaseGrid, MAX_DIM};
use crate::transport::{distance, TransportSpec};

/// One fired event of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub step: u64,
    /// Index of the channel in the compiled coupling list.
    pub channel: usize,
    /// Ids of the removed particles.
    pub consumed: Vec<u64>,
    /// Id and position of the created particle, if any.
    pub produced: Option<(u64, [f64; MAX_DIM])>,
}

#[derive(Debug, Clone, Copy)]
enum PairRate {
    Constant(f64),
    Doi { rate: f64, radius: f64 },
    Gaussian { rate: f64, width: f64 },
}

impl PairRate {
    fn at(self, r: f64) -> f64 {
        match self {
            PairRate::Constant(k) => k,
            PairRate::Doi { rate, radius } => {
                if r < radius {
                    rate
                } else {
                    0.0
                }
            }
            PairRate::Gaussian { rate, width } => rate * (-r * r / (2.0 * width * width)).exp(),
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Pair { a: usize, b: usize, product: usize, rate: PairRate, placement: Placement, policy: VelocityPolicy },
    Death { species: usize, rate: RateField },
    /// Insertion with total rate `total`; `cumulative` is over spatial cells.
    Birth { species: usize, total: f64, cumulative: Vec<f64>, kt_over_m: f64 },
}

/// One thinning channel.
#[derive(Debug, Clone)]
pub(crate) struct Channel {
    kind: Kind,
}

/// Splits couplings into channels; a bl kernel gives a deletion and an
/// insertion channel, in that order.
pub(crate) fn compile(couplings: &[CouplingSpec], grid: &PhaseGrid, spec: &TransportSpec, species: usize) -> Result<Vec<Channel>> {
    let kt_over_m = spec.kt / spec.mass;
    let mut out = Vec::new();
    let birth = |s: usize, field: &RateField, kt_over_m: f64| {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = (0..grid.spatial_count())
            .map(|c| {
                acc += field.at(c);
                acc
            })
            .collect();
        Kind::Birth { species: s, total: field.integral(grid), cumulative, kt_over_m }
    };
    for c in couplings {
        match c {
            CouplingSpec::Reaction(rx) => {
                rx.validate(grid, species)?;
                let [a, b, product] = rx.species;
                let kind = match (&rx.template, &rx.rate) {
                    (Template::AaToA | Template::AbToC, form) => Kind::Pair {
                        a,
                        b,
                        product,
                        rate: match *form {
                            RateForm::WellMixed { rate } => PairRate::Constant(rate),
                            RateForm::Doi { rate, radius } => PairRate::Doi { rate, radius },
                            RateForm::Gaussian { rate, width } => PairRate::Gaussian { rate, width },
                            RateForm::Field(_) => unreachable!("validated"),
                        },
                        placement: rx.placement,
                        policy: rx.velocity_policy,
                    },
                    (Template::Decay, RateForm::Field(k)) => Kind::Death { species: a, rate: k.clone() },
                    (Template::Birth, RateForm::Field(bf)) => birth(product, bf, kt_over_m),
                    _ => unreachable!("validated"),
                };
                out.push(Channel { kind });
            }
            CouplingSpec::Exchange(ExchangeModel::BlKernel(k)) => {
                if k.species >= species {
                    return Err(Error::InvalidExchange(format!("species {} not simulated", k.species)));
                }
                out.push(Channel { kind: Kind::Death { species: k.species, rate: k.kappa_out.clone() } });
                out.push(Channel { kind: birth(k.species, &k.kappa_in, k.kt_over_m()) });
            }
            CouplingSpec::Exchange(ExchangeModel::BoundaryFlux(_)) => {
                return Err(Error::InvalidExchange("the particle sampler does not simulate boundary reservoirs".into()))
            }
        }
    }
    Ok(out)
}

fn fires(rate: f64, dt: f64, rng: &mut impl Rng) -> bool {
    rate > 0.0 && rng.random::<f64>() < -(-rate * dt).exp_m1()
}

/// Maxwellian velocity restricted to the velocity axis, if the grid has one.
fn thermal_velocity(grid: &PhaseGrid, kt_over_m: f64, rng: &mut impl Rng) -> Option<[f64; MAX_DIM]> {
    let axis = grid.velocity()?;
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let v = z * kt_over_m.sqrt();
        if v.abs() <= axis.cutoff {
            return Some([v, 0.0, 0.0]);
        }
    }
}

fn uniform_in_cell(grid: &PhaseGrid, spatial: usize, rng: &mut impl Rng) -> [f64; MAX_DIM] {
    let idx = grid.axis_indices(spatial);
    let dx = grid.cell_width();
    let mut x = [0.0; MAX_DIM];
    for a in 0..grid.dim() {
        x[a] = (idx[a] as f64 + rng.random::<f64>()) * dx;
    }
    x
}

/// Applies one step of event thinning to `particles` in place.
///
/// Every channel instance fires independently with probability
/// `1 - exp(-Λ dt)`. Firing events are shuffled and accepted greedily, so
/// among events sharing a particle one is kept uniformly at random.
pub(crate) fn apply(
    channels: &[Channel],
    particles: &mut Vec<Particle>,
    next_id: &mut u64,
    grid: &PhaseGrid,
    spec: &TransportSpec,
    dt: f64,
    step: u64,
    rng: &mut impl Rng,
) -> Vec<Event> {
    let dim = grid.dim();
    let mut firing: Vec<(usize, [usize; 2], u8)> = Vec::new();
    for (ci, ch) in channels.iter().enumerate() {
        match &ch.kind {
            Kind::Pair { a, b, rate, .. } => {
                for i in 0..particles.len() {
                    if particles[i].species != *a && particles[i].species != *b {
                        continue;
                    }
                    for j in i + 1..particles.len() {
                        let (si, sj) = (particles[i].species, particles[j].species);
                        let eligible = if a == b { si == *a && sj == *a } else { (si == *a && sj == *b) || (si == *b && sj == *a) };
                        if !eligible {
                            continue;
                        }
                        let r = distance(&particles[i].position, &particles[j].position, dim);
                        if fires(rate.at(r), dt, rng) {
                            firing.push((ci, [i, j], 2));
                        }
                    }
                }
            }
            Kind::Death { species, rate } => {
                for (i, p) in particles.iter().enumerate() {
                    if p.species == *species && fires(rate.at(grid.locate(&p.position)), dt, rng) {
                        firing.push((ci, [i, 0], 1));
                    }
                }
            }
            Kind::Birth { total, .. } => {
                if fires(*total, dt, rng) {
                    firing.push((ci, [0, 0], 0));
                }
            }
        }
    }
    if firing.is_empty() {
        return Vec::new();
    }
    firing.shuffle(rng);
    let mut used = vec![false; particles.len()];
    let mut created = Vec::new();
    let mut events = Vec::new();
    for (ci, idx, arity) in firing {
        let members = &idx[..arity as usize];
        if members.iter().any(|&i| used[i]) {
            continue;
        }
        for &i in members {
            used[i] = true;
        }
        let consumed: Vec<u64> = members.iter().map(|&i| particles[i].id).collect();
        let product = match &channels[ci].kind {
            Kind::Pair { product, rate, placement, policy, .. } => {
                let (p, q) = (&particles[idx[0]], &particles[idx[1]]);
                let position = match (rate, placement) {
                    (PairRate::Constant(_), _) => {
                        let mut x = [0.0; MAX_DIM];
                        for xa in x.iter_mut().take(dim) {
                            *xa = rng.random::<f64>() * grid.length();
                        }
                        x
                    }
                    (_, Placement::Midpoint) => {
                        let mut x = [0.0; MAX_DIM];
                        for k in 0..dim {
                            x[k] = 0.5 * (p.position[k] + q.position[k]);
                        }
                        x
                    }
                    (_, Placement::Segment) => {
                        let u: f64 = rng.random();
                        let mut x = [0.0; MAX_DIM];
                        for k in 0..dim {
                            x[k] = p.position[k] + u * (q.position[k] - p.position[k]);
                        }
                        x
                    }
                };
                let velocity = match policy {
                    _ if grid.velocity().is_none() => None,
                    VelocityPolicy::ResampleMaxwell => thermal_velocity(grid, spec.kt / spec.mass, rng),
                    VelocityPolicy::InheritAverage => {
                        let (vp, vq) = (p.velocity.unwrap_or_default(), q.velocity.unwrap_or_default());
                        Some([0.5 * (vp[0] + vq[0]), 0.0, 0.0])
                    }
                };
                Some((*product, position, velocity))
            }
            Kind::Death { .. } => None,
            Kind::Birth { species, cumulative, kt_over_m, .. } => {
                let u = rng.random::<f64>() * cumulative.last().copied().unwrap_or(0.0);
                let spatial = cumulative.partition_point(|c| *c <= u).min(cumulative.len() - 1);
                let position = uniform_in_cell(grid, spatial, rng);
                Some((*species, position, thermal_velocity(grid, *kt_over_m, rng)))
            }
        };
        let produced = product.map(|(species, position, velocity)| {
            let id = *next_id;
            *next_id += 1;
            created.push(Particle { id, species, position, velocity });
            (id, position)
        });
        events.push(Event { step, channel: ci, consumed, produced });
    }
    let mut k = 0;
    particles.retain(|_| {
        let keep = !used[k];
        k += 1;
        keep
    });
    particles.extend(created);
    events
}
