//! Particle-based stochastic simulation of the hierarchy's process:
//! Brownian or Langevin transport of explicit particles, plus thinned
//! Poisson clocks for reactions and reservoir exchange.
//!
//! Trajectory `i` draws from its own ChaCha8 stream `(seed, i)`, and the
//! ensemble is reduced in trajectory order, so results do not depend on the
//! thread count. Particles are kept in a canonical order fixed by their
//! physical coordinates, so the draws never depend on particle labels.

mod dynamics;
mod events;

pub use events::Event;

use std::cmp::Ordering;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::coupling::CouplingSpec;
use crate::error::{Error, Result};
use crate::fockspace::{marginal_copy_number, FockDensity, Layout, Particle, ParticleConfiguration, PhaseGrid, MAX_DIM, MAX_RANK};
use crate::reduction::path_rng;
use crate::solver::schedule;
use crate::transport::TransportSpec;
use events::Channel;

/// Particle transport integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    /// Overdamped Euler–Maruyama; needs a grid without velocity axis.
    Brownian,
    /// BAOAB Langevin splitting; needs a velocity axis.
    Langevin,
    /// Zero-friction Langevin.
    Ballistic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Fixed(ParticleConfiguration),
    /// Each trajectory draws its configuration from the density.
    Density(FockDensity),
}

#[derive(Debug, Clone)]
pub struct SamplerRun {
    pub grid: PhaseGrid,
    pub transport: TransportSpec,
    pub dynamics: Dynamics,
    pub couplings: Vec<CouplingSpec>,
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub n_trajectories: usize,
    pub initial: InitialCondition,
    /// Copy-number bins of the report; counts beyond the caps are overflow.
    pub layout: Layout,
    /// Number of checkpoints after `t = 0`.
    pub outputs: usize,
}

impl SamplerRun {
    pub fn new(
        grid: PhaseGrid,
        transport: TransportSpec,
        dynamics: Dynamics,
        couplings: Vec<CouplingSpec>,
        initial: InitialCondition,
        layout: Layout,
    ) -> Self {
        Self {
            grid,
            transport,
            dynamics,
            couplings,
            dt: 0.01,
            t_final: 0.0,
            seed: 0,
            n_trajectories: 0,
            initial,
            layout,
            outputs: 10,
        }
    }

    pub fn with_time(mut self, t_final: f64, dt: f64) -> Self {
        self.t_final = t_final;
        self.dt = dt;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trajectories(mut self, n: usize) -> Self {
        self.n_trajectories = n;
        self
    }

    pub fn with_outputs(mut self, outputs: usize) -> Self {
        self.outputs = outputs;
        self
    }
}

/// Ensemble statistics of a [`SamplerRun`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnsembleReport {
    pub times: Vec<f64>,
    /// `probs[k][level]`: fraction of trajectories on each layout level.
    pub probs: Vec<Vec<f64>>,
    /// Fraction of trajectories beyond the layout caps.
    pub overflow: Vec<f64>,
    pub n_trajectories: usize,
    /// Mean number of particles per one-particle cell per unit cell
    /// measure at `t_final`, one field per species.
    pub density: Vec<Vec<f64>>,
    /// Fired events per channel, summed over trajectories.
    pub event_counts: Vec<u64>,
    /// SHA-256 over the per-trajectory event-log digests, in order.
    pub digest: String,
}

impl EnsembleReport {
    /// Binomial standard error of every entry of `probs`.
    pub fn standard_errors(&self) -> Vec<Vec<f64>> {
        let n = self.n_trajectories.max(1) as f64;
        self.probs
            .iter()
            .map(|row| row.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.n_trajectories == 0
    }
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Configuration at each checkpoint, `t = 0` first.
    pub snapshots: Vec<ParticleConfiguration>,
    pub events: Vec<Event>,
}

fn cmp_f64s(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Sorts particles by species, then position, velocity and finally id.
pub fn canonical_order(particles: &mut [Particle]) {
    particles.sort_by(|p, q| {
        p.species
            .cmp(&q.species)
            .then_with(|| cmp_f64s(&p.position, &q.position))
            .then_with(|| cmp_f64s(&p.velocity.unwrap_or_default(), &q.velocity.unwrap_or_default()))
            .then_with(|| p.id.cmp(&q.id))
    });
}

/// Cumulative tables for drawing configurations from a density.
#[derive(Debug, Clone)]
struct DensityDraw {
    level_cumulative: Vec<f64>,
    entry_cumulative: Vec<Vec<f64>>,
    density: FockDensity,
}

impl DensityDraw {
    fn new(f: &FockDensity, grid: &PhaseGrid) -> Result<Self> {
        let p = marginal_copy_number(f, grid)?;
        if p.iter().any(|x| *x < 0.0) || f.min_entry() < 0.0 {
            return Err(Error::DimensionMismatch("initial density has negative entries".into()));
        }
        let mut acc = 0.0;
        let level_cumulative = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        let entry_cumulative = (0..f.n_levels())
            .map(|idx| {
                let mut acc = 0.0;
                f.level(idx)
                    .iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Self { level_cumulative, entry_cumulative, density: f.clone() })
    }

    fn pick(cumulative: &[f64], rng: &mut impl Rng) -> usize {
        let total = cumulative.last().copied().unwrap_or(0.0);
        let u = rng.random::<f64>() * total;
        cumulative.partition_point(|c| *c <= u).min(cumulative.len().saturating_sub(1))
    }

    fn draw(&self, grid: &PhaseGrid, rng: &mut impl Rng) -> ParticleConfiguration {
        let level = Self::pick(&self.level_cumulative, rng);
        let shape = self.density.shape(level);
        let flat = Self::pick(&self.entry_cumulative[level], rng);
        let mut digits = [0usize; MAX_RANK];
        shape.decode(flat, &mut digits);
        let dx = grid.cell_width();
        let particles = (0..shape.rank())
            .map(|slot| {
                let (spatial, j) = grid.split_cell(digits[slot]);
                let idx = grid.axis_indices(spatial);
                let mut position = [0.0; MAX_DIM];
                for a in 0..grid.dim() {
                    position[a] = (idx[a] as f64 + rng.random::<f64>()) * dx;
                }
                let velocity = grid.velocity().map(|axis| {
                    let lo = axis.center(j) - 0.5 * axis.width();
                    [lo + rng.random::<f64>() * axis.width(), 0.0, 0.0]
                });
                Particle { id: slot as u64, species: shape.species_of_slot(slot), position, velocity }
            })
            .collect();
        ParticleConfiguration::new(particles)
    }
}

/// A run compiled into channels and step schedule.
#[derive(Debug, Clone)]
pub struct Sampler {
    run: SamplerRun,
    channels: Vec<Channel>,
    draw: Option<DensityDraw>,
    outputs: usize,
    per_output: usize,
    dt: f64,
}

impl Sampler {
    pub fn new(run: &SamplerRun) -> Result<Self> {
        let species = run.layout.species();
        run.transport.validate(&run.grid, species)?;
        match (run.dynamics, run.grid.has_velocity()) {
            (Dynamics::Brownian, true) => return Err(Error::UnexpectedVelocityGrid),
            (Dynamics::Langevin | Dynamics::Ballistic, false) => return Err(Error::MissingVelocityGrid),
            _ => {}
        }
        if !(run.dt > 0.0 && run.dt.is_finite()) {
            return Err(Error::StabilityBound { dt: run.dt, bound: f64::INFINITY });
        }
        if !(run.t_final >= 0.0 && run.t_final.is_finite()) {
            return Err(Error::DimensionMismatch(format!("t_final {} must be non-negative", run.t_final)));
        }
        let channels = events::compile(&run.couplings, &run.grid, &run.transport, species)?;
        let draw = match &run.initial {
            InitialCondition::Fixed(cfg) => {
                if !cfg.is_valid(&run.grid) || cfg.particles.iter().any(|p| p.species >= species) {
                    return Err(Error::DimensionMismatch("initial configuration outside the domain or layout".into()));
                }
                if run.grid.has_velocity() && cfg.particles.iter().any(|p| p.velocity.is_none()) {
                    return Err(Error::MissingVelocityGrid);
                }
                None
            }
            InitialCondition::Density(f) => {
                if f.layout().species() != species {
                    return Err(Error::DimensionMismatch("initial density species differ from the layout".into()));
                }
                Some(DensityDraw::new(f, &run.grid)?)
            }
        };
        let (outputs, per_output, dt) = if run.t_final > 0.0 {
            schedule(run.t_final, run.dt, run.outputs)
        } else {
            (0, 0, run.dt)
        };
        Ok(Self { run: run.clone(), channels, draw, outputs, per_output, dt })
    }

    /// Step actually taken: `t_final` divided into a whole number of steps
    /// per checkpoint, never larger than the requested `dt`.
    pub fn step_size(&self) -> f64 {
        self.dt
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        let mut t = vec![0.0];
        t.extend((1..=self.outputs).map(|k| self.run.t_final * k as f64 / self.outputs as f64));
        t
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Initial configuration of trajectory `index`, canonically ordered.
    fn initial(&self, rng: &mut impl Rng) -> ParticleConfiguration {
        let mut cfg = match (&self.run.initial, &self.draw) {
            (_, Some(d)) => d.draw(&self.run.grid, rng),
            (InitialCondition::Fixed(cfg), None) => cfg.clone(),
            (InitialCondition::Density(_), None) => unreachable!("draw table built in new"),
        };
        canonical_order(&mut cfg.particles);
        cfg.time = 0.0;
        cfg
    }

    /// One transport step.
    pub fn step_transport(&self, cfg: &mut ParticleConfiguration, dt: f64, rng: &mut impl Rng) -> Result<()> {
        dynamics::advance(&mut cfg.particles, self.run.dynamics, &self.run.transport, &self.run.grid, dt, rng)
    }

    /// One event-thinning step; `next_id` is the id given to the next product.
    pub fn step_events(
        &self,
        cfg: &mut ParticleConfiguration,
        dt: f64,
        step: u64,
        next_id: &mut u64,
        rng: &mut impl Rng,
    ) -> Vec<Event> {
        events::apply(&self.channels, &mut cfg.particles, next_id, &self.run.grid, &self.run.transport, dt, step, rng)
    }

    /// Runs trajectory `index`, handing each checkpoint configuration and
    /// each event to the callbacks.
    fn simulate(
        &self,
        index: u64,
        mut on_checkpoint: impl FnMut(&ParticleConfiguration),
        mut on_event: impl FnMut(&Event),
    ) -> Result<()> {
        let mut rng: ChaCha8Rng = path_rng(self.run.seed, index);
        let mut cfg = self.initial(&mut rng);
        let mut next_id = cfg.next_id();
        on_checkpoint(&cfg);
        let mut step = 0u64;
        for out in 1..=self.outputs {
            for _ in 0..self.per_output {
                step += 1;
                self.step_transport(&mut cfg, self.dt, &mut rng)?;
                for e in self.step_events(&mut cfg, self.dt, step, &mut next_id, &mut rng) {
                    on_event(&e);
                }
                cfg.time = step as f64 * self.dt;
            }
            if out == self.outputs {
                cfg.time = self.run.t_final;
            }
            on_checkpoint(&cfg);
        }
        Ok(())
    }

    /// Full record of trajectory `index`.
    pub fn trajectory(&self, index: u64) -> Result<Trajectory> {
        let mut snapshots = Vec::new();
        let mut events = Vec::new();
        self.simulate(index, |c| snapshots.push(c.clone()), |e| events.push(e.clone()))?;
        Ok(Trajectory { snapshots, events })
    }

    fn summary(&self, index: u64) -> Result<Summary> {
        let layout = &self.run.layout;
        let species = layout.species();
        let mut levels = Vec::with_capacity(self.outputs + 1);
        let mut last = Vec::new();
        let mut counts = vec![0u64; self.channels.len()];
        let mut hasher = Sha256::new();
        self.simulate(
            index,
            |c| {
                levels.push(layout.index_of(&c.counts(species)));
                last = c
                    .particles
                    .iter()
                    .map(|p| {
                        let j = p.velocity.map_or(0, |v| self.run.grid.locate_velocity(v[0]));
                        (p.species, self.run.grid.join_cell(self.run.grid.locate(&p.position), j))
                    })
                    .collect();
            },
            |e| {
                counts[e.channel] += 1;
                hash_event(&mut hasher, e);
            },
        )?;
        Ok(Summary { levels, last, counts, digest: hasher.finalize().into() })
    }
}

struct Summary {
    levels: Vec<Option<usize>>,
    last: Vec<(usize, usize)>,
    counts: Vec<u64>,
    digest: [u8; 32],
}

fn hash_event(h: &mut Sha256, e: &Event) {
    h.update(e.step.to_le_bytes());
    h.update((e.channel as u64).to_le_bytes());
    for id in &e.consumed {
        h.update(id.to_le_bytes());
    }
    if let Some((id, x)) = &e.produced {
        h.update(id.to_le_bytes());
        for c in x {
            h.update(c.to_bits().to_le_bytes());
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Simulates `run.n_trajectories` independent trajectories.
pub fn ensemble_run(run: &SamplerRun) -> Result<EnsembleReport> {
    if run.n_trajectories == 0 {
        return Ok(EnsembleReport { digest: hex(&Sha256::digest(b"")), ..EnsembleReport::default() });
    }
    let sampler = Sampler::new(run)?;
    let summaries: Vec<Summary> =
        (0..run.n_trajectories as u64).into_par_iter().map(|i| sampler.summary(i)).collect::<Result<_>>()?;
    let times = sampler.checkpoint_times();
    let n_levels = run.layout.n_levels();
    let n = run.n_trajectories as f64;
    let mut probs = vec![vec![0.0; n_levels]; times.len()];
    let mut overflow = vec![0.0; times.len()];
    let cells = run.grid.one_particle_cells();
    let mut density = vec![vec![0.0; cells]; run.layout.species()];
    let mut event_counts = vec![0u64; sampler.n_channels()];
    let mut hasher = Sha256::new();
    for s in &summaries {
        for (k, lvl) in s.levels.iter().enumerate() {
            match lvl {
                Some(i) => probs[k][*i] += 1.0,
                None => overflow[k] += 1.0,
            }
        }
        for &(sp, c) in &s.last {
            density[sp][c] += 1.0;
        }
        for (a, b) in event_counts.iter_mut().zip(&s.counts) {
            *a += b;
        }
        hasher.update(s.digest);
    }
    probs.iter_mut().flatten().for_each(|x| *x /= n);
    overflow.iter_mut().for_each(|x| *x /= n);
    let w = run.grid.cell_measure();
    density.iter_mut().flatten().for_each(|x| *x /= n * w);
    Ok(EnsembleReport {
        times,
        probs,
        overflow,
        n_trajectories: run.n_trajectories,
        density,
        event_counts,
        digest: hex(&hasher.finalize()),
    })
}

/// One transport step of a configuration under `run`'s dynamics.
pub fn step_transport(cfg: &ParticleConfiguration, run: &SamplerRun, dt: f64, rng: &mut ChaCha8Rng) -> Result<ParticleConfiguration> {
    let sampler = Sampler::new(run)?;
    let mut out = cfg.clone();
    sampler.step_transport(&mut out, dt, rng)?;
    out.time += dt;
    Ok(out)
}

/// One event step of a configuration under `run`'s couplings.
pub fn step_events(
    cfg: &ParticleConfiguration,
    run: &SamplerRun,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ParticleConfiguration, Vec<Event>)> {
    let sampler = Sampler::new(run)?;
    let mut out = cfg.clone();
    let mut next_id = out.next_id();
    let events = sampler.step_events(&mut out, dt, 0, &mut next_id, rng);
    Ok((out, events))
}
