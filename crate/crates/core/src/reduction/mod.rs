//! Well-mixed reductions used as oracles: the chemical master equation on
//! copy numbers, its exact stochastic simulation, and the deterministic
//! rate equations.
//!
//! All three are built from the same [`CouplingSpec`] lists the solver and
//! sampler take.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coupling::{CouplingSpec, ExchangeModel, RateField, RateForm, ReactionSpec, Template};
use crate::error::{Error, Result};
use crate::fockspace::Layout;

/// Largest `‖Q t‖₁` handed to the matrix exponential.
const EXP_NORM_CAP: f64 = 1e8;

/// One copy-number channel: species deltas and a propensity.
#[derive(Debug, Clone, PartialEq)]
enum Channel {
    /// `λ₀ n (n - 1) / 2`, one particle of `s` removed.
    Coalesce { s: usize, rate: f64 },
    /// `λ₀ a b`, `a, b` removed and `c` added.
    Combine { a: usize, b: usize, c: usize, rate: f64 },
    /// `k n`, one particle of `s` removed.
    Death { s: usize, rate: f64 },
    /// Constant total rate, one particle of `s` added.
    Birth { s: usize, rate: f64 },
}

impl Channel {
    fn propensity(&self, n: &[f64]) -> f64 {
        match *self {
            Channel::Coalesce { s, rate } => rate * n[s] * (n[s] - 1.0).max(0.0) / 2.0,
            Channel::Combine { a, b, rate, .. } => rate * n[a] * n[b],
            Channel::Death { s, rate } => rate * n[s],
            Channel::Birth { rate, .. } => rate,
        }
    }

    fn delta(&self, species: usize) -> Vec<isize> {
        let mut d = vec![0isize; species];
        match *self {
            Channel::Coalesce { s, .. } | Channel::Death { s, .. } => d[s] -= 1,
            Channel::Combine { a, b, c, .. } => {
                d[a] -= 1;
                d[b] -= 1;
                d[c] += 1;
            }
            Channel::Birth { s, .. } => d[s] += 1,
        }
        d
    }

    fn max_species(&self) -> usize {
        match *self {
            Channel::Coalesce { s, .. } | Channel::Death { s, .. } | Channel::Birth { s, .. } => s,
            Channel::Combine { a, b, c, .. } => a.max(b).max(c),
        }
    }
}

/// The value of a spatially constant field.
fn uniform(field: &RateField, what: &str) -> Result<f64> {
    match field {
        RateField::Constant(k) => Ok(*k),
        RateField::PerCell(v) => {
            let first = v.first().copied().unwrap_or(0.0);
            if v.iter().all(|x| (x - first).abs() <= 1e-12 * first.abs().max(1.0)) {
                Ok(first)
            } else {
                Err(Error::NotWellMixed(format!("{what} varies in space")))
            }
        }
    }
}

fn channels(couplings: &[CouplingSpec], volume: f64) -> Result<Vec<Channel>> {
    let mut out = Vec::new();
    for c in couplings {
        match c {
            CouplingSpec::Reaction(rx) => out.push(reaction_channel(rx, volume)?),
            CouplingSpec::Exchange(ExchangeModel::BlKernel(k)) => {
                out.push(Channel::Death { s: k.species, rate: uniform(&k.kappa_out, "kappa_out")? });
                out.push(Channel::Birth { s: k.species, rate: uniform(&k.kappa_in, "kappa_in")? * volume });
            }
            CouplingSpec::Exchange(ExchangeModel::BoundaryFlux(_)) => {
                return Err(Error::NotWellMixed("boundary flux has no well-mixed reduction".into()))
            }
        }
    }
    Ok(out)
}

fn reaction_channel(rx: &ReactionSpec, volume: f64) -> Result<Channel> {
    let [a, b, c] = rx.species;
    let rate = match &rx.rate {
        RateForm::WellMixed { rate } => *rate,
        RateForm::Field(f) => uniform(f, "rate field")?,
        other => return Err(Error::NotWellMixed(format!("{other:?}"))),
    };
    Ok(match rx.template {
        Template::AaToA => Channel::Coalesce { s: a, rate },
        Template::AbToC => Channel::Combine { a, b, c, rate },
        Template::Decay => Channel::Death { s: a, rate },
        Template::Birth => Channel::Birth { s: c, rate: rate * volume },
    })
}

/// Copy-number master equation `dp/dt = Q p` on the levels of a layout.
/// Transitions leaving the layout are dropped from both the off-diagonal
/// and the diagonal, matching the blocked truncation of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct CmeModel {
    layout: Layout,
    generator: DMatrix<f64>,
}

impl CmeModel {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    /// `Q[(to, from)]`.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Probability vector concentrated on `counts`.
    pub fn point_mass(&self, counts: &[usize]) -> Result<Vec<f64>> {
        let idx = self.layout.index_of(counts).ok_or_else(|| {
            Error::DimensionMismatch(format!("counts {counts:?} outside the layout"))
        })?;
        let mut p = vec![0.0; self.dim()];
        p[idx] = 1.0;
        Ok(p)
    }

    /// Normalised null vector of `Q`, by the same row-replacement solve
    /// as the hierarchy.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut a = self.generator.clone();
        let scale = a.amax().max(1.0);
        for k in 0..d {
            a[(d - 1, k)] = scale;
        }
        let mut b = DVector::zeros(d);
        b[d - 1] = scale;
        let lu = a.full_piv_lu();
        let u = lu.u();
        let (lo, hi) = (0..d).fold((f64::INFINITY, 0.0f64), |(lo, hi), k| {
            let p = u[(k, k)].abs();
            (lo.min(p), hi.max(p))
        });
        let pivot_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
        if !(pivot_ratio > 1e-12) {
            return Err(Error::NonUniqueNullSpace { pivot_ratio });
        }
        let p = lu.solve(&b).ok_or(Error::NonUniqueNullSpace { pivot_ratio })?;
        Ok(p.iter().copied().collect())
    }
}

/// Assembles the well-mixed master equation for `couplings` on `layout`.
/// `volume` is `|Ω|`, entering the birth propensities.
pub fn cme_generator(couplings: &[CouplingSpec], volume: f64, layout: &Layout) -> Result<CmeModel> {
    let chans = channels(couplings, volume)?;
    let species = layout.species();
    if let Some(c) = chans.iter().find(|c| c.max_species() >= species) {
        return Err(Error::InvalidReaction(format!("{c:?} uses a species outside the layout")));
    }
    let d = layout.n_levels();
    let mut q = DMatrix::zeros(d, d);
    for from in 0..d {
        let n: Vec<f64> = layout.counts(from).iter().map(|&k| k as f64).collect();
        for ch in &chans {
            let a = ch.propensity(&n);
            if a == 0.0 {
                continue;
            }
            if let Some(to) = layout.shifted(from, &ch.delta(species)) {
                q[(to, from)] += a;
                q[(from, from)] -= a;
            }
        }
    }
    Ok(CmeModel { layout: layout.clone(), generator: q })
}

/// `e^{Q t} p₀`.
pub fn cme_solve(model: &CmeModel, p0: &[f64], t: f64) -> Result<Vec<f64>> {
    if p0.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!("p0 has {} entries, model {}", p0.len(), model.dim())));
    }
    if t == 0.0 {
        return Ok(p0.to_vec());
    }
    let qt = &model.generator * t;
    let norm = qt.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    if !norm.is_finite() || norm > EXP_NORM_CAP {
        return Err(Error::Overflow(format!("|Q t| = {norm:e} exceeds {EXP_NORM_CAP:e}")));
    }
    let p = qt.exp() * DVector::from_column_slice(p0);
    if !p.iter().all(|x| x.is_finite()) {
        return Err(Error::Overflow(format!("non-finite result at t = {t}")));
    }
    Ok(p.iter().copied().collect())
}

/// Empirical level distribution of an ensemble at a list of times.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    pub times: Vec<f64>,
    /// `probs[k][level]` at `times[k]`.
    pub probs: Vec<Vec<f64>>,
    pub n_paths: usize,
}

impl EmpiricalDistribution {
    /// Binomial standard error of every entry of `probs`.
    pub fn standard_errors(&self) -> Vec<Vec<f64>> {
        let n = self.n_paths.max(1) as f64;
        self.probs
            .iter()
            .map(|row| row.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect())
            .collect()
    }
}

/// RNG of one path: the seed keys the generator, the path index the stream.
pub(crate) fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn draw(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|x| *x > 0.0).unwrap_or(0)
}

/// Gillespie simulation of `model` from `p0`, recording the state of each
/// path at every entry of `times` (sorted, non-negative).
pub fn ssa_checkpoints(
    model: &CmeModel,
    p0: &[f64],
    times: &[f64],
    seed: u64,
    n_paths: usize,
) -> Result<EmpiricalDistribution> {
    let d = model.dim();
    if p0.len() != d {
        return Err(Error::DimensionMismatch(format!("p0 has {} entries, model {d}", p0.len())));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::DimensionMismatch("checkpoint times must be sorted and non-negative".into()));
    }
    let q = &model.generator;
    let paths: Vec<Vec<usize>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path);
            let mut state = draw(p0, &mut rng);
            let mut t = 0.0;
            let mut out = Vec::with_capacity(times.len());
            for &stop in times {
                loop {
                    let exit = -q[(state, state)];
                    if exit <= 0.0 {
                        t = f64::INFINITY;
                        break;
                    }
                    let u: f64 = rng.random();
                    let wait = -(1.0 - u).ln() / exit;
                    if t + wait > stop {
                        // Memoryless: the residual wait is redrawn from `stop`.
                        t = stop;
                        break;
                    }
                    t += wait;
                    let target = rng.random::<f64>() * exit;
                    let mut acc = 0.0;
                    let mut next = state;
                    for to in (0..d).filter(|&to| to != state && q[(to, state)] > 0.0) {
                        acc += q[(to, state)];
                        next = to;
                        if target < acc {
                            break;
                        }
                    }
                    state = next;
                }
                out.push(state);
            }
            out
        })
        .collect();
    let mut probs = vec![vec![0.0; d]; times.len()];
    for path in &paths {
        for (k, &s) in path.iter().enumerate() {
            probs[k][s] += 1.0;
        }
    }
    let n = n_paths.max(1) as f64;
    probs.iter_mut().flatten().for_each(|x| *x /= n);
    Ok(EmpiricalDistribution { times: times.to_vec(), probs, n_paths })
}

/// Gillespie simulation; distribution at `t_final`.
pub fn ssa_run(model: &CmeModel, p0: &[f64], t_final: f64, seed: u64, n_paths: usize) -> Result<EmpiricalDistribution> {
    ssa_checkpoints(model, p0, &[t_final], seed, n_paths)
}

/// Deterministic copy-number trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldTrajectory {
    pub times: Vec<f64>,
    /// `values[k][species]` at `times[k]`.
    pub values: Vec<Vec<f64>>,
}

/// Integrates the rate equations `ṅ = Σ_channels a(n) Δ` from `n0`,
/// where `a` is the continuum propensity (`λ₀ n² / 2` for A + A → A).
/// Classical RK4 with the step tied to the fastest linearised rate.
pub fn mean_field_ode(couplings: &[CouplingSpec], volume: f64, n0: &[f64], times: &[f64]) -> Result<MeanFieldTrajectory> {
    let chans = channels(couplings, volume)?;
    let species = n0.len();
    if let Some(c) = chans.iter().find(|c| c.max_species() >= species) {
        return Err(Error::InvalidReaction(format!("{c:?} uses a species outside n0")));
    }
    let deltas: Vec<Vec<isize>> = chans.iter().map(|c| c.delta(species)).collect();
    let rhs = |n: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; species];
        for (ch, d) in chans.iter().zip(&deltas) {
            let a = match *ch {
                Channel::Coalesce { s, rate } => rate * n[s] * n[s] / 2.0,
                _ => ch.propensity(n),
            };
            for (o, di) in out.iter_mut().zip(d) {
                *o += a * *di as f64;
            }
        }
        out
    };
    let scale = n0.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let stiff: f64 = chans
        .iter()
        .map(|c| match *c {
            Channel::Coalesce { rate, .. } => rate * scale,
            Channel::Combine { rate, .. } => 2.0 * rate * scale,
            Channel::Death { rate, .. } => rate,
            Channel::Birth { .. } => 0.0,
        })
        .sum();
    let mut n = n0.to_vec();
    let mut t = 0.0;
    let mut values = Vec::with_capacity(times.len());
    for &stop in times {
        let span = stop - t;
        if span < 0.0 {
            return Err(Error::DimensionMismatch("output times must be sorted".into()));
        }
        let steps = ((span * stiff / 1e-3).ceil() as usize).max(if span > 0.0 { 16 } else { 0 });
        let h = if steps > 0 { span / steps as f64 } else { 0.0 };
        for _ in 0..steps {
            let k1 = rhs(&n);
            let s: Vec<f64> = n.iter().zip(&k1).map(|(x, k)| x + 0.5 * h * k).collect();
            let k2 = rhs(&s);
            let s: Vec<f64> = n.iter().zip(&k2).map(|(x, k)| x + 0.5 * h * k).collect();
            let k3 = rhs(&s);
            let s: Vec<f64> = n.iter().zip(&k3).map(|(x, k)| x + h * k).collect();
            let k4 = rhs(&s);
            for i in 0..species {
                n[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        t = stop;
        values.push(n.clone());
    }
    Ok(MeanFieldTrajectory { times: times.to_vec(), values })
}
