//! Particle-number-changing couplings between levels: reactions,
//! reservoir exchange and open-boundary flux, plus the probability
//! conservation audit.
//!
//! A coupling whose target level lies outside the layout is blocked: its
//! loss is not applied and the would-be flux is reported as leakage, so a
//! truncated hierarchy stays closed.

mod bimolecular;
mod exchange;
mod kernel;
mod reaction;

pub use bimolecular::{gain_aa, gain_abc, loss_aa, loss_abc};
pub use exchange::{
    boundary_flux, check_gc_balance, mean_field_force, BlKernel, BoundaryReservoir, ExchangeModel,
    PairModel,
};
pub use reaction::{Placement, RateField, RateForm, ReactionSpec, Template, VelocityPolicy};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fockspace::{symmetrize, total_mass, FockDensity, Layout, LevelShape, PhaseGrid};
use crate::transport::TransportSpec;
use bimolecular::PairOp;
use exchange::{BirthOp, BoundaryOp, DeathOp};

/// One entry of a problem's coupling list.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    Reaction(ReactionSpec),
    Exchange(ExchangeModel),
}

/// A linear operator between the levels of a hierarchy, split into gain
/// and loss. `loss_level` adds the (non-negative) outflux of a level.
pub trait Coupling: Sync {
    fn layout(&self) -> &Layout;

    fn gain_level(&self, f: &FockDensity, idx: usize, out: &mut [f64], scale: f64);

    fn loss_level(&self, f: &FockDensity, idx: usize, out: &mut [f64], scale: f64);

    /// Adds `(gain - loss)` of level `idx` into `out`.
    fn apply_level(&self, f: &FockDensity, idx: usize, out: &mut [f64]) {
        self.gain_level(f, idx, out, 1.0);
        self.loss_level(f, idx, out, -1.0);
    }

    /// Probability rate blocked at the truncation edge.
    fn leakage(&self, _f: &FockDensity) -> f64 {
        0.0
    }

    /// Upper bound on the total exit rate of any configuration.
    fn max_exit_rate(&self) -> f64;
}

/// `Q f` over all levels; levels are evaluated in parallel.
pub fn apply_coupling(q: &dyn Coupling, f: &FockDensity) -> FockDensity {
    let levels: Vec<Vec<f64>> = (0..f.n_levels())
        .into_par_iter()
        .map(|idx| {
            let mut out = vec![0.0; f.level(idx).len()];
            q.apply_level(f, idx, &mut out);
            out
        })
        .collect();
    let mut out = f.zeros_like();
    for (idx, level) in levels.into_iter().enumerate() {
        out.level_mut(idx).copy_from_slice(&level);
    }
    out
}

#[derive(Debug, Clone)]
enum Term {
    Pair(PairOp),
    Death(DeathOp),
    Birth(BirthOp),
    Boundary(BoundaryOp),
}

/// Couplings compiled against one grid and layout, kernels cached.
#[derive(Debug, Clone)]
pub struct Assembly {
    layout: Layout,
    cells: usize,
    cell_measure: f64,
    terms: Vec<Term>,
}

impl Assembly {
    pub fn new(couplings: &[CouplingSpec], grid: &PhaseGrid, spec: &TransportSpec, layout: &Layout) -> Result<Self> {
        let species = layout.species();
        let kt_over_m = spec.kt / spec.mass;
        let mut terms = Vec::new();
        for c in couplings {
            match c {
                CouplingSpec::Reaction(rx) => {
                    rx.validate(grid, species)?;
                    terms.push(match (rx.template, &rx.rate) {
                        (Template::AaToA | Template::AbToC, _) => Term::Pair(PairOp::new(rx, grid, kt_over_m)),
                        (Template::Decay, RateForm::Field(k)) => Term::Death(DeathOp::new(rx.species[0], k, grid)),
                        (Template::Birth, RateForm::Field(b)) => {
                            Term::Birth(BirthOp::new(rx.species[2], b, grid, kt_over_m))
                        }
                        _ => unreachable!("validated"),
                    });
                }
                CouplingSpec::Exchange(ex) => {
                    ex.validate(grid)?;
                    match ex {
                        ExchangeModel::BlKernel(k) => {
                            if k.species >= species {
                                return Err(Error::InvalidExchange(format!(
                                    "species {} not in a {species}-species layout",
                                    k.species
                                )));
                            }
                            terms.push(Term::Death(DeathOp::new(k.species, &k.kappa_out, grid)));
                            terms.push(Term::Birth(BirthOp::new(k.species, &k.kappa_in, grid, k.kt_over_m())));
                        }
                        ExchangeModel::BoundaryFlux(res) => {
                            if species != 1 {
                                return Err(Error::InvalidExchange(
                                    "boundary flux is implemented for single-species hierarchies".into(),
                                ));
                            }
                            terms.push(Term::Boundary(BoundaryOp::new(res, grid)?));
                        }
                    }
                }
            }
        }
        Ok(Self {
            layout: layout.clone(),
            cells: grid.one_particle_cells(),
            cell_measure: grid.cell_measure(),
            terms,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `true` when an open-boundary exchange term is present.
    pub fn has_boundary_exchange(&self) -> bool {
        self.terms.iter().any(|t| matches!(t, Term::Boundary(_)))
    }

    /// Level indices reachable in one coupling event from level `idx`.
    pub fn successors(&self, idx: usize) -> Vec<usize> {
        let counts = self.layout.counts(idx);
        let mut out = Vec::new();
        for t in &self.terms {
            let next = match t {
                Term::Pair(op) => op.target_counts(&counts),
                Term::Death(op) => shift(&counts, op.species, -1),
                Term::Birth(op) => shift(&counts, op.species, 1),
                Term::Boundary(_) => {
                    out.extend(shift(&counts, 0, 1).and_then(|c| self.layout.index_of(&c)));
                    shift(&counts, 0, -1)
                }
            };
            if let Some(i) = next.and_then(|c| self.layout.index_of(&c)) {
                out.push(i);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn shape(&self, counts: Vec<usize>) -> LevelShape {
        LevelShape::new(counts, self.cells)
    }

    fn mass(&self, shape: &LevelShape, data: &[f64]) -> f64 {
        data.iter().sum::<f64>() * self.cell_measure.powi(shape.rank() as i32)
    }
}

fn shift(counts: &[usize], s: usize, delta: isize) -> Option<Vec<usize>> {
    let mut c = counts.to_vec();
    c[s] = c[s].checked_add_signed(delta)?;
    Some(c)
}

impl Coupling for Assembly {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn gain_level(&self, f: &FockDensity, idx: usize, out: &mut [f64], scale: f64) {
        let counts = self.layout.counts(idx);
        let tgt = self.shape(counts.clone());
        for t in &self.terms {
            match t {
                Term::Pair(op) => {
                    if let Some(src) = op.source_counts(&counts).and_then(|c| self.layout.index_of(&c)) {
                        op.gain(&f.shape(src), f.level(src), &tgt, out, scale);
                    }
                }
                Term::Death(op) => {
                    if let Some(src) = shift(&counts, op.species, 1).and_then(|c| self.layout.index_of(&c)) {
                        op.gain(&f.shape(src), f.level(src), &tgt, out, scale);
                    }
                }
                Term::Birth(op) => {
                    if let Some(src) = shift(&counts, op.species, -1).and_then(|c| self.layout.index_of(&c)) {
                        op.gain(&f.shape(src), f.level(src), &tgt, out, scale);
                    }
                }
                Term::Boundary(op) => {
                    if let Some(up) = shift(&counts, 0, 1).and_then(|c| self.layout.index_of(&c)) {
                        op.gain(tgt.rank(), f.level(up), self.cells, out, scale);
                    }
                }
            }
        }
    }

    fn loss_level(&self, f: &FockDensity, idx: usize, out: &mut [f64], scale: f64) {
        let counts = self.layout.counts(idx);
        let shape = self.shape(counts.clone());
        let data = f.level(idx);
        for t in &self.terms {
            match t {
                Term::Pair(op) => {
                    if op.target_counts(&counts).and_then(|c| self.layout.index_of(&c)).is_some() {
                        op.loss(&shape, data, out, scale);
                    }
                }
                Term::Death(op) => op.loss(&shape, data, out, scale),
                Term::Birth(op) => {
                    if shift(&counts, op.species, 1).and_then(|c| self.layout.index_of(&c)).is_some() {
                        op.loss(data, out, scale);
                    }
                }
                Term::Boundary(op) => {
                    if shift(&counts, 0, 1).and_then(|c| self.layout.index_of(&c)).is_some() {
                        op.loss(shape.rank(), data, out, scale);
                    }
                }
            }
        }
    }

    fn leakage(&self, f: &FockDensity) -> f64 {
        let mut total = 0.0;
        for idx in 0..self.layout.n_levels() {
            let counts = self.layout.counts(idx);
            let shape = self.shape(counts.clone());
            let data = f.level(idx);
            for t in &self.terms {
                match t {
                    Term::Pair(op) => {
                        if let Some(c) = op.target_counts(&counts) {
                            if self.layout.index_of(&c).is_none() {
                                total += op.loss_mass(&shape, data);
                            }
                        }
                    }
                    Term::Birth(op) => {
                        if shift(&counts, op.species, 1).and_then(|c| self.layout.index_of(&c)).is_none() {
                            total += op.total() * self.mass(&shape, data);
                        }
                    }
                    Term::Boundary(op) => {
                        if shift(&counts, 0, 1).and_then(|c| self.layout.index_of(&c)).is_none() {
                            total += (shape.rank() + 1) as f64 * op.influx() * self.mass(&shape, data);
                        }
                    }
                    Term::Death(_) => {}
                }
            }
        }
        total
    }

    fn max_exit_rate(&self) -> f64 {
        (0..self.layout.n_levels())
            .map(|idx| {
                let counts = self.layout.counts(idx);
                let rank: usize = counts.iter().sum();
                self.terms
                    .iter()
                    .map(|t| match t {
                        Term::Pair(op) => op.pair_count(&counts) as f64 * op.max_rate(),
                        Term::Death(op) => counts[op.species] as f64 * op.max_rate(),
                        Term::Birth(op) => op.total(),
                        Term::Boundary(op) => (rank + 1) as f64 * op.influx(),
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// A coupling with its gain removed; useful to show the audit detects
/// non-conserving assemblies.
pub struct LossOnly<'a>(pub &'a dyn Coupling);

impl Coupling for LossOnly<'_> {
    fn layout(&self) -> &Layout {
        self.0.layout()
    }

    fn gain_level(&self, _f: &FockDensity, _idx: usize, _out: &mut [f64], _scale: f64) {}

    fn loss_level(&self, f: &FockDensity, idx: usize, out: &mut [f64], scale: f64) {
        self.0.loss_level(f, idx, out, scale);
    }

    fn max_exit_rate(&self) -> f64 {
        self.0.max_exit_rate()
    }
}

/// Max over probes of `|Σ_n ∫ (Q η)_n|`.
pub fn audit_conservation(q: &dyn Coupling, grid: &PhaseGrid, probes: &[FockDensity]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for probe in probes {
        if probe.layout() != q.layout() {
            return Err(Error::DimensionMismatch("probe layout differs from the coupling layout".into()));
        }
        let inc = apply_coupling(q, probe);
        worst = worst.max(total_mass(&inc, grid)?.abs());
    }
    Ok(worst)
}

/// Random symmetric unit-mass densities, probe `i` supported on level
/// `i mod n_levels`.
pub fn random_probes(layout: &Layout, grid: &PhaseGrid, count: usize, seed: u64) -> Result<Vec<FockDensity>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut f = FockDensity::zeros(layout.clone(), grid)?;
        let idx = i % layout.n_levels();
        let shape = f.shape(idx);
        let raw: Vec<f64> = (0..shape.len()).map(|_| rng.random::<f64>()).collect();
        let sym = symmetrize(&shape, &raw);
        let mass = sym.iter().sum::<f64>() * grid.cell_measure().powi(shape.rank() as i32);
        for (dst, v) in f.level_mut(idx).iter_mut().zip(sym) {
            *dst = v / mass;
        }
        out.push(f);
    }
    Ok(out)
}

/// The bl-kernel increment `Q f` over all levels.
pub fn bl_apply(f: &FockDensity, ex: &ExchangeModel, grid: &PhaseGrid, spec: &TransportSpec) -> Result<FockDensity> {
    if !matches!(ex, ExchangeModel::BlKernel(_)) {
        return Err(Error::InvalidExchange("bl_apply needs a bl-kernel".into()));
    }
    let asm = Assembly::new(&[CouplingSpec::Exchange(ex.clone())], grid, spec, f.layout())?;
    Ok(apply_coupling(&asm, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{marginal_copy_number, symmetry_defect};

    fn grid() -> PhaseGrid {
        PhaseGrid::new(1, 3, 1.0 / 3.0).unwrap()
    }

    #[test]
    fn audit_passes_for_closed_couplings() {
        let g = grid();
        let spec = TransportSpec::default();
        let cases: Vec<(Layout, Vec<CouplingSpec>)> = vec![
            (
                Layout::single(4),
                vec![CouplingSpec::Reaction(ReactionSpec::aa_to_a(RateForm::Doi { rate: 2.0, radius: 0.4 }))],
            ),
            (
                Layout::multi(vec![2, 2, 2]).unwrap(),
                vec![CouplingSpec::Reaction(ReactionSpec::ab_to_c(RateForm::Gaussian { rate: 1.0, width: 0.3 }))],
            ),
            (
                Layout::single(4),
                vec![CouplingSpec::Exchange(ExchangeModel::BlKernel(BlKernel::new(
                    RateField::PerCell(vec![0.5, 1.0, 0.2]),
                    RateField::Constant(2.0),
                    1.0,
                    0.0,
                )))],
            ),
        ];
        for (layout, couplings) in cases {
            let asm = Assembly::new(&couplings, &g, &spec, &layout).unwrap();
            let probes = random_probes(&layout, &g, 50, 3).unwrap();
            let r = audit_conservation(&asm, &g, &probes).unwrap();
            assert!(r < 1e-10, "{couplings:?}: {r}");
            let broken = audit_conservation(&LossOnly(&asm), &g, &probes).unwrap();
            assert!(broken > 1e-3);
        }
    }

    #[test]
    fn zero_coupling_audits_to_zero() {
        let g = grid();
        let layout = Layout::single(2);
        let asm = Assembly::new(&[], &g, &TransportSpec::default(), &layout).unwrap();
        let probes = random_probes(&layout, &g, 5, 1).unwrap();
        assert_eq!(audit_conservation(&asm, &g, &probes).unwrap(), 0.0);
    }

    #[test]
    fn loss_only_audit_equals_loss_mass() {
        let g = grid();
        let layout = Layout::single(3);
        let rx = ReactionSpec::aa_to_a(RateForm::WellMixed { rate: 1.5 });
        let asm = Assembly::new(&[CouplingSpec::Reaction(rx)], &g, &TransportSpec::default(), &layout).unwrap();
        let probes = random_probes(&layout, &g, 4, 2).unwrap();
        // Probe 3 sits on level 3 with unit mass: loss mass = C(3,2) λ₀.
        let r = audit_conservation(&LossOnly(&asm), &g, &probes[3..4]).unwrap();
        assert!((r - 3.0 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn well_mixed_marginal_matches_cme_propensities() {
        let g = grid();
        let layout = Layout::single(5);
        let rx = ReactionSpec::aa_to_a(RateForm::WellMixed { rate: 0.8 });
        let asm = Assembly::new(&[CouplingSpec::Reaction(rx)], &g, &TransportSpec::default(), &layout).unwrap();
        let mut f = FockDensity::zeros(layout.clone(), &g).unwrap();
        let p = [0.1, 0.15, 0.2, 0.25, 0.2, 0.1];
        for (n, pn) in p.iter().enumerate() {
            f.set_uniform(&g, &[n], *pn).unwrap();
        }
        let pdot = marginal_copy_number(&apply_coupling(&asm, &f), &g).unwrap();
        for n in 0..=5 {
            let a = |k: usize| 0.8 * (k * k.saturating_sub(1)) as f64 / 2.0;
            let gain = if n < 5 { a(n + 1) * p[n + 1] } else { 0.0 };
            let want = gain - a(n) * p[n];
            assert!((pdot[n] - want).abs() < 1e-12, "{n}: {} vs {want}", pdot[n]);
        }
    }

    #[test]
    fn bl_marginal_is_birth_death() {
        let g = grid();
        let layout = Layout::single(4);
        let (kin, kout) = (1.2, 0.7);
        let ex = ExchangeModel::BlKernel(BlKernel::new(RateField::Constant(kout), RateField::Constant(kin), 1.0, 0.0));
        let mut f = FockDensity::zeros(layout.clone(), &g).unwrap();
        let p = [0.3, 0.25, 0.2, 0.15, 0.1];
        for (n, pn) in p.iter().enumerate() {
            f.set_uniform(&g, &[n], *pn).unwrap();
        }
        let inc = bl_apply(&f, &ex, &g, &TransportSpec::default()).unwrap();
        assert!(total_mass(&inc, &g).unwrap().abs() < 1e-12);
        let pdot = marginal_copy_number(&inc, &g).unwrap();
        let vol = g.domain_volume();
        for n in 0..=4 {
            let birth_in = if n > 0 { kin * vol * p[n - 1] } else { 0.0 };
            let death_in = if n < 4 { kout * (n + 1) as f64 * p[n + 1] } else { 0.0 };
            let birth_out = if n < 4 { kin * vol * p[n] } else { 0.0 };
            let want = birth_in + death_in - birth_out - kout * n as f64 * p[n];
            assert!((pdot[n] - want).abs() < 1e-12, "{n}");
        }
        let zero = ExchangeModel::BlKernel(BlKernel::new(RateField::Constant(0.0), RateField::Constant(0.0), 1.0, 0.0));
        let inc = bl_apply(&f, &zero, &g, &TransportSpec::default()).unwrap();
        assert!(inc.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn leakage_reports_blocked_insertion() {
        let g = grid();
        let layout = Layout::single(2);
        let ex = ExchangeModel::BlKernel(BlKernel::new(RateField::Constant(0.0), RateField::Constant(1.5), 1.0, 0.0));
        let asm = Assembly::new(&[CouplingSpec::Exchange(ex)], &g, &TransportSpec::default(), &layout).unwrap();
        let mut f = FockDensity::zeros(layout.clone(), &g).unwrap();
        f.set_uniform(&g, &[2], 0.4).unwrap();
        f.set_uniform(&g, &[0], 0.6).unwrap();
        assert!((asm.leakage(&f) - 1.5 * g.domain_volume() * 0.4).abs() < 1e-14);
        let vac = FockDensity::vacuum(layout, &g).unwrap();
        assert_eq!(asm.leakage(&vac), 0.0);
    }

    #[test]
    fn outputs_are_symmetric() {
        let g = grid();
        let layout = Layout::single(3);
        let couplings = vec![
            CouplingSpec::Reaction(ReactionSpec::aa_to_a(RateForm::Doi { rate: 1.0, radius: 0.5 })),
            CouplingSpec::Reaction(ReactionSpec::decay(RateField::PerCell(vec![0.1, 0.4, 0.9]))),
            CouplingSpec::Reaction(ReactionSpec::birth(RateField::PerCell(vec![1.0, 0.2, 0.6]))),
        ];
        let asm = Assembly::new(&couplings, &g, &TransportSpec::default(), &layout).unwrap();
        let mut f = FockDensity::zeros(layout.clone(), &g).unwrap();
        for p in random_probes(&layout, &g, 4, 7).unwrap() {
            f.axpy(0.25, &p);
        }
        let out = apply_coupling(&asm, &f);
        for idx in 0..out.n_levels() {
            assert!(symmetry_defect(&out.shape(idx), out.level(idx)) < 1e-13);
        }
        assert!(total_mass(&out, &g).unwrap().abs() < 1e-12);
    }
}
