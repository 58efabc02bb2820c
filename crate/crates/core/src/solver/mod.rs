//! Direct integration and stationary solution of the truncated hierarchy
//! `∂f_n/∂t = A_n f_n + (Q f)_n`.
//!
//! The explicit path is classical RK4 on the full tensor family. The
//! implicit Euler and stationary paths materialise the generator on the
//! block-symmetric subspace, which is invariant under both transport and
//! couplings, so the dense matrix stays small.

mod symmetric;

pub use symmetric::DEFAULT_DENSE_CAP;

use std::collections::BTreeSet;

use nalgebra::{DVector, Dyn, LU};
use rayon::prelude::*;

use crate::coupling::{mean_field_force, Assembly, Coupling, CouplingSpec, ExchangeModel};
use crate::error::{Error, Result};
use crate::fockspace::{marginal_copy_number, symmetry_defect, total_mass, FockDensity, Layout, PhaseGrid};
use crate::transport::{self, apply_transport, TransportMode, TransportSpec};
use symmetric::SymBasis;

/// Safety factor applied to the explicit stability limit.
pub const SAFETY: f64 = 0.9;

/// Largest pivot ratio treated as a rank deficiency in the stationary solve.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Rk4,
    /// Backward Euler on the materialised symmetric generator.
    ImplicitEuler,
}

/// A truncated hierarchy together with its initial state and time grid.
/// The level caps are those of `initial.layout()`.
#[derive(Debug, Clone)]
pub struct HierarchyProblem {
    pub grid: PhaseGrid,
    pub transport: TransportSpec,
    pub mode: TransportMode,
    pub couplings: Vec<CouplingSpec>,
    pub initial: FockDensity,
    pub t_final: f64,
    pub dt: f64,
    pub scheme: Scheme,
    /// Number of report rows after `t = 0`.
    pub outputs: usize,
    /// Cap on the dimension of materialised generators.
    pub dense_cap: usize,
}

impl HierarchyProblem {
    pub fn new(
        grid: PhaseGrid,
        transport: TransportSpec,
        mode: TransportMode,
        couplings: Vec<CouplingSpec>,
        initial: FockDensity,
    ) -> Self {
        Self {
            grid,
            transport,
            mode,
            couplings,
            initial,
            t_final: 0.0,
            dt: 0.0,
            scheme: Scheme::Rk4,
            outputs: 10,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }

    pub fn with_time(mut self, t_final: f64, dt: f64) -> Self {
        self.t_final = t_final;
        self.dt = dt;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_outputs(mut self, outputs: usize) -> Self {
        self.outputs = outputs;
        self
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn layout(&self) -> &Layout {
        self.initial.layout()
    }

    /// Per-species level caps.
    pub fn nmax(&self) -> &[usize] {
        self.layout().caps()
    }
}

/// Monitoring output of [`integrate`], one row per checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub times: Vec<f64>,
    /// Copy-number marginal per checkpoint, indexed by layout level.
    pub marginals: Vec<Vec<f64>>,
    /// Running maximum of `|1 - total mass|`.
    pub mass_residual: Vec<f64>,
    /// Accumulated probability blocked at the level caps.
    pub leakage: Vec<f64>,
    /// Running minimum tensor entry.
    pub min_entry: Vec<f64>,
}

impl SolveReport {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// A problem compiled against its grid: transport data (with any reservoir
/// mean field folded in) and the coupling assembly.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    grid: PhaseGrid,
    spec: TransportSpec,
    mode: TransportMode,
    assembly: Assembly,
}

impl Hierarchy {
    pub fn new(prob: &HierarchyProblem) -> Result<Self> {
        let layout = prob.layout();
        prob.initial.check_grid(&prob.grid)?;
        let mut spec = prob.transport.clone();
        spec.validate(&prob.grid, layout.species())?;
        if spec.extra_force.is_none() && !spec.pair.is_none() {
            let reservoir = prob.couplings.iter().find_map(|c| match c {
                CouplingSpec::Exchange(ex @ ExchangeModel::BoundaryFlux(_)) => Some(ex),
                _ => None,
            });
            if let Some(ex) = reservoir {
                spec.extra_force = Some(mean_field_force(ex, &prob.grid, &spec.pair)?);
            }
        }
        let assembly = Assembly::new(&prob.couplings, &prob.grid, &spec, layout)?;
        Ok(Self { grid: prob.grid.clone(), spec, mode: prob.mode, assembly })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    /// Transport data actually used, including a derived mean-field force.
    pub fn transport(&self) -> &TransportSpec {
        &self.spec
    }

    pub fn assembly(&self) -> &Assembly {
        &self.assembly
    }

    /// Full right-hand side, evaluated level by level.
    pub fn rhs(&self, f: &FockDensity) -> Result<FockDensity> {
        let levels: Vec<Vec<f64>> = (0..f.n_levels())
            .into_par_iter()
            .map(|idx| {
                let data = f.level(idx);
                let mut out = if data.iter().all(|x| *x == 0.0) {
                    vec![0.0; data.len()]
                } else {
                    apply_transport(&f.shape(idx), data, &self.grid, &self.spec, self.mode)?
                };
                self.assembly.apply_level(f, idx, &mut out);
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut out = f.zeros_like();
        for (idx, level) in levels.into_iter().enumerate() {
            out.level_mut(idx).copy_from_slice(&level);
        }
        Ok(out)
    }

    /// Instantaneous probability rate blocked at the level caps.
    pub fn leakage(&self, f: &FockDensity) -> f64 {
        self.assembly.leakage(f)
    }

    /// `SAFETY / r`, with `r` the largest total exit rate of any entry:
    /// transport out of the entry plus every coupling channel.
    pub fn stability_bound(&self) -> Result<f64> {
        let layout = self.assembly.layout();
        let cells = self.grid.one_particle_cells();
        let mut worst = 0.0f64;
        for idx in 0..layout.n_levels() {
            let shape = layout.shape(idx, cells);
            worst = worst.max(transport::max_exit_rate(&shape, &self.grid, &self.spec, self.mode)?);
        }
        let rate = worst + self.assembly.max_exit_rate();
        Ok(if rate > 0.0 { SAFETY / rate } else { f64::INFINITY })
    }

    /// One classical RK4 step; returns the new state and the leakage
    /// accumulated over the step.
    fn rk4(&self, f: &FockDensity, dt: f64) -> Result<(FockDensity, f64)> {
        let k1 = self.rhs(f)?;
        let l1 = self.leakage(f);
        let mut s = f.clone();
        s.axpy(0.5 * dt, &k1);
        let k2 = self.rhs(&s)?;
        let l2 = self.leakage(&s);
        let mut s = f.clone();
        s.axpy(0.5 * dt, &k2);
        let k3 = self.rhs(&s)?;
        let l3 = self.leakage(&s);
        let mut s = f.clone();
        s.axpy(dt, &k3);
        let k4 = self.rhs(&s)?;
        let l4 = self.leakage(&s);
        let mut next = f.clone();
        next.axpy(dt / 6.0, &k1);
        next.axpy(dt / 3.0, &k2);
        next.axpy(dt / 3.0, &k3);
        next.axpy(dt / 6.0, &k4);
        Ok((next, dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)))
    }

    /// Levels reachable by coupling events from the support of `f`.
    fn reachable(&self, f: &FockDensity) -> Vec<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = (0..f.n_levels()).filter(|&i| f.level(i).iter().any(|x| *x != 0.0)).collect();
        while let Some(idx) = stack.pop() {
            if seen.insert(idx) {
                stack.extend(self.assembly.successors(idx));
            }
        }
        seen.into_iter().collect()
    }
}

fn check_symmetric(f: &FockDensity) -> Result<()> {
    let tol = 1e-12 * f.max_abs().max(1.0);
    for idx in 0..f.n_levels() {
        let defect = symmetry_defect(&f.shape(idx), f.level(idx));
        if defect > tol {
            return Err(Error::NotSymmetric { level: idx, defect });
        }
    }
    Ok(())
}

/// Backward Euler `(I - dt G) c' = c` on the symmetric subspace of all levels.
struct ImplicitSystem {
    basis: SymBasis,
    lu: LU<f64, Dyn, Dyn>,
}

impl ImplicitSystem {
    fn new(h: &Hierarchy, template: &FockDensity, dt: f64, cap: usize) -> Result<Self> {
        check_symmetric(template)?;
        let levels: Vec<usize> = (0..template.n_levels()).collect();
        let basis = SymBasis::new(template, &h.grid, &levels, cap)?;
        let mut m = basis.materialize(template, |p| h.rhs(p))?;
        m *= -dt;
        for k in 0..basis.dim() {
            m[(k, k)] += 1.0;
        }
        Ok(Self { basis, lu: m.lu() })
    }

    fn advance(&self, f: &FockDensity, time: f64) -> Result<FockDensity> {
        let c = self.basis.coefficients(f);
        let c = self.lu.solve(&c).ok_or(Error::NonFinite { time })?;
        let mut out = f.zeros_like();
        self.basis.expand(&c, &mut out);
        Ok(out)
    }
}

fn check_dt(dt: f64, bound: f64) -> Result<()> {
    if !(dt.is_finite() && dt >= 0.0) || dt > bound {
        return Err(Error::StabilityBound { dt, bound });
    }
    Ok(())
}

/// Explicit stability bound of a problem.
pub fn stability_bound(prob: &HierarchyProblem) -> Result<f64> {
    Hierarchy::new(prob)?.stability_bound()
}

/// One time step of `prob`'s scheme from `f`.
pub fn step(f: &FockDensity, prob: &HierarchyProblem, dt: f64) -> Result<FockDensity> {
    if dt == 0.0 {
        return Ok(f.clone());
    }
    let h = Hierarchy::new(prob)?;
    f.check_grid(&h.grid)?;
    let next = match prob.scheme {
        Scheme::Rk4 => {
            check_dt(dt, h.stability_bound()?)?;
            h.rk4(f, dt)?.0
        }
        Scheme::ImplicitEuler => {
            check_dt(dt, f64::INFINITY)?;
            ImplicitSystem::new(&h, f, dt, prob.dense_cap)?.advance(f, dt)?
        }
    };
    if !next.all_finite() {
        return Err(Error::NonFinite { time: dt });
    }
    Ok(next)
}

/// Instantaneous leakage rate of `f` under `prob`'s couplings.
pub fn leakage_monitor(f: &FockDensity, prob: &HierarchyProblem) -> Result<f64> {
    f.check_grid(&prob.grid)?;
    let assembly = Assembly::new(&prob.couplings, &prob.grid, &prob.transport, prob.layout())?;
    Ok(assembly.leakage(f))
}

struct Monitor {
    residual: f64,
    leakage: f64,
    min_entry: f64,
}

impl Monitor {
    fn observe(&mut self, f: &FockDensity, grid: &PhaseGrid, leak: f64) -> Result<()> {
        self.residual = self.residual.max((1.0 - total_mass(f, grid)?).abs());
        self.leakage += leak.max(0.0);
        self.min_entry = self.min_entry.min(f.min_entry());
        Ok(())
    }

    fn record(&self, report: &mut SolveReport, t: f64, f: &FockDensity, grid: &PhaseGrid) -> Result<()> {
        report.times.push(t);
        report.marginals.push(marginal_copy_number(f, grid)?);
        report.mass_residual.push(self.residual);
        report.leakage.push(self.leakage);
        report.min_entry.push(self.min_entry);
        Ok(())
    }
}

/// Steps per checkpoint and the uniform step that lands on every checkpoint.
pub(crate) fn schedule(t_final: f64, dt: f64, outputs: usize) -> (usize, usize, f64) {
    let outputs = outputs.max(1);
    let per = ((t_final / (dt * outputs as f64)) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let n = per * outputs;
    (outputs, per, t_final / n as f64)
}

/// Integrates `prob` to `t_final`, recording `outputs` checkpoints after
/// the initial row.
pub fn integrate(prob: &HierarchyProblem) -> Result<(FockDensity, SolveReport)> {
    let h = Hierarchy::new(prob)?;
    let grid = &h.grid;
    let mut f = prob.initial.clone();
    let mut report = SolveReport::default();
    let mut monitor = Monitor { residual: 0.0, leakage: 0.0, min_entry: f64::INFINITY };
    monitor.observe(&f, grid, 0.0)?;
    monitor.record(&mut report, 0.0, &f, grid)?;
    if !(prob.t_final.is_finite() && prob.t_final >= 0.0) {
        return Err(Error::StabilityBound { dt: prob.dt, bound: f64::NAN });
    }
    if prob.t_final == 0.0 {
        return Ok((f, report));
    }
    if !(prob.dt > 0.0) {
        return Err(Error::StabilityBound { dt: prob.dt, bound: f64::INFINITY });
    }
    let (outputs, per, dt) = schedule(prob.t_final, prob.dt, prob.outputs);
    let implicit = match prob.scheme {
        Scheme::Rk4 => {
            check_dt(prob.dt, h.stability_bound()?)?;
            None
        }
        Scheme::ImplicitEuler => Some(ImplicitSystem::new(&h, &f, dt, prob.dense_cap)?),
    };
    for out in 1..=outputs {
        for k in 1..=per {
            let t = ((out - 1) * per + k) as f64 * dt;
            let (next, leak) = match &implicit {
                None => h.rk4(&f, dt)?,
                Some(sys) => {
                    let next = sys.advance(&f, t)?;
                    let leak = dt * h.leakage(&next);
                    (next, leak)
                }
            };
            if !next.all_finite() {
                return Err(Error::NonFinite { time: t });
            }
            f = next;
            monitor.observe(&f, grid, leak)?;
        }
        let t = prob.t_final * out as f64 / outputs as f64;
        monitor.record(&mut report, t, &f, grid)?;
    }
    Ok((f, report))
}

/// Stationary state reached from `prob.initial`: the normalised null vector
/// of the generator restricted to the symmetric tensors on the levels
/// reachable from the initial support.
pub fn stationary(prob: &HierarchyProblem) -> Result<FockDensity> {
    let h = Hierarchy::new(prob)?;
    let template = &prob.initial;
    let mut levels = h.reachable(template);
    if levels.is_empty() {
        levels = (0..template.n_levels()).collect();
    }
    let basis = SymBasis::new(template, &h.grid, &levels, prob.dense_cap)?;
    let mut a = basis.materialize(template, |p| h.rhs(p))?;
    let d = basis.dim();
    // Probability conservation makes the rows dependent; the last one is
    // replaced by the normalisation, scaled to the matrix.
    let scale = a.amax().max(1.0) / basis.weights().iter().fold(0.0f64, |m, w| m.max(*w));
    for k in 0..d {
        a[(d - 1, k)] = basis.weights()[k] * scale;
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
    if !(pivot_ratio > PIVOT_TOL) {
        return Err(Error::NonUniqueNullSpace { pivot_ratio });
    }
    let c = lu.solve(&b).ok_or(Error::NonUniqueNullSpace { pivot_ratio })?;
    let mut out = template.zeros_like();
    basis.expand(&c, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{BlKernel, ReactionSpec, RateField, RateForm};
    use crate::fockspace::total_variation;
    use nalgebra::DMatrix;

    fn grid(g: usize) -> PhaseGrid {
        PhaseGrid::new(1, g, 1.0 / g as f64).unwrap()
    }

    fn level_start(layout: Layout, g: &PhaseGrid, n: usize) -> FockDensity {
        FockDensity::uniform(layout, g, &[n], 1.0).unwrap()
    }

    fn aa_problem(g: usize, lambda: f64, mode: TransportMode) -> HierarchyProblem {
        let grid = grid(g);
        let initial = level_start(Layout::single(2), &grid, 2);
        HierarchyProblem::new(
            grid,
            TransportSpec::diffusive(0.1),
            mode,
            vec![CouplingSpec::Reaction(ReactionSpec::aa_to_a(RateForm::WellMixed { rate: lambda }))],
            initial,
        )
    }

    /// `p(t)` of the 3-state chain 2 → 1 at rate λ, from `p = (0, 0, 1)`.
    fn three_state(lambda: f64, t: f64) -> Vec<f64> {
        let mut q = DMatrix::zeros(3, 3);
        q[(2, 2)] = -lambda;
        q[(1, 2)] = lambda;
        let p0 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        ((q * t).exp() * p0).iter().copied().collect()
    }

    #[test]
    fn zero_dt_is_identity() {
        let prob = aa_problem(4, 1.0, TransportMode::Diffusion);
        let f = step(&prob.initial, &prob, 0.0).unwrap();
        assert_eq!(f.data(), prob.initial.data());
    }

    #[test]
    fn zero_horizon_returns_initial() {
        let prob = aa_problem(4, 1.0, TransportMode::Diffusion).with_time(0.0, 0.01);
        let (f, report) = integrate(&prob).unwrap();
        assert_eq!(f.data(), prob.initial.data());
        assert_eq!(report.len(), 1);
        assert_eq!(report.mass_residual[0], 0.0);
        assert_eq!(report.leakage[0], 0.0);
    }

    #[test]
    fn dt_above_bound_is_rejected() {
        let prob = aa_problem(8, 1.0, TransportMode::Diffusion);
        let bound = stability_bound(&prob).unwrap();
        let err = step(&prob.initial, &prob, 1.01 * bound).unwrap_err();
        assert!(matches!(err, Error::StabilityBound { .. }));
    }

    #[test]
    fn bound_matches_diffusion_formula_for_one_particle() {
        let g = grid(8);
        let initial = level_start(Layout::single(1), &g, 1);
        let prob = HierarchyProblem::new(g, TransportSpec::diffusive(0.3), TransportMode::Diffusion, vec![], initial);
        let dx: f64 = 1.0 / 8.0;
        let formula = SAFETY * dx * dx / (2.0 * 0.3);
        assert!((stability_bound(&prob).unwrap() - formula).abs() < 1e-15);
    }

    #[test]
    fn diffusion_relaxes_to_uniform() {
        let g = grid(6);
        let mut initial = FockDensity::zeros(Layout::single(2), &g).unwrap();
        // Two particles bunched in the left corner, symmetric.
        let w = g.cell_measure();
        initial.level_mut(2)[0] = 1.0 / (w * w);
        let prob = HierarchyProblem::new(g.clone(), TransportSpec::diffusive(1.0), TransportMode::Diffusion, vec![], initial);
        let dt = 0.9 * stability_bound(&prob).unwrap();
        let prob = prob.with_time(4.0, dt).with_outputs(1);
        let (f, report) = integrate(&prob).unwrap();
        let dev = f.level(2).iter().fold(0.0f64, |m, x| m.max((x - 1.0).abs()));
        assert!(dev < 1e-8, "max deviation {dev}");
        assert!(*report.mass_residual.last().unwrap() < 1e-12);
        assert!(*report.min_entry.last().unwrap() > -1e-10);
    }

    #[test]
    fn aa_matches_three_state_cme() {
        let lambda = 1.5;
        let prob = aa_problem(4, lambda, TransportMode::None).with_time(2.0, 0.01).with_outputs(4);
        let (_, report) = integrate(&prob).unwrap();
        for (t, p) in report.times.iter().zip(&report.marginals) {
            let exact = three_state(lambda, *t);
            for (a, b) in p.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-8, "t={t}: {p:?} vs {exact:?}");
            }
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let lambda = 2.0;
        let exact = three_state(lambda, 1.0);
        let errs: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&dt| {
                let prob = aa_problem(3, lambda, TransportMode::None).with_time(1.0, dt).with_outputs(1);
                let (_, r) = integrate(&prob).unwrap();
                r.marginals[1].iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect();
        let order = (errs[0] / errs[2]).ln() / 4f64.ln();
        assert!(order > 3.5, "fitted order {order}, errors {errs:?}");
    }

    fn bl_problem(nmax: usize, kappa_out: f64, mu: f64) -> HierarchyProblem {
        let g = grid(4);
        let spec = TransportSpec::diffusive(0.5);
        let kernel = BlKernel::balanced(&g, &spec, kappa_out, mu);
        let initial = FockDensity::vacuum(Layout::single(nmax), &g).unwrap();
        HierarchyProblem::new(g, spec, TransportMode::Diffusion, vec![CouplingSpec::Exchange(ExchangeModel::BlKernel(kernel))], initial)
    }

    fn truncated_poisson(mean: f64, nmax: usize) -> Vec<f64> {
        let mut w = vec![1.0];
        for n in 1..=nmax {
            let prev = w[n - 1];
            w.push(prev * mean / n as f64);
        }
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    }

    #[test]
    fn birth_death_integrates_to_poisson() {
        // κ_in|Ω|/κ_out = e^{βμ} with U = 0 and unit volume.
        let prob = bl_problem(6, 2.0, (0.2f64).ln());
        let dt = 0.5 * stability_bound(&prob).unwrap();
        let prob = prob.with_time(12.0, dt).with_outputs(3);
        let (_, report) = integrate(&prob).unwrap();
        let p = report.marginals.last().unwrap();
        let tv = total_variation(p, &truncated_poisson(0.2, 6));
        assert!(tv < 1e-6, "tv {tv}");
        assert!(report.mass_residual.iter().all(|r| *r < 1e-8));
        assert!(report.leakage.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn stationary_bl_is_truncated_poisson() {
        let prob = bl_problem(4, 1.0, (0.7f64).ln());
        let f = stationary(&prob).unwrap();
        let p = marginal_copy_number(&f, &prob.grid).unwrap();
        let tv = total_variation(&p, &truncated_poisson(0.7, 4));
        assert!(tv < 1e-10, "tv {tv}");
    }

    #[test]
    fn stationary_diffusion_single_level_is_uniform() {
        let g = grid(5);
        let mut initial = FockDensity::zeros(Layout::single(1), &g).unwrap();
        initial.level_mut(1)[1] = 5.0;
        let prob = HierarchyProblem::new(g, TransportSpec::diffusive(1.0), TransportMode::Diffusion, vec![], initial);
        let f = stationary(&prob).unwrap();
        assert!(f.level(1).iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(f.level(0).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn stationary_aa_absorbs_at_one_particle() {
        let prob = aa_problem(4, 3.0, TransportMode::Diffusion);
        let f = stationary(&prob).unwrap();
        let p = marginal_copy_number(&f, &prob.grid).unwrap();
        assert!(p[2].abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[0] == 0.0, "{p:?}");
        // Long integration agrees.
        let dt = 0.9 * stability_bound(&prob).unwrap();
        let (_, r) = integrate(&prob.clone().with_time(15.0, dt).with_outputs(1)).unwrap();
        assert!(total_variation(r.marginals.last().unwrap(), &p) < 1e-8);
    }

    #[test]
    fn disconnected_stationary_is_reported() {
        // Two decoupled levels occupied with no coupling: the null space is 2-dimensional.
        let g = grid(3);
        let mut initial = FockDensity::zeros(Layout::single(1), &g).unwrap();
        initial.level_mut(0)[0] = 0.5;
        initial.level_mut(1).iter_mut().for_each(|x| *x = 0.5);
        let prob = HierarchyProblem::new(g, TransportSpec::diffusive(1.0), TransportMode::Diffusion, vec![], initial);
        assert!(matches!(stationary(&prob), Err(Error::NonUniqueNullSpace { .. })));
    }

    #[test]
    fn implicit_euler_converges_to_same_state() {
        let prob = aa_problem(4, 1.0, TransportMode::Diffusion).with_time(1.0, 0.002).with_outputs(1);
        let (_, explicit) = integrate(&prob).unwrap();
        let (_, implicit) = integrate(&prob.clone().with_scheme(Scheme::ImplicitEuler)).unwrap();
        let exact = three_state(1.0, 1.0);
        let e = total_variation(&explicit.marginals[1], &exact);
        let i = total_variation(&implicit.marginals[1], &exact);
        assert!(e < 1e-10);
        // First order: error of order dt·λ.
        assert!(i < 2e-3 && i > 1e-5, "implicit tv {i}");
        assert!(implicit.mass_residual[1] < 1e-10);
    }

    #[test]
    fn implicit_rejects_asymmetric_initial() {
        let g = grid(3);
        let mut initial = FockDensity::zeros(Layout::single(2), &g).unwrap();
        initial.level_mut(2)[1] = 9.0;
        let prob = HierarchyProblem::new(g, TransportSpec::diffusive(1.0), TransportMode::Diffusion, vec![], initial)
            .with_time(0.1, 0.01)
            .with_scheme(Scheme::ImplicitEuler);
        assert!(matches!(integrate(&prob), Err(Error::NotSymmetric { level: 2, .. })));
    }

    #[test]
    fn leakage_monitor_examples() {
        let none = aa_problem(4, 1.0, TransportMode::Diffusion);
        assert_eq!(leakage_monitor(&none.initial, &none).unwrap(), 0.0);

        let prob = bl_problem(3, 1.0, (0.4f64).ln());
        let vac = prob.initial.clone();
        assert_eq!(leakage_monitor(&vac, &prob).unwrap(), 0.0);

        let mut f = FockDensity::zeros(Layout::single(3), &prob.grid).unwrap();
        f.set_uniform(&prob.grid, &[3], 0.25).unwrap();
        f.set_uniform(&prob.grid, &[0], 0.75).unwrap();
        // κ_in|Ω| = κ_out e^{βμ} = 0.4 on the unit interval.
        let leak = leakage_monitor(&f, &prob).unwrap();
        assert!((leak - 0.4 * 0.25).abs() < 1e-12, "leak {leak}");
    }

    #[test]
    fn truncated_aa_leak_accumulates() {
        // Birth into a capped level with AA→A: birth at Nmax is blocked.
        let g = grid(2);
        let initial = level_start(Layout::single(1), &g, 1);
        let birth = ReactionSpec::birth(RateField::Constant(2.0));
        let prob = HierarchyProblem::new(g, TransportSpec::diffusive(1.0), TransportMode::None, vec![CouplingSpec::Reaction(birth)], initial)
            .with_time(0.5, 0.01)
            .with_outputs(2);
        let (_, r) = integrate(&prob).unwrap();
        // p_1 = 1 throughout, so leakage = 2 t.
        assert!((r.leakage[2] - 1.0).abs() < 1e-12, "{:?}", r.leakage);
        assert!((r.marginals[2][1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn integration_is_deterministic_and_symmetric() {
        let g = grid(4);
        let initial = level_start(Layout::single(3), &g, 3);
        let rx = ReactionSpec::aa_to_a(RateForm::Doi { rate: 4.0, radius: 0.3 });
        let prob = HierarchyProblem::new(g, TransportSpec::diffusive(0.2), TransportMode::Diffusion, vec![CouplingSpec::Reaction(rx)], initial);
        let dt = stability_bound(&prob).unwrap();
        let prob = prob.with_time(0.5, dt).with_outputs(2);
        let (fa, ra) = integrate(&prob).unwrap();
        let (fb, rb) = integrate(&prob).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(fa.data(), fb.data());
        for idx in 0..fa.n_levels() {
            assert!(symmetry_defect(&fa.shape(idx), fa.level(idx)) < 1e-12);
        }
        assert!(ra.mass_residual.iter().all(|r| *r < 1e-10));
    }

    #[test]
    fn symmetric_basis_reproduces_rhs() {
        let prob = aa_problem(3, 1.0, TransportMode::Diffusion);
        let h = Hierarchy::new(&prob).unwrap();
        let f = &prob.initial;
        let basis = SymBasis::new(f, &h.grid, &[0, 1, 2], 100).unwrap();
        // Orbits: 1 + 3 + C(3+1, 2) = 10.
        assert_eq!(basis.dim(), 10);
        let a = basis.materialize(f, |p| h.rhs(p)).unwrap();
        let mut probe = f.clone();
        probe.level_mut(1).copy_from_slice(&[0.3, 0.5, 0.2]);
        let direct = h.rhs(&probe).unwrap();
        let via = &a * basis.coefficients(&probe);
        let mut out = f.zeros_like();
        basis.expand(&via, &mut out);
        for (x, y) in out.data().iter().zip(direct.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
