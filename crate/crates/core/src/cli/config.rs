//! Experiment configuration documents.
//!
//! A config is TOML with the sections `[grid]`, `[transport]`,
//! `[[reactions]]`, `[exchange]`, `[solver]`, `[sampler]` and `[output]`.
//! Parsing fills every default, runs the cross-field validators and
//! returns a resolved [`ExperimentConfig`] whose [`ExperimentConfig::to_toml`]
//! echo parses back to the same value.
//!
//! Units: lengths in domain units, times in the reciprocal of the rate
//! unit, energies in the unit of `kt`; diffusion is length²/time,
//! friction is mass/time, pair rates are 1/time, birth intensities are
//! 1/(time·length^dim).

use serde::{Deserialize, Serialize};

use crate::coupling::{
    Assembly, BlKernel, BoundaryReservoir, CouplingSpec, ExchangeModel, Placement, RateField, RateForm,
    ReactionSpec, VelocityPolicy,
};
use crate::error::{Error, Result};
use crate::fockspace::{maxwell_tail_mass, BoundaryKind, FockDensity, Layout, PhaseGrid, Side, DEFAULT_STATE_CAP};
use crate::sampler::{Dynamics, InitialCondition, SamplerRun};
use crate::solver::{stability_bound, HierarchyProblem, Scheme, DEFAULT_DENSE_CAP};
use crate::transport::{Diffusion, ExternalPotential, Friction, PairPotential, TransportMode, TransportSpec};

/// Largest admissible Maxwell tail mass beyond `vmax`.
pub const VMAX_TAIL: f64 = 1e-8;

pub(crate) fn bad(section: &str, key: &str, reason: impl Into<String>) -> Error {
    Error::Config { section: section.into(), key: key.into(), reason: reason.into() }
}

/// A scalar or a list in the document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaceName {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Cells per spatial axis.
    pub cells: usize,
    /// Domain length per axis; the cell width is `length / cells`.
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_cells: Option<usize>,
    /// Velocity cutoff; the velocity axis is `[-vmax, vmax]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vmax: Option<f64>,
    /// Faces of axis 0 opened to a reservoir.
    #[serde(default)]
    pub open_faces: Vec<FaceName>,
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    None,
    #[default]
    Diffusion,
    KleinKramers,
    Liouville,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialName {
    #[default]
    Zero,
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairName {
    #[default]
    None,
    SoftRepulsive,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportSection {
    #[serde(default)]
    pub mode: ModeName,
    /// Isotropic diffusion coefficient, one value or one per species.
    #[serde(default = "default_diffusion")]
    pub diffusion: OneOrMany<f64>,
    #[serde(default)]
    pub potential: PotentialName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<f64>,
    /// Centre of the harmonic potential, the same on every axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default)]
    pub pair: PairName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_strength: Option<f64>,
    /// Range of the soft repulsion or width of the gaussian pair potential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_range: Option<f64>,
    #[serde(default = "one")]
    pub friction: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub kt: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            mode: ModeName::default(),
            diffusion: default_diffusion(),
            potential: PotentialName::default(),
            stiffness: None,
            center: None,
            pair: PairName::default(),
            pair_strength: None,
            pair_range: None,
            friction: 1.0,
            mass: 1.0,
            kt: 1.0,
        }
    }
}

fn default_diffusion() -> OneOrMany<f64> {
    OneOrMany::One(1.0)
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateName {
    AaToA,
    AbToC,
    Decay,
    Birth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelName {
    #[default]
    WellMixed,
    Doi,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementName {
    #[default]
    Midpoint,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    #[default]
    ResampleMaxwell,
    InheritAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionEntry {
    pub template: TemplateName,
    /// Pair kernel; ignored by decay and birth.
    #[serde(default)]
    pub kernel: KernelName,
    /// `λ₀` for pair templates; `k_d` or `b` (one value or one per spatial
    /// cell) for decay and birth.
    pub rate: OneOrMany<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    /// `[first reactant, second reactant, product]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<Vec<usize>>,
    #[serde(default)]
    pub placement: PlacementName,
    #[serde(default)]
    pub velocity_policy: PolicyName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeName {
    BlKernel,
    BoundaryFlux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeSection {
    pub model: ExchangeName,
    #[serde(default)]
    pub species: usize,
    /// Deletion rate per particle (bl-kernel).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_out: Option<f64>,
    /// Insertion intensity; when absent the balanced kernel for `mu` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_in: Option<OneOrMany<f64>>,
    #[serde(default)]
    pub mu: f64,
    /// Reservoir number density behind open faces (boundary-flux).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reservoir_kt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reservoir_mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    #[default]
    Rk4,
    ImplicitEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    /// Level cap, one value or one per species.
    pub nmax: OneOrMany<usize>,
    /// Counts of the uniform initial level; vacuum when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_counts: Option<Vec<usize>>,
    pub t_final: f64,
    /// Defaults to a quarter of the explicit stability bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub scheme: SchemeName,
    /// Checkpoints after `t = 0`.
    #[serde(default = "default_outputs")]
    pub outputs: usize,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
}

fn default_outputs() -> usize {
    10
}

fn default_state_cap() -> usize {
    DEFAULT_STATE_CAP
}

fn default_dense_cap() -> usize {
    DEFAULT_DENSE_CAP
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsName {
    Brownian,
    Langevin,
    Ballistic,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SamplerSection {
    /// Defaults follow the transport mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsName>,
    /// Defaults to the solver step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    /// The only source of randomness of a run.
    #[serde(default)]
    pub seed: u64,
}

fn default_trajectories() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn default_dir() -> String {
    "openfock-out".into()
}

/// Provenance block written into run manifests; ignored when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSection {
    pub version: String,
    pub subcommand: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestSection>,
    pub grid: GridSection,
    #[serde(default)]
    pub transport: TransportSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reactions: Vec<ReactionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<ExchangeSection>,
    pub solver: SolverSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Command-line replacements applied before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub nmax: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub trajectories: Option<usize>,
    pub out: Option<String>,
    /// Route `dt` and `t_final` to `[sampler]` instead of `[solver]`.
    pub sampler_time: bool,
}

/// Splits a dotted serde path into `(section, key)`.
fn split_path(path: &str) -> (String, String) {
    let norm = path.replace('[', ".").replace(']', "");
    let parts: Vec<&str> = norm.split('.').filter(|s| !s.is_empty()).collect();
    match parts.as_slice() {
        [] => ("document".into(), "?".into()),
        [only] => ("document".into(), (*only).into()),
        [rest @ .., last] => {
            let section = match rest {
                [s, i] if i.chars().all(|c| c.is_ascii_digit()) => format!("{s}[{i}]"),
                _ => rest.join("."),
            };
            (section, (*last).into())
        }
    }
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_with_overrides(text, &Overrides::default())
}

/// [`parse_config`] with command-line overrides applied before validation.
pub fn parse_with_overrides(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| bad("document", "?", e.message()))?;
    let mut unknown = Vec::new();
    let mut track = |p: serde_ignored::Path<'_>| unknown.push(p.to_string());
    let de = serde_ignored::Deserializer::new(toml::Value::Table(table), &mut track);
    let parsed: std::result::Result<ExperimentConfig, _> = serde_path_to_error::deserialize(de);
    if let Some(path) = unknown.first() {
        let (section, key) = split_path(path);
        return Err(bad(&section, &key, "unknown key"));
    }
    let mut cfg = parsed.map_err(|e| {
        let msg = e.inner().to_string();
        let path = e.path().to_string();
        match msg.strip_prefix("missing field ").and(backticked(&msg)) {
            Some(key) => {
                let section = if path == "." || path.is_empty() { "document".to_string() } else { split_path(&format!("{path}.x")).0 };
                bad(&section, key, "missing required key")
            }
            None => {
                let (section, key) = split_path(&path);
                bad(&section, &key, msg)
            }
        }
    })?;
    cfg.apply(overrides);
    cfg.resolve()?;
    Ok(cfg)
}

impl ExperimentConfig {
    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.sampler.seed = seed;
        }
        if let Some(n) = o.nmax {
            self.solver.nmax = match &self.solver.nmax {
                OneOrMany::One(_) => OneOrMany::One(n),
                OneOrMany::Many(v) => OneOrMany::Many(vec![n; v.len()]),
            };
        }
        if o.sampler_time {
            if o.dt.is_some() {
                self.sampler.dt = o.dt;
            }
            if o.t_final.is_some() {
                self.sampler.t_final = o.t_final;
            }
        } else {
            if o.dt.is_some() {
                self.solver.dt = o.dt;
            }
            if let Some(t) = o.t_final {
                self.solver.t_final = t;
            }
        }
        if let Some(n) = o.trajectories {
            self.sampler.trajectories = n;
        }
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
    }

    /// Fills derived defaults and runs every validator.
    fn resolve(&mut self) -> Result<()> {
        let grid = self.grid()?;
        let spec = self.transport_spec()?;
        let layout = self.layout()?;
        if let Some(vmax) = self.grid.vmax {
            let tail = maxwell_tail_mass(vmax, spec.kt / spec.mass);
            if !(tail < VMAX_TAIL) {
                return Err(bad(
                    "grid",
                    "vmax",
                    format!("Maxwell tail mass {tail:.3e} beyond vmax = {vmax} must be below {VMAX_TAIL:e}"),
                ));
            }
        }
        layout
            .check_cap(grid.one_particle_cells(), self.solver.state_cap)
            .map_err(|e| bad("solver", "nmax", e.to_string()))?;
        spec.validate(&grid, layout.species()).map_err(|e| bad("transport", "diffusion", e.to_string()))?;
        let couplings = self.couplings(&grid, &spec)?;
        for (i, c) in couplings.iter().enumerate() {
            let (section, key) = match c {
                CouplingSpec::Reaction(_) => (format!("reactions[{i}]"), "rate"),
                CouplingSpec::Exchange(_) => ("exchange".to_string(), "model"),
            };
            Assembly::new(std::slice::from_ref(c), &grid, &spec, &layout).map_err(|e| bad(&section, key, e.to_string()))?;
        }
        if !(self.solver.t_final.is_finite() && self.solver.t_final >= 0.0) {
            return Err(bad("solver", "t_final", "must be finite and non-negative"));
        }
        if self.solver.outputs == 0 {
            return Err(bad("solver", "outputs", "must be at least 1"));
        }
        let bound = stability_bound(&self.problem_with_dt(&grid, &spec, &layout, couplings, 1.0)?)
            .map_err(|e| bad("solver", "nmax", e.to_string()))?;
        let dt = match self.solver.dt {
            Some(dt) if !(dt > 0.0 && dt.is_finite()) => return Err(bad("solver", "dt", "must be positive")),
            Some(dt) => dt,
            None if bound.is_finite() => 0.25 * bound,
            None => (self.solver.t_final / self.solver.outputs as f64).max(f64::MIN_POSITIVE),
        };
        if self.solver.scheme == SchemeName::Rk4 && dt > bound {
            return Err(bad("solver", "dt", format!("dt = {dt} exceeds the RK4 stability bound {bound:.6e}")));
        }
        self.solver.dt = Some(dt);
        if self.sampler.dynamics.is_none() {
            self.sampler.dynamics = Some(match self.transport.mode {
                ModeName::KleinKramers => DynamicsName::Langevin,
                ModeName::Liouville => DynamicsName::Ballistic,
                ModeName::None | ModeName::Diffusion => DynamicsName::Brownian,
            });
        }
        let sdt = *self.sampler.dt.get_or_insert(dt);
        if !(sdt > 0.0 && sdt.is_finite()) {
            return Err(bad("sampler", "dt", "must be positive"));
        }
        let st = *self.sampler.t_final.get_or_insert(self.solver.t_final);
        if !(st.is_finite() && st >= 0.0) {
            return Err(bad("sampler", "t_final", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// The resolved document, including a manifest block when present.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn grid(&self) -> Result<PhaseGrid> {
        let g = &self.grid;
        if g.cells == 0 || !(g.length > 0.0 && g.length.is_finite()) {
            return Err(bad("grid", "length", "cells and length must be positive"));
        }
        let mut grid = PhaseGrid::new(g.dim, g.cells, g.length / g.cells as f64)
            .map_err(|e| bad("grid", "cells", e.to_string()))?;
        match (g.velocity_cells, g.vmax) {
            (Some(cells), Some(vmax)) => {
                grid = grid.with_velocity(cells, vmax).map_err(|e| bad("grid", "velocity_cells", e.to_string()))?;
            }
            (None, None) => {}
            (Some(_), None) => return Err(bad("grid", "vmax", "required with velocity_cells")),
            (None, Some(_)) => return Err(bad("grid", "velocity_cells", "required with vmax")),
        }
        for face in &g.open_faces {
            let side = match face {
                FaceName::Lower => Side::Lower,
                FaceName::Upper => Side::Upper,
            };
            grid = grid
                .with_face(0, side, BoundaryKind::OpenWithReservoir)
                .map_err(|e| bad("grid", "open_faces", e.to_string()))?;
        }
        Ok(grid)
    }

    pub fn mode(&self) -> TransportMode {
        match self.transport.mode {
            ModeName::None => TransportMode::None,
            ModeName::Diffusion => TransportMode::Diffusion,
            ModeName::KleinKramers => TransportMode::KleinKramers,
            ModeName::Liouville => TransportMode::Liouville,
        }
    }

    pub fn transport_spec(&self) -> Result<TransportSpec> {
        let t = &self.transport;
        let need = |v: Option<f64>, key: &str, what: &str| v.ok_or_else(|| bad("transport", key, format!("required for {what}")));
        let potential = match t.potential {
            PotentialName::Zero => ExternalPotential::Zero,
            PotentialName::Harmonic => {
                let c = t.center.unwrap_or(0.5 * self.grid.length);
                ExternalPotential::Harmonic { stiffness: need(t.stiffness, "stiffness", "a harmonic potential")?, center: [c; 3] }
            }
        };
        let pair = match t.pair {
            PairName::None => PairPotential::None,
            PairName::SoftRepulsive => PairPotential::SoftRepulsive {
                strength: need(t.pair_strength, "pair_strength", "a pair potential")?,
                range: need(t.pair_range, "pair_range", "a pair potential")?,
            },
            PairName::Gaussian => PairPotential::Gaussian {
                strength: need(t.pair_strength, "pair_strength", "a pair potential")?,
                width: need(t.pair_range, "pair_range", "a pair potential")?,
            },
        };
        Ok(TransportSpec {
            diffusion: t.diffusion.to_vec().into_iter().map(Diffusion::Isotropic).collect(),
            potential,
            pair,
            friction: Friction::Constant(t.friction),
            mass: t.mass,
            kt: t.kt,
            extra_force: None,
        })
    }

    pub fn layout(&self) -> Result<Layout> {
        match &self.solver.nmax {
            OneOrMany::One(n) => Ok(Layout::single(*n)),
            OneOrMany::Many(v) => Layout::multi(v.clone()).map_err(|e| bad("solver", "nmax", e.to_string())),
        }
    }

    fn rate_field(values: &OneOrMany<f64>) -> RateField {
        match values {
            OneOrMany::One(k) => RateField::Constant(*k),
            OneOrMany::Many(v) => RateField::PerCell(v.clone()),
        }
    }

    pub fn couplings(&self, grid: &PhaseGrid, spec: &TransportSpec) -> Result<Vec<CouplingSpec>> {
        let mut out = Vec::new();
        for (i, r) in self.reactions.iter().enumerate() {
            let section = format!("reactions[{i}]");
            let scalar = || match r.rate {
                OneOrMany::One(k) => Ok(k),
                OneOrMany::Many(_) => Err(bad(&section, "rate", "pair reactions take a single rate")),
            };
            let form = || -> Result<RateForm> {
                let rate = scalar()?;
                Ok(match r.kernel {
                    KernelName::WellMixed => RateForm::WellMixed { rate },
                    KernelName::Doi => RateForm::Doi {
                        rate,
                        radius: r.radius.ok_or_else(|| bad(&section, "radius", "required for the doi kernel"))?,
                    },
                    KernelName::Gaussian => RateForm::Gaussian {
                        rate,
                        width: r.width.ok_or_else(|| bad(&section, "width", "required for the gaussian kernel"))?,
                    },
                })
            };
            let mut rx = match r.template {
                TemplateName::AaToA => ReactionSpec::aa_to_a(form()?),
                TemplateName::AbToC => ReactionSpec::ab_to_c(form()?),
                TemplateName::Decay => ReactionSpec::decay(Self::rate_field(&r.rate)),
                TemplateName::Birth => ReactionSpec::birth(Self::rate_field(&r.rate)),
            };
            rx = rx
                .with_placement(match r.placement {
                    PlacementName::Midpoint => Placement::Midpoint,
                    PlacementName::Segment => Placement::Segment,
                })
                .with_velocity_policy(match r.velocity_policy {
                    PolicyName::ResampleMaxwell => VelocityPolicy::ResampleMaxwell,
                    PolicyName::InheritAverage => VelocityPolicy::InheritAverage,
                });
            if let Some(s) = &r.species {
                let s: [usize; 3] = s
                    .as_slice()
                    .try_into()
                    .map_err(|_| bad(&section, "species", "expects [first, second, product]"))?;
                rx = rx.with_species(s);
            }
            out.push(CouplingSpec::Reaction(rx));
        }
        if let Some(ex) = &self.exchange {
            let model = match ex.model {
                ExchangeName::BlKernel => {
                    let kout = ex.kappa_out.ok_or_else(|| bad("exchange", "kappa_out", "required for bl-kernel"))?;
                    let kernel = match &ex.kappa_in {
                        None => BlKernel::balanced(grid, spec, kout, ex.mu),
                        Some(kin) => {
                            let mut k = BlKernel::new(RateField::Constant(kout), Self::rate_field(kin), spec.beta(), ex.mu);
                            k.mass = spec.mass;
                            k
                        }
                    };
                    ExchangeModel::BlKernel(kernel.with_species(ex.species))
                }
                ExchangeName::BoundaryFlux => {
                    let density = ex.density.ok_or_else(|| bad("exchange", "density", "required for boundary-flux"))?;
                    let mut r = BoundaryReservoir::new(
                        density,
                        ex.reservoir_kt.unwrap_or(spec.kt),
                        ex.reservoir_mass.unwrap_or(spec.mass),
                    );
                    if let Some(w) = ex.width {
                        r = r.with_width(w);
                    }
                    ExchangeModel::BoundaryFlux(r)
                }
            };
            out.push(CouplingSpec::Exchange(model));
        }
        Ok(out)
    }

    pub fn initial_density(&self, grid: &PhaseGrid, layout: &Layout) -> Result<FockDensity> {
        let counts = match &self.solver.initial_counts {
            None => return FockDensity::vacuum(layout.clone(), grid),
            Some(c) => c,
        };
        if layout.index_of(counts).is_none() {
            return Err(bad("solver", "initial_counts", format!("{counts:?} is outside the level caps")));
        }
        FockDensity::uniform(layout.clone(), grid, counts, 1.0).map_err(|e| bad("solver", "initial_counts", e.to_string()))
    }

    fn problem_with_dt(
        &self,
        grid: &PhaseGrid,
        spec: &TransportSpec,
        layout: &Layout,
        couplings: Vec<CouplingSpec>,
        dt: f64,
    ) -> Result<HierarchyProblem> {
        let initial = self.initial_density(grid, layout)?;
        let scheme = match self.solver.scheme {
            SchemeName::Rk4 => Scheme::Rk4,
            SchemeName::ImplicitEuler => Scheme::ImplicitEuler,
        };
        Ok(HierarchyProblem::new(grid.clone(), spec.clone(), self.mode(), couplings, initial)
            .with_time(self.solver.t_final, dt)
            .with_scheme(scheme)
            .with_outputs(self.solver.outputs)
            .with_dense_cap(self.solver.dense_cap))
    }

    /// The hierarchy problem of `[solver]`.
    pub fn problem(&self) -> Result<HierarchyProblem> {
        let grid = self.grid()?;
        let spec = self.transport_spec()?;
        let layout = self.layout()?;
        let couplings = self.couplings(&grid, &spec)?;
        let dt = self.solver.dt.ok_or_else(|| bad("solver", "dt", "unresolved"))?;
        self.problem_with_dt(&grid, &spec, &layout, couplings, dt)
    }

    /// The sampler run of `[sampler]`, started from the solver's initial density.
    pub fn sampler_run(&self) -> Result<SamplerRun> {
        let prob = self.problem()?;
        let dynamics = match self.sampler.dynamics.unwrap_or(DynamicsName::Brownian) {
            DynamicsName::Brownian => Dynamics::Brownian,
            DynamicsName::Langevin => Dynamics::Langevin,
            DynamicsName::Ballistic => Dynamics::Ballistic,
        };
        let layout = prob.layout().clone();
        let run = SamplerRun::new(prob.grid, prob.transport, dynamics, prob.couplings, InitialCondition::Density(prob.initial), layout)
            .with_time(self.sampler.t_final.unwrap_or(prob.t_final), self.sampler.dt.unwrap_or(prob.dt))
            .with_seed(self.sampler.seed)
            .with_trajectories(self.sampler.trajectories)
            .with_outputs(self.solver.outputs);
        crate::sampler::Sampler::new(&run).map_err(|e| bad("sampler", "dynamics", e.to_string()))?;
        Ok(run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\ncells = 8\nlength = 1.0\n\n[transport]\ndiffusion = 0.1\n\n[solver]\nnmax = 2\nt_final = 1.0\n";

    fn config_err(e: Error) -> (String, String, String) {
        match e {
            Error::Config { section, key, reason } => (section, key, reason),
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.grid.dim, 1);
        assert_eq!(cfg.transport.mode, ModeName::Diffusion);
        assert_eq!(cfg.solver.outputs, 10);
        assert_eq!(cfg.sampler.dynamics, Some(DynamicsName::Brownian));
        // bound = 0.9 / (2 particles · 2D/dx²) at D = 0.1, dx = 1/8
        let bound = 0.9 / (2.0 * 2.0 * 0.1 * 64.0);
        assert!((cfg.solver.dt.unwrap() - 0.25 * bound).abs() < 1e-15);
        assert_eq!(cfg.sampler.dt, cfg.solver.dt);
        let echo = cfg.to_toml();
        assert_eq!(parse_config(&echo).unwrap(), cfg);
    }

    #[test]
    fn misspelled_key_is_named() {
        let text = MINIMAL.replace("diffusion = 0.1", "difusion = 0.1");
        let (section, key, reason) = config_err(parse_config(&text).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("transport", "difusion"));
        assert!(reason.contains("unknown"));
        let text = format!("{MINIMAL}\n[[reactions]]\ntemplate = \"decay\"\nrate = 1.0\nrat = 2.0\n");
        let (section, key, _) = config_err(parse_config(&text).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("reactions[0]", "rat"));
        let (section, key, _) = config_err(parse_config(&format!("{MINIMAL}\n[grd]\nx = 1\n")).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("document", "grd"));
    }

    #[test]
    fn missing_and_mistyped_keys_are_named() {
        let (section, key, reason) = config_err(parse_config(&MINIMAL.replace("cells = 8\n", "")).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("grid", "cells"));
        assert!(reason.contains("missing"));
        let (section, key, _) = config_err(parse_config(&MINIMAL.replace("cells = 8", "cells = \"eight\"")).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("grid", "cells"));
        let (section, key, _) =
            config_err(parse_config(&MINIMAL.replace("[transport]", "[transport]\nmode = \"difusion\"")).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("transport", "mode"));
    }

    #[test]
    fn unstable_dt_cites_the_bound() {
        let bound = 0.9 / (2.0 * 2.0 * 0.1 * 64.0);
        let text = MINIMAL.replace("t_final = 1.0", &format!("t_final = 1.0\ndt = {}", 1.01 * bound));
        let (section, key, reason) = config_err(parse_config(&text).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("solver", "dt"));
        assert!(reason.contains(&format!("{bound:.6e}")), "{reason}");
        let ok = MINIMAL.replace("t_final = 1.0", &format!("t_final = 1.0\ndt = {}", 0.99 * bound));
        assert!(parse_config(&ok).is_ok());
        let implicit = text.replace("[solver]", "[solver]\nscheme = \"implicit-euler\"");
        assert!(parse_config(&implicit).is_ok());
    }

    #[test]
    fn vmax_tail_and_state_cap_are_enforced() {
        let kk = "[grid]\ncells = 4\nlength = 1.0\nvelocity_cells = 8\nvmax = 3.0\n\n[transport]\nmode = \"klein-kramers\"\n\n[solver]\nnmax = 1\nt_final = 0.1\n";
        let (section, key, _) = config_err(parse_config(kk).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("grid", "vmax"));
        assert!(parse_config(&kk.replace("vmax = 3.0", "vmax = 6.0")).is_ok());
        let big = MINIMAL.replace("nmax = 2", "nmax = 6").replace("[solver]", "[solver]\nstate_cap = 1000");
        let (section, key, _) = config_err(parse_config(&big).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("solver", "nmax"));
    }

    #[test]
    fn overrides_replace_values_before_validation() {
        let o = Overrides { seed: Some(9), nmax: Some(3), trajectories: Some(5), t_final: Some(2.0), ..Default::default() };
        let cfg = parse_with_overrides(MINIMAL, &o).unwrap();
        assert_eq!(cfg.sampler.seed, 9);
        assert_eq!(cfg.solver.nmax, OneOrMany::One(3));
        assert_eq!(cfg.solver.t_final, 2.0);
        assert_eq!(cfg.sampler.t_final, Some(2.0));
        let o = Overrides { dt: Some(1.0), ..Default::default() };
        assert!(parse_with_overrides(MINIMAL, &o).is_err());
        let o = Overrides { dt: Some(1.0), sampler_time: true, ..Default::default() };
        assert_eq!(parse_with_overrides(MINIMAL, &o).unwrap().sampler.dt, Some(1.0));
    }

    #[test]
    fn reactions_and_exchange_build() {
        let text = format!(
            "{MINIMAL}\n[[reactions]]\ntemplate = \"aa-to-a\"\nkernel = \"doi\"\nrate = 2.0\nradius = 0.25\n\n[exchange]\nmodel = \"bl-kernel\"\nkappa_out = 1.0\n"
        );
        let cfg = parse_config(&text).unwrap();
        let p = cfg.problem().unwrap();
        assert_eq!(p.couplings.len(), 2);
        assert!(matches!(&p.couplings[0], CouplingSpec::Reaction(rx) if rx.rate == RateForm::Doi { rate: 2.0, radius: 0.25 }));
        let missing = text.replace("radius = 0.25\n", "");
        let (section, key, _) = config_err(parse_config(&missing).unwrap_err());
        assert_eq!((section.as_str(), key.as_str()), ("reactions[0]", "radius"));
    }
}
