use crate::error::{Error, Result};
use crate::fockspace::PhaseGrid;

/// Reaction template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    /// `A + A → A`
    AaToA,
    /// `A + B → C`
    AbToC,
    /// `A → ∅`
    Decay,
    /// `∅ → A`
    Birth,
}

/// A spatially varying non-negative rate, one value per spatial cell.
#[derive(Debug, Clone, PartialEq)]
pub enum RateField {
    Constant(f64),
    PerCell(Vec<f64>),
}

impl RateField {
    pub fn at(&self, spatial: usize) -> f64 {
        match self {
            RateField::Constant(k) => *k,
            RateField::PerCell(v) => v[spatial],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, RateField::Constant(_))
    }

    /// `∫ field dx` over the spatial domain.
    pub fn integral(&self, grid: &PhaseGrid) -> f64 {
        (0..grid.spatial_count()).map(|s| self.at(s)).sum::<f64>() * grid.cell_volume()
    }

    pub fn max(&self) -> f64 {
        match self {
            RateField::Constant(k) => *k,
            RateField::PerCell(v) => v.iter().copied().fold(0.0, f64::max),
        }
    }

    pub(crate) fn validate(&self, grid: &PhaseGrid, what: &str) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            RateField::Constant(k) if !ok(*k) => {
                Err(Error::InvalidReaction(format!("{what} must be finite and non-negative")))
            }
            RateField::PerCell(v) if v.len() != grid.spatial_count() => Err(Error::InvalidReaction(
                format!("{what} has {} values for {} cells", v.len(), grid.spatial_count()),
            )),
            RateField::PerCell(v) if !v.iter().all(|x| ok(*x)) => {
                Err(Error::InvalidReaction(format!("{what} must be finite and non-negative")))
            }
            _ => Ok(()),
        }
    }
}

/// Rate function of a reaction.
///
/// The pair forms are `λ(y; x₁, x₂) = r(|x₁ − x₂|) · P(y | x₁, x₂)` with a
/// placement density `P`, so `∫ λ dy = r`:
/// well-mixed `r = λ₀` with `P = 1/|X|`; doi `r = λ₀ · 1{|x₁ − x₂| < R}`;
/// gaussian `r = λ₀ exp(-|x₁ − x₂|² / (2σ²))`.
#[derive(Debug, Clone, PartialEq)]
pub enum RateForm {
    WellMixed { rate: f64 },
    Doi { rate: f64, radius: f64 },
    Gaussian { rate: f64, width: f64 },
    /// Per-particle rate `k_d(x)` for decay, intensity `b(x)` per volume for birth.
    Field(RateField),
}

impl RateForm {
    pub fn is_pair(&self) -> bool {
        !matches!(self, RateForm::Field(_))
    }
}

/// Where the product of a doi or gaussian pair reaction appears.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Midpoint of the reactants, binned to cells.
    #[default]
    Midpoint,
    /// Uniform on the segment joining the reactants.
    Segment,
}

/// Velocity given to products and newly created particles on phase grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VelocityPolicy {
    #[default]
    ResampleMaxwell,
    InheritAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSpec {
    pub template: Template,
    pub rate: RateForm,
    pub placement: Placement,
    pub velocity_policy: VelocityPolicy,
    /// `[first reactant, second reactant, product]` species indices.
    /// Decay reads only the first entry, birth only the last.
    pub species: [usize; 3],
}

impl ReactionSpec {
    pub fn aa_to_a(rate: RateForm) -> Self {
        Self::new(Template::AaToA, rate, [0, 0, 0])
    }

    pub fn ab_to_c(rate: RateForm) -> Self {
        Self::new(Template::AbToC, rate, [0, 1, 2])
    }

    pub fn decay(rate: RateField) -> Self {
        Self::new(Template::Decay, RateForm::Field(rate), [0, 0, 0])
    }

    pub fn birth(intensity: RateField) -> Self {
        Self::new(Template::Birth, RateForm::Field(intensity), [0, 0, 0])
    }

    fn new(template: Template, rate: RateForm, species: [usize; 3]) -> Self {
        Self {
            template,
            rate,
            placement: Placement::default(),
            velocity_policy: VelocityPolicy::default(),
            species,
        }
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn with_velocity_policy(mut self, policy: VelocityPolicy) -> Self {
        self.velocity_policy = policy;
        self
    }

    pub fn with_species(mut self, species: [usize; 3]) -> Self {
        self.species = species;
        self
    }

    /// `true` when the rate does not depend on positions.
    pub fn is_well_mixed(&self) -> bool {
        match &self.rate {
            RateForm::WellMixed { .. } => true,
            RateForm::Field(f) => f.is_constant(),
            _ => false,
        }
    }

    /// The constant rate of a well-mixed reaction (`λ₀`, `k_d` or `b`).
    pub fn well_mixed_rate(&self) -> Result<f64> {
        match &self.rate {
            RateForm::WellMixed { rate } => Ok(*rate),
            RateForm::Field(RateField::Constant(k)) => Ok(*k),
            _ => Err(Error::NotWellMixed(format!("{:?}", self.rate))),
        }
    }

    pub fn validate(&self, grid: &PhaseGrid, n_species: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidReaction(m));
        let [a, b, c] = self.species;
        let used: &[usize] = match self.template {
            Template::AaToA | Template::AbToC => &self.species,
            Template::Decay => &self.species[..1],
            Template::Birth => &self.species[2..],
        };
        if let Some(s) = used.iter().find(|&&s| s >= n_species) {
            return bad(format!("species {s} not in a {n_species}-species layout"));
        }
        match self.template {
            Template::AaToA if !(a == b && b == c) => {
                return bad("A + A -> A needs one species in all three roles".into())
            }
            Template::AbToC if a == b || a == c || b == c => {
                return bad("A + B -> C needs three distinct species".into())
            }
            _ => {}
        }
        let pair_template = matches!(self.template, Template::AaToA | Template::AbToC);
        if pair_template != self.rate.is_pair() {
            return bad(format!("rate form {:?} does not fit template {:?}", self.rate, self.template));
        }
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        match &self.rate {
            RateForm::WellMixed { rate } if !ok(*rate) => bad("rate must be finite and non-negative".into()),
            RateForm::Doi { rate, radius } if !ok(*rate) || !(radius.is_finite() && *radius > 0.0) => {
                bad("doi needs a non-negative rate and a positive radius".into())
            }
            RateForm::Gaussian { rate, width } if !ok(*rate) || !(width.is_finite() && *width > 0.0) => {
                bad("gaussian needs a non-negative rate and a positive width".into())
            }
            RateForm::Field(f) => f.validate(grid, "rate field"),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_form_mismatch_is_rejected() {
        let g = PhaseGrid::new(1, 4, 0.25).unwrap();
        let rx = ReactionSpec::aa_to_a(RateForm::Field(RateField::Constant(1.0)));
        assert!(rx.validate(&g, 1).is_err());
        let rx = ReactionSpec::decay(RateField::PerCell(vec![1.0; 3]));
        assert!(rx.validate(&g, 1).is_err());
        assert!(ReactionSpec::ab_to_c(RateForm::WellMixed { rate: 1.0 }).validate(&g, 2).is_err());
        assert!(ReactionSpec::ab_to_c(RateForm::WellMixed { rate: 1.0 }).validate(&g, 3).is_ok());
        assert!(ReactionSpec::aa_to_a(RateForm::Doi { rate: 1.0, radius: 0.0 }).validate(&g, 1).is_err());
        assert!(ReactionSpec::aa_to_a(RateForm::WellMixed { rate: -1.0 }).validate(&g, 1).is_err());
    }

    #[test]
    fn well_mixed_detection() {
        assert!(ReactionSpec::decay(RateField::Constant(2.0)).is_well_mixed());
        assert!(!ReactionSpec::aa_to_a(RateForm::Doi { rate: 1.0, radius: 0.1 }).is_well_mixed());
        assert!(matches!(
            ReactionSpec::aa_to_a(RateForm::Gaussian { rate: 1.0, width: 0.1 }).well_mixed_rate(),
            Err(Error::NotWellMixed(_))
        ));
    }
}
