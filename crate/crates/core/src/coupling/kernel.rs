//! Cell-averaged pair rates `Λ(c₁, c₂) = ⟨∫ λ(y; x₁, x₂) dy⟩` and the
//! discrete placement law of the product.

use super::reaction::{Placement, RateForm, VelocityPolicy};
use crate::fockspace::{PhaseGrid, MAX_DIM};

/// Sub-cell quadrature points per axis for kernels without a closed form.
const QUAD_1D: usize = 8;
const QUAD_ND: usize = 4;
/// Segment sample points per cell width for uniform-on-segment placement.
const SEGMENT_SAMPLES: usize = 16;

#[derive(Debug, Clone)]
pub(crate) struct PairKernel {
    dim: usize,
    g: usize,
    gv: usize,
    /// Rate by offset between the reactant cells: `Λ` only depends on it.
    table: Vec<f64>,
    uniform: bool,
    placement: Placement,
    policy: VelocityPolicy,
    maxwell: Vec<f64>,
    axes: Vec<[usize; MAX_DIM]>,
}

/// Weights of `u₁ − u₂` for two independent midpoint-rule samples on `[0, 1)`.
fn difference_law(q: usize) -> Vec<(f64, f64)> {
    let q_i = q as isize;
    (-(q_i - 1)..q_i)
        .map(|k| (k as f64 / q as f64, (q_i - k.abs()) as f64 / (q * q) as f64))
        .collect()
}

/// CDF of the triangular law of `u₁ − u₂` on `[-1, 1]`.
fn triangular_cdf(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t <= 0.0 {
        0.5 * (1.0 + t).powi(2)
    } else if t < 1.0 {
        1.0 - 0.5 * (1.0 - t).powi(2)
    } else {
        1.0
    }
}

impl PairKernel {
    /// Builds the kernel; `kt_over_m` sets the resampling Maxwellian.
    pub(crate) fn new(
        grid: &PhaseGrid,
        rate: &RateForm,
        placement: Placement,
        policy: VelocityPolicy,
        kt_over_m: f64,
    ) -> Self {
        let dim = grid.dim();
        let g = grid.cells_per_axis();
        let dx = grid.cell_width();
        let span = 2 * g - 1;
        let n_offsets = span.pow(dim as u32);
        let mut table = vec![0.0; n_offsets];
        let uniform = matches!(rate, RateForm::WellMixed { .. });
        let law = difference_law(if dim == 1 { QUAD_1D } else { QUAD_ND });
        for (o, slot) in table.iter_mut().enumerate() {
            let mut off = [0.0; MAX_DIM];
            let mut rest = o;
            for item in off.iter_mut().take(dim) {
                *item = (rest % span) as f64 - (g as f64 - 1.0);
                rest /= span;
            }
            *slot = match *rate {
                RateForm::WellMixed { rate } => rate,
                RateForm::Doi { rate, radius } if dim == 1 => {
                    let r = radius / dx;
                    let k = off[0];
                    rate * (triangular_cdf(r - k) - triangular_cdf(-r - k)).max(0.0)
                }
                RateForm::Doi { rate, radius } => {
                    rate * Self::average(dim, &law, &off, |d2| if d2 < radius * radius / (dx * dx) { 1.0 } else { 0.0 })
                }
                RateForm::Gaussian { rate, width } => {
                    let s2 = width * width / (dx * dx);
                    rate * Self::average(dim, &law, &off, |d2| (-0.5 * d2 / s2).exp())
                }
                RateForm::Field(_) => 0.0,
            };
        }
        let maxwell = grid.velocity().map_or(vec![1.0], |v| v.maxwell_masses(kt_over_m));
        Self {
            dim,
            g,
            gv: grid.velocity_count(),
            table,
            uniform,
            placement,
            policy,
            maxwell,
            axes: (0..grid.spatial_count()).map(|s| grid.axis_indices(s)).collect(),
        }
    }

    /// Average of `k(|d|²)` over the sub-cell difference law, `d` in cell units.
    fn average(dim: usize, law: &[(f64, f64)], off: &[f64; MAX_DIM], k: impl Fn(f64) -> f64) -> f64 {
        let m = law.len();
        let total = m.pow(dim as u32);
        let mut acc = 0.0;
        for combo in 0..total {
            let mut rest = combo;
            let mut w = 1.0;
            let mut d2 = 0.0;
            for item in off.iter().take(dim) {
                let (t, p) = law[rest % m];
                rest /= m;
                w *= p;
                d2 += (item + t).powi(2);
            }
            acc += w * k(d2);
        }
        acc
    }

    fn offset_index(&self, s1: usize, s2: usize) -> usize {
        let span = 2 * self.g - 1;
        let (a, b) = (&self.axes[s1], &self.axes[s2]);
        (0..self.dim)
            .rev()
            .fold(0, |acc, axis| acc * span + (a[axis] + self.g - 1 - b[axis]))
    }

    /// `Λ` for reactants in spatial cells `s1`, `s2`.
    pub(crate) fn rate(&self, s1: usize, s2: usize) -> f64 {
        self.table[self.offset_index(s1, s2)]
    }

    pub(crate) fn max_rate(&self) -> f64 {
        self.table.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Spatial placement of the product, `(spatial cell, probability)`.
    pub(crate) fn place_spatial(&self, s1: usize, s2: usize, sink: &mut impl FnMut(usize, f64)) {
        if self.uniform {
            let n = self.axes.len();
            for s in 0..n {
                sink(s, 1.0 / n as f64);
            }
            return;
        }
        let (a, b) = (self.axes[s1], self.axes[s2]);
        match self.placement {
            Placement::Midpoint => {
                // Per axis the midpoint of two uniform points lies in one cell
                // (even index sum) or straddles two cells half and half.
                let combos = 1usize << self.dim;
                for bits in 0..combos {
                    let mut idx = [0usize; MAX_DIM];
                    let mut w = 1.0;
                    for axis in 0..self.dim {
                        let sum = a[axis] + b[axis];
                        let up = (bits >> axis) & 1;
                        if sum % 2 == 0 {
                            if up == 1 {
                                w = 0.0;
                            }
                            idx[axis] = sum / 2;
                        } else {
                            w *= 0.5;
                            idx[axis] = sum / 2 + up;
                        }
                    }
                    if w > 0.0 {
                        sink(self.spatial_of(&idx), w);
                    }
                }
            }
            Placement::Segment => {
                let steps = (0..self.dim).map(|k| a[k].abs_diff(b[k])).max().unwrap_or(0);
                if steps == 0 {
                    sink(s1, 1.0);
                    return;
                }
                let samples = SEGMENT_SAMPLES * steps;
                for k in 0..samples {
                    let t = (k as f64 + 0.5) / samples as f64;
                    let mut idx = [0usize; MAX_DIM];
                    for axis in 0..self.dim {
                        let x = (a[axis] as f64 + 0.5) * (1.0 - t) + (b[axis] as f64 + 0.5) * t;
                        idx[axis] = (x.floor() as usize).min(self.g - 1);
                    }
                    sink(self.spatial_of(&idx), 1.0 / samples as f64);
                }
            }
        }
    }

    fn spatial_of(&self, idx: &[usize; MAX_DIM]) -> usize {
        (0..self.dim).fold(0, |acc, axis| acc * self.g + idx[axis])
    }

    /// Velocity cell of the product given reactant velocity cells.
    pub(crate) fn place_velocity(&self, j1: usize, j2: usize, sink: &mut impl FnMut(usize, f64)) {
        if self.gv == 1 {
            sink(0, 1.0);
            return;
        }
        match self.policy {
            VelocityPolicy::ResampleMaxwell => {
                for (j, p) in self.maxwell.iter().enumerate() {
                    sink(j, *p);
                }
            }
            VelocityPolicy::InheritAverage => {
                let sum = j1 + j2;
                if sum % 2 == 0 {
                    sink(sum / 2, 1.0);
                } else {
                    sink(sum / 2, 0.5);
                    sink(sum / 2 + 1, 0.5);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(grid: &PhaseGrid, rate: RateForm, placement: Placement) -> PairKernel {
        PairKernel::new(grid, &rate, placement, VelocityPolicy::ResampleMaxwell, 1.0)
    }

    /// Overlap of `[x1 - R, x1 + R]` with cell `s2`, averaged over `x1` in
    /// cell `s1` by a fine midpoint rule (the integrand is piecewise linear).
    fn doi_oracle(s1: usize, s2: usize, dx: f64, radius: f64) -> f64 {
        let n = 20_000;
        let (lo, hi) = (s2 as f64 * dx, (s2 + 1) as f64 * dx);
        (0..n)
            .map(|i| {
                let x1 = (s1 as f64 + (i as f64 + 0.5) / n as f64) * dx;
                ((x1 + radius).min(hi) - (x1 - radius).max(lo)).max(0.0) / dx
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn doi_rate_is_in_range_probability() {
        let g = PhaseGrid::new(1, 8, 0.125).unwrap();
        let k = kernel(&g, RateForm::Doi { rate: 2.0, radius: 0.2 }, Placement::Midpoint);
        for (s1, s2) in [(0, 0), (3, 4), (3, 5), (2, 0), (7, 1)] {
            let want = 2.0 * doi_oracle(s1, s2, 0.125, 0.2);
            assert!((k.rate(s1, s2) - want).abs() < 1e-7, "{s1},{s2}: {} vs {want}", k.rate(s1, s2));
            assert_eq!(k.rate(s1, s2), k.rate(s2, s1));
        }
        assert_eq!(k.rate(0, 7), 0.0);
    }

    #[test]
    fn well_mixed_rate_is_constant_with_uniform_placement() {
        let g = PhaseGrid::new(2, 3, 0.5).unwrap();
        let k = kernel(&g, RateForm::WellMixed { rate: 1.5 }, Placement::Midpoint);
        assert_eq!(k.rate(0, 8), 1.5);
        let mut total = 0.0;
        k.place_spatial(0, 8, &mut |_, p| total += p);
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_rate_decays_with_distance() {
        let g = PhaseGrid::new(2, 4, 0.25).unwrap();
        let k = kernel(&g, RateForm::Gaussian { rate: 1.0, width: 0.2 }, Placement::Midpoint);
        assert!(k.rate(0, 0) > k.rate(0, 1));
        assert!(k.rate(0, 1) > k.rate(0, 2));
        assert!((k.rate(1, 6) - k.rate(6, 1)).abs() < 1e-15);
    }

    #[test]
    fn placements_are_probability_laws() {
        let g = PhaseGrid::new(1, 6, 1.0).unwrap();
        for placement in [Placement::Midpoint, Placement::Segment] {
            let k = kernel(&g, RateForm::Doi { rate: 1.0, radius: 3.0 }, placement);
            for (a, b) in [(0, 0), (1, 2), (0, 5), (4, 1)] {
                let mut cells = vec![0.0; 6];
                k.place_spatial(a, b, &mut |s, p| cells[s] += p);
                assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                let lo = a.min(b);
                let hi = a.max(b);
                assert!(cells.iter().enumerate().all(|(s, p)| *p == 0.0 || (lo..=hi).contains(&s)));
            }
        }
        let k = kernel(&g, RateForm::Doi { rate: 1.0, radius: 3.0 }, Placement::Midpoint);
        let mut cells = vec![0.0; 6];
        k.place_spatial(1, 2, &mut |s, p| cells[s] += p);
        assert_eq!(cells, vec![0.0, 0.5, 0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn inherited_velocity_is_the_average() {
        let g = PhaseGrid::new(1, 2, 1.0).unwrap().with_velocity(6, 3.0).unwrap();
        let k = PairKernel::new(&g, &RateForm::WellMixed { rate: 1.0 }, Placement::Midpoint, VelocityPolicy::InheritAverage, 1.0);
        let mut mean = 0.0;
        k.place_velocity(1, 4, &mut |j, p| mean += p * g.velocity_center(j));
        assert!((mean - 0.5 * (g.velocity_center(1) + g.velocity_center(4))).abs() < 1e-15);
    }
}
