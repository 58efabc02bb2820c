//! Loss and gain of the pair reactions `A + A → A` and `A + B → C`.
//!
//! The gain is assembled from every reactant pair of the source tensor,
//! so `∫ gain = ∫ loss` holds for any input, symmetric or not. For symmetric
//! inputs this reduces to the combinatorial prefactors `(n+1)/2` and
//! `(a+1)(b+1)/c`.

use super::kernel::PairKernel;
use super::reaction::{ReactionSpec, Template};
use crate::error::{Error, Result};
use crate::fockspace::{LevelShape, PhaseGrid, MAX_RANK};

#[derive(Debug, Clone)]
pub(crate) struct PairOp {
    kernel: PairKernel,
    species: [usize; 3],
    gv: usize,
    cell_measure: f64,
}

impl PairOp {
    pub(crate) fn new(rx: &ReactionSpec, grid: &PhaseGrid, kt_over_m: f64) -> Self {
        Self {
            kernel: PairKernel::new(grid, &rx.rate, rx.placement, rx.velocity_policy, kt_over_m),
            species: rx.species,
            gv: grid.velocity_count(),
            cell_measure: grid.cell_measure(),
        }
    }

    fn same(&self) -> bool {
        self.species[0] == self.species[1]
    }

    /// Slot pairs of reactant candidates in `shape`.
    fn pairs(&self, shape: &LevelShape) -> Vec<(usize, usize)> {
        let [a, b, _] = self.species;
        let mut out = Vec::new();
        if a >= shape.counts().len() || b >= shape.counts().len() {
            return out;
        }
        let ba = shape.block(a);
        if self.same() {
            for i in ba.clone() {
                for j in i + 1..ba.end {
                    out.push((i, j));
                }
            }
        } else {
            for i in ba {
                for j in shape.block(b) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Counts after one reaction, if the reactants are present.
    pub(crate) fn target_counts(&self, counts: &[usize]) -> Option<Vec<usize>> {
        let [a, b, c] = self.species;
        let mut t = counts.to_vec();
        t[a] = t[a].checked_sub(1)?;
        t[b] = t[b].checked_sub(1)?;
        t[c] += 1;
        Some(t)
    }

    /// Counts of the level feeding `counts` through one reaction.
    pub(crate) fn source_counts(&self, counts: &[usize]) -> Option<Vec<usize>> {
        let [a, b, c] = self.species;
        let mut s = counts.to_vec();
        s[c] = s[c].checked_sub(1)?;
        s[a] += 1;
        s[b] += 1;
        Some(s)
    }

    pub(crate) fn max_rate(&self) -> f64 {
        self.kernel.max_rate()
    }

    /// Number of reactant pairs at `counts`.
    pub(crate) fn pair_count(&self, counts: &[usize]) -> usize {
        let [a, b, _] = self.species;
        if self.same() {
            counts[a] * counts[a].saturating_sub(1) / 2
        } else {
            counts[a] * counts[b]
        }
    }

    /// Adds `scale · f(q) Σ_pairs Λ(q_i, q_j)` to `out`.
    pub(crate) fn loss(&self, shape: &LevelShape, f: &[f64], out: &mut [f64], scale: f64) {
        let pairs = self.pairs(shape);
        if pairs.is_empty() {
            return;
        }
        let mut digits = [0usize; MAX_RANK];
        for (idx, (o, &v)) in out.iter_mut().zip(f).enumerate() {
            if v == 0.0 {
                continue;
            }
            shape.decode(idx, &mut digits);
            let rate: f64 = pairs
                .iter()
                .map(|&(i, j)| self.kernel.rate(digits[i] / self.gv, digits[j] / self.gv))
                .sum();
            *o += scale * v * rate;
        }
    }

    /// `∫ f Σ_pairs Λ`, the outgoing probability rate of one level.
    pub(crate) fn loss_mass(&self, shape: &LevelShape, f: &[f64]) -> f64 {
        let mut out = vec![0.0; f.len()];
        self.loss(shape, f, &mut out, 1.0);
        out.iter().sum::<f64>() * self.cell_measure.powi(shape.rank() as i32)
    }

    /// Adds `scale · gain` into the target level `tgt` from source `src`.
    pub(crate) fn gain(&self, src: &LevelShape, f: &[f64], tgt: &LevelShape, out: &mut [f64], scale: f64) {
        let c = self.species[2];
        let n_c = tgt.counts()[c];
        let pairs = self.pairs(src);
        if n_c == 0 || pairs.is_empty() || f.iter().all(|x| *x == 0.0) {
            return;
        }
        let m = tgt.cells();
        let gv = self.gv;
        let mut rest_counts = tgt.counts().to_vec();
        rest_counts[c] -= 1;
        let rest = LevelShape::new(rest_counts, m);
        let uniform = self.kernel.is_uniform();
        // h[r, y]: rate density of a product at y with spectators r.
        let mut h = vec![0.0; rest.len() * if uniform { gv } else { m }];
        let mut digits = [0usize; MAX_RANK];
        let mut rd = [0usize; MAX_RANK];
        for (idx, &v) in f.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            src.decode(idx, &mut digits);
            for &(i, j) in &pairs {
                let (ci, cj) = (digits[i], digits[j]);
                let lam = self.kernel.rate(ci / gv, cj / gv);
                if lam == 0.0 {
                    continue;
                }
                let mut k = 0;
                for (l, d) in digits.iter().enumerate().take(src.rank()) {
                    if l != i && l != j {
                        rd[k] = *d;
                        k += 1;
                    }
                }
                let r = rest.encode(&rd[..k]);
                let amount = lam * v;
                if uniform {
                    let row = &mut h[r * gv..(r + 1) * gv];
                    self.kernel.place_velocity(ci % gv, cj % gv, &mut |jv, p| row[jv] += p * amount);
                } else {
                    let row = &mut h[r * m..(r + 1) * m];
                    let kernel = &self.kernel;
                    kernel.place_spatial(ci / gv, cj / gv, &mut |s, ps| {
                        kernel.place_velocity(ci % gv, cj % gv, &mut |jv, pv| row[s * gv + jv] += ps * pv * amount);
                    });
                }
            }
        }
        let spatial = m / gv;
        let w = self.cell_measure;
        let block = tgt.block(c);
        for (q, o) in out.iter_mut().enumerate() {
            tgt.decode(q, &mut digits);
            let mut acc = 0.0;
            for xi in block.clone() {
                let mut k = 0;
                for (l, d) in digits.iter().enumerate().take(tgt.rank()) {
                    if l != xi {
                        rd[k] = *d;
                        k += 1;
                    }
                }
                let r = rest.encode(&rd[..k]);
                let y = digits[xi];
                acc += if uniform { h[r * gv + y % gv] / spatial as f64 } else { h[r * m + y] };
            }
            // Two integrated reactant cells, one product density: net factor w.
            *o += scale * acc * w / n_c as f64;
        }
    }
}

fn expect(rx: &ReactionSpec, template: Template) -> Result<()> {
    if rx.template != template {
        return Err(Error::InvalidReaction(format!("expected {template:?}, got {:?}", rx.template)));
    }
    Ok(())
}

fn check(shape: &LevelShape, f: &[f64], grid: &PhaseGrid, rx: &ReactionSpec) -> Result<()> {
    if f.len() != shape.len() || shape.cells() != grid.one_particle_cells() {
        return Err(Error::DimensionMismatch(format!(
            "level tensor of {} entries on {} cells does not match the grid",
            f.len(),
            shape.cells()
        )));
    }
    rx.validate(grid, shape.counts().len())
}

fn loss_impl(shape: &LevelShape, f: &[f64], rx: &ReactionSpec, grid: &PhaseGrid) -> Result<Vec<f64>> {
    check(shape, f, grid, rx)?;
    let op = PairOp::new(rx, grid, 1.0);
    let mut out = vec![0.0; f.len()];
    op.loss(shape, f, &mut out, 1.0);
    Ok(out)
}

fn gain_impl(
    src: &LevelShape,
    f: &[f64],
    rx: &ReactionSpec,
    grid: &PhaseGrid,
    kt_over_m: f64,
) -> Result<(LevelShape, Vec<f64>)> {
    check(src, f, grid, rx)?;
    let op = PairOp::new(rx, grid, kt_over_m);
    let counts = op.target_counts(src.counts()).ok_or_else(|| {
        Error::DimensionMismatch(format!("source level {:?} lacks the reactants", src.counts()))
    })?;
    let tgt = LevelShape::new(counts, src.cells());
    let mut out = vec![0.0; tgt.len()];
    op.gain(src, f, &tgt, &mut out, 1.0);
    Ok((tgt, out))
}

/// `L_n f_n = f_n(q) Σ_{i<j} ∫ λ(y; q_i, q_j) dy`; zero below two particles.
pub fn loss_aa(shape: &LevelShape, f: &[f64], rx: &ReactionSpec, grid: &PhaseGrid) -> Result<Vec<f64>> {
    expect(rx, Template::AaToA)?;
    loss_impl(shape, f, rx, grid)
}

/// Gain into level `n` from the level-`n+1` tensor `f_np1`. Products drawn
/// from a Maxwellian use the thermal variance `kt_over_m`.
pub fn gain_aa(
    shape_np1: &LevelShape,
    f_np1: &[f64],
    rx: &ReactionSpec,
    grid: &PhaseGrid,
    kt_over_m: f64,
) -> Result<Vec<f64>> {
    expect(rx, Template::AaToA)?;
    if shape_np1.rank() == 0 {
        return Err(Error::DimensionMismatch("no level below the vacuum".into()));
    }
    if shape_np1.rank() < 2 {
        // Level 0 has a single entry and no product slot to fill.
        return Ok(vec![0.0; 1]);
    }
    Ok(gain_impl(shape_np1, f_np1, rx, grid, kt_over_m)?.1)
}

/// Loss of `A + B → C` at level `(a, b, c)`.
pub fn loss_abc(shape: &LevelShape, f: &[f64], rx: &ReactionSpec, grid: &PhaseGrid) -> Result<Vec<f64>> {
    expect(rx, Template::AbToC)?;
    loss_impl(shape, f, rx, grid)
}

/// Gain of `A + B → C` into level `(a, b, c)` from the source level
/// `(a+1, b+1, c-1)`. Returns the target shape with the tensor.
pub fn gain_abc(
    src: &LevelShape,
    f_src: &[f64],
    rx: &ReactionSpec,
    grid: &PhaseGrid,
    kt_over_m: f64,
) -> Result<(LevelShape, Vec<f64>)> {
    expect(rx, Template::AbToC)?;
    gain_impl(src, f_src, rx, grid, kt_over_m)
}
