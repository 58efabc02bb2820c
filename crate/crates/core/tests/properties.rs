//! Randomised invariants of the operators, solver and sampler.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use openfock::coupling::{
    audit_conservation, boundary_flux, random_probes, Assembly, BlKernel, BoundaryReservoir, CouplingSpec,
    ExchangeModel, RateForm, ReactionSpec,
};
use openfock::fockspace::{
    level_mass, symmetrize, symmetry_defect, total_mass, BoundaryKind, FockDensity, Layout, LevelShape,
    ParticleConfiguration, Particle, PhaseGrid, Side,
};
use openfock::reduction::cme_generator;
use openfock::sampler::{step_transport, Dynamics, InitialCondition, SamplerRun};
use openfock::solver::{stability_bound, step, HierarchyProblem};
use openfock::transport::{apply_transport, ExternalPotential, TransportMode, TransportSpec};

fn random_level(shape: &LevelShape, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..shape.len()).map(|_| rng.random::<f64>()).collect();
    symmetrize(shape, &raw)
}

fn pair_form(kind: u8, rate: f64, reach: f64) -> RateForm {
    match kind {
        0 => RateForm::WellMixed { rate },
        1 => RateForm::Doi { rate, radius: reach },
        _ => RateForm::Gaussian { rate, width: reach },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn diffusion_conserves_mass_and_symmetry(
        g in 3usize..9, n in 1usize..4, d in 0.01f64..2.0, k in 0.0f64..20.0, seed in any::<u64>()
    ) {
        let grid = PhaseGrid::new(1, g, 1.0 / g as f64).unwrap();
        let spec = TransportSpec::diffusive(d)
            .with_potential(ExternalPotential::Harmonic { stiffness: k, center: [0.4, 0.0, 0.0] });
        let shape = LevelShape::single(n, grid.one_particle_cells());
        let f = random_level(&shape, seed);
        let out = apply_transport(&shape, &f, &grid, &spec, TransportMode::Diffusion).unwrap();
        let scale = level_mass(&shape, &out.iter().map(|x| x.abs()).collect::<Vec<_>>(), &grid).max(1e-300);
        prop_assert!(level_mass(&shape, &out, &grid).abs() <= 1e-12 * scale);
        let amax = out.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        prop_assert!(symmetry_defect(&shape, &out) <= 1e-12 * amax);
    }

    #[test]
    fn klein_kramers_conserves_mass_and_symmetry(
        g in 3usize..6, gv in 2usize..6, n in 1usize..3, eta in 0.0f64..5.0, seed in any::<u64>()
    ) {
        let grid = PhaseGrid::new(1, g, 1.0 / g as f64).unwrap().with_velocity(2 * gv, 6.0).unwrap();
        let spec = TransportSpec::langevin(eta, 1.0, 1.0);
        let shape = LevelShape::single(n, grid.one_particle_cells());
        let f = random_level(&shape, seed);
        for mode in [TransportMode::KleinKramers, TransportMode::Liouville] {
            let out = apply_transport(&shape, &f, &grid, &spec, mode).unwrap();
            let scale = level_mass(&shape, &out.iter().map(|x| x.abs()).collect::<Vec<_>>(), &grid).max(1e-300);
            prop_assert!(level_mass(&shape, &out, &grid).abs() <= 1e-12 * scale);
            let amax = out.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            prop_assert!(symmetry_defect(&shape, &out) <= 1e-12 * amax);
        }
    }

    #[test]
    fn couplings_conserve_probability(
        g in 2usize..6, nmax in 2usize..5, kind in 0u8..3, rate in 0.1f64..10.0,
        reach in 0.05f64..0.6, kout in 0.1f64..3.0, mu in -2.0f64..1.0, seed in any::<u64>()
    ) {
        let grid = PhaseGrid::new(1, g, 1.0 / g as f64).unwrap();
        let spec = TransportSpec::diffusive(0.1);
        let single = Layout::single(nmax);
        let couplings = vec![
            CouplingSpec::Reaction(ReactionSpec::aa_to_a(pair_form(kind, rate, reach))),
            CouplingSpec::Exchange(ExchangeModel::BlKernel(BlKernel::balanced(&grid, &spec, kout, mu))),
        ];
        let a = Assembly::new(&couplings, &grid, &spec, &single).unwrap();
        let probes = random_probes(&single, &grid, 12, seed).unwrap();
        prop_assert!(audit_conservation(&a, &grid, &probes).unwrap() <= 1e-12 * (1.0 + a_rate(&a)));

        let multi = Layout::multi(vec![2, 2, 2]).unwrap();
        let abc = vec![CouplingSpec::Reaction(ReactionSpec::ab_to_c(pair_form(kind, rate, reach)))];
        let a = Assembly::new(&abc, &grid, &spec, &multi).unwrap();
        let probes = random_probes(&multi, &grid, 12, seed).unwrap();
        prop_assert!(audit_conservation(&a, &grid, &probes).unwrap() <= 1e-12 * (1.0 + a_rate(&a)));
    }

    #[test]
    fn layout_indices_round_trip(caps in proptest::collection::vec(0usize..4, 1..4)) {
        let layout = Layout::multi(caps.clone()).unwrap();
        prop_assert_eq!(layout.n_levels(), caps.iter().map(|c| c + 1).product::<usize>());
        for idx in 0..layout.n_levels() {
            let counts = layout.counts(idx);
            prop_assert!(counts.iter().zip(&caps).all(|(n, c)| n <= c));
            prop_assert_eq!(layout.index_of(&counts), Some(idx));
        }
    }

    #[test]
    fn rk4_step_keeps_mass_and_symmetry(
        g in 3usize..7, lam in 0.1f64..8.0, radius in 0.1f64..0.6, d in 0.01f64..0.5, frac in 0.05f64..1.0
    ) {
        let grid = PhaseGrid::new(1, g, 1.0 / g as f64).unwrap();
        let layout = Layout::single(3);
        let shape = layout.shape(3, grid.one_particle_cells());
        let mut init = FockDensity::zeros(layout.clone(), &grid).unwrap();
        let level = random_level(&shape, 17);
        let mass = level_mass(&shape, &level, &grid);
        for (dst, v) in init.level_mut(3).iter_mut().zip(&level) {
            *dst = v / mass;
        }
        let rx = CouplingSpec::Reaction(ReactionSpec::aa_to_a(RateForm::Doi { rate: lam, radius }));
        let prob = HierarchyProblem::new(grid.clone(), TransportSpec::diffusive(d), TransportMode::Diffusion, vec![rx], init.clone());
        let dt = frac * stability_bound(&prob).unwrap();
        let next = step(&init, &prob, dt).unwrap();
        prop_assert!((total_mass(&next, &grid).unwrap() - 1.0).abs() < 1e-12);
        for idx in 0..next.n_levels() {
            let amax = next.level(idx).iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            prop_assert!(symmetry_defect(&next.shape(idx), next.level(idx)) <= 1e-12 * amax);
        }
    }

    #[test]
    fn cme_generators_are_markov(
        lam in 0.0f64..5.0, kd in 0.0f64..5.0, b in 0.0f64..5.0, nmax in 1usize..8, volume in 0.2f64..3.0
    ) {
        use openfock::coupling::RateField;
        let couplings = vec![
            CouplingSpec::Reaction(ReactionSpec::aa_to_a(RateForm::WellMixed { rate: lam })),
            CouplingSpec::Reaction(ReactionSpec::decay(RateField::Constant(kd))),
            CouplingSpec::Reaction(ReactionSpec::birth(RateField::Constant(b))),
        ];
        let model = cme_generator(&couplings, volume, &Layout::single(nmax)).unwrap();
        let q = model.generator();
        for j in 0..q.ncols() {
            let col: f64 = q.column(j).iter().sum();
            prop_assert!(col.abs() <= 1e-12 * (1.0 + q[(j, j)].abs()));
            for i in 0..q.nrows() {
                prop_assert!(i == j || q[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn boundary_flux_vanishes_on_factorised_states(
        g in 2usize..6, gv in 2usize..5, rho in 0.0f64..3.0, n in 0usize..3, seed in any::<u64>()
    ) {
        let grid = PhaseGrid::new(1, g, 1.0 / g as f64).unwrap()
            .with_velocity(2 * gv, 6.0).unwrap()
            .with_face(0, Side::Lower, BoundaryKind::OpenWithReservoir).unwrap()
            .with_face(0, Side::Upper, BoundaryKind::OpenWithReservoir).unwrap();
        let res = BoundaryReservoir::new(rho, 1.0, 1.0);
        let axis = grid.velocity().unwrap();
        let f1: Vec<f64> = axis.maxwell_masses(1.0).iter().map(|p| rho * p / axis.width()).collect();
        let m = grid.one_particle_cells();
        let shape = LevelShape::single(n, m);
        let fn_ = random_level(&shape, seed);
        // f_{n+1}(X, (q, v)) = f_n(X) f°₁(v), independent of q.
        let fnp1: Vec<f64> = fn_.iter().flat_map(|&a| (0..m).map(move |c| (a, c))).map(|(a, c)| a * f1[c % axis.cells]).collect();
        let out = boundary_flux(&shape, &fn_, &fnp1, &ExchangeModel::BoundaryFlux(res), &grid).unwrap();
        prop_assert!(out.iter().all(|x| x.abs() <= 1e-14));
    }

    #[test]
    fn brownian_and_langevin_steps_stay_in_the_domain(
        x0 in proptest::collection::vec(0.0f64..1.0, 1..6), d in 0.01f64..1.0, dt in 1e-4f64..0.05, seed in any::<u64>()
    ) {
        let grid = PhaseGrid::new(1, 8, 0.125).unwrap();
        let particles: Vec<Particle> = x0.iter().enumerate()
            .map(|(i, &x)| Particle { id: i as u64, species: 0, position: [x, 0.0, 0.0], velocity: None })
            .collect();
        let cfg = ParticleConfiguration::new(particles.clone());
        let run = SamplerRun::new(grid.clone(), TransportSpec::diffusive(d), Dynamics::Brownian, vec![], InitialCondition::Fixed(cfg.clone()), Layout::single(6));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let next = step_transport(&cfg, &run, dt, &mut rng).unwrap();
        prop_assert!(next.is_valid(&grid));

        let phase = grid.with_velocity(8, 6.0).unwrap();
        let moving: Vec<Particle> = particles.into_iter().map(|mut p| { p.velocity = Some([3.0, 0.0, 0.0]); p }).collect();
        let cfg = ParticleConfiguration::new(moving);
        let run = SamplerRun::new(phase.clone(), TransportSpec::langevin(1.0, 1.0, 1.0), Dynamics::Langevin, vec![], InitialCondition::Fixed(cfg.clone()), Layout::single(6));
        let next = step_transport(&cfg, &run, dt, &mut rng).unwrap();
        prop_assert!(next.is_valid(&phase));
    }
}

fn a_rate(a: &Assembly) -> f64 {
    use openfock::coupling::Coupling;
    a.max_exit_rate()
}
