use std::sync::Arc;

use swarmeq::analytic::{critical_gravity, TruncatedGaussian};
use swarmeq::gibbs::{fixed_point_residual, GibbsState};
use swarmeq::solver::count_aggregates;
use swarmeq::*;

fn grid(l: f64, n: usize, mode: SpacingMode) -> Arc<Grid> {
    Arc::new(Grid::new(l, n, mode).unwrap())
}

#[test]
fn quadratic_attraction_at_critical_gravity() {
    let nu = 2f64.powi(-6);
    let g = critical_gravity(nu);
    let gr = grid(1.15, 1024, SpacingMode::QuadraticClustered);
    let rho0 = Density::indicator(gr.clone(), 0.0, 0.25, 4.0).unwrap();
    let k = InteractionKernel::power_law(2.0).unwrap();
    let v = ExternalPotential::linear(g).unwrap();
    let r = solve(&k, &v, nu, &rho0, &SolverConfig::default()).unwrap();
    assert!(r.converged);
    assert!((8..=24).contains(&r.iterations), "{}", r.iterations);
    assert!(r.lambda_inf() <= 6.6e-7);
    assert!(r.full_steps_descend());
    assert_eq!(r.energy_trace.len(), r.iterations + 1);

    let exact = exact_minimizer(nu, g).unwrap();
    assert!(r.density().l1_distance(&exact.sample(&gr)).unwrap() < 1e-5);
    let resid = fixed_point_residual(&k, &v, nu, r.density(), GibbsState::default()).unwrap();
    assert!(resid < 1e-6, "{resid}");
}

#[test]
fn no_forces_converge_immediately() {
    let gr = grid(3.0, 101, SpacingMode::Uniform);
    let rho0 = Density::indicator(gr, 0.2, 0.9, 1.0).unwrap();
    let r = solve(
        &InteractionKernel::Zero,
        &ExternalPotential::Zero,
        0.1,
        &rho0,
        &SolverConfig::default(),
    )
    .unwrap();
    assert!(r.converged);
    assert!(r.iterations <= 2);
    for v in r.density().values() {
        assert!((v - 1.0 / 3.0).abs() < 1e-14);
    }
}

fn reflect_l1(rho: &Density, centre: f64) -> f64 {
    let g = rho.grid();
    let (x, v) = (g.nodes(), rho.values());
    let interp = |y: f64| -> f64 {
        if y <= 0.0 || y >= g.length() {
            return 0.0;
        }
        // cubic Lagrange through the four surrounding nodes
        let i = (x.partition_point(|&xi| xi <= y) - 1).clamp(1, x.len() - 3);
        (i - 1..=i + 2)
            .map(|j| {
                let basis: f64 = (i - 1..=i + 2)
                    .filter(|&m| m != j)
                    .map(|m| (y - x[m]) / (x[j] - x[m]))
                    .product();
                basis * v[j]
            })
            .sum()
    };
    let diff: Vec<f64> = x
        .iter()
        .zip(v)
        .map(|(&xi, &vi)| (vi - interp(2.0 * centre - xi)).abs())
        .collect();
    g.integrate(&diff).unwrap()
}

#[test]
fn free_swarm_is_symmetric_about_its_centre() {
    let nu = 2f64.powi(-6);
    let gr = grid(6.0, 1024, SpacingMode::Uniform);
    let rho0 = Density::indicator(gr, 0.0, 2.0, 0.5).unwrap();
    let k = InteractionKernel::power_law(2.0).unwrap();
    let r = solve(
        &k,
        &ExternalPotential::Zero,
        nu,
        &rho0,
        &SolverConfig::default(),
    )
    .unwrap();
    assert!(r.converged);
    let m1 = r.diagnostics.moments.m1;
    let asym = reflect_l1(r.density(), m1);
    assert!(asym < 1e-4, "{asym} about {m1}");
}

#[test]
fn one_stage_schedule_is_a_plain_solve() {
    let nu = 2f64.powi(-5);
    let gr = grid(2.0, 257, SpacingMode::Uniform);
    let rho0 = Density::uniform(gr);
    let k = InteractionKernel::regularized_qanr(0.3).unwrap();
    let cfg = SolverConfig::default();
    let direct = solve(&k, &ExternalPotential::Zero, nu, &rho0, &cfg).unwrap();
    let schedule = ContinuationSchedule::new(vec![nu]).unwrap();
    let staged =
        solve_with_continuation(&k, &ExternalPotential::Zero, &schedule, &rho0, &cfg).unwrap();
    assert_eq!(staged.len(), 1);
    assert_eq!(staged[0].density().values(), direct.density().values());
    assert_eq!(staged[0].iterations, direct.iterations);
}

#[test]
fn continuation_warm_starts_each_stage() {
    let nu = 2f64.powi(-8);
    let gr = grid(2.0, 513, SpacingMode::Uniform);
    let rho0 = Density::uniform(gr);
    let k = InteractionKernel::regularized_qanr(0.3).unwrap();
    let schedule = ContinuationSchedule::geometric(8.0 * nu, nu, 4).unwrap();
    let reports = solve_with_continuation(
        &k,
        &ExternalPotential::Zero,
        &schedule,
        &rho0,
        &SolverConfig::default(),
    )
    .unwrap();
    assert_eq!(reports.len(), 4);
    for (r, &nu_j) in reports.iter().zip(schedule.nus()) {
        assert_eq!(r.nu, nu_j);
        assert!((r.tau_c - (5.0 * nu_j).min(0.95)).abs() < 1e-15);
        assert!(r.full_steps_descend());
        assert!((r.density().mass() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn kernel_tables_must_cover_the_domain() {
    let gr = grid(2.0, 33, SpacingMode::Uniform);
    let rho0 = Density::uniform(gr);
    let table = potentials::Table::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
    let k = InteractionKernel::Tabulated(table);
    let schedule = ContinuationSchedule::new(vec![0.5, 0.25]).unwrap();
    let err = solve_with_continuation(
        &k,
        &ExternalPotential::Zero,
        &schedule,
        &rho0,
        &SolverConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::OutOfTableRange { .. }), "{err}");
}

#[test]
fn aggregate_counts_for_simple_profiles() {
    let gr = grid(2.0, 401, SpacingMode::Uniform);
    assert_eq!(count_aggregates(&Density::uniform(gr.clone()), 0.05), 0);
    let tg = TruncatedGaussian::new(0.8, 0.01).unwrap();
    assert_eq!(count_aggregates(&tg.to_density(gr).unwrap(), 0.05), 1);
}

#[test]
fn nonconvergence_is_reported_not_raised() {
    let nu = 2f64.powi(-6);
    let gr = grid(4.0, 257, SpacingMode::Uniform);
    let rho0 = Density::indicator(gr, 0.0, 1.0, 1.0).unwrap();
    let cfg = SolverConfig {
        n_max: 3,
        ..SolverConfig::default()
    };
    let k = InteractionKernel::power_law(1.25).unwrap();
    let r = solve(&k, &ExternalPotential::linear(nu).unwrap(), nu, &rho0, &cfg).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iterations, 3);
    assert!(r.residual >= cfg.tol);
}
