use cbo_lab::solver::step_density;
use cbo_lab::verify::{
    verify_mean_field, verify_optimizer, verify_pde_run, verify_refinement, verify_regularization_limit,
    OptimizerSetup, Severity,
};
use cbo_lab::{quadratic, rastrigin, CBOParams, GridDensity, RegularizationParams, Sampler, SolverConfig};
use proptest::prelude::*;

fn cbo(lambda: f64, sigma: f64, alpha: f64) -> CBOParams {
    CBOParams {
        lambda,
        sigma,
        alpha,
        dt: 0.01,
        t_final: 1.0,
        n_particles: 100,
        seed: 0,
    }
}

fn config(cells: usize, half_width: f64, reg: RegularizationParams, t_final: f64) -> SolverConfig {
    SolverConfig {
        cbo: cbo(1.0, 1.0, 10.0),
        reg,
        dim: 1,
        half_width,
        cells,
        cfl_safety: 0.4,
        t_final,
        snapshot_interval: Some(0.25),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_keeps_mass_and_sign(
        values in prop::collection::vec(0.0f64..1.0, 32),
        lambda in 0.0f64..3.0,
        sigma in 0.0f64..2.0,
        eps in 0.05f64..0.5,
        radius in 0.5f64..2.0,
        alpha in 0.1f64..50.0,
        safety in 0.05f64..0.5,
    ) {
        prop_assume!(values.iter().sum::<f64>() > 1e-3);
        let reg = RegularizationParams::new(eps, radius).unwrap();
        let half_width = 2.0 * radius + 4.0 * eps + 1.0;
        let rho = GridDensity::new(1, 32, half_width, values).unwrap();
        let cfg = SolverConfig {
            cbo: cbo(lambda, sigma, alpha),
            cfl_safety: safety,
            ..config(32, half_width, reg, 1.0)
        };
        let next = step_density(&rho, &quadratic(&[0.3]).unwrap(), &cfg).unwrap();
        let (m0, m1) = (rho.mass(), next.mass());
        prop_assert!(((m1 - m0) / m0).abs() <= 1e-13, "{m0} -> {m1}");
        prop_assert!(next.min_value() >= 0.0);
    }

    #[test]
    fn two_dimensional_step_keeps_mass_and_sign(
        values in prop::collection::vec(0.0f64..1.0, 144),
        lambda in 0.0f64..3.0,
        sigma in 0.0f64..2.0,
    ) {
        prop_assume!(values.iter().sum::<f64>() > 1e-3);
        let reg = RegularizationParams::new(0.2, 1.0).unwrap();
        let rho = GridDensity::new(2, 12, 3.0, values).unwrap();
        let cfg = SolverConfig {
            cbo: cbo(lambda, sigma, 5.0),
            dim: 2,
            ..config(12, 3.0, reg, 1.0)
        };
        let next = step_density(&rho, &quadratic(&[0.0, 0.5]).unwrap(), &cfg).unwrap();
        prop_assert!(((next.mass() - rho.mass()) / rho.mass()).abs() <= 1e-13);
        prop_assert!(next.min_value() >= 0.0);
    }
}

fn reference() -> (SolverConfig, GridDensity) {
    let cfg = config(256, 22.0, RegularizationParams::new(0.1, 10.0).unwrap(), 0.5);
    let rho0 = GridDensity::gaussian(1, 256, 22.0, &[-1.0], 1.0).unwrap();
    (cfg, rho0)
}

#[test]
fn zero_horizon_report_measures_initial_values() {
    let (mut cfg, rho0) = reference();
    cfg.t_final = 0.0;
    let r = verify_pde_run(&cfg, &quadratic(&[1.0]).unwrap(), &rho0).unwrap();
    assert!(r.checks.iter().all(|c| c.pass), "{:#?}", r.checks);
    assert_eq!(r.check("relative mass drift").unwrap().measured, 0.0);
    assert_eq!(r.check("H2 seminorm growth factor").unwrap().measured, 1.0);
}

#[test]
fn breached_cfl_fails_the_non_negativity_check() {
    let (mut cfg, rho0) = reference();
    cfg.cfl_safety = 1.5;
    let r = verify_pde_run(&cfg, &quadratic(&[1.0]).unwrap(), &rho0).unwrap();
    let c = r.check("minimum cell value over all steps").unwrap();
    assert!(!c.pass && c.severity == Severity::Hard, "{c:?}");
    assert!(!r.passed());
}

#[test]
fn reports_are_reproducible_apart_from_the_timestamp() {
    let (cfg, rho0) = reference();
    let f = quadratic(&[1.0]).unwrap();
    let mut a = verify_pde_run(&cfg, &f, &rho0).unwrap();
    let mut b = verify_pde_run(&cfg, &f, &rho0).unwrap();
    a.generated_at.clear();
    b.generated_at.clear();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn regularization_list_preconditions() {
    let (cfg, rho0) = reference();
    let f = quadratic(&[1.0]).unwrap();
    assert!(verify_regularization_limit(&[0.1, 0.2], &cfg, &f, &rho0).is_err());
    assert!(verify_regularization_limit(&[], &cfg, &f, &rho0).is_err());
    let (r, gaps) = verify_regularization_limit(&[0.1], &cfg, &f, &rho0).unwrap();
    assert!(gaps.is_empty());
    assert!(r.passed());
}

#[test]
fn optimizer_zero_horizon_skips_the_success_check() {
    let setup = OptimizerSetup {
        objective: rastrigin(1.0, 1).unwrap(),
        params: CBOParams {
            t_final: 0.0,
            alpha: 1e15,
            ..cbo(1.0, 1.0, 1e15)
        },
        sampler: Sampler::Uniform { low: 0.0, high: 4.0 },
        seeds: (0..20).collect(),
        stride: 1,
    };
    let s = verify_optimizer(&setup).unwrap();
    assert!(s.report.notes.iter().any(|n| n.contains("degenerate horizon")));
    assert!(s
        .report
        .checks
        .iter()
        .all(|c| c.anchor != cbo_lab::verify::Anchor::OptimizerOutput));
    assert_eq!(s.runs.len(), 20);
}

#[test]
fn repeated_particle_count_gives_identical_w2() {
    let cfg = SolverConfig {
        snapshot_interval: None,
        ..config(256, 22.0, RegularizationParams::new(0.1, 10.0).unwrap(), 0.2)
    };
    let rho0 = GridDensity::gaussian(1, 256, 22.0, &[-1.0], 1.0).unwrap();
    let (r, e) = verify_mean_field(&cfg, &quadratic(&[1.0]).unwrap(), &rho0, &[50, 50], 3).unwrap();
    assert_eq!(e[0].w2, e[1].w2);
    assert!(r.checks.iter().any(|c| c.name.contains("identical") && c.pass));
}

// without noise both descriptions transport the mollified point mass; the
// particle cloud is a sample of the same narrow bump
#[test]
fn noiseless_point_data_agree_to_a_cell() {
    let n = 512;
    let cfg = SolverConfig {
        cbo: CBOParams {
            dt: 0.005,
            ..cbo(1.0, 0.0, 10.0)
        },
        snapshot_interval: None,
        ..config(n, 22.0, RegularizationParams::new(0.1, 10.0).unwrap(), 1.0)
    };
    let rho0 = GridDensity::point_mass(1, n, 22.0, &[-1.0]).unwrap();
    let (_, entries) = verify_mean_field(&cfg, &quadratic(&[1.0]).unwrap(), &rho0, &[100, 1000, 10000], 3).unwrap();
    let dx = cfg.dx();
    for e in &entries {
        assert!(e.mean_w2 <= dx, "N = {}: {} > {dx}", e.n_particles, e.mean_w2);
    }
}

#[test]
fn refinement_errors_shrink_at_first_order() {
    let cfg = config(128, 22.0, RegularizationParams::new(0.1, 10.0).unwrap(), 1.0);
    let (r, study) = verify_refinement(&cfg, &quadratic(&[1.0]).unwrap(), |n| {
        GridDensity::gaussian(1, n, 22.0, &[-1.0], 1.0)
    })
    .unwrap();
    println!("{study:?}");
    assert!(r.passed(), "{study:?}");
}
