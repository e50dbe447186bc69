use std::sync::Arc;

use insens_core::cascade::{solve_cascade, ControlSystem};
use insens_core::hum::{
    force_response, minimize_exact, minimize_quadratic, observability_ratio_sample, verify_null, HumOptions,
};
use insens_core::problem::{desk_config, DeskSpec, Force, ScalarFn};
use insens_core::{build_grid, build_mask, validate_problem, Exec, Nonlinearity, ProblemConfig, Region};

fn desk() -> Arc<insens_core::ValidatedProblem> {
    Arc::new(validate_problem(desk_config(&DeskSpec::default(), Nonlinearity::Zero).unwrap()).unwrap())
}

#[test]
fn sequential_and_parallel_sweeps_agree_bitwise() {
    let p = desk();
    let sys = ControlSystem::linear(p.clone());
    let c = p.constants().unwrap();
    let a = observability_ratio_sample(&sys, c, 8, 3, Exec::Sequential).unwrap();
    let b = observability_ratio_sample(&sys, c, 8, 3, Exec::Parallel).unwrap();
    assert_eq!(a.ratios, b.ratios);
}

#[test]
fn exact_control_reaches_the_null_target() {
    let p = desk();
    let sys = ControlSystem::linear(p.clone());
    let r = minimize_exact(&sys, 1e-3, &HumOptions::prox()).unwrap();
    let v = verify_null(&sys, &r, p.constants()).unwrap();
    assert!(v.pass, "{v:?}");
    // a control confined to omega
    let outside = r.control.sub(&r.control.masked(p.omega())).max_abs();
    assert_eq!(outside, 0.0);
}

#[test]
fn quadratic_variant_satisfies_its_optimality_condition() {
    let p = desk();
    let sys = ControlSystem::linear(p.clone());
    let eps = 1e-2;
    let r = minimize_quadratic(&sys, eps, &HumOptions::cg()).unwrap();
    let q0 = solve_cascade(&sys, &r.control).unwrap().q0;
    let g = p.grid();
    // q(0) = -eps phi0 at the minimizer
    let res = g.norm(&(&q0 + &r.phi0 * eps)) / g.norm(&q0);
    assert!(res <= 1e-6, "{res}");
}

#[test]
fn two_dimensional_problem_runs_end_to_end() {
    let g = build_grid(2, &[1.0, 1.0], 16, 0.2, 32).unwrap();
    let omega = build_mask(&g, &[Region::rect((0.2, 0.8), (0.2, 0.8))]).unwrap();
    let obs = build_mask(&g, &[Region::rect((0.4, 0.9), (0.3, 0.9))]).unwrap();
    let w0 = build_mask(&g, &[Region::rect((0.5, 0.65), (0.5, 0.65))]).unwrap();
    let mut c = ProblemConfig::new(g, omega, obs, w0);
    c.force = Force {
        field: ScalarFn::Mode {
            amplitude: 50.0,
            modes: [1, 1],
            decay: 0.0,
        },
        start: 0.05,
    };
    let p = Arc::new(validate_problem(c).unwrap());
    let sys = ControlSystem::linear(p.clone());
    let b = force_response(&sys).unwrap();
    let eps = 0.5 * p.grid().norm(&b);
    let r = minimize_exact(&sys, eps, &HumOptions::prox()).unwrap();
    let v = verify_null(&sys, &r, p.constants()).unwrap();
    assert!(v.pass && r.control_norm > 0.0, "{v:?}");
}
