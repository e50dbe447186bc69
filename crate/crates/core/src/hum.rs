//! Penalized HUM: minimize
//!
//! ```text
//! J(phi0) = 1/2 int_{Q_omega} |psi|^2 + int_Q f psi + P(phi0)
//! ```
//!
//! over adjoint initial data, with `P = eps |phi0|` (exact) or `eps/2 |phi0|^2`
//! (quadratic). By duality the smooth part is `1/2 <Lambda phi0, phi0> + <b, phi0>`
//! where `Lambda phi0` is `q(0)` of the cascade driven by `chi_omega psi` and `b`
//! is `q(0)` driven by the force alone, so the gradient is `q(0)` of the
//! cascade driven by both. The control is `v = chi_omega psi`.

use serde::Serialize;

use crate::cascade::{
    solve_adjoint_pair, solve_cascade, solve_cascade_with, AdjointPair, CascadeSolution, ControlSystem,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pde::Trajectory;
use crate::problem::Grid;
use crate::rng::{stream, FieldSampler};
use crate::spectral::Field;
use crate::weights::ObservabilityConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Exact,
    Quadratic,
}

#[derive(Debug, Clone)]
pub struct HumOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<Field>,
    /// Recompute `Lambda phi` from scratch every this many proximal iterations.
    pub refresh: usize,
}

impl HumOptions {
    pub fn cg() -> Self {
        HumOptions {
            tol: 1e-8,
            max_iter: 300,
            warm_start: None,
            refresh: 100,
        }
    }

    pub fn prox() -> Self {
        HumOptions {
            tol: 1e-8,
            max_iter: 2000,
            warm_start: None,
            refresh: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlResult {
    pub variant: Variant,
    pub epsilon: f64,
    pub phi0: Field,
    /// `v = chi_omega psi`, zero off the control set.
    pub control: Trajectory,
    pub cascade: CascadeSolution,
    pub q0_norm: f64,
    pub control_norm: f64,
    /// `2 sqrt(H) (int e^{M / sqrt t} |f|^2)^{1/2}`, up to the unknown constant in `H`.
    pub bound: Option<f64>,
    pub j_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Optimality residual: `|q(0) + eps phi0/|phi0||` (exact), `|q(0) + eps phi0|` (quadratic).
    pub optimality_residual: f64,
    pub log: Vec<String>,
}

fn penalty(variant: Variant, eps: f64, grid: &Grid, phi0: &Field) -> f64 {
    let n = grid.norm(phi0);
    match variant {
        Variant::Exact => eps * n,
        Variant::Quadratic => 0.5 * eps * n * n,
    }
}

pub fn eval_j(system: &ControlSystem, phi0: &Field, eps: f64, variant: Variant) -> Result<(f64, AdjointPair)> {
    let pair = solve_adjoint_pair(system, phi0)?;
    let g = system.problem().grid();
    let js = smooth_value(system, &pair);
    Ok((js + penalty(variant, eps, g, phi0), pair))
}

fn smooth_value(system: &ControlSystem, pair: &AdjointPair) -> f64 {
    let omega = system.problem().omega();
    0.5 * pair.psi.masked(omega).pairing(&pair.psi) + system.source().pairing(&pair.psi)
}

/// `J_smooth = 1/2 int_{Q_omega} |psi|^2 + int f psi`.
pub fn eval_j_smooth(system: &ControlSystem, phi0: &Field) -> Result<f64> {
    Ok(smooth_value(system, &solve_adjoint_pair(system, phi0)?))
}

pub fn grad_j_smooth(system: &ControlSystem, phi0: &Field) -> Result<Field> {
    let pair = solve_adjoint_pair(system, phi0)?;
    Ok(solve_cascade(system, &pair.psi)?.q0)
}

/// `Lambda phi0`: `q(0)` of the cascade driven by `chi_omega psi` without force.
pub fn apply_lambda(system: &ControlSystem, phi0: &Field) -> Result<Field> {
    let pair = solve_adjoint_pair(system, phi0)?;
    Ok(solve_cascade_with(system, &pair.psi, false)?.q0)
}

/// `b`: `q(0)` of the cascade driven by the force alone.
pub fn force_response(system: &ControlSystem) -> Result<Field> {
    let g = system.problem().grid();
    Ok(solve_cascade(system, &Trajectory::zeros(g))?.q0)
}

fn finish(
    system: &ControlSystem,
    variant: Variant,
    eps: f64,
    phi0: Field,
    j_history: Vec<f64>,
    iterations: usize,
    converged: bool,
    log: Vec<String>,
) -> Result<ControlResult> {
    let p = system.problem();
    let g = p.grid();
    let pair = solve_adjoint_pair(system, &phi0)?;
    let control = pair.psi.masked(p.omega());
    let cascade = solve_cascade(system, &control)?;
    let q0_norm = g.norm(&cascade.q0);
    let n = g.norm(&phi0);
    let optimality_residual = match variant {
        Variant::Exact if n > 0.0 => g.norm(&(&cascade.q0 + &phi0 * (eps / n))),
        Variant::Exact => (q0_norm - eps).max(0.0),
        Variant::Quadratic => g.norm(&(&cascade.q0 + &phi0 * eps)),
    };
    let control_norm = control.l2_norm();
    let bound = p
        .constants()
        .map(|c| 2.0 * (0.5 * c.ln_h).exp() * p.weighted_force_integral().sqrt());
    Ok(ControlResult {
        variant,
        epsilon: eps,
        phi0,
        control,
        cascade,
        q0_norm,
        control_norm,
        bound,
        j_history,
        iterations,
        converged,
        optimality_residual,
        log,
    })
}

struct CgRun {
    x: Field,
    iterations: usize,
    residual: f64,
    converged: bool,
    /// `1/2 <b - r, x>`, the quadratic functional along the iterates.
    j_history: Vec<f64>,
}

/// CG on `(Lambda + mu I) x = -b` from `x0`, relative residual against `|b|`.
fn cg_solve(
    system: &ControlSystem,
    b: &Field,
    mu: f64,
    x0: Option<&Field>,
    tol: f64,
    max_iter: usize,
) -> Result<CgRun> {
    let g = system.problem().grid();
    let bn = g.norm(b).max(f64::MIN_POSITIVE);
    let mut x = x0.cloned().unwrap_or_else(|| g.zeros());
    let mut r = if g.norm(&x) > 0.0 {
        -(b + apply_lambda(system, &x)? + &x * mu)
    } else {
        -b
    };
    let mut d = r.clone();
    let mut rr = g.inner(&r, &r);
    let mut res = rr.sqrt() / bn;
    // (Lambda + mu) x = -b - r gives J = 1/2 <b - r, x>
    let mut hist = vec![0.5 * g.inner(&(b - &r), &x)];
    let mut it = 0;
    while res > tol && it < max_iter {
        let ad = apply_lambda(system, &d)? + &d * mu;
        let a = rr / g.inner(&d, &ad);
        x += &d * a;
        r -= &ad * a;
        let rr_new = g.inner(&r, &r);
        d = &r + &d * (rr_new / rr);
        rr = rr_new;
        res = rr.sqrt() / bn;
        hist.push(0.5 * g.inner(&(b - &r), &x));
        it += 1;
    }
    Ok(CgRun {
        x,
        iterations: it,
        residual: res,
        converged: res <= tol,
        j_history: hist,
    })
}

/// Conjugate gradients on `(Lambda + eps I) phi0 = -b`.
pub fn minimize_quadratic(system: &ControlSystem, eps: f64, opts: &HumOptions) -> Result<ControlResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {eps} must be positive")));
    }
    let g = system.problem().grid();
    let b = force_response(system)?;
    let warm = opts.warm_start.as_ref();
    if g.norm(&b) == 0.0 && warm.is_none_or(|w| g.norm(w) == 0.0) {
        let log = vec!["zero right-hand side".to_string()];
        return finish(system, Variant::Quadratic, eps, g.zeros(), vec![0.0], 0, true, log);
    }
    let run = cg_solve(system, &b, eps, warm, opts.tol, opts.max_iter)?;
    if !run.converged {
        let log = vec![format!(
            "cg stopped at {} iterations, residual {:e}",
            run.iterations, run.residual
        )];
        let last = finish(
            system,
            Variant::Quadratic,
            eps,
            run.x,
            run.j_history,
            run.iterations,
            false,
            log,
        )?;
        return Err(Error::CgStall {
            iterations: run.iterations,
            residual: run.residual,
            last: Box::new(last),
        });
    }
    let log = vec![format!(
        "cg converged in {} iterations, residual {:e}",
        run.iterations, run.residual
    )];
    finish(
        system,
        Variant::Quadratic,
        eps,
        run.x,
        run.j_history,
        run.iterations,
        true,
        log,
    )
}

/// `max(1 - c/|u|, 0) u` as the scalar factor.
fn shrink_factor(norm: f64, c: f64) -> f64 {
    if norm <= c {
        0.0
    } else {
        1.0 - c / norm
    }
}

/// Radial soft threshold `max(1 - c/|u|, 0) u`.
pub fn shrink(grid: &Grid, u: &Field, c: f64) -> Field {
    u * shrink_factor(grid.norm(u), c)
}

/// Starting point for the proximal iteration.
///
/// A nonzero minimizer solves `(Lambda + mu) phi = -b` with `mu = eps/|phi|`,
/// and `mu |phi_mu|` increases with `mu`, so a secant search in `ln mu` on
/// `|q(0)| = mu |phi_mu| = eps` lands next to it with a handful of CG solves.
fn secular_start(
    system: &ControlSystem,
    b: &Field,
    eps: f64,
    warm: Option<&Field>,
    log: &mut Vec<String>,
) -> Result<Field> {
    let g = system.problem().grid();
    let solve = |mu: f64, x0: Option<&Field>| -> Result<(Field, f64)> {
        let run = cg_solve(system, b, mu, x0, 1e-10, 300)?;
        let h = (mu * g.norm(&run.x) / eps).ln();
        Ok((run.x, h))
    };
    let mut mu0 = match warm {
        Some(w) if g.norm(w) > 0.0 => eps / g.norm(w),
        _ => eps,
    };
    let (mut x0, mut h0) = solve(mu0, warm)?;
    // bracket the root; slope of h in ln mu lies in [0, 1]
    let mut mu1 = mu0 * (-h0).exp();
    let (mut x1, mut h1) = solve(mu1, Some(&x0))?;
    let mut solves = 2;
    while h0.signum() == h1.signum() && h1.abs() > 1e-8 && solves < 60 {
        (mu0, x0, h0) = (mu1, x1.clone(), h1);
        mu1 = mu0 * (-4.0 * h0.signum()).exp();
        (x1, h1) = solve(mu1, Some(&x0))?;
        solves += 1;
    }
    // Illinois regula falsi in ln mu
    let (mut la, mut ha, mut lb, mut hb) = (mu0.ln(), h0, mu1.ln(), h1);
    let mut best = if h0.abs() < h1.abs() { x0 } else { x1 };
    let mut best_h = h0.abs().min(h1.abs());
    let mut side = 0;
    while best_h > 1e-8 && solves < 60 && ha.signum() != hb.signum() {
        let lc = (la * hb - lb * ha) / (hb - ha);
        let (xc, hc) = solve(lc.exp(), Some(&best))?;
        solves += 1;
        if hc.abs() < best_h {
            best_h = hc.abs();
            best = xc;
        }
        if hc.signum() == hb.signum() {
            (lb, hb) = (lc, hc);
            if side == 1 {
                ha *= 0.5;
            }
            side = 1;
        } else {
            (la, ha) = (lc, hc);
            if side == -1 {
                hb *= 0.5;
            }
            side = -1;
        }
    }
    log.push(format!(
        "secular start: {solves} CG solves, |ln(|q(0)|/eps)| = {best_h:e}"
    ));
    Ok(best)
}

/// Proximal gradient on `J_smooth + eps |.|` with a majorization line search.
///
/// Every proximal point lies in `span{phi, grad}`, so `Lambda` of the new
/// iterate follows from `Lambda phi` and `Lambda grad`: one operator
/// application per iteration, however many step halvings the search needs.
/// The iteration starts from the secular estimate of the minimizer.
pub fn minimize_exact(system: &ControlSystem, eps: f64, opts: &HumOptions) -> Result<ControlResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {eps} must be positive")));
    }
    let g = system.problem().grid();
    let b = force_response(system)?;
    let mut log = Vec::new();
    // 0 is optimal exactly when |b| <= eps
    if g.norm(&b) <= eps {
        log.push(format!("|b| = {:e} <= eps: phi0 = 0", g.norm(&b)));
        return finish(system, Variant::Exact, eps, g.zeros(), vec![0.0], 0, true, log);
    }
    let mut phi = secular_start(system, &b, eps, opts.warm_start.as_ref(), &mut log)?;
    let mut lphi = apply_lambda(system, &phi)?;
    let j_of = |phi: &Field, lphi: &Field| 0.5 * g.inner(lphi, phi) + g.inner(&b, phi) + eps * g.norm(phi);
    let mut hist = vec![j_of(&phi, &lphi)];
    let mut last_d: Option<(f64, f64)> = None; // (<d,d>, <Ld,d>)
    let mut it = 0;
    loop {
        let grad = &lphi + &b;
        let lgrad = apply_lambda(system, &grad)?;
        let gg = g.inner(&grad, &grad);
        let glg = g.inner(&lgrad, &grad);
        // Barzilai-Borwein guess from the previous step, Cauchy step on the first
        let mut gamma = match last_d {
            Some((dd, dld)) if dld > 0.0 => dd / dld,
            _ if glg > 0.0 => gg / glg,
            _ => 1.0,
        };
        let pp = g.inner(&phi, &phi);
        let pg = g.inner(&phi, &grad);
        let plp = g.inner(&lphi, &phi);
        let plg = g.inner(&lphi, &grad);
        let mut accepted = None;
        for _ in 0..80 {
            // u = phi - gamma grad; phi+ = a u; d = (a-1) phi - a gamma grad
            let un = (pp - 2.0 * gamma * pg + gamma * gamma * gg).max(0.0).sqrt();
            let a = shrink_factor(un, gamma * eps);
            let (c1, c2) = (a - 1.0, -a * gamma);
            let dd = c1 * c1 * pp + 2.0 * c1 * c2 * pg + c2 * c2 * gg;
            let dld = c1 * c1 * plp + 2.0 * c1 * c2 * plg + c2 * c2 * glg;
            if dld <= dd / gamma * (1.0 + 1e-12) {
                accepted = Some((a, c1, c2, dd, dld));
                break;
            }
            gamma *= 0.5;
        }
        let Some((a, c1, c2, dd, dld)) = accepted else {
            log.push(format!("backtracking exhausted at iteration {it}"));
            let last = finish(system, Variant::Exact, eps, phi, hist, it, false, log)?;
            return Err(Error::ProxStall {
                iterations: it,
                last: Box::new(last),
            });
        };
        // gradient mapping |phi - phi+| / gamma
        let mapping = dd.max(0.0).sqrt() / gamma;
        let pn = pp.sqrt();
        if mapping <= opts.tol * (1.0 + pn) {
            log.push(format!(
                "prox converged in {it} iterations, gradient mapping {mapping:e}"
            ));
            return finish(system, Variant::Exact, eps, phi, hist, it, true, log);
        }
        if it >= opts.max_iter {
            log.push(format!("prox stopped at {it} iterations, gradient mapping {mapping:e}"));
            return finish(system, Variant::Exact, eps, phi, hist, it, false, log);
        }
        phi = (&phi - &grad * gamma) * a;
        lphi = &lphi * (1.0 + c1) + &lgrad * c2;
        it += 1;
        if opts.refresh > 0 && it % opts.refresh == 0 && g.norm(&phi) > 0.0 {
            lphi = apply_lambda(system, &phi)?;
        }
        hist.push(j_of(&phi, &lphi));
        last_d = (dd > 0.0).then_some((dd, dld));
    }
}

pub fn minimize(system: &ControlSystem, eps: f64, variant: Variant, opts: &HumOptions) -> Result<ControlResult> {
    match variant {
        Variant::Exact => minimize_exact(system, eps, opts),
        Variant::Quadratic => minimize_quadratic(system, eps, opts),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NullReport {
    pub epsilon: f64,
    pub q0_norm: f64,
    pub pass: bool,
    pub control_norm: f64,
    pub bound: Option<f64>,
    pub bound_caveat: &'static str,
}

/// Re-solve the cascade with the stored control and compare `|q(0)|` with `eps`.
pub fn verify_null(
    system: &ControlSystem,
    result: &ControlResult,
    constants: Option<&ObservabilityConstants>,
) -> Result<NullReport> {
    let p = system.problem();
    let g = p.grid();
    let cascade = solve_cascade(system, &result.control)?;
    let q0_norm = g.norm(&cascade.q0);
    let control = result.control.masked(p.omega());
    let bound = constants.map(|c| 2.0 * (0.5 * c.ln_h).exp() * p.weighted_force_integral().sqrt());
    Ok(NullReport {
        epsilon: result.epsilon,
        q0_norm,
        pass: q0_norm <= result.epsilon * (1.0 + 1e-2),
        control_norm: control.l2_norm(),
        bound,
        bound_caveat: "up to the unspecified observability constant C",
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioReport {
    pub samples: usize,
    pub degenerate: usize,
    pub ratios: Vec<f64>,
    pub max: f64,
    pub median: f64,
    /// `max R / H(C = 1)`, an empirical lower bound for the constant.
    pub empirical_c: f64,
}

/// `int_Q e^{-M/sqrt t} |psi|^2 / int_{Q_omega} |psi|^2` for one `phi0`.
pub fn observability_ratio(system: &ControlSystem, phi0: &Field, m: f64) -> Result<f64> {
    let p = system.problem();
    let g = p.grid();
    let pair = solve_adjoint_pair(system, phi0)?;
    let den = pair.psi.masked(p.omega()).pairing(&pair.psi);
    if !(den > 1e-300) {
        return Err(Error::DegeneratePsi(den));
    }
    let num: f64 = (0..g.nt())
        .map(|j| {
            let t = g.time_node(j);
            let u = pair.psi.at(j);
            g.dt() * (-m / t.sqrt()).exp() * g.inner(u, u)
        })
        .sum();
    Ok(num / den)
}

pub fn observability_ratio_sample(
    system: &ControlSystem,
    constants: &ObservabilityConstants,
    n_samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<RatioReport> {
    let basis = system.problem().basis();
    let results = exec.map(n_samples, |k| {
        let phi0 = FieldSampler::new(stream(seed, 1000 + k as u64)).sine_series(basis, 16, 1.0);
        observability_ratio(system, &phi0, constants.m)
    });
    let mut ratios = Vec::new();
    let mut degenerate = 0;
    for r in results {
        match r {
            Ok(v) => ratios.push(v),
            Err(Error::DegeneratePsi(_)) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if sorted.is_empty() {
        f64::NAN
    } else if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let max = sorted.last().copied().unwrap_or(f64::NAN);
    let h1 = (constants.ln_h - constants.c_proxy.ln()).exp();
    Ok(RatioReport {
        samples: n_samples,
        degenerate,
        ratios,
        max,
        median,
        empirical_c: max / h1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        build_grid, build_mask, validate_problem, Force, ProblemConfig, Region, ScalarFn, SubdomainMask,
        ValidatedProblem,
    };
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn small(force: bool) -> ControlSystem {
        let g = build_grid(1, &[1.0], 32, 0.2, 40).unwrap();
        let w = build_mask(&g, &[Region::interval(0.3, 0.7)]).unwrap();
        let o = build_mask(&g, &[Region::interval(0.5, 0.9)]).unwrap();
        let w0 = build_mask(&g, &[Region::interval(0.55, 0.65)]).unwrap();
        let mut c = ProblemConfig::new(g, w, o, w0);
        if force {
            c.force = Force {
                field: ScalarFn::Mode {
                    amplitude: 100.0,
                    modes: [1, 1],
                    decay: 0.0,
                },
                start: 0.05,
            };
        }
        ControlSystem::linear(Arc::new(validate_problem(c).unwrap()))
    }

    #[test]
    fn j_at_zero_and_positivity() {
        let s = small(false);
        let g = s.problem().grid().clone();
        for v in [Variant::Exact, Variant::Quadratic] {
            assert_eq!(eval_j(&s, &g.zeros(), 1e-3, v).unwrap().0, 0.0);
            assert!(eval_j(&s, &s.problem().basis().sine_mode(&[2]), 1e-3, v).unwrap().0 > 0.0);
        }
    }

    #[test]
    fn j_single_mode_duhamel() {
        let g = build_grid(1, &[1.0], 32, 0.01, 800).unwrap();
        let full = SubdomainMask::full(&g);
        let w0 = build_mask(&g, &[Region::interval(0.4, 0.6)]).unwrap();
        let p: Arc<ValidatedProblem> =
            Arc::new(validate_problem(ProblemConfig::new(g, full.clone(), full, w0)).unwrap());
        let s = ControlSystem::linear(p.clone());
        let phi0 = p.basis().sine_mode(&[1]);
        let eps = 1e-3;
        let (j, _) = eval_j(&s, &phi0, eps, Variant::Exact).unwrap();
        // 1/2 * 1/2 * int_0^T c(t)^2 dt with c(t) = e^{lt}(e^{-2lt} - e^{-2lT}) / (2l)
        let l = PI.powi(4);
        let tf = 0.01;
        let (x, w) = crate::quadrature::gauss_legendre_unit(16);
        let c = |t: f64| (l * t).exp() * ((-2.0 * l * t).exp() - (-2.0 * l * tf).exp()) / (2.0 * l);
        let int: f64 = x.iter().zip(&w).map(|(x, w)| tf * w * c(tf * x).powi(2)).sum();
        let exact = 0.25 * int + eps * 0.5f64.sqrt();
        assert!(((j - exact) / exact).abs() <= 1e-6, "{j} vs {exact}");
    }

    #[test]
    fn gradient_is_zero_at_zero_without_force_and_linear() {
        let s = small(false);
        let g = s.problem().grid().clone();
        assert_eq!(grad_j_smooth(&s, &g.zeros()).unwrap().amax(), 0.0);
        let mut r = FieldSampler::new(stream(5, 0));
        let phi = r.gaussian(g.shape());
        let a = grad_j_smooth(&s, &(&phi * 3.0)).unwrap();
        let b = grad_j_smooth(&s, &phi).unwrap() * 3.0;
        assert!(g.norm(&(&a - &b)) <= 1e-11 * g.norm(&b));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let s = small(true);
        let g = s.problem().grid().clone();
        let mut r = FieldSampler::new(stream(6, 0));
        let phi = r.sine_series(s.problem().basis(), 12, 1.0);
        let dir = r.sine_series(s.problem().basis(), 12, 1.0);
        let gr = grad_j_smooth(&s, &phi).unwrap();
        let exact = g.inner(&gr, &dir);
        let h = 1e-3;
        let fd = (eval_j_smooth(&s, &(&phi + &dir * h)).unwrap() - eval_j_smooth(&s, &(&phi - &dir * h)).unwrap())
            / (2.0 * h);
        assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-300), "{fd} {exact}");
    }

    #[test]
    fn shrink_cases() {
        let g = build_grid(1, &[1.0], 8, 1.0, 16).unwrap();
        let mut u = g.zeros();
        u[(0, 0)] = 3.0;
        u[(1, 0)] = 4.0;
        let u = &u * (5.0 / g.norm(&u));
        let s = shrink(&g, &u, 1.0);
        assert!((g.norm(&s) - 4.0).abs() < 1e-14);
        assert!((&s * (5.0 / 4.0) - &u).amax() < 1e-14);
        assert_eq!(shrink(&g, &u, 5.0).amax(), 0.0);
    }

    #[test]
    fn zero_force_gives_zero_control() {
        let s = small(false);
        let r = minimize_quadratic(&s, 1e-3, &HumOptions::cg()).unwrap();
        assert_eq!(r.q0_norm, 0.0);
        assert_eq!(r.control.max_abs(), 0.0);
        let r = minimize_exact(&s, 1e-3, &HumOptions::prox()).unwrap();
        assert_eq!(r.phi0.amax(), 0.0);
        let n = verify_null(&s, &r, None).unwrap();
        assert!(n.pass && n.q0_norm == 0.0);
    }

    #[test]
    fn both_variants_reach_the_null_condition() {
        let s = small(true);
        let eps = 1e-6;
        let q = minimize_quadratic(&s, eps, &HumOptions::cg()).unwrap();
        assert!(q.converged);
        assert!(q.optimality_residual <= 1e-6 * (1.0 + s.problem().grid().norm(&q.phi0)));
        let e = minimize_exact(&s, eps, &HumOptions::prox()).unwrap();
        assert!(e.converged, "{:?}", e.log);
        assert!(e.q0_norm <= eps * 1.01, "{} {:?}", e.q0_norm, e.log);
        assert!(
            e.j_history.windows(2).all(|w| w[1] <= w[0] + 1e-13 * w[0].abs()),
            "{:?}",
            e.j_history
        );
        // sign-flipped control must fail the check
        let mut bad = e.clone();
        bad.control = bad.control.scaled(-1.0);
        let b = s.problem().grid().norm(&force_response(&s).unwrap());
        let r = verify_null(&s, &bad, None).unwrap();
        assert!(!r.pass, "{r:?} b = {b:e} phi = {:e}", s.problem().grid().norm(&e.phi0));
    }

    #[test]
    fn ratio_zero_phi_is_degenerate() {
        let s = small(false);
        let g = s.problem().grid().clone();
        assert!(matches!(
            observability_ratio(&s, &g.zeros(), 1.0),
            Err(Error::DegeneratePsi(_))
        ));
        let r = observability_ratio(&s, &s.problem().basis().sine_mode(&[1]), 1.0).unwrap();
        assert!(r >= 0.0 && r.is_finite());
    }
}
