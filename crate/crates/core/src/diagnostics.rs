//! Reusable numerical studies: solver orders, duality, gradient and operator
//! checks. The acceptance suite and `selftest` both run these.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::cascade::{insensitivity_sweep, ControlSystem, InsensitivityReport};
use crate::error::Result;
use crate::hum::{apply_lambda, eval_j_smooth, grad_j_smooth};
use crate::pde::{duality_residual, CoefficientSchedule, Propagator, SolverOptions, Trajectory};
use crate::problem::{build_grid, build_mask, CoefficientField, Coefficients, Region, ScalarFn, ValidatedProblem};
use crate::rng::{stream, FieldSampler};
use crate::spectral::{Field, SpectralBasis};

#[derive(Debug, Clone, Serialize)]
pub struct EigenmodeReport {
    pub n: usize,
    pub nt: usize,
    pub t_final: f64,
    /// `|u_h(T) - e^{-pi^4 T} sin(pi x)|` in discrete `L^2`.
    pub abs_error: f64,
    pub rel_error: f64,
    /// `|r(z)^Nt - e^{-pi^4 T}| / e^{-pi^4 T}` with the CN factor `r(z) = (1 - z/2)/(1 + z/2)`.
    pub cn_amplification_error: f64,
}

/// Free decay of the first mode under `Delta^2`.
pub fn eigenmode_decay(n: usize, t_final: f64, nt: usize) -> Result<EigenmodeReport> {
    let g = build_grid(1, &[1.0], n, t_final, nt)?;
    let b = Arc::new(SpectralBasis::new(&g));
    let p = Propagator::new(
        b.clone(),
        &CoefficientSchedule::sample(&g, &Coefficients::zero(1)),
        g.dt(),
        &SolverOptions::default(),
    )?;
    let u0 = b.sine_mode(&[1]);
    let decay = (-PI.powi(4) * t_final).exp();
    let exact = &u0 * decay;
    let abs_error = b.norm(&(p.forward(&u0, None)?.final_value - &exact));
    let z = PI.powi(4) * g.dt();
    let r = (1.0 - z / 2.0) / (1.0 + z / 2.0);
    Ok(EigenmodeReport {
        n,
        nt,
        t_final,
        abs_error,
        rel_error: abs_error / b.norm(&exact),
        cn_amplification_error: (r.powi(nt as i32) - decay).abs() / decay,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub nts: Vec<usize>,
    pub errors: Vec<f64>,
    /// `log2(e_k / e_{k+1})` for successive halvings.
    pub orders: Vec<f64>,
    pub min_order: f64,
}

/// Manufactured solution `u = e^{-t} sin(pi x)` with `a1 = 9` and a
/// time-dependent `a0`, so the source carries every term of the operator.
pub fn manufactured_order(n: usize, t_final: f64, nts: &[usize]) -> Result<OrderReport> {
    let a1 = 9.0;
    let a0 = |t: f64| 1.0 + 0.5 * (3.0 * t).sin();
    let mut errors = Vec::with_capacity(nts.len());
    for &nt in nts {
        let g = build_grid(1, &[1.0], n, t_final, nt)?;
        let b = Arc::new(SpectralBasis::new(&g));
        let mut c = Coefficients::zero(1);
        c.a1 = CoefficientField::a1(ScalarFn::Constant(a1));
        c.a0 = CoefficientField::a0(ScalarFn::custom(1.5, move |_, t| a0(t)));
        let p = Propagator::new(
            b.clone(),
            &CoefficientSchedule::sample(&g, &c),
            g.dt(),
            &SolverOptions::default(),
        )?;
        let mode = b.sine_mode(&[1]);
        let symbol = PI.powi(4) - a1 * PI * PI;
        let src = Trajectory::from_fn(&g, |j| {
            let t = g.time_node(j);
            &mode * ((symbol + a0(t) - 1.0) * (-t).exp())
        });
        let sol = p.forward(&mode, Some(&src))?;
        errors.push(b.norm(&(sol.final_value - &mode * (-t_final).exp())));
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OrderReport {
        nts: nts.to_vec(),
        errors,
        orders,
        min_order,
    })
}

/// Random smooth coefficients with every lower-order slot populated. The
/// amplitudes keep `Delta^2 + L` coercive on the first mode.
pub fn random_coefficients(dim: usize, seed: u64) -> Coefficients {
    let mut r = FieldSampler::new(stream(seed, 77));
    let mut wave = |off: f64, amp: f64| ScalarFn::Wave {
        offset: r.uniform(-off, off),
        amplitude: r.uniform(0.0, amp),
        wavenumbers: [r.uniform(0.5, 4.0), r.uniform(0.5, 4.0)],
        frequency: r.uniform(-3.0, 3.0),
    };
    Coefficients {
        a0: CoefficientField::a0(wave(1.0, 0.5)),
        b0: CoefficientField::b0((0..dim).map(|_| wave(0.5, 0.5)).collect()),
        b: CoefficientField::b((0..dim * dim).map(|_| wave(0.05, 0.05)).collect()),
        a1: CoefficientField::a1(wave(2.0, 0.5)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityTrial {
    pub seed: u64,
    /// `|lhs - rhs| / |lhs|` for `int chi_O phi y = int (chi_omega v + f) psi`.
    pub relative: f64,
    /// The same scaled by `1 + |lhs|`.
    pub residual: f64,
}

/// One random instance of the duality identity between the state and the adjoint pair.
pub fn duality_trial(seed: u64, n: usize, nt: usize) -> Result<DualityTrial> {
    let g = build_grid(1, &[1.0], n, 0.2, nt)?;
    let b = Arc::new(SpectralBasis::new(&g));
    let c = random_coefficients(1, seed);
    let p = Propagator::new(
        b.clone(),
        &CoefficientSchedule::sample(&g, &c),
        g.dt(),
        &SolverOptions::default(),
    )?;
    let omega = build_mask(&g, &[Region::interval(0.2, 0.6)])?;
    let obs = build_mask(&g, &[Region::interval(0.4, 0.9)])?;
    let mut r = FieldSampler::new(stream(seed, 78));
    let v = Trajectory::from_fn(&g, |_| r.gaussian(g.shape()));
    let f = Trajectory::from_fn(&g, |_| r.gaussian(g.shape()));
    let phi0 = r.sine_series(&b, 12, 1.0);
    let y = p.forward(&g.zeros(), Some(&v.masked(&omega).add(&f)))?.trajectory;
    let phi = p.forward(&phi0, None)?.trajectory;
    let psi = p.backward(None, Some(&phi.masked(&obs)))?.trajectory;
    let residual = duality_residual(&y, &psi, &v, &f, &phi, &omega, &obs)?;
    let lhs = phi.masked(&obs).pairing(&y);
    let rhs = v.masked(&omega).add(&f).pairing(&psi);
    Ok(DualityTrial {
        seed,
        relative: (lhs - rhs).abs() / lhs.abs(),
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientLadder {
    pub hs: Vec<f64>,
    /// `|<grad, d> - CD(h)| / |<grad, d>|` per step size.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log h`.
    pub slope: f64,
    pub final_error: f64,
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Central differences of `J_smooth` against `<grad_J_smooth, d>` on an `h` ladder.
pub fn gradient_ladder(system: &ControlSystem, phi0: &Field, dir: &Field, hs: &[f64]) -> Result<GradientLadder> {
    let g = system.problem().grid();
    let exact = g.inner(&grad_j_smooth(system, phi0)?, dir);
    let mut errors = Vec::with_capacity(hs.len());
    for &h in hs {
        let jp = eval_j_smooth(system, &(phi0 + dir * h))?;
        let jm = eval_j_smooth(system, &(phi0 - dir * h))?;
        let cd = (jp - jm) / (2.0 * h);
        errors.push((cd - exact).abs() / exact.abs().max(f64::MIN_POSITIVE));
    }
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
    Ok(GradientLadder {
        hs: hs.to_vec(),
        final_error: *errors.last().unwrap_or(&f64::NAN),
        slope: ls_slope(&lx, &ly),
        errors,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    pub pairs: usize,
    /// Largest `|<La, b> - <a, Lb>| / (|a| |b|)`.
    pub max_asymmetry: f64,
    /// Smallest `<La, a> / |a|^2`.
    pub min_rayleigh: f64,
}

/// Self-adjointness and positivity of `Lambda` on random fields.
pub fn lambda_symmetry(system: &ControlSystem, pairs: usize, seed: u64) -> Result<SymmetryReport> {
    let g = system.problem().grid();
    let exec = system.problem().exec();
    let shape = g.shape();
    let rows = exec.try_map(pairs, |k| -> Result<(f64, f64)> {
        let mut r = FieldSampler::new(stream(seed, 2000 + k as u64));
        let a = r.gaussian(shape);
        let b = r.gaussian(shape);
        let la = apply_lambda(system, &a)?;
        let lb = apply_lambda(system, &b)?;
        let asym = (g.inner(&la, &b) - g.inner(&a, &lb)).abs() / (g.norm(&a) * g.norm(&b));
        let ray = g.inner(&la, &a) / g.inner(&a, &a);
        Ok((asym, ray))
    })?;
    Ok(SymmetryReport {
        pairs,
        max_asymmetry: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        min_rayleigh: rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
    })
}

/// Unit-norm random smooth perturbation directions.
pub fn random_directions(basis: &SpectralBasis, count: usize, seed: u64) -> Vec<Field> {
    (0..count)
        .map(|k| FieldSampler::new(stream(seed, 3000 + k as u64)).sine_series(basis, 16, 1.0))
        .collect()
}

/// Sentinel probe for `count` random directions with the given control.
pub fn insensitivity_check(
    problem: &ValidatedProblem,
    v: &Trajectory,
    count: usize,
    seed: u64,
    tau: f64,
) -> Result<Vec<InsensitivityReport>> {
    let dirs = random_directions(problem.basis(), count, seed);
    insensitivity_sweep(problem, v, &dirs, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{desk_config, validate_problem, DeskSpec};
    use crate::Nonlinearity;

    #[test]
    fn eigenmode_matches_cn_amplification() {
        let r = eigenmode_decay(64, 0.01, 200).unwrap();
        assert!((r.rel_error - r.cn_amplification_error).abs() <= 1e-3 * r.cn_amplification_error);
        assert!(r.abs_error <= 1e-6);
    }

    #[test]
    fn manufactured_is_second_order() {
        let r = manufactured_order(32, 1.0, &[50, 100, 200, 400]).unwrap();
        assert!(r.min_order >= 1.9, "{r:?}");
    }

    #[test]
    fn duality_holds_with_all_coefficients() {
        for seed in 0..4 {
            let t = duality_trial(seed, 32, 64).unwrap();
            assert!(t.relative <= 1e-10, "{t:?}");
        }
    }

    #[test]
    fn desk_lambda_is_symmetric_psd() {
        let p = Arc::new(validate_problem(desk_config(&DeskSpec::default(), Nonlinearity::Zero).unwrap()).unwrap());
        let r = lambda_symmetry(&ControlSystem::linear(p), 6, 1).unwrap();
        assert!(r.max_asymmetry <= 1e-10 && r.min_rayleigh >= -1e-12, "{r:?}");
    }

    #[test]
    fn slope_of_exact_powers() {
        let x = [1.0f64, 2.0, 3.0];
        let y = x.map(|v| 2.0 * v + 1.0);
        assert!((ls_slope(&x, &y) - 2.0).abs() < 1e-14);
    }
}
