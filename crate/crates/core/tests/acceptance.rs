//! Desk-scale acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so each criterion reports its own numbers and
//! timing. A criterion that errors or misses its tolerance prints FAIL; the
//! exit status is nonzero only under `INSENS_ACCEPTANCE_STRICT=1`, so the
//! workspace test run keeps going and the FAIL lines stay in its output.

use std::sync::Arc;
use std::time::{Duration, Instant};

use insens_core::cascade::{ControlSystem, DEFAULT_TAU};
use insens_core::diagnostics::{
    duality_trial, eigenmode_decay, gradient_ladder, insensitivity_check, lambda_symmetry, manufactured_order,
    random_directions,
};
use insens_core::hum::{minimize_exact, observability_ratio_sample, verify_null, HumOptions, Variant};
use insens_core::problem::{desk_config, DeskSpec};
use insens_core::rng::{stream, FieldSampler};
use insens_core::semilinear::{picard_insensitize, PicardOptions};
use insens_core::weights::{build_weights, check_lemma23, check_weight_properties};
use insens_core::{validate_problem, Error, Nonlinearity, ValidatedProblem};

const SEED: u64 = 20240607;

const TIGHTNESS_TOL: f64 = 1e-12;
const EIGENMODE_TOL: f64 = 1e-6;
const MIN_ORDER: f64 = 1.9;
const DUALITY_TOL: f64 = 1e-10;
const DUALITY_TRIALS: u64 = 50;
const SLOPE_TARGET: f64 = 2.0;
const SLOPE_TOL: f64 = 0.1;
const GRADIENT_FINAL_TOL: f64 = 1e-6;
const GRADIENT_DIRECTIONS: usize = 10;
const GRADIENT_STEPS: [f64; 3] = [1e-3, 1e-4, 1e-5];
const SYMMETRY_PAIRS: usize = 100;
const ASYMMETRY_TOL: f64 = 1e-10;
const RAYLEIGH_FLOOR: f64 = -1e-12;
const EPS_LADDER: [f64; 3] = [1e-2, 1e-3, 1e-4];
const NULL_SLACK: f64 = 1.01;
const INSENSITIVITY_DIRECTIONS: usize = 20;
const INSENSITIVITY_FACTOR: f64 = 10.0;
const IDENTITY_TOL: f64 = 1e-10;
/// The linear sentinel is exactly quadratic in tau, so any probe size gives the
/// same central difference; a unit probe keeps `y(+tau) - y(-tau)` clear of
/// cancellation against `|y| ~ 1e2` on the observation set.
const LINEAR_TAU: f64 = 1.0;
const PICARD_EPS: f64 = 1e-3;
const PICARD_MAX_ITER: usize = 15;
const PICARD_TOL: f64 = 1e-8;
const FTC_TOL: f64 = 1e-8;
const RATIO_SAMPLES: usize = 50;
const RATIO_CHANGE_TOL: f64 = 0.20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn desk(n: usize, f: Nonlinearity) -> Result<Arc<ValidatedProblem>, Error> {
    let spec = DeskSpec {
        n,
        ..DeskSpec::default()
    };
    Ok(Arc::new(validate_problem(desk_config(&spec, f)?)?))
}

fn c1() -> Result<Outcome, Error> {
    let p = desk(64, Nonlinearity::Zero)?;
    let mut pass = true;
    let mut worst = f64::INFINITY;
    let mut grad = 0.0f64;
    for lambda in [1.0, 2.0, 4.0] {
        let w = build_weights(p.eta(), lambda, p.grid().t_final())?;
        let r = check_weight_properties(&w, p.grid(), p.exec());
        pass &= r.all_pass();
        worst = worst.min(r.xi_inv_margin).min(r.time_derivative_margin);
        grad = grad.max(r.grad_alpha_rel).max(r.grad_xi_rel);
    }
    Ok(Outcome {
        pass,
        detail: format!("worst margin {worst:.3e}, worst gradient identity rel {grad:.3e}"),
    })
}

fn c2() -> Result<Outcome, Error> {
    let p = desk(64, Nonlinearity::Zero)?;
    let w = p.weights();
    let thr = w.s_threshold();
    let mut pass = true;
    let mut worst = f64::INFINITY;
    let mut gap = f64::NAN;
    for k in [1.0, 2.0, 10.0] {
        let r = check_lemma23(w, k * thr, p.grid(), true, p.exec())?;
        pass &= r.all_pass();
        for part in [r.part1.as_ref(), Some(&r.part2), Some(&r.part3)].into_iter().flatten() {
            worst = worst.min(part.worst_log_margin);
        }
        gap = r.tightness_gap;
    }
    pass &= gap <= TIGHTNESS_TOL;
    Ok(Outcome {
        pass,
        detail: format!("threshold s = {thr:.6}, worst log margin {worst:.3e}, tightness gap {gap:.3e}"),
    })
}

fn c3() -> Result<Outcome, Error> {
    let e = eigenmode_decay(64, 0.01, 200)?;
    let o = manufactured_order(64, 1.0, &[50, 100, 200, 400])?;
    Ok(Outcome {
        pass: e.abs_error <= EIGENMODE_TOL && o.min_order >= MIN_ORDER,
        detail: format!(
            "eigenmode abs {:.3e} (rel {:.3e}), orders {:?}",
            e.abs_error,
            e.rel_error,
            o.orders.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    })
}

fn c4() -> Result<Outcome, Error> {
    let mut worst = 0.0f64;
    for k in 0..DUALITY_TRIALS {
        let t = duality_trial(SEED + k, 64, 200)?;
        worst = worst.max(t.relative);
    }
    Ok(Outcome {
        pass: worst <= DUALITY_TOL,
        detail: format!("{DUALITY_TRIALS} instances, worst relative residual {worst:.3e}"),
    })
}

fn c5() -> Result<Outcome, Error> {
    let p = desk(64, Nonlinearity::Zero)?;
    let sys = ControlSystem::linear(p.clone());
    let phi0 = FieldSampler::new(stream(SEED, 5)).sine_series(p.basis(), 16, 1.0);
    let dirs = random_directions(p.basis(), GRADIENT_DIRECTIONS, SEED + 5);
    let mut slope_ok = true;
    let mut final_worst = 0.0f64;
    let mut slopes = Vec::new();
    for d in &dirs {
        let l = gradient_ladder(&sys, &phi0, d, &GRADIENT_STEPS)?;
        slope_ok &= (l.slope - SLOPE_TARGET).abs() <= SLOPE_TOL;
        final_worst = final_worst.max(l.final_error);
        slopes.push(l.slope);
    }
    let (lo, hi) = slopes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    Ok(Outcome {
        pass: slope_ok && final_worst <= GRADIENT_FINAL_TOL,
        detail: format!("slopes in [{lo:.3}, {hi:.3}], worst final relative error {final_worst:.3e}"),
    })
}

fn c6() -> Result<Outcome, Error> {
    let p = desk(64, Nonlinearity::Zero)?;
    let r = lambda_symmetry(&ControlSystem::linear(p), SYMMETRY_PAIRS, SEED + 6)?;
    Ok(Outcome {
        pass: r.max_asymmetry <= ASYMMETRY_TOL && r.min_rayleigh >= RAYLEIGH_FLOOR,
        detail: format!("asymmetry {:.3e}, min Rayleigh {:.3e}", r.max_asymmetry, r.min_rayleigh),
    })
}

/// The exact-norm ladder, shared with the insensitivity criterion.
fn c7_c8() -> Result<(Outcome, Outcome, Duration), Error> {
    let start = Instant::now();
    let p = desk(64, Nonlinearity::Zero)?;
    let sys = ControlSystem::linear(p.clone());
    let opts = HumOptions::prox();
    let mut pass = true;
    let mut norms = Vec::new();
    let mut last = None;
    for eps in EPS_LADDER {
        let r = minimize_exact(&sys, eps, &opts)?;
        let v = verify_null(&sys, &r, p.constants())?;
        pass &= v.q0_norm <= eps * NULL_SLACK;
        norms.push(v.q0_norm);
        last = Some(r);
    }
    pass &= norms.windows(2).all(|w| w[1] <= w[0]);
    let c7 = Outcome {
        pass,
        detail: format!(
            "|q(0)| = {:?}",
            norms.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>()
        ),
    };
    let c7_time = start.elapsed();

    let r = last.expect("ladder is nonempty");
    let eps = r.epsilon;
    let reports = insensitivity_check(&p, &r.control, INSENSITIVITY_DIRECTIONS, SEED + 8, LINEAR_TAU)?;
    let worst_d = reports.iter().map(|r| r.d_fd.abs()).fold(0.0, f64::max);
    let worst_gap = reports.iter().map(|r| r.gap).fold(0.0, f64::max);
    let cs = reports.iter().all(|r| r.cauchy_schwarz);
    let small = insensitivity_check(&p, &r.control, INSENSITIVITY_DIRECTIONS, SEED + 8, DEFAULT_TAU)?;
    let small_gap = small.iter().map(|r| r.gap).fold(0.0, f64::max);
    let c8 = Outcome {
        pass: worst_d <= INSENSITIVITY_FACTOR * eps && worst_gap <= IDENTITY_TOL && cs,
        detail: format!(
            "eps {eps:.0e}: max |D_fd| {worst_d:.3e}, identity gap {worst_gap:.3e} at tau {LINEAR_TAU} ({small_gap:.3e} at tau {DEFAULT_TAU})"
        ),
    };
    Ok((c7, c8, c7_time))
}

fn c9() -> Result<Outcome, Error> {
    let opts = PicardOptions {
        tol: PICARD_TOL,
        max_iter: PICARD_MAX_ITER,
        variant: Variant::Exact,
        ..PicardOptions::default()
    };
    let p = desk(64, Nonlinearity::Tanh(0.1))?;
    let res = picard_insensitize(p.clone(), PICARD_EPS, &opts)?;
    let ftc = res.history.iter().map(|h| h.ftc_residual).fold(0.0, f64::max);
    let last = res.history.last().expect("at least one iterate");
    let v = res.control().expect("control");
    let tau = DEFAULT_TAU;
    let reports = insensitivity_check(&p, v, INSENSITIVITY_DIRECTIONS, SEED + 9, tau)?;
    let worst_d = reports.iter().map(|r| r.d_fd.abs()).fold(0.0, f64::max);
    let bound = INSENSITIVITY_FACTOR * PICARD_EPS + INSENSITIVITY_FACTOR * tau * tau;
    let semilinear_ok = res.converged
        && res.iterations <= PICARD_MAX_ITER
        && last.increment <= PICARD_TOL * (1.0 + last.y_norm)
        && ftc <= FTC_TOL
        && last.q0_norm <= PICARD_EPS * NULL_SLACK
        && worst_d <= bound;

    let p0 = desk(64, Nonlinearity::Zero)?;
    let zero = picard_insensitize(p0.clone(), PICARD_EPS, &opts)?;
    let linear = minimize_exact(&ControlSystem::linear(p0.clone()), PICARD_EPS, &opts.hum)?;
    let gap = zero
        .control()
        .map(|c| c.sub(&linear.control).l2_norm() / linear.control.l2_norm().max(f64::MIN_POSITIVE))
        .unwrap_or(f64::INFINITY);
    let zero_ok = zero.converged && zero.iterations == 1 && gap <= 1e-12;
    Ok(Outcome {
        pass: semilinear_ok && zero_ok,
        detail: format!(
            "tanh: {} iterations, increment {:.3e} (scaled {:.3e}), rate {:.3e}, FTC {:.3e}, |q(0)| {:.6e}, max |D_fd| {:.3e} (bound {:.3e}); zero F: {} iteration(s), control gap {:.3e}",
            res.iterations,
            last.increment,
            last.increment / (1.0 + last.y_norm),
            res.contraction_factor.unwrap_or(f64::NAN),
            ftc,
            last.q0_norm,
            worst_d,
            bound,
            zero.iterations,
            gap
        ),
    })
}

fn c10() -> Result<Outcome, Error> {
    let mut maxes = Vec::new();
    let mut details = Vec::new();
    let mut finite = true;
    for n in [64, 96] {
        let p = desk(n, Nonlinearity::Zero)?;
        let constants = p
            .constants()
            .ok_or_else(|| Error::InvalidParameter("observability constants unavailable".into()))?;
        let sys = ControlSystem::linear(p.clone());
        let r = observability_ratio_sample(&sys, constants, RATIO_SAMPLES, SEED + 10, p.exec())?;
        finite &= r.degenerate == 0 && r.ratios.iter().all(|v| v.is_finite());
        details.push(format!(
            "N={n}: max {:.6e} median {:.6e} C>= {:.3e}",
            r.max, r.median, r.empirical_c
        ));
        maxes.push(r.max);
    }
    let change = (maxes[1] - maxes[0]).abs() / maxes[0];
    Ok(Outcome {
        pass: finite && change <= RATIO_CHANGE_TOL,
        detail: format!("{}; change {:.3}%", details.join(", "), 100.0 * change),
    })
}

fn report(k: usize, name: &str, budget: Duration, elapsed: Duration, r: Result<Outcome, Error>) -> bool {
    let (pass, detail) = match r {
        Ok(o) => (o.pass && elapsed <= budget, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} [{k:>2}] {name}: {detail} ({:.2} s, budget {} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn main() {
    let s = Duration::from_secs;
    let mut all = true;

    let (r, t) = timed(c1);
    all &= report(1, "weight properties", s(5), t, r);
    let (r, t) = timed(c2);
    all &= report(2, "weighted exponential bounds", s(5), t, r);
    let (r, t) = timed(c3);
    all &= report(3, "solver orders", s(30), t, r);
    let (r, t) = timed(c4);
    all &= report(4, "discrete duality", s(60), t, r);
    let (r, t) = timed(c5);
    all &= report(5, "gradient correctness", s(60), t, r);
    let (r, t) = timed(c6);
    all &= report(6, "Lambda symmetric PSD", s(120), t, r);

    let (r, t) = timed(c7_c8);
    match r {
        Ok((o7, o8, t7)) => {
            all &= report(7, "null condition", s(240), t7, Ok(o7));
            all &= report(8, "insensitivity", s(120), t - t7, Ok(o8));
        }
        Err(e) => {
            let msg = e.to_string();
            all &= report(7, "null condition", s(240), t, Err(e));
            all &= report(
                8,
                "insensitivity",
                s(120),
                t,
                Err(Error::InvalidParameter(format!("no control: {msg}"))),
            );
        }
    }

    let (r, t) = timed(c9);
    all &= report(9, "semilinear pipeline", s(300), t, r);
    let (r, t) = timed(c10);
    all &= report(10, "observability ratio", s(180), t, r);

    println!("{}", if all { "ALL PASS" } else { "SOME FAILED" });
    if !all && std::env::var("INSENS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
