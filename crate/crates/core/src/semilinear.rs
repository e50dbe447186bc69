//! Linearization at a frozen state and the Picard loop for the semilinear problem.
//!
//! At a frozen `z` the nonlinear term is split exactly as
//! `F(z) = F(0) + G1 z + G2 . grad z + G3 : hess z` with the `G`s the
//! `tau`-averages of the partials along the segment from 0 to the jet of `z`.
//! The linearized state equation carries the `G`s; the adjoint equation
//! carries the partials at `z` itself.

use std::sync::Arc;

use serde::Serialize;

use crate::cascade::ControlSystem;
use crate::error::{Error, Result};
use crate::hum::{minimize, ControlResult, HumOptions, Variant};
use crate::nonlinearity::{Jet, Nonlinearity, Partials};
use crate::pde::{JetField, LowerOrder, Propagator, Trajectory};
use crate::problem::ValidatedProblem;
use crate::quadrature::{gauss_legendre_unit, halton};
use crate::spectral::{Field, SpectralBasis};

const TAU_NODES: usize = 16;

/// Coefficient fields of the linearized problem at a frozen trajectory.
#[derive(Debug, Clone)]
pub struct FrozenLinearization {
    /// `(G1, G2, G3)` per time step, in the slots `(a0, B0, B)`.
    pub g: Vec<LowerOrder>,
    /// `(F_y, grad_p F, F_r)` at `z`, same layout.
    pub partials: Vec<LowerOrder>,
    pub f000: f64,
    /// `max |G1| + |G2| + sum |G3|` over the grid.
    pub g_sup: f64,
    /// Same for the partials at `z`.
    pub partials_sup: f64,
    /// `F` ignores its arguments, so the linearization is that of the base problem.
    pub state_independent: bool,
}

fn state_independent(f: &Nonlinearity) -> bool {
    matches!(f, Nonlinearity::Zero | Nonlinearity::Constant(_)) || f.is_zero()
}

/// Pack pointwise partials into a lower-order record (slots `a0`, `B0`, `B`).
fn pack(dim: usize, shape: (usize, usize), f: &Nonlinearity, d: &[Partials]) -> LowerOrder {
    let field = |g: &dyn Fn(&Partials) -> f64| Field::from_fn(shape.0, shape.1, |i, j| g(&d[i + shape.0 * j]));
    let mut lo = LowerOrder::zero(dim);
    lo.a0 = Some(field(&|p| p.fy));
    if f.uses_gradient() {
        for a in 0..dim {
            lo.b0[a] = Some(field(&|p| p.fp[a]));
        }
    }
    if f.uses_hessian() {
        for k in 0..dim * dim {
            lo.b[k] = Some(field(&|p| p.fr[k / dim][k % dim]));
        }
    }
    lo
}

fn jets(basis: &SpectralBasis, f: &Nonlinearity, u: &Field) -> Vec<Jet> {
    let jf = JetField::new(basis, u, f.uses_gradient(), f.uses_hessian());
    let (n1, n2) = u.shape();
    let mut out = Vec::with_capacity(n1 * n2);
    for j in 0..n2 {
        for i in 0..n1 {
            out.push(jf.jet(i, j));
        }
    }
    out
}

fn finite(p: &Partials) -> bool {
    p.fy.is_finite() && p.fp.iter().all(|v| v.is_finite()) && p.fr.iter().flatten().all(|v| v.is_finite())
}

/// Jet magnitude one 16-node panel is trusted with; saturating `F` have
/// poles about `pi/2` off the real axis, so wider panels lose digits.
const PANEL_REACH: f64 = 2.5;
const MAX_PANELS: usize = 64;

/// `int_0^1 (F_y, grad_p F, F_r)(tau jet) dtau` by composite 16-node
/// Gauss-Legendre, one panel per `PANEL_REACH` of jet magnitude.
pub fn averaged_partials(f: &Nonlinearity, jet: &Jet) -> Partials {
    let (x, w) = gauss_legendre_unit(TAU_NODES);
    let reach = jet
        .p
        .iter()
        .chain(jet.r.iter().flatten())
        .fold(jet.u.abs(), |m, v| m.max(v.abs()));
    let panels = ((reach / PANEL_REACH).ceil() as usize).clamp(1, MAX_PANELS);
    let h = 1.0 / panels as f64;
    let mut acc = Partials::default();
    for k in 0..panels {
        for (t, w) in x.iter().zip(&w) {
            let d = f.partials(&jet.scaled(h * (k as f64 + t)));
            let w = h * w;
            acc.fy += w * d.fy;
            for a in 0..2 {
                acc.fp[a] += w * d.fp[a];
                for b in 0..2 {
                    acc.fr[a][b] += w * d.fr[a][b];
                }
            }
        }
    }
    acc
}

/// Linearization of `F` along the trajectory `z`; step `j` uses `z.at(j)`.
pub fn eval_g(problem: &ValidatedProblem, z: &Trajectory) -> Result<FrozenLinearization> {
    let f = problem.nonlinearity();
    let basis = problem.basis();
    let dim = basis.dimension();
    let shape = basis.shape();
    let f000 = f.value(&Jet::default());
    if !f000.is_finite() {
        return Err(Error::NonlinearityEvalFailure(format!("{}: F(0,0,0) = {f000}", f.id())));
    }
    if state_independent(f) {
        return Ok(FrozenLinearization {
            g: Vec::new(),
            partials: Vec::new(),
            f000,
            g_sup: 0.0,
            partials_sup: 0.0,
            state_independent: true,
        });
    }
    let steps = problem.exec().try_map(z.nt(), |j| {
        let js = jets(basis, f, z.at(j));
        let g: Vec<Partials> = js.iter().map(|jet| averaged_partials(f, jet)).collect();
        let d: Vec<Partials> = js.iter().map(|jet| f.partials(jet)).collect();
        if let Some(k) = g.iter().chain(&d).position(|p| !finite(p)) {
            return Err(Error::NonlinearityEvalFailure(format!(
                "{}: non-finite partial at step {j}, node {}",
                f.id(),
                k % js.len()
            )));
        }
        let gs = g.iter().map(Partials::magnitude).fold(0.0, f64::max);
        let ds = d.iter().map(Partials::magnitude).fold(0.0, f64::max);
        Ok((pack(dim, shape, f, &g), pack(dim, shape, f, &d), gs, ds))
    })?;
    let mut lin = FrozenLinearization {
        g: Vec::with_capacity(steps.len()),
        partials: Vec::with_capacity(steps.len()),
        f000,
        g_sup: 0.0,
        partials_sup: 0.0,
        state_independent: false,
    };
    for (g, d, gs, ds) in steps {
        lin.g.push(g);
        lin.partials.push(d);
        lin.g_sup = lin.g_sup.max(gs);
        lin.partials_sup = lin.partials_sup.max(ds);
    }
    Ok(lin)
}

impl FrozenLinearization {
    /// `(y-propagator, q-propagator)` of the linearized problem.
    pub fn propagators(&self, problem: &ValidatedProblem) -> Result<(Arc<Propagator>, Arc<Propagator>)> {
        if self.state_independent {
            let p = problem.base_propagator().clone();
            return Ok((p.clone(), p));
        }
        let base = problem.base_schedule();
        let build = |delta: &[LowerOrder]| -> Result<Arc<Propagator>> {
            Propagator::new(
                problem.basis().clone(),
                &base.minus(delta),
                problem.grid().dt(),
                problem.solver(),
            )
            .map(Arc::new)
        };
        Ok((build(&self.g)?, build(&self.partials)?))
    }
}

/// Propagator whose transpose is the adjoint of the linearization at `y`.
pub fn q_propagator_at(problem: &ValidatedProblem, y: &Trajectory) -> Result<Arc<Propagator>> {
    let f = problem.nonlinearity();
    if state_independent(f) {
        return Ok(problem.base_propagator().clone());
    }
    let basis = problem.basis();
    let (dim, shape) = (basis.dimension(), basis.shape());
    let delta = problem.exec().map(y.nt(), |j| {
        let d: Vec<Partials> = jets(basis, f, y.at(j)).iter().map(|jet| f.partials(jet)).collect();
        pack(dim, shape, f, &d)
    });
    Propagator::new(
        basis.clone(),
        &problem.base_schedule().minus(&delta),
        problem.grid().dt(),
        problem.solver(),
    )
    .map(Arc::new)
}

/// `max |F(z) - F(0) - G1 z - G2 . grad z - G3 : hess z|` over the trajectory.
pub fn ftc_residual(problem: &ValidatedProblem, lin: &FrozenLinearization, z: &Trajectory) -> f64 {
    let f = problem.nonlinearity();
    let basis = problem.basis();
    let per_step = problem.exec().map(z.nt(), |j| {
        let u = z.at(j);
        let direct = crate::pde::apply_nonlinearity(basis, f, u);
        let linear = if lin.state_independent {
            basis.zeros()
        } else {
            lin.g[j].apply(basis, u)
        };
        (direct - linear).add_scalar(-lin.f000).amax()
    });
    per_step.into_iter().fold(0.0, f64::max)
}

/// Axis-aligned box in jet space; the same interval for every slot of a kind.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplingBox {
    pub dim: usize,
    pub u: (f64, f64),
    pub p: (f64, f64),
    pub r: (f64, f64),
}

impl SamplingBox {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        let i = (-half_width, half_width);
        SamplingBox { dim, u: i, p: i, r: i }
    }
}

pub const LIPSCHITZ_SAMPLES: u64 = 10_000;

/// Sampled `sup |F_y| + |grad_p F| + sum |F_r|` over a Halton set in the box,
/// checked against `declared` (or the catalog bound when `None`).
pub fn lipschitz_bound(f: &Nonlinearity, sbox: &SamplingBox, declared: Option<f64>) -> Result<f64> {
    let d = sbox.dim;
    let slots = 1 + d + d * d;
    let lerp = |(lo, hi): (f64, f64), s: f64| lo + (hi - lo) * s;
    let mut sup: f64 = 0.0;
    // the origin is where saturating nonlinearities peak
    for k in 0..=LIPSCHITZ_SAMPLES {
        let jet = if k == 0 {
            Jet::default()
        } else {
            let h = halton(k, slots);
            let mut jet = Jet {
                u: lerp(sbox.u, h[0]),
                ..Default::default()
            };
            for a in 0..d {
                jet.p[a] = lerp(sbox.p, h[1 + a]);
                for b in 0..d {
                    jet.r[a][b] = lerp(sbox.r, h[1 + d + a * d + b]);
                }
            }
            jet
        };
        sup = sup.max(f.partials(&jet).magnitude());
    }
    if let Some(m) = declared.or_else(|| f.declared_bound()) {
        if sup > m * (1.0 + 1e-12) {
            return Err(Error::DeclaredBoundViolated {
                sampled: sup,
                declared: m,
            });
        }
    }
    Ok(sup)
}

#[derive(Debug, Clone)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub variant: Variant,
    pub hum: HumOptions,
    /// Stability constant in `R1 = L1 (1 + |e^{M/(2 sqrt t)} f|)`; `None` takes
    /// twice the ratio observed on the first iterate.
    pub l1_proxy: Option<f64>,
    /// Consecutive growing increments that count as divergence.
    pub divergence_window: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: 1e-8,
            max_iter: 30,
            variant: Variant::Exact,
            hum: HumOptions::prox(),
            l1_proxy: None,
            divergence_window: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardIterate {
    pub k: usize,
    /// `|z_{k+1} - z_k|` in discrete `L^2(0,T;H^2)`.
    pub increment: f64,
    pub y_norm: f64,
    pub q_norm: f64,
    pub q0_norm: f64,
    pub g_sup: f64,
    pub partials_sup: f64,
    pub ftc_residual: f64,
    pub hum_iterations: usize,
    pub inside_ball: bool,
}

#[derive(Debug, Clone)]
pub struct SemilinearResult {
    pub history: Vec<PicardIterate>,
    pub controls: Vec<ControlResult>,
    pub iterations: usize,
    pub converged: bool,
    pub l1_proxy: f64,
    pub r1: f64,
    /// Mean ratio of successive increments over the tail of the run.
    pub contraction_factor: Option<f64>,
    pub ball_violations: usize,
    pub declared_bound: Option<f64>,
}

impl SemilinearResult {
    pub fn last(&self) -> Option<&ControlResult> {
        self.controls.last()
    }
    pub fn control(&self) -> Option<&Trajectory> {
        self.last().map(|c| &c.control)
    }
    pub fn state(&self) -> Option<&Trajectory> {
        self.last().map(|c| &c.cascade.y)
    }
}

fn contraction(history: &[PicardIterate]) -> Option<f64> {
    let inc: Vec<f64> = history.iter().map(|h| h.increment).filter(|v| *v > 0.0).collect();
    if inc.len() < 3 {
        return None;
    }
    // skip the first increment, which measures |z1 - 0|
    let tail = &inc[1..];
    let r: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
    Some((r.iter().map(|v| v.ln()).sum::<f64>() / r.len() as f64).exp())
}

/// Successive substitution `z_{k+1} = y(z_k)`, each step solving the frozen
/// linear control problem by penalized HUM.
pub fn picard_insensitize(problem: Arc<ValidatedProblem>, eps: f64, opts: &PicardOptions) -> Result<SemilinearResult> {
    let g = problem.grid().clone();
    let basis = problem.basis().clone();
    let f = *problem.nonlinearity();
    let ball_scale = 1.0 + problem.weighted_force_integral().sqrt();
    let mut z = Trajectory::zeros(&g);
    let mut result = SemilinearResult {
        history: Vec::new(),
        controls: Vec::new(),
        iterations: 0,
        converged: false,
        l1_proxy: opts.l1_proxy.unwrap_or(f64::NAN),
        r1: f64::NAN,
        contraction_factor: None,
        ball_violations: 0,
        declared_bound: f.declared_bound(),
    };
    let mut warm: Option<Field> = opts.hum.warm_start.clone();
    let mut growing = 0;
    for k in 0..opts.max_iter {
        let lin = eval_g(&problem, &z)?;
        let ftc = ftc_residual(&problem, &lin, &z);
        let system = ControlSystem::frozen(problem.clone(), &lin)?;
        let mut hum = opts.hum.clone();
        hum.warm_start = warm.clone();
        let control = match minimize(&system, eps, opts.variant, &hum) {
            Ok(c) => c,
            Err(Error::CgStall { last, .. }) | Err(Error::ProxStall { last, .. }) => *last,
            Err(e) => return Err(e),
        };
        warm = Some(control.phi0.clone());
        let y = control.cascade.y.clone();
        let increment = if lin.state_independent {
            0.0
        } else {
            y.sub(&z).l2_h2_norm(&basis)
        };
        let y_norm = y.l2_h2_norm(&basis);
        let q_norm = control.cascade.q.l2_h2_norm(&basis);
        if k == 0 && opts.l1_proxy.is_none() {
            result.l1_proxy = 2.0 * (y_norm + q_norm) / ball_scale;
        }
        result.r1 = result.l1_proxy * ball_scale;
        let inside_ball = y_norm + q_norm <= result.r1;
        if !inside_ball {
            result.ball_violations += 1;
        }
        let prev = result.history.last().map(|h| h.increment);
        result.history.push(PicardIterate {
            k,
            increment,
            y_norm,
            q_norm,
            q0_norm: control.q0_norm,
            g_sup: lin.g_sup,
            partials_sup: lin.partials_sup,
            ftc_residual: ftc,
            hum_iterations: control.iterations,
            inside_ball,
        });
        result.controls.push(control);
        result.iterations = k + 1;
        result.contraction_factor = contraction(&result.history);
        if increment <= opts.tol * (1.0 + y_norm) {
            result.converged = true;
            return Ok(result);
        }
        // the first increment is |z1|, not a difference of iterates
        if k >= 2 && prev.is_some_and(|p| increment > p) {
            growing += 1;
        } else {
            growing = 0;
        }
        if growing >= opts.divergence_window {
            return Err(Error::PicardDivergence(growing, Box::new(result)));
        }
        z = y;
    }
    let n = result.iterations;
    Err(Error::MaxIterExceeded(n, Box::new(result)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_grid, build_mask, validate_problem, Force, ProblemConfig, Region, ScalarFn};
    use crate::rng::{stream, FieldSampler};

    fn problem(f: Nonlinearity) -> ValidatedProblem {
        let g = build_grid(1, &[1.0], 32, 0.2, 40).unwrap();
        let w = build_mask(&g, &[Region::interval(0.3, 0.7)]).unwrap();
        let o = build_mask(&g, &[Region::interval(0.5, 0.9)]).unwrap();
        let w0 = build_mask(&g, &[Region::interval(0.55, 0.65)]).unwrap();
        let mut c = ProblemConfig::new(g, w, o, w0);
        c.nonlinearity = f;
        c.force = Force {
            field: ScalarFn::Mode {
                amplitude: 1.0,
                modes: [1, 1],
                decay: 0.0,
            },
            start: 0.05,
        };
        validate_problem(c).unwrap()
    }

    fn random_z(p: &ValidatedProblem, amp: f64, seed: u64) -> Trajectory {
        let mut r = FieldSampler::new(stream(seed, 0));
        let z = Trajectory::from_fn(p.grid(), |_| r.sine_series(p.basis(), 8, 1.0));
        let m = z.max_abs();
        z.scaled(amp / m)
    }

    #[test]
    fn linear_f_gives_constant_g() {
        let p = problem(Nonlinearity::Linear(1.0));
        let lin = eval_g(&p, &random_z(&p, 3.0, 1)).unwrap();
        for step in &lin.g {
            assert!(step.a0.as_ref().unwrap().iter().all(|v| (v - 1.0).abs() < 1e-14));
        }
        assert!((lin.g_sup - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sin_average_matches_closed_form() {
        let f = Nonlinearity::Sin(1.0);
        for k in 0..=200 {
            let z = -10.0 + 0.1 * k as f64;
            let exact = if z == 0.0 { 1.0 } else { z.sin() / z };
            let g = averaged_partials(
                &f,
                &Jet {
                    u: z,
                    ..Default::default()
                },
            )
            .fy;
            assert!((g - exact).abs() <= 1e-12, "z = {z}: {g} vs {exact}");
        }
    }

    #[test]
    fn square_average_is_exact() {
        let f = Nonlinearity::Square;
        for z in [-7.5, -1.0, 0.0, 0.3, 4.0] {
            let g = averaged_partials(
                &f,
                &Jet {
                    u: z,
                    ..Default::default()
                },
            )
            .fy;
            assert!((g - z).abs() <= 1e-13 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn ftc_residuals() {
        let p = problem(Nonlinearity::Constant(0.7));
        let z = random_z(&p, 5.0, 2);
        assert_eq!(ftc_residual(&p, &eval_g(&p, &z).unwrap(), &z), 0.0);
        let p = problem(Nonlinearity::Tanh(1.0));
        let z = random_z(&p, 5.0, 3);
        assert!(ftc_residual(&p, &eval_g(&p, &z).unwrap(), &z) <= 1e-10);
        let p = problem(Nonlinearity::Sin(1.0));
        let z = Trajectory::from_fn(p.grid(), |_| p.basis().sine_mode(&[1]) * std::f64::consts::PI);
        assert!(ftc_residual(&p, &eval_g(&p, &z).unwrap(), &z) <= 1e-10);
        let p = problem(Nonlinearity::Mixed(0.2));
        let z = random_z(&p, 0.5, 4);
        assert!(ftc_residual(&p, &eval_g(&p, &z).unwrap(), &z) <= 1e-8);
    }

    #[test]
    fn lipschitz_samples() {
        let b = SamplingBox::cube(1, 10.0);
        let t = lipschitz_bound(&Nonlinearity::Tanh(1.0), &b, None).unwrap();
        assert!((1.0 - 1e-12..=1.0).contains(&t));
        assert_eq!(lipschitz_bound(&Nonlinearity::Zero, &b, None).unwrap(), 0.0);
        assert!(matches!(
            lipschitz_bound(&Nonlinearity::Linear(2.0), &b, Some(1.0)),
            Err(Error::DeclaredBoundViolated { .. })
        ));
        let m = lipschitz_bound(&Nonlinearity::Mixed(0.3), &SamplingBox::cube(2, 10.0), None).unwrap();
        assert!(m <= 1.6);
    }

    #[test]
    fn g_fields_bounded_by_declared_constant() {
        let f = Nonlinearity::Mixed(0.3);
        let p = problem(f);
        let lin = eval_g(&p, &random_z(&p, 4.0, 5)).unwrap();
        assert!(lin.g_sup <= f.declared_bound().unwrap() + 1e-8);
        assert!(lin.partials_sup <= f.declared_bound().unwrap() + 1e-8);
    }

    #[test]
    fn zero_nonlinearity_is_one_iteration() {
        let p = Arc::new(problem(Nonlinearity::Zero));
        let o = PicardOptions {
            variant: Variant::Quadratic,
            hum: HumOptions::cg(),
            ..Default::default()
        };
        let r = picard_insensitize(p.clone(), 1e-3, &o).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        let lin = crate::hum::minimize_quadratic(&ControlSystem::linear(p), 1e-3, &HumOptions::cg()).unwrap();
        assert_eq!(r.last().unwrap().phi0, lin.phi0);
    }

    #[test]
    fn small_tanh_contracts() {
        let p = Arc::new(problem(Nonlinearity::Tanh(0.5)));
        let o = PicardOptions {
            variant: Variant::Quadratic,
            hum: HumOptions {
                tol: 1e-12,
                ..HumOptions::cg()
            },
            ..Default::default()
        };
        let r = picard_insensitize(p.clone(), 1e-3, &o).unwrap();
        assert!(r.converged && r.iterations <= 15, "{:?}", r.history);
        assert!(r.history.iter().all(|h| h.ftc_residual <= 1e-8));
        // fixed point: the frozen solve at the converged state reproduces it
        let y = r.state().unwrap().clone();
        let lin = eval_g(&p, &y).unwrap();
        let s = ControlSystem::frozen(p.clone(), &lin).unwrap();
        let again = crate::cascade::solve_cascade(&s, r.control().unwrap()).unwrap();
        assert!(again.y.sub(&y).l2_h2_norm(p.basis()) <= 1e-6 * (1.0 + y.l2_h2_norm(p.basis())));
    }
}
