//! Adjoint pair `(phi, psi)`, cascade `(y, q)` and the sentinel.
//!
//! Two propagators carry the lower-order coefficients. The y-propagator
//! advances `y`; its transpose gives `psi`. The q-propagator advances `phi`;
//! its transpose gives `q`. In the linear problem both are the same object;
//! for a frozen linearization around `z` the first carries `(a0 - G1, B0 - G2,
//! B - G3)` and the second `(a0 - F_y, B0 - grad_p F, B - F_r)`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::Result;
use crate::pde::{Propagator, Trajectory};
use crate::problem::{SubdomainMask, ValidatedProblem};
use crate::semilinear::{q_propagator_at, FrozenLinearization};
use crate::spectral::Field;

#[derive(Debug, Clone)]
pub struct ControlSystem {
    problem: Arc<ValidatedProblem>,
    y_prop: Arc<Propagator>,
    q_prop: Arc<Propagator>,
    source: Trajectory,
    frozen: bool,
}

impl ControlSystem {
    pub fn linear(problem: Arc<ValidatedProblem>) -> Self {
        let p = problem.base_propagator().clone();
        ControlSystem {
            source: problem.force_samples().clone(),
            y_prop: p.clone(),
            q_prop: p,
            problem,
            frozen: false,
        }
    }

    /// System of the linearized problem around the state behind `lin`.
    pub fn frozen(problem: Arc<ValidatedProblem>, lin: &FrozenLinearization) -> Result<Self> {
        let (y_prop, q_prop) = lin.propagators(&problem)?;
        let f0 = lin.f000;
        let source = if f0 == 0.0 {
            problem.force_samples().clone()
        } else {
            problem.force_samples().map(|f| f.add_scalar(f0))
        };
        Ok(ControlSystem {
            problem,
            y_prop,
            q_prop,
            source,
            frozen: true,
        })
    }

    pub fn problem(&self) -> &Arc<ValidatedProblem> {
        &self.problem
    }
    pub fn y_propagator(&self) -> &Arc<Propagator> {
        &self.y_prop
    }
    pub fn q_propagator(&self) -> &Arc<Propagator> {
        &self.q_prop
    }
    /// `f + F(0,0,0)` on the midpoint nodes.
    pub fn source(&self) -> &Trajectory {
        &self.source
    }
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}

#[derive(Debug, Clone)]
pub struct AdjointPair {
    pub phi: Trajectory,
    pub psi: Trajectory,
    /// `psi` at `t = 0`.
    pub psi0: Field,
}

#[derive(Debug, Clone)]
pub struct CascadeSolution {
    pub y: Trajectory,
    pub y_final: Field,
    pub q: Trajectory,
    /// `q(0)` as produced by the last transposed step.
    pub q0: Field,
}

pub fn solve_adjoint_pair(system: &ControlSystem, phi0: &Field) -> Result<AdjointPair> {
    let phi = system.q_prop.forward(phi0, None)?.trajectory;
    let obs = system.problem.observation();
    let back = system.y_prop.backward(None, Some(&phi.masked(obs)))?;
    Ok(AdjointPair {
        phi,
        psi: back.trajectory,
        psi0: back.initial_value,
    })
}

/// Cascade driven by `chi_omega v` plus, if `with_force`, `f + F(0,0,0)`.
pub fn solve_cascade_with(system: &ControlSystem, v: &Trajectory, with_force: bool) -> Result<CascadeSolution> {
    let p = &system.problem;
    let mut src = v.masked(p.omega());
    if with_force {
        src = src.add(&system.source);
    }
    let fw = system.y_prop.forward(p.y0(), Some(&src))?;
    let back = system
        .q_prop
        .backward(None, Some(&fw.trajectory.masked(p.observation())))?;
    Ok(CascadeSolution {
        y: fw.trajectory,
        y_final: fw.final_value,
        q: back.trajectory,
        q0: back.initial_value,
    })
}

pub fn solve_cascade(system: &ControlSystem, v: &Trajectory) -> Result<CascadeSolution> {
    solve_cascade_with(system, v, true)
}

/// `Phi(y) = 1/2 int_0^T int chi_O |y|^2`.
pub fn sentinel(y: &Trajectory, observation: &SubdomainMask) -> f64 {
    0.5 * y.masked(observation).pairing(y)
}

#[derive(Debug, Clone, Serialize)]
pub struct InsensitivityReport {
    pub tau: f64,
    /// Central difference of the sentinel at `tau`.
    pub d_fd: f64,
    /// Same at `tau / 2`.
    pub d_fd_half: f64,
    /// `<q(0), yhat0>` from the cascade at `tau = 0`.
    pub d_dual: f64,
    /// `|d_fd - d_dual| / (1 + |d_dual|)`
    pub gap: f64,
    pub phi_plus: f64,
    pub phi_minus: f64,
    pub q0_norm: f64,
    pub yhat_norm: f64,
    /// `|d_dual| <= |q(0)| |yhat0|`
    pub cauchy_schwarz: bool,
    pub q0_method: &'static str,
}

/// Shared `tau = 0` data for a batch of perturbation directions.
pub struct SentinelProbe<'a> {
    problem: &'a ValidatedProblem,
    source: Trajectory,
    q0: Field,
}

impl<'a> SentinelProbe<'a> {
    /// Solves the full problem at `y0` with control `v` and the adjoint of its linearization.
    pub fn new(problem: &'a ValidatedProblem, v: &Trajectory) -> Result<Self> {
        let source = v.masked(problem.omega()).add(problem.force_samples());
        let f = problem.nonlinearity();
        let base = problem.base_propagator();
        let y = base.forward_nonlinear(problem.y0(), Some(&source), f)?.trajectory;
        let q_prop = if f.is_zero() {
            base.clone()
        } else {
            q_propagator_at(problem, &y)?
        };
        let q0 = q_prop
            .backward(None, Some(&y.masked(problem.observation())))?
            .initial_value;
        Ok(SentinelProbe { problem, source, q0 })
    }

    pub fn q0(&self) -> &Field {
        &self.q0
    }

    fn central_difference(&self, yhat0: &Field, tau: f64) -> Result<(f64, f64, f64)> {
        let p = self.problem;
        let base = p.base_propagator();
        let f = p.nonlinearity();
        let plus = base
            .forward_nonlinear(&(p.y0() + yhat0 * tau), Some(&self.source), f)?
            .trajectory;
        let minus = base
            .forward_nonlinear(&(p.y0() - yhat0 * tau), Some(&self.source), f)?
            .trajectory;
        // (Phi+ - Phi-) / (2 tau) without the cancellation of the two squares
        let d = plus.sub(&minus).masked(p.observation()).pairing(&plus.add(&minus)) / (4.0 * tau);
        Ok((d, sentinel(&plus, p.observation()), sentinel(&minus, p.observation())))
    }

    pub fn report(&self, yhat0: &Field, tau: f64) -> Result<InsensitivityReport> {
        let g = self.problem.grid();
        let (d_fd, phi_plus, phi_minus) = self.central_difference(yhat0, tau)?;
        let (d_fd_half, _, _) = self.central_difference(yhat0, 0.5 * tau)?;
        let d_dual = g.inner(&self.q0, yhat0);
        let q0_norm = g.norm(&self.q0);
        let yhat_norm = g.norm(yhat0);
        Ok(InsensitivityReport {
            tau,
            d_fd,
            d_fd_half,
            d_dual,
            gap: (d_fd - d_dual).abs() / (1.0 + d_dual.abs()),
            phi_plus,
            phi_minus,
            q0_norm,
            yhat_norm,
            cauchy_schwarz: d_dual.abs() <= q0_norm * yhat_norm * (1.0 + 1e-12) + 1e-300,
            q0_method: "transposed CN step to t = 0",
        })
    }
}

pub const DEFAULT_TAU: f64 = 1e-3;

pub fn sentinel_tau_derivative(
    problem: &ValidatedProblem,
    v: &Trajectory,
    yhat0: &Field,
    tau: f64,
) -> Result<InsensitivityReport> {
    SentinelProbe::new(problem, v)?.report(yhat0, tau)
}

/// The insensitivity probe for many directions, sharing the `tau = 0` solves.
pub fn insensitivity_sweep(
    problem: &ValidatedProblem,
    v: &Trajectory,
    yhats: &[Field],
    tau: f64,
) -> Result<Vec<InsensitivityReport>> {
    let probe = SentinelProbe::new(problem, v)?;
    problem.exec().try_map(yhats.len(), |k| probe.report(&yhats[k], tau))
}
