//! Crank–Nicolson propagation of `u_t + Delta^2 u + L(t) u = s` under Navier
//! conditions, and its exact discrete transpose.
//!
//! Step `j` advances from `j dt` to `(j+1) dt` with coefficients frozen at the
//! midpoint node `t_j = (j + 1/2) dt`:
//!
//! ```text
//! (I + dt/2 A_j) u_{j+1} = (I - dt/2 A_j) u_j + dt s_j,   A_j = Delta^2 + L(t_j)
//! ```
//!
//! Trajectories store the midpoint averages `(u_j + u_{j+1}) / 2`, so every
//! time integral is a midpoint rule on the same nodes. The backward solver
//! applies the transposed one-step maps in reverse order; with that pairing
//!
//! ```text
//! dt sum <y_j, g_j> + <u_Nt, w_T> = <u_0, p_0> + dt sum <s_j, psi_j>
//! ```
//!
//! holds to rounding, which is what the duality identities and HUM gradients
//! rely on.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nonlinearity::{Jet, Nonlinearity};
use crate::problem::{Coefficients, Grid, SubdomainMask};
use crate::spectral::{Deriv, Field, SpectralBasis};

/// How the implicit systems `(I + dt/2 A_j) x = r` are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InnerSolve {
    /// Dense LU when the node count is at most `dense_limit`, fixed point otherwise.
    Auto,
    Dense,
    /// Fixed point preconditioned by the exact biharmonic solve.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverOptions {
    pub inner: InnerSolve,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub dense_limit: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            inner: InnerSolve::Auto,
            inner_tol: 1e-12,
            inner_max_iter: 200,
            dense_limit: 400,
            exec: Exec::default(),
        }
    }
}

/// Space-time field on the midpoint nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    data: Vec<Field>,
    dt: f64,
    cell_volume: f64,
}

impl Trajectory {
    pub fn zeros(grid: &Grid) -> Self {
        Self::from_fn(grid, |_| grid.zeros())
    }

    pub fn from_fn(grid: &Grid, f: impl FnMut(usize) -> Field) -> Self {
        Trajectory {
            data: (0..grid.nt()).map(f).collect(),
            dt: grid.dt(),
            cell_volume: grid.cell_volume(),
        }
    }

    pub fn from_fields(grid: &Grid, data: Vec<Field>) -> Result<Self> {
        if data.len() != grid.nt() || data.iter().any(|f| f.shape() != grid.shape()) {
            return Err(Error::MismatchedGrids(format!(
                "{} fields for Nt = {}",
                data.len(),
                grid.nt()
            )));
        }
        Ok(Trajectory {
            data,
            dt: grid.dt(),
            cell_volume: grid.cell_volume(),
        })
    }

    pub fn nt(&self) -> usize {
        self.data.len()
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn at(&self, j: usize) -> &Field {
        &self.data[j]
    }
    pub fn fields(&self) -> &[Field] {
        &self.data
    }
    pub fn into_fields(self) -> Vec<Field> {
        self.data
    }
    pub fn shape(&self) -> (usize, usize) {
        self.data[0].shape()
    }

    pub fn compatible(&self, other: &Trajectory) -> Result<()> {
        if self.nt() != other.nt() || self.shape() != other.shape() || self.dt != other.dt {
            return Err(Error::MismatchedGrids(format!(
                "trajectories {}x{:?} and {}x{:?}",
                self.nt(),
                self.shape(),
                other.nt(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(&Field) -> Field) -> Trajectory {
        Trajectory {
            data: self.data.iter().map(f).collect(),
            dt: self.dt,
            cell_volume: self.cell_volume,
        }
    }

    pub fn zip_map(&self, other: &Trajectory, f: impl Fn(&Field, &Field) -> Field) -> Trajectory {
        Trajectory {
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(a, b)).collect(),
            dt: self.dt,
            cell_volume: self.cell_volume,
        }
    }

    pub fn masked(&self, mask: &SubdomainMask) -> Trajectory {
        self.map(|u| mask.apply(u))
    }

    pub fn scaled(&self, a: f64) -> Trajectory {
        self.map(|u| u * a)
    }

    pub fn add(&self, other: &Trajectory) -> Trajectory {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Trajectory) -> Trajectory {
        self.zip_map(other, |a, b| a - b)
    }

    /// `dt sum_j <u_j, w_j>`, the midpoint rule for `int_Q u w`.
    pub fn pairing(&self, other: &Trajectory) -> f64 {
        self.dt * self.cell_volume * self.data.iter().zip(&other.data).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        self.pairing(self).sqrt()
    }

    pub fn sup_l2(&self) -> f64 {
        self.data
            .iter()
            .map(|u| (self.cell_volume * u.dot(u)).sqrt())
            .fold(0.0, f64::max)
    }

    /// Discrete `L^2(0, T; H^2)` norm.
    pub fn l2_h2_norm(&self, basis: &SpectralBasis) -> f64 {
        (self.dt * self.data.iter().map(|u| basis.h2_norm_sq(u)).sum::<f64>()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|u| u.amax()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|u| u.iter().all(|v| v.is_finite()))
    }
}

/// Lower-order part `a0 u + B0 . grad u + B : hess u + a1 Delta u` sampled at one time.
/// Absent entries are zero.
#[derive(Debug, Clone, Default)]
pub struct LowerOrder {
    pub dim: usize,
    pub a0: Option<Field>,
    pub b0: Vec<Option<Field>>,
    pub b: Vec<Option<Field>>,
    pub a1: Option<Field>,
}

fn opt_combine(a: &Option<Field>, b: &Option<Field>, sign: f64) -> Option<Field> {
    match (a, b) {
        (None, None) => None,
        (Some(x), None) => Some(x.clone()),
        (None, Some(y)) => Some(y * sign),
        (Some(x), Some(y)) => Some(x + y * sign),
    }
}

impl LowerOrder {
    pub fn zero(dim: usize) -> Self {
        LowerOrder {
            dim,
            a0: None,
            b0: vec![None; dim],
            b: vec![None; dim * dim],
            a1: None,
        }
    }

    pub fn sample(grid: &Grid, c: &Coefficients, t: f64) -> Self {
        let pick = |f: &crate::problem::ScalarFn| (!f.is_zero()).then(|| f.sample(grid, t));
        LowerOrder {
            dim: grid.dimension(),
            a0: pick(&c.a0.components[0]),
            b0: c.b0.components.iter().map(pick).collect(),
            b: c.b.components.iter().map(pick).collect(),
            a1: pick(&c.a1.components[0]),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a0.is_none()
            && self.a1.is_none()
            && self.b0.iter().all(Option::is_none)
            && self.b.iter().all(Option::is_none)
    }

    /// `self - other`, entry by entry.
    pub fn minus(&self, other: &LowerOrder) -> LowerOrder {
        LowerOrder {
            dim: self.dim,
            a0: opt_combine(&self.a0, &other.a0, -1.0),
            b0: self
                .b0
                .iter()
                .zip(&other.b0)
                .map(|(a, b)| opt_combine(a, b, -1.0))
                .collect(),
            b: self
                .b
                .iter()
                .zip(&other.b)
                .map(|(a, b)| opt_combine(a, b, -1.0))
                .collect(),
            a1: opt_combine(&self.a1, &other.a1, -1.0),
        }
    }

    pub fn apply(&self, basis: &SpectralBasis, u: &Field) -> Field {
        let d = self.dim;
        let mut out = basis.zeros();
        if let Some(a0) = &self.a0 {
            out += a0.component_mul(u);
        }
        for (i, c) in self.b0.iter().enumerate() {
            if let Some(c) = c {
                out += c.component_mul(&basis.apply_axis(Deriv::First, u, i));
            }
        }
        for (k, c) in self.b.iter().enumerate() {
            if let Some(c) = c {
                out += c.component_mul(&basis.hessian_entry(u, k / d, k % d));
            }
        }
        if let Some(a1) = &self.a1 {
            out += a1.component_mul(&basis.laplacian(u));
        }
        out
    }

    /// Exact matrix transpose of [`LowerOrder::apply`].
    pub fn apply_transpose(&self, basis: &SpectralBasis, w: &Field) -> Field {
        let d = self.dim;
        let mut out = basis.zeros();
        if let Some(a0) = &self.a0 {
            out += a0.component_mul(w);
        }
        for (i, c) in self.b0.iter().enumerate() {
            if let Some(c) = c {
                out += basis.apply_axis(Deriv::FirstT, &c.component_mul(w), i);
            }
        }
        for (k, c) in self.b.iter().enumerate() {
            if let Some(c) = c {
                out += basis.hessian_entry_t(&c.component_mul(w), k / d, k % d);
            }
        }
        if let Some(a1) = &self.a1 {
            out += basis.laplacian_t(&a1.component_mul(w));
        }
        out
    }
}

/// `A = Delta^2 + L` at one time.
#[derive(Debug, Clone)]
pub struct SpatialOperator {
    basis: Arc<SpectralBasis>,
    lower: Arc<LowerOrder>,
}

pub fn assemble_operator(
    basis: &Arc<SpectralBasis>,
    grid: &Grid,
    coefficients: &Coefficients,
    t: f64,
) -> SpatialOperator {
    SpatialOperator {
        basis: basis.clone(),
        lower: Arc::new(LowerOrder::sample(grid, coefficients, t)),
    }
}

impl SpatialOperator {
    pub fn new(basis: Arc<SpectralBasis>, lower: Arc<LowerOrder>) -> Self {
        SpatialOperator { basis, lower }
    }

    pub fn biharmonic_spectrum(&self) -> &DMatrix<f64> {
        self.basis.biharmonic_spectrum()
    }

    pub fn lower(&self) -> &LowerOrder {
        &self.lower
    }

    pub fn apply(&self, u: &Field) -> Field {
        self.basis.biharmonic(u) + self.lower.apply(&self.basis, u)
    }

    pub fn apply_transpose(&self, w: &Field) -> Field {
        self.basis.biharmonic(w) + self.lower.apply_transpose(&self.basis, w)
    }
}

/// Lower-order coefficients per time step. Steps that share an `Arc` share
/// their factorization.
#[derive(Debug, Clone)]
pub struct CoefficientSchedule {
    steps: Vec<Arc<LowerOrder>>,
}

impl CoefficientSchedule {
    pub fn sample(grid: &Grid, c: &Coefficients) -> Self {
        if c.is_time_independent() {
            Self::uniform(Arc::new(LowerOrder::sample(grid, c, 0.0)), grid.nt())
        } else {
            CoefficientSchedule {
                steps: (0..grid.nt())
                    .map(|j| Arc::new(LowerOrder::sample(grid, c, grid.time_node(j))))
                    .collect(),
            }
        }
    }

    pub fn uniform(lower: Arc<LowerOrder>, nt: usize) -> Self {
        CoefficientSchedule { steps: vec![lower; nt] }
    }

    pub fn from_steps(steps: Vec<Arc<LowerOrder>>) -> Self {
        CoefficientSchedule { steps }
    }

    pub fn step(&self, j: usize) -> &Arc<LowerOrder> {
        &self.steps[j]
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Entrywise `self - delta` per step (same length required).
    pub fn minus(&self, delta: &[LowerOrder]) -> Self {
        CoefficientSchedule {
            steps: self
                .steps
                .iter()
                .zip(delta)
                .map(|(a, d)| Arc::new(a.minus(d)))
                .collect(),
        }
    }
}

#[derive(Debug)]
enum StepSolver {
    /// `(I + dt/2 A_j)^{-1}` as a dense matrix over the flattened nodes.
    Dense(Arc<DMatrix<f64>>),
    FixedPoint(Arc<LowerOrder>),
}

/// Per-step solvers for one coefficient schedule.
#[derive(Debug)]
pub struct Propagator {
    basis: Arc<SpectralBasis>,
    dt: f64,
    theta: f64,
    steps: Vec<StepSolver>,
    tol: f64,
    max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    /// Midpoint values `(u_j + u_{j+1}) / 2`.
    pub trajectory: Trajectory,
    pub final_value: Field,
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub trajectory: Trajectory,
    /// Value at `t = 0` produced by the last transposed step.
    pub initial_value: Field,
}

fn flatten(u: &Field) -> DVector<f64> {
    DVector::from_column_slice(u.as_slice())
}

fn unflatten(v: &DVector<f64>, shape: (usize, usize)) -> Field {
    Field::from_column_slice(shape.0, shape.1, v.as_slice())
}

impl Propagator {
    pub fn new(
        basis: Arc<SpectralBasis>,
        schedule: &CoefficientSchedule,
        dt: f64,
        opts: &SolverOptions,
    ) -> Result<Self> {
        let theta = 0.5 * dt;
        let dense = match opts.inner {
            InnerSolve::Dense => true,
            InnerSolve::FixedPoint => false,
            InnerSolve::Auto => basis.node_count() <= opts.dense_limit,
        };
        let n = schedule.len();
        let steps = if dense {
            // factor each distinct coefficient set once
            let mut first: Vec<usize> = Vec::with_capacity(n);
            let mut uniq: Vec<usize> = Vec::new();
            for j in 0..n {
                match uniq.iter().find(|&&u| Arc::ptr_eq(schedule.step(u), schedule.step(j))) {
                    Some(&u) => first.push(u),
                    None => {
                        uniq.push(j);
                        first.push(j);
                    }
                }
            }
            let mats = opts.exec.try_map(uniq.len(), |k| {
                dense_inverse(&basis, schedule.step(uniq[k]), theta).map(Arc::new)
            })?;
            first
                .iter()
                .map(|src| {
                    let k = uniq.iter().position(|u| u == src).unwrap();
                    StepSolver::Dense(mats[k].clone())
                })
                .collect()
        } else {
            (0..n)
                .map(|j| StepSolver::FixedPoint(schedule.step(j).clone()))
                .collect()
        };
        Ok(Propagator {
            basis,
            dt,
            theta,
            steps,
            tol: opts.inner_tol,
            max_iter: opts.inner_max_iter,
        })
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn nt(&self) -> usize {
        self.steps.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.steps.first(), Some(StepSolver::Dense(_)))
    }

    /// Solve `(I + dt/2 A_j) x = r`, or the transposed system.
    pub fn solve_step(&self, j: usize, r: &Field, transpose: bool) -> Result<Field> {
        match &self.steps[j] {
            StepSolver::Dense(p) => {
                let v = flatten(r);
                let x = if transpose { p.tr_mul(&v) } else { &**p * v };
                Ok(unflatten(&x, r.shape()))
            }
            StepSolver::FixedPoint(lower) => self.fixed_point(lower, r, transpose),
        }
    }

    fn fixed_point(&self, lower: &LowerOrder, r: &Field, transpose: bool) -> Result<Field> {
        let b = &*self.basis;
        let mut x = b.shifted_biharmonic_solve(r, self.theta);
        if lower.is_zero() {
            return Ok(x);
        }
        let rn = r.norm();
        if rn == 0.0 {
            return Ok(x);
        }
        let apply = |u: &Field| {
            if transpose {
                lower.apply_transpose(b, u) * self.theta
            } else {
                lower.apply(b, u) * self.theta
            }
        };
        let mut lx = apply(&x);
        let mut res = f64::INFINITY;
        for _ in 0..self.max_iter {
            let xn = b.shifted_biharmonic_solve(&(r - &lx), self.theta);
            let lxn = apply(&xn);
            // residual of the new iterate: r - M xn = lx - lxn
            res = (&lxn - &lx).norm() / rn;
            x = xn;
            lx = lxn;
            if res <= self.tol {
                return Ok(x);
            }
            if !res.is_finite() {
                break;
            }
        }
        Err(Error::InnerSolveDivergence {
            iterations: self.max_iter,
            residual: res,
            tol: self.tol,
        })
    }

    /// One forward step `u_{j+1} = (I + dt/2 A_j)^{-1} (2 u_j + dt s) - u_j`.
    fn step(&self, j: usize, u: &Field, src: Option<&Field>) -> Result<Field> {
        let mut rhs = u * 2.0;
        if let Some(s) = src {
            rhs += s * self.dt;
        }
        Ok(self.solve_step(j, &rhs, false)? - u)
    }

    pub fn forward(&self, u0: &Field, source: Option<&Trajectory>) -> Result<ForwardSolution> {
        let nt = self.nt();
        let mut mids = Vec::with_capacity(nt);
        let mut u = u0.clone();
        for j in 0..nt {
            let next = self.step(j, &u, source.map(|s| s.at(j)))?;
            mids.push((&u + &next) * 0.5);
            u = next;
        }
        Ok(ForwardSolution {
            trajectory: Trajectory {
                data: mids,
                dt: self.dt,
                cell_volume: self.basis.cell_volume(),
            },
            final_value: u,
        })
    }

    /// Transposed sweep. `source` plays the role of the pairing weight `g` on
    /// midpoint values; `terminal` pairs with the final nodal value.
    pub fn backward(&self, terminal: Option<&Field>, source: Option<&Trajectory>) -> Result<BackwardSolution> {
        let nt = self.nt();
        let half = 0.5 * self.dt;
        let g = |j: usize| source.map(|s| s.at(j));
        let mut p = terminal.cloned().unwrap_or_else(|| self.basis.zeros());
        if let Some(gl) = g(nt - 1) {
            p += gl * half;
        }
        let mut out = vec![self.basis.zeros(); nt];
        for j in (0..nt).rev() {
            let w = self.solve_step(j, &p, true)?;
            let mut next = &w * 2.0 - &p;
            if let Some(gj) = g(j) {
                next += gj * half;
            }
            if j > 0 {
                if let Some(gm) = g(j - 1) {
                    next += gm * half;
                }
            }
            out[j] = w;
            p = next;
        }
        Ok(BackwardSolution {
            trajectory: Trajectory {
                data: out,
                dt: self.dt,
                cell_volume: self.basis.cell_volume(),
            },
            initial_value: p,
        })
    }

    /// Implicit midpoint for `u_t + A u = F(u, grad u, hess u) + s`, with a
    /// lagged fixed point inside each step.
    pub fn forward_nonlinear(
        &self,
        u0: &Field,
        source: Option<&Trajectory>,
        f: &Nonlinearity,
    ) -> Result<ForwardSolution> {
        if f.is_zero() {
            return self.forward(u0, source);
        }
        const TOL: f64 = 1e-11;
        const CAP: usize = 50;
        let nt = self.nt();
        let mut mids = Vec::with_capacity(nt);
        let mut u = u0.clone();
        for j in 0..nt {
            let mut base = &u * 2.0;
            if let Some(s) = source {
                base += s.at(j) * self.dt;
            }
            let fu = apply_nonlinearity(&self.basis, f, &u);
            let mut next = self.solve_step(j, &(&base + fu * self.dt), false)? - &u;
            let mut converged = false;
            let mut inc = f64::INFINITY;
            for _ in 0..CAP {
                let mid = (&u + &next) * 0.5;
                let fm = apply_nonlinearity(&self.basis, f, &mid);
                let cand = self.solve_step(j, &(&base + fm * self.dt), false)? - &u;
                inc = (&cand - &next).norm();
                let scale = cand.norm();
                next = cand;
                if inc <= TOL * scale || inc == 0.0 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonlinearStepDivergence {
                    step: j,
                    increment: inc,
                });
            }
            mids.push((&u + &next) * 0.5);
            u = next;
        }
        Ok(ForwardSolution {
            trajectory: Trajectory {
                data: mids,
                dt: self.dt,
                cell_volume: self.basis.cell_volume(),
            },
            final_value: u,
        })
    }
}

/// `(I + theta A)^{-1}` assembled column by column.
fn dense_inverse(basis: &SpectralBasis, lower: &LowerOrder, theta: f64) -> Result<DMatrix<f64>> {
    let shape = basis.shape();
    let n = basis.node_count();
    let mut m = DMatrix::<f64>::identity(n, n);
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        let u = unflatten(&e, shape);
        let au = basis.biharmonic(&u) + lower.apply(basis, &u);
        let col = flatten(&au);
        for i in 0..n {
            m[(i, k)] += theta * col[i];
        }
    }
    m.try_inverse().ok_or(Error::InnerSolveDivergence {
        iterations: 0,
        residual: f64::INFINITY,
        tol: 0.0,
    })
}

/// Pointwise first and second derivatives of a field, as needed by `F`.
#[derive(Debug, Clone)]
pub struct JetField {
    pub u: Field,
    pub p: Vec<Field>,
    pub r: Vec<Field>,
    dim: usize,
}

impl JetField {
    pub fn new(basis: &SpectralBasis, u: &Field, with_gradient: bool, with_hessian: bool) -> Self {
        let d = basis.dimension();
        let p = if with_gradient { basis.gradient(u) } else { Vec::new() };
        let r = if with_hessian {
            (0..d * d).map(|k| basis.hessian_entry(u, k / d, k % d)).collect()
        } else {
            Vec::new()
        };
        JetField {
            u: u.clone(),
            p,
            r,
            dim: d,
        }
    }

    pub fn full(basis: &SpectralBasis, u: &Field) -> Self {
        Self::new(basis, u, true, true)
    }

    pub fn jet(&self, i: usize, j: usize) -> Jet {
        let mut jet = Jet {
            u: self.u[(i, j)],
            ..Default::default()
        };
        for (a, f) in self.p.iter().enumerate() {
            jet.p[a] = f[(i, j)];
        }
        for (k, f) in self.r.iter().enumerate() {
            jet.r[k / self.dim][k % self.dim] = f[(i, j)];
        }
        jet
    }
}

pub fn apply_nonlinearity(basis: &SpectralBasis, f: &Nonlinearity, u: &Field) -> Field {
    let jets = JetField::new(basis, u, f.uses_gradient(), f.uses_hessian());
    let (n1, n2) = u.shape();
    Field::from_fn(n1, n2, |i, j| f.value(&jets.jet(i, j)))
}

pub fn solve_forward(prop: &Propagator, initial: &Field, source: Option<&Trajectory>) -> Result<ForwardSolution> {
    prop.forward(initial, source)
}

pub fn solve_backward_adjoint(
    prop: &Propagator,
    terminal: Option<&Field>,
    source: Option<&Trajectory>,
) -> Result<BackwardSolution> {
    prop.backward(terminal, source)
}

/// `|int chi_O phi y - int (chi_omega v + f) psi| / (1 + |int chi_O phi y|)`.
pub fn duality_residual(
    y: &Trajectory,
    psi: &Trajectory,
    v: &Trajectory,
    f: &Trajectory,
    phi: &Trajectory,
    omega: &SubdomainMask,
    observation: &SubdomainMask,
) -> Result<f64> {
    for t in [psi, v, f, phi] {
        y.compatible(t)?;
    }
    let lhs = phi.masked(observation).pairing(y);
    let rhs = v.masked(omega).add(f).pairing(psi);
    Ok((lhs - rhs).abs() / (1.0 + lhs.abs()))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub pairs_checked: usize,
    /// Largest `|phi(t2)|^2 / (e^{2 beta (t2 - t1)} |phi(t1)|^2)`.
    pub worst_phi_ratio: f64,
    pub phi_pass: bool,
    pub psi_nodes_checked: usize,
    /// Largest `|psi(t)|^2 / int_t^T e^{2 beta (s - t)} |chi_O phi(s)|^2 ds`.
    pub worst_psi_ratio: f64,
    pub psi_pass: bool,
}

/// Sampled check of the exponential energy bounds for `phi` and, if given, `psi`.
pub fn energy_estimate_check(phi: &Trajectory, beta: f64, psi: Option<(&Trajectory, &SubdomainMask)>) -> EnergyReport {
    const TOL: f64 = 1e-8;
    let dt = phi.dt;
    let cv = phi.cell_volume;
    let e: Vec<f64> = phi.data.iter().map(|u| cv * u.dot(u)).collect();
    let nt = e.len();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    let mut pass = true;
    for i in 0..nt {
        for j in i + 1..nt {
            pairs += 1;
            let rhs = (2.0 * beta * (j - i) as f64 * dt).exp() * e[i];
            if e[j] == 0.0 && rhs == 0.0 {
                continue;
            }
            let ratio = e[j] / rhs;
            worst = worst.max(ratio);
            if e[j] > rhs * (1.0 + TOL) {
                pass = false;
            }
        }
    }
    let (mut psi_n, mut psi_worst, mut psi_pass) = (0, 0.0f64, true);
    if let Some((psi, mask)) = psi {
        let obs: Vec<f64> = phi
            .data
            .iter()
            .map(|u| {
                let m = mask.apply(u);
                cv * m.dot(&m)
            })
            .collect();
        for j in 0..nt {
            // trapezoid over midpoint nodes, rectangle on the last half cell
            let w = |m: usize| (2.0 * beta * (m - j) as f64 * dt).exp() * obs[m];
            let mut rhs = 0.5 * dt * w(nt - 1);
            for m in j..nt - 1 {
                rhs += 0.5 * dt * (w(m) + w(m + 1));
            }
            let lhs = cv * psi.data[j].dot(&psi.data[j]);
            psi_n += 1;
            if lhs == 0.0 && rhs == 0.0 {
                continue;
            }
            psi_worst = psi_worst.max(lhs / rhs);
            if lhs > rhs * (1.0 + TOL) {
                psi_pass = false;
            }
        }
    }
    EnergyReport {
        pairs_checked: pairs,
        worst_phi_ratio: worst,
        phi_pass: pass,
        psi_nodes_checked: psi_n,
        worst_psi_ratio: psi_worst,
        psi_pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_grid, build_mask, CoefficientField, Region, ScalarFn};
    use crate::rng::{stream, FieldSampler};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn setup(n: usize, t: f64, nt: usize) -> (Grid, Arc<SpectralBasis>) {
        let g = build_grid(1, &[1.0], n, t, nt).unwrap();
        let b = Arc::new(SpectralBasis::new(&g));
        (g, b)
    }

    fn busy_coefficients(dim: usize) -> Coefficients {
        let wave = |o: f64, a: f64, k: f64, w: f64| ScalarFn::Wave {
            offset: o,
            amplitude: a,
            wavenumbers: [k, 0.7 * k],
            frequency: w,
        };
        Coefficients {
            a0: CoefficientField::a0(wave(0.5, 0.3, 2.0, 3.0)),
            b0: CoefficientField::b0((0..dim).map(|i| wave(0.2, 0.4, 3.0 + i as f64, 1.0)).collect()),
            b: CoefficientField::b((0..dim * dim).map(|k| wave(0.01, 0.02, 1.0 + k as f64, 2.0)).collect()),
            a1: CoefficientField::a1(wave(0.3, 0.1, 4.0, 0.5)),
        }
    }

    fn propagator(g: &Grid, b: &Arc<SpectralBasis>, c: &Coefficients, inner: InnerSolve) -> Propagator {
        let opts = SolverOptions {
            inner,
            ..Default::default()
        };
        Propagator::new(b.clone(), &CoefficientSchedule::sample(g, c), g.dt(), &opts).unwrap()
    }

    #[test]
    fn operator_on_first_mode() {
        let (g, b) = setup(64, 1.0, 16);
        let u = b.sine_mode(&[1]);
        let op = assemble_operator(&b, &g, &Coefficients::zero(1), 0.0);
        let e = (op.apply(&u) - &u * PI.powi(4)).amax();
        assert!(e < 1e-14 * b.biharmonic_spectrum().max(), "{e:e}");
        let mut c = Coefficients::zero(1);
        c.a0 = CoefficientField::a0(ScalarFn::Constant(1.0));
        let op = assemble_operator(&b, &g, &c, 0.0);
        let e = (op.apply(&u) - &u * (PI.powi(4) + 1.0)).amax();
        assert!(e < 1e-14 * b.biharmonic_spectrum().max(), "{e:e}");
    }

    /// `|<Au, w> - <u, A^T w>|` against the Cauchy-Schwarz size of the two
    /// pairings. Against `|u| |w|` alone the gap grows like `|A| eps_mach`,
    /// about `1e-9` for white noise at `N = 32`.
    fn pairing_gap(b: &SpectralBasis, u: &Field, au: &Field, w: &Field, atw: &Field) -> f64 {
        let gap = (b.inner(au, w) - b.inner(u, atw)).abs();
        gap / (b.norm(au) * b.norm(w)).max(b.norm(u) * b.norm(atw))
    }

    #[test]
    fn transpose_is_exact() {
        for dim in [1usize, 2] {
            let ext = vec![1.0; dim];
            let g = build_grid(dim, &ext, if dim == 1 { 32 } else { 12 }, 1.0, 16).unwrap();
            let b = Arc::new(SpectralBasis::new(&g));
            let op = assemble_operator(&b, &g, &busy_coefficients(dim), 0.3);
            let mut s = FieldSampler::new(stream(7, 0));
            for _ in 0..20 {
                let u = s.gaussian(g.shape());
                let w = s.gaussian(g.shape());
                let gap = pairing_gap(&b, &u, &op.apply(&u), &w, &op.apply_transpose(&w));
                assert!(gap <= 1e-12, "full operator, dim {dim}: {gap:e}");
                let lo = op.lower();
                let gap = pairing_gap(&b, &u, &lo.apply(&b, &u), &w, &lo.apply_transpose(&b, &w));
                assert!(gap <= 1e-12, "lower order, dim {dim}: {gap:e}");
            }
        }
    }

    #[test]
    fn eigenmode_decay_and_time_reversal() {
        let (g, b) = setup(64, 0.01, 200);
        let p = propagator(&g, &b, &Coefficients::zero(1), InnerSolve::Auto);
        let u0 = b.sine_mode(&[1]);
        let sol = p.forward(&u0, None).unwrap();
        let exact = &u0 * (-PI.powi(4) * 0.01).exp();
        let abs_err = b.norm(&(&sol.final_value - &exact));
        assert!(abs_err <= 1e-6, "abs {abs_err:e}");
        // the relative error is exactly the CN amplification error
        let z = PI.powi(4) * g.dt();
        let r = (1.0 - z / 2.0) / (1.0 + z / 2.0);
        let cn = (r.powi(200) - (-PI.powi(4) * 0.01).exp()).abs() / (-PI.powi(4) * 0.01).exp();
        let rel = abs_err / b.norm(&exact);
        assert!((rel - cn).abs() < 1e-3 * cn);
        let back = p.backward(Some(&u0), None).unwrap();
        assert!(b.norm(&(back.initial_value - &exact)) <= 1e-6);
    }

    #[test]
    fn zero_data_stays_zero() {
        let (g, b) = setup(32, 1.0, 16);
        let p = propagator(&g, &b, &busy_coefficients(1), InnerSolve::FixedPoint);
        assert_eq!(p.forward(&g.zeros(), None).unwrap().trajectory.max_abs(), 0.0);
        assert_eq!(p.backward(None, None).unwrap().trajectory.max_abs(), 0.0);
    }

    /// Error at T for `y* = e^{-t} sin(pi x)` forced by `y*_t + Delta^2 y*`.
    fn manufactured_error(nt: usize) -> f64 {
        let (g, b) = setup(32, 1.0, nt);
        let p = propagator(&g, &b, &Coefficients::zero(1), InnerSolve::Auto);
        let mode = b.sine_mode(&[1]);
        let src = Trajectory::from_fn(&g, |j| &mode * ((PI.powi(4) - 1.0) * (-g.time_node(j)).exp()));
        let sol = p.forward(&mode, Some(&src)).unwrap();
        b.norm(&(sol.final_value - &mode * (-1.0f64).exp()))
    }

    #[test]
    fn manufactured_solution_second_order() {
        let e: Vec<f64> = [50, 100, 200, 400].iter().map(|&n| manufactured_error(n)).collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "{e:?}");
        }
    }

    #[test]
    fn fixed_point_and_dense_agree() {
        let (g, b) = setup(32, 0.1, 32);
        let c = busy_coefficients(1);
        let pd = propagator(&g, &b, &c, InnerSolve::Dense);
        let pf = propagator(&g, &b, &c, InnerSolve::FixedPoint);
        assert!(pd.is_dense() && !pf.is_dense());
        let u0 = b.sine_mode(&[2]) + b.sine_mode(&[5]) * 0.3;
        let a = pd.forward(&u0, None).unwrap().final_value;
        let f = pf.forward(&u0, None).unwrap().final_value;
        assert!((&a - &f).amax() <= 1e-10 * a.amax());
    }

    #[test]
    fn divergent_inner_solve_reported() {
        let (g, b) = setup(32, 1.0, 16);
        let mut c = Coefficients::zero(1);
        c.a0 = CoefficientField::a0(ScalarFn::Constant(1e4));
        let p = propagator(&g, &b, &c, InnerSolve::FixedPoint);
        let r = p.forward(&b.sine_mode(&[1]), None);
        assert!(matches!(r, Err(Error::InnerSolveDivergence { .. })), "{r:?}");
    }

    #[test]
    fn energy_checks_hold() {
        let (g, b) = setup(32, 0.5, 64);
        let p = propagator(&g, &b, &Coefficients::zero(1), InnerSolve::Auto);
        let mut s = FieldSampler::new(stream(3, 1));
        let phi0 = s.gaussian(g.shape());
        let phi = p.forward(&phi0, None).unwrap().trajectory;
        let obs = build_mask(&g, &[Region::interval(0.2, 0.6)]).unwrap();
        let psi = p.backward(None, Some(&phi.masked(&obs))).unwrap().trajectory;
        let r = energy_estimate_check(&phi, 2.0, Some((&psi, &obs)));
        assert!(r.phi_pass && r.psi_pass, "{r:?}");
        let zero = Trajectory::zeros(&g);
        let r0 = energy_estimate_check(&zero, 2.0, Some((&zero, &obs)));
        assert!(r0.phi_pass && r0.psi_pass && r0.worst_phi_ratio == 0.0);
    }

    #[test]
    fn energy_check_with_reaction_term() {
        let (g, b) = setup(32, 1.0, 100);
        let mut c = Coefficients::zero(1);
        c.a0 = CoefficientField::a0(ScalarFn::Constant(-1.0));
        let beta = c.bounds().beta();
        assert_eq!(beta, 3.0);
        let p = propagator(&g, &b, &c, InnerSolve::Auto);
        let mut s = FieldSampler::new(stream(11, 2));
        for _ in 0..100 {
            let phi = p.forward(&s.gaussian(g.shape()), None).unwrap().trajectory;
            assert!(energy_estimate_check(&phi, beta, None).phi_pass);
        }
    }

    #[test]
    fn nonlinear_forward_reduces_to_linear() {
        let (g, b) = setup(32, 0.1, 32);
        let p = propagator(&g, &b, &Coefficients::zero(1), InnerSolve::Auto);
        let u0 = b.sine_mode(&[1]);
        let lin = p.forward(&u0, None).unwrap();
        let nl = p.forward_nonlinear(&u0, None, &Nonlinearity::Linear(0.0)).unwrap();
        assert_eq!(lin.final_value, nl.final_value);
        // F(u) = -u is the same as a0 = 1
        let mut c = Coefficients::zero(1);
        c.a0 = CoefficientField::a0(ScalarFn::Constant(1.0));
        let pa = propagator(&g, &b, &c, InnerSolve::Auto);
        let a = pa.forward(&u0, None).unwrap().final_value;
        let n = p
            .forward_nonlinear(&u0, None, &Nonlinearity::Linear(-1.0))
            .unwrap()
            .final_value;
        assert!((a - n).amax() < 1e-11);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn step_map_transpose_exact(seed in 0u64..1000, j in 0usize..16) {
            let (g, b) = setup(24, 0.2, 16);
            let p = propagator(&g, &b, &busy_coefficients(1), InnerSolve::Dense);
            let mut s = FieldSampler::new(stream(seed, 0));
            let u = s.gaussian(g.shape());
            let w = s.gaussian(g.shape());
            let su = p.solve_step(j, &(&u * 2.0), false).unwrap() - &u;
            let stw = p.solve_step(j, &(&w * 2.0), true).unwrap() - &w;
            let gap = pairing_gap(&b, &u, &su, &w, &stw);
            prop_assert!(gap <= 1e-12, "{gap:e}");
        }

        #[test]
        fn cn_step_is_contractive(seed in 0u64..1000) {
            let (g, b) = setup(32, 1.0, 16);
            let p = propagator(&g, &b, &Coefficients::zero(1), InnerSolve::Auto);
            let mut s = FieldSampler::new(stream(seed, 5));
            let u = s.gaussian(g.shape());
            let next = p.solve_step(0, &(&u * 2.0), false).unwrap() - &u;
            prop_assert!(b.norm(&next) <= b.norm(&u) * (1.0 + 1e-14));
        }

        #[test]
        fn discrete_duality_general(seed in 0u64..1000) {
            let (g, b) = setup(24, 0.3, 20);
            let p = propagator(&g, &b, &busy_coefficients(1), InnerSolve::Auto);
            let mut s = FieldSampler::new(stream(seed, 9));
            let u0 = s.gaussian(g.shape());
            let wt = s.gaussian(g.shape());
            let src = Trajectory::from_fn(&g, |_| s.gaussian(g.shape()));
            let gw = Trajectory::from_fn(&g, |_| s.gaussian(g.shape()));
            let f = p.forward(&u0, Some(&src)).unwrap();
            let bw = p.backward(Some(&wt), Some(&gw)).unwrap();
            let lhs = f.trajectory.pairing(&gw) + b.inner(&f.final_value, &wt);
            let rhs = b.inner(&u0, &bw.initial_value) + src.pairing(&bw.trajectory);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }
}
