//! Geometry, data and standing assumptions of a control problem.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nonlinearity::Nonlinearity;
use crate::pde::{CoefficientSchedule, InnerSolve, Propagator, SolverOptions, Trajectory};
use crate::spectral::{Field, SpectralBasis};
use crate::weights::{
    build_eta, build_weights, observability_constants, CoefficientBounds, EtaField, ObservabilityConstants, WeightSet,
};

/// Overflow guard for the weighted force integral.
pub const FORCE_WEIGHT_GUARD: f64 = 1e300;

/// Space-time discretization of `Q = D x (0, T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    dim: usize,
    extents: Vec<f64>,
    n: usize,
    t_final: f64,
    nt: usize,
}

pub fn build_grid(dimension: usize, extents: &[f64], n: usize, t_final: f64, nt: usize) -> Result<Grid> {
    if dimension != 1 && dimension != 2 {
        return Err(Error::InvalidGrid(format!("dimension {dimension} not in {{1, 2}}")));
    }
    if extents.len() != dimension {
        return Err(Error::InvalidGrid(format!(
            "{} extents given for dimension {dimension}",
            extents.len()
        )));
    }
    if extents.iter().any(|l| !(l.is_finite() && *l > 0.0)) || !(t_final.is_finite() && t_final > 0.0) {
        return Err(Error::InvalidGrid("extents and T must be positive".into()));
    }
    if n < 8 || nt < 16 {
        return Err(Error::GridTooCoarse(format!("N = {n} (min 8), Nt = {nt} (min 16)")));
    }
    Ok(Grid {
        dim: dimension,
        extents: extents.to_vec(),
        n,
        t_final,
        nt,
    })
}

impl Grid {
    pub fn dimension(&self) -> usize {
        self.dim
    }
    pub fn extents(&self) -> &[f64] {
        &self.extents
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    /// Midpoint node `t_j = (j + 1/2) T / Nt`.
    pub fn time_node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dt()
    }

    pub fn time_nodes(&self) -> Vec<f64> {
        (0..self.nt).map(|j| self.time_node(j)).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        let m = self.n - 1;
        if self.dim == 2 {
            (m, m)
        } else {
            (m, 1)
        }
    }

    pub fn node_count(&self) -> usize {
        let (a, b) = self.shape();
        a * b
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extents[axis] / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        (1..self.n).map(|k| k as f64 * self.spacing(axis)).collect()
    }

    /// Physical coordinates of node `(i, j)`; the second entry is 0 in 1D.
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let x = (i + 1) as f64 * self.spacing(0);
        let y = if self.dim == 2 {
            (j + 1) as f64 * self.spacing(1)
        } else {
            0.0
        };
        [x, y]
    }

    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Field {
        let (a, b) = self.shape();
        Field::from_fn(a, b, |i, j| f(self.node(i, j)))
    }

    pub fn zeros(&self) -> Field {
        let (a, b) = self.shape();
        Field::zeros(a, b)
    }

    pub fn inner(&self, u: &Field, w: &Field) -> f64 {
        self.cell_volume() * u.dot(w)
    }

    pub fn norm(&self, u: &Field) -> f64 {
        self.inner(u, u).sqrt()
    }
}

/// Open axis-aligned box; `lo`/`hi` have one entry per dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn interval(a: f64, b: f64) -> Self {
        Region {
            lo: vec![a],
            hi: vec![b],
        }
    }

    pub fn rect(x: (f64, f64), y: (f64, f64)) -> Self {
        Region {
            lo: vec![x.0, y.0],
            hi: vec![x.1, y.1],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(x).all(|((l, h), v)| l < v && v < h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// Indicator of a union of boxes, sampled on the spatial nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainMask {
    values: Field,
    regions: Vec<Region>,
    smooth: bool,
}

fn check_regions(grid: &Grid, regions: &[Region]) -> Result<()> {
    if regions.is_empty() {
        return Err(Error::EmptyMask("no boxes given".into()));
    }
    for r in regions {
        let ok = r.lo.len() == grid.dim
            && r.hi.len() == grid.dim
            && (0..grid.dim).all(|a| 0.0 <= r.lo[a] && r.lo[a] < r.hi[a] && r.hi[a] <= grid.extents[a]);
        if !ok {
            return Err(Error::BoxOutsideDomain(format!("{:?}..{:?}", r.lo, r.hi)));
        }
    }
    Ok(())
}

/// Sharp 0/1 mask: a node is inside when it lies strictly inside some box.
pub fn build_mask(grid: &Grid, regions: &[Region]) -> Result<SubdomainMask> {
    check_regions(grid, regions)?;
    let d = grid.dim;
    let values = grid.sample(|x| {
        if regions.iter().any(|r| r.contains(&x[..d])) {
            1.0
        } else {
            0.0
        }
    });
    if values.iter().all(|v| *v == 0.0) {
        return Err(Error::EmptyMask(format!("{regions:?} contains no grid node")));
    }
    Ok(SubdomainMask {
        values,
        regions: regions.to_vec(),
        smooth: false,
    })
}

fn smoothstep5(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Mask with a C^2 ramp of one cell width inside each box edge.
pub fn build_smooth_mask(grid: &Grid, regions: &[Region]) -> Result<SubdomainMask> {
    check_regions(grid, regions)?;
    let d = grid.dim;
    let values = grid.sample(|x| {
        regions
            .iter()
            .map(|r| {
                (0..d)
                    .map(|a| {
                        let h = grid.spacing(a);
                        let dist = (x[a] - r.lo[a]).min(r.hi[a] - x[a]);
                        smoothstep5(dist / h)
                    })
                    .product::<f64>()
            })
            .fold(0.0, f64::max)
    });
    if values.iter().all(|v| *v == 0.0) {
        return Err(Error::EmptyMask(format!("{regions:?} contains no grid node")));
    }
    Ok(SubdomainMask {
        values,
        regions: regions.to_vec(),
        smooth: true,
    })
}

impl SubdomainMask {
    /// Full-domain mask.
    pub fn full(grid: &Grid) -> Self {
        SubdomainMask {
            values: grid.sample(|_| 1.0),
            regions: vec![Region {
                lo: vec![0.0; grid.dim],
                hi: grid.extents.clone(),
            }],
            smooth: false,
        }
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn is_smooth(&self) -> bool {
        self.smooth
    }

    pub fn apply(&self, u: &Field) -> Field {
        u.component_mul(&self.values)
    }

    pub fn support_count(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    pub fn is_set(&self, i: usize, j: usize) -> bool {
        self.values[(i, j)] > 0.0
    }

    pub fn intersection_count(&self, other: &SubdomainMask) -> usize {
        self.values
            .iter()
            .zip(other.values.iter())
            .filter(|(a, b)| **a > 0.0 && **b > 0.0)
            .count()
    }

    /// Every support node of `self`, together with its one-cell neighbourhood,
    /// lies in the support of each mask of `outer`.
    pub fn compactly_inside(&self, outer: &[&SubdomainMask]) -> bool {
        let (n1, n2) = self.values.shape();
        let inside = |i: isize, j: isize| {
            i >= 0
                && j >= 0
                && (i as usize) < n1
                && (j as usize) < n2
                && outer.iter().all(|m| m.is_set(i as usize, j as usize))
        };
        let dj: &[isize] = if n2 > 1 { &[-1, 0, 1] } else { &[0] };
        for i in 0..n1 {
            for j in 0..n2 {
                if !self.is_set(i, j) {
                    continue;
                }
                for di in [-1isize, 0, 1] {
                    for &dj in dj {
                        if !inside(i as isize + di, j as isize + dj) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

/// A scalar evaluator over `(x, t)`. Coordinates are `[x1, x2]` with `x2 = 0` in 1D.
#[derive(Clone)]
pub enum ScalarFn {
    Zero,
    Constant(f64),
    /// `amplitude * e^{-decay t} * prod_a sin(m_a pi x_a / L_a)`
    Mode {
        amplitude: f64,
        modes: [usize; 2],
        decay: f64,
    },
    /// `offset + amplitude * cos(k1 x1 + k2 x2 + frequency t)`
    Wave {
        offset: f64,
        amplitude: f64,
        wavenumbers: [f64; 2],
        frequency: f64,
    },
    Custom {
        f: Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>,
        bound: f64,
        time_independent: bool,
    },
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Zero => write!(f, "Zero"),
            ScalarFn::Constant(c) => write!(f, "Constant({c})"),
            ScalarFn::Mode {
                amplitude,
                modes,
                decay,
            } => {
                write!(f, "Mode({amplitude}, {modes:?}, decay {decay})")
            }
            ScalarFn::Wave {
                offset,
                amplitude,
                wavenumbers,
                frequency,
            } => write!(f, "Wave({offset} + {amplitude} cos({wavenumbers:?}.x + {frequency} t))"),
            ScalarFn::Custom { bound, .. } => write!(f, "Custom(bound {bound})"),
        }
    }
}

impl ScalarFn {
    pub fn custom(bound: f64, f: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn::Custom {
            f: Arc::new(f),
            bound,
            time_independent: false,
        }
    }

    pub fn eval(&self, x: [f64; 2], t: f64, extents: &[f64]) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Constant(c) => *c,
            ScalarFn::Mode {
                amplitude,
                modes,
                decay,
            } => {
                let mut v = amplitude * (-decay * t).exp();
                for (a, l) in extents.iter().enumerate() {
                    v *= (modes[a] as f64 * std::f64::consts::PI * x[a] / l).sin();
                }
                v
            }
            ScalarFn::Wave {
                offset,
                amplitude,
                wavenumbers,
                frequency,
            } => offset + amplitude * (wavenumbers[0] * x[0] + wavenumbers[1] * x[1] + frequency * t).cos(),
            ScalarFn::Custom { f, .. } => f(x, t),
        }
    }

    /// Analytic sup-norm bound.
    pub fn bound(&self) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Constant(c) => c.abs(),
            ScalarFn::Mode { amplitude, decay, .. } => amplitude.abs() * if *decay < 0.0 { f64::INFINITY } else { 1.0 },
            ScalarFn::Wave { offset, amplitude, .. } => offset.abs() + amplitude.abs(),
            ScalarFn::Custom { bound, .. } => *bound,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarFn::Zero => true,
            ScalarFn::Constant(c) => *c == 0.0,
            ScalarFn::Mode { amplitude, .. } => *amplitude == 0.0,
            ScalarFn::Wave { offset, amplitude, .. } => *offset == 0.0 && *amplitude == 0.0,
            ScalarFn::Custom { .. } => false,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            ScalarFn::Zero | ScalarFn::Constant(_) => true,
            ScalarFn::Mode { decay, amplitude, .. } => *decay == 0.0 || *amplitude == 0.0,
            ScalarFn::Wave {
                frequency, amplitude, ..
            } => *frequency == 0.0 || *amplitude == 0.0,
            ScalarFn::Custom { time_independent, .. } => *time_independent,
        }
    }

    pub fn sample(&self, grid: &Grid, t: f64) -> Field {
        grid.sample(|x| self.eval(x, t, grid.extents()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoefficientRole {
    A0,
    B0,
    B,
    A1,
}

impl fmt::Display for CoefficientRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CoefficientRole::A0 => "a0",
            CoefficientRole::B0 => "B0",
            CoefficientRole::B => "B",
            CoefficientRole::A1 => "a1",
        };
        f.write_str(s)
    }
}

/// One lower-order coefficient. `components` has 1 entry for `a0`/`a1`,
/// `n` for `B0` and `n*n` (row-major) for `B`. `bound` bounds the pointwise
/// Euclidean (Frobenius for `B`) norm.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub role: CoefficientRole,
    pub components: Vec<ScalarFn>,
    pub bound: f64,
}

impl CoefficientField {
    fn with_components(role: CoefficientRole, components: Vec<ScalarFn>) -> Self {
        let bound = components.iter().map(|c| c.bound().powi(2)).sum::<f64>().sqrt();
        CoefficientField {
            role,
            components,
            bound,
        }
    }

    pub fn zero(role: CoefficientRole, dim: usize) -> Self {
        let len = match role {
            CoefficientRole::A0 | CoefficientRole::A1 => 1,
            CoefficientRole::B0 => dim,
            CoefficientRole::B => dim * dim,
        };
        Self::with_components(role, vec![ScalarFn::Zero; len])
    }

    pub fn a0(f: ScalarFn) -> Self {
        Self::with_components(CoefficientRole::A0, vec![f])
    }

    pub fn a1(f: ScalarFn) -> Self {
        Self::with_components(CoefficientRole::A1, vec![f])
    }

    pub fn b0(fs: Vec<ScalarFn>) -> Self {
        Self::with_components(CoefficientRole::B0, fs)
    }

    pub fn b(fs: Vec<ScalarFn>) -> Self {
        Self::with_components(CoefficientRole::B, fs)
    }

    /// Override the analytic bound with a declared one (checked on validation).
    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(ScalarFn::is_zero)
    }

    pub fn is_time_independent(&self) -> bool {
        self.components.iter().all(ScalarFn::is_time_independent)
    }

    /// Largest pointwise norm over the full space-time grid.
    pub fn sampled_sup(&self, grid: &Grid) -> f64 {
        let nodes: Vec<f64> = std::iter::once(0.0)
            .chain(grid.time_nodes())
            .chain(std::iter::once(grid.t_final()))
            .collect();
        let mut sup: f64 = 0.0;
        for t in nodes {
            let fields: Vec<Field> = self.components.iter().map(|c| c.sample(grid, t)).collect();
            let (a, b) = grid.shape();
            for i in 0..a {
                for j in 0..b {
                    let v: f64 = fields.iter().map(|f| f[(i, j)].powi(2)).sum::<f64>().sqrt();
                    sup = sup.max(v);
                }
            }
            if self.is_time_independent() {
                break;
            }
        }
        sup
    }
}

#[derive(Debug, Clone)]
pub struct Coefficients {
    pub a0: CoefficientField,
    pub b0: CoefficientField,
    pub b: CoefficientField,
    pub a1: CoefficientField,
}

impl Coefficients {
    pub fn zero(dim: usize) -> Self {
        Coefficients {
            a0: CoefficientField::zero(CoefficientRole::A0, dim),
            b0: CoefficientField::zero(CoefficientRole::B0, dim),
            b: CoefficientField::zero(CoefficientRole::B, dim),
            a1: CoefficientField::zero(CoefficientRole::A1, dim),
        }
    }

    pub fn fields(&self) -> [&CoefficientField; 4] {
        [&self.a0, &self.b0, &self.b, &self.a1]
    }

    pub fn is_zero(&self) -> bool {
        self.fields().iter().all(|c| c.is_zero())
    }

    pub fn is_time_independent(&self) -> bool {
        self.fields().iter().all(|c| c.is_time_independent())
    }

    pub fn bounds(&self) -> CoefficientBounds {
        CoefficientBounds {
            a0: self.a0.bound,
            b0: self.b0.bound,
            b: self.b.bound,
            a1: self.a1.bound,
        }
    }
}

/// Source term `f`, identically zero for `t <= start`.
#[derive(Debug, Clone)]
pub struct Force {
    pub field: ScalarFn,
    pub start: f64,
}

impl Force {
    pub fn zero() -> Self {
        Force {
            field: ScalarFn::Zero,
            start: 0.0,
        }
    }

    pub fn eval(&self, x: [f64; 2], t: f64, extents: &[f64]) -> f64 {
        if t <= self.start {
            0.0
        } else {
            self.field.eval(x, t, extents)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.field.is_zero()
    }

    pub fn sample(&self, grid: &Grid, t: f64) -> Field {
        if t <= self.start || self.is_zero() {
            grid.zeros()
        } else {
            self.field.sample(grid, t)
        }
    }
}

/// Unvalidated problem description; plain data.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub grid: Grid,
    pub omega: SubdomainMask,
    pub observation: SubdomainMask,
    pub omega0: SubdomainMask,
    pub coefficients: Coefficients,
    pub force: Force,
    pub nonlinearity: Nonlinearity,
    /// Initial state; `None` means zero.
    pub y0: Option<Field>,
    /// Perturbation direction; `None` means the first sine mode. Normalized on validation.
    pub yhat0: Option<Field>,
    pub epsilon: f64,
    pub lambda: f64,
    /// Carleman parameter; `None` means the threshold `4T/|M0|`.
    pub s: Option<f64>,
    /// Peak of eta; `None` means the center of the first omega0 box.
    pub eta_peak: Option<Vec<f64>>,
    pub c_proxy: f64,
    pub insensitization: bool,
    pub solver: SolverOptions,
}

impl ProblemConfig {
    pub fn new(grid: Grid, omega: SubdomainMask, observation: SubdomainMask, omega0: SubdomainMask) -> Self {
        let dim = grid.dimension();
        let start = grid.t_final() / 4.0;
        ProblemConfig {
            grid,
            omega,
            observation,
            omega0,
            coefficients: Coefficients::zero(dim),
            force: Force {
                field: ScalarFn::Zero,
                start,
            },
            nonlinearity: Nonlinearity::Zero,
            y0: None,
            yhat0: None,
            epsilon: 1e-3,
            lambda: 1.0,
            s: None,
            eta_peak: None,
            c_proxy: 1.0,
            insensitization: true,
            solver: SolverOptions::default(),
        }
    }
}

/// Reference 1D problem used by the acceptance suite and `selftest`.
///
/// `a1 = 9` puts the first mode at `pi^4 - 9 pi^2 ~ 8.6`, slow enough that
/// the force still reaches `q(0)`; with amplitude 1000, `|b| ~ 0.27` and the
/// controls for `eps` down to `1e-4` are not trivially zero.
#[derive(Debug, Clone, Copy)]
pub struct DeskSpec {
    pub n: usize,
    pub nt: usize,
    pub t_final: f64,
    pub a1: f64,
    pub force_amplitude: f64,
}

impl Default for DeskSpec {
    fn default() -> Self {
        DeskSpec {
            n: 64,
            nt: 200,
            t_final: 1.0,
            a1: 9.0,
            force_amplitude: 1000.0,
        }
    }
}

pub const DESK_OMEGA: (f64, f64) = (0.3, 0.7);
pub const DESK_OBSERVATION: (f64, f64) = (0.5, 0.9);
pub const DESK_OMEGA0: (f64, f64) = (0.55, 0.65);

pub fn desk_config(spec: &DeskSpec, nonlinearity: Nonlinearity) -> Result<ProblemConfig> {
    let grid = build_grid(1, &[1.0], spec.n, spec.t_final, spec.nt)?;
    let iv = |(a, b): (f64, f64)| [Region::interval(a, b)];
    let omega = build_mask(&grid, &iv(DESK_OMEGA))?;
    let observation = build_mask(&grid, &iv(DESK_OBSERVATION))?;
    let omega0 = build_mask(&grid, &iv(DESK_OMEGA0))?;
    let mut c = ProblemConfig::new(grid, omega, observation, omega0);
    if spec.a1 != 0.0 {
        c.coefficients.a1 = CoefficientField::a1(ScalarFn::Constant(spec.a1));
    }
    c.force = Force {
        field: ScalarFn::Mode {
            amplitude: spec.force_amplitude,
            modes: [1, 1],
            decay: 0.0,
        },
        start: spec.t_final / 4.0,
    };
    c.nonlinearity = nonlinearity;
    Ok(c)
}

/// A configuration that passed every standing assumption, plus everything derived from it.
#[derive(Debug)]
pub struct ValidatedProblem {
    grid: Grid,
    basis: Arc<SpectralBasis>,
    omega: SubdomainMask,
    observation: SubdomainMask,
    omega0: SubdomainMask,
    coefficients: Coefficients,
    force: Force,
    force_samples: Trajectory,
    nonlinearity: Nonlinearity,
    y0: Field,
    yhat0: Field,
    epsilon: f64,
    eta: EtaField,
    weights: WeightSet,
    s: f64,
    weight_exponent: f64,
    constants: Option<ObservabilityConstants>,
    weighted_force_integral: f64,
    insensitization: bool,
    solver: SolverOptions,
    base_schedule: CoefficientSchedule,
    base_propagator: Arc<Propagator>,
}

/// Midpoint quadrature of `int_Q e^{M/sqrt t} |f|^2`.
pub fn weighted_force_integral(grid: &Grid, force: &Force, m: f64) -> f64 {
    let dt = grid.dt();
    (0..grid.nt())
        .map(|j| {
            let t = grid.time_node(j);
            let f = force.sample(grid, t);
            let sq = grid.inner(&f, &f);
            if sq == 0.0 {
                0.0
            } else {
                dt * (m / t.sqrt()).exp() * sq
            }
        })
        .sum()
}

pub fn validate_problem(config: ProblemConfig) -> Result<ValidatedProblem> {
    let ProblemConfig {
        grid,
        omega,
        observation,
        omega0,
        coefficients,
        force,
        nonlinearity,
        y0,
        yhat0,
        epsilon,
        lambda,
        s,
        eta_peak,
        c_proxy,
        insensitization,
        solver,
    } = config;
    let dim = grid.dimension();
    let shape = grid.shape();
    for (name, m) in [("omega", &omega), ("O", &observation), ("omega0", &omega0)] {
        if m.values().shape() != shape {
            return Err(Error::MismatchedGrids(format!(
                "{name} mask has shape {:?}",
                m.values().shape()
            )));
        }
    }
    if omega.intersection_count(&observation) == 0 {
        return Err(Error::DisjointOmegaO);
    }
    if !omega0.compactly_inside(&[&omega, &observation]) {
        return Err(Error::Omega0NotCompact(
            "omega0 support plus one cell must lie in omega and O".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must be positive")));
    }
    if !(c_proxy > 0.0) {
        return Err(Error::InvalidParameter(format!("C proxy = {c_proxy} must be positive")));
    }

    let y0 = y0.unwrap_or_else(|| grid.zeros());
    if y0.shape() != shape {
        return Err(Error::MismatchedGrids("y0 shape".into()));
    }
    if insensitization {
        let m = y0.amax();
        if m != 0.0 {
            return Err(Error::NonzeroY0(m));
        }
    }
    let basis = Arc::new(SpectralBasis::new(&grid));
    let yhat0 = yhat0.unwrap_or_else(|| basis.sine_mode(&[1, 1]));
    if yhat0.shape() != shape {
        return Err(Error::MismatchedGrids("yhat0 shape".into()));
    }
    let nrm = grid.norm(&yhat0);
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Err(Error::DegenerateYhat0);
    }
    let yhat0 = yhat0 / nrm;

    for c in coefficients.fields() {
        let expected = CoefficientField::zero(c.role, dim).components.len();
        if c.components.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "{} has {} components, expected {expected}",
                c.role,
                c.components.len()
            )));
        }
        let sampled = c.sampled_sup(&grid);
        if sampled > c.bound * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::CoefficientBoundViolated {
                role: c.role.to_string(),
                sampled,
                declared: c.bound,
            });
        }
    }
    nonlinearity.check_partials(dim)?;
    if force.start < 0.0 {
        return Err(Error::InvalidParameter("force start must be >= 0".into()));
    }

    let peak = match eta_peak {
        Some(p) => p,
        None => omega0
            .regions()
            .first()
            .map(Region::center)
            .ok_or_else(|| Error::EmptyMask("omega0".into()))?,
    };
    let eta = build_eta(&grid, &omega0, &peak)?;
    let weights = build_weights(&eta, lambda, grid.t_final())?;
    let threshold = weights.s_threshold();
    let s = s.unwrap_or(threshold);
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!("s = {s} must be >= 0")));
    }
    let weight_exponent = weights.weight_exponent(s);
    let constants = if s >= threshold {
        Some(observability_constants(&weights, s, &coefficients.bounds(), c_proxy)?)
    } else {
        None
    };
    let wfi = weighted_force_integral(&grid, &force, weight_exponent);
    if !(wfi.is_finite() && wfi <= FORCE_WEIGHT_GUARD) {
        return Err(Error::ForceWeightDivergent(wfi));
    }

    let force_samples = Trajectory::from_fn(&grid, |j| force.sample(&grid, grid.time_node(j)));
    let base_schedule = CoefficientSchedule::sample(&grid, &coefficients);
    let base_propagator = Arc::new(Propagator::new(basis.clone(), &base_schedule, grid.dt(), &solver)?);

    Ok(ValidatedProblem {
        grid,
        basis,
        omega,
        observation,
        omega0,
        coefficients,
        force,
        force_samples,
        nonlinearity,
        y0,
        yhat0,
        epsilon,
        eta,
        weights,
        s,
        weight_exponent,
        constants,
        weighted_force_integral: wfi,
        insensitization,
        solver,
        base_schedule,
        base_propagator,
    })
}

impl ValidatedProblem {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }
    pub fn omega(&self) -> &SubdomainMask {
        &self.omega
    }
    pub fn observation(&self) -> &SubdomainMask {
        &self.observation
    }
    pub fn omega0(&self) -> &SubdomainMask {
        &self.omega0
    }
    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }
    pub fn force(&self) -> &Force {
        &self.force
    }
    /// `f` sampled at the midpoint nodes.
    pub fn force_samples(&self) -> &Trajectory {
        &self.force_samples
    }
    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }
    pub fn y0(&self) -> &Field {
        &self.y0
    }
    pub fn yhat0(&self) -> &Field {
        &self.yhat0
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn eta(&self) -> &EtaField {
        &self.eta
    }
    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    /// Exponent `M = 2|m0| s / sqrt(T)` of the observability weight.
    pub fn weight_exponent(&self) -> f64 {
        self.weight_exponent
    }
    /// `None` when `s` is below the Carleman threshold.
    pub fn constants(&self) -> Option<&ObservabilityConstants> {
        self.constants.as_ref()
    }
    pub fn weighted_force_integral(&self) -> f64 {
        self.weighted_force_integral
    }
    pub fn insensitization(&self) -> bool {
        self.insensitization
    }
    pub fn solver(&self) -> &SolverOptions {
        &self.solver
    }
    pub fn exec(&self) -> Exec {
        self.solver.exec
    }
    pub fn base_schedule(&self) -> &CoefficientSchedule {
        &self.base_schedule
    }
    /// Propagator of the linear operator with the configured coefficients.
    pub fn base_propagator(&self) -> &Arc<Propagator> {
        &self.base_propagator
    }
    pub fn inner_solve(&self) -> InnerSolve {
        self.solver.inner
    }
}
