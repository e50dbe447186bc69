//! Carleman weight functions and the constants built from them.
//!
//! `eta(x) = x (L - x) e^{k x}` per axis (product in 2D) with `k` chosen so
//! that the unique interior critical point sits at a requested peak `c`.
//! From it
//!
//! ```text
//! xi0 = e^{lambda (2|eta| + eta)},  alpha0 = xi0 - e^{4 lambda |eta|},
//! xi  = xi0 / sqrt(t (T - t)),    alpha  = alpha0 / sqrt(t (T - t)).
//! ```
//!
//! Inequalities involving `e^{2 s alpha}` are checked in log space.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::problem::{Grid, SubdomainMask};
use crate::spectral::Field;

/// Largest admissible `4 lambda |eta|` (e^709 is close to `f64::MAX`).
pub const MAX_EXPONENT: f64 = 709.0;

fn profile(x: f64, l: f64, k: f64) -> f64 {
    x * (l - x) * (k * x).exp()
}

fn profile_dx(x: f64, l: f64, k: f64) -> f64 {
    (k * x).exp() * ((l - 2.0 * x) + k * x * (l - x))
}

fn profile_c(x: Complex64, l: f64, k: f64) -> Complex64 {
    x * (l - x) * (x * k).exp()
}

/// Solve `eta'(c) = 0` for `k` by bisection; the bracket grows until it changes sign.
pub fn solve_peak_exponent(c: f64, l: f64) -> f64 {
    let h = |k: f64| (l - 2.0 * c) + k * c * (l - c);
    let (mut lo, mut hi) = (-1.0, 1.0);
    while h(lo) > 0.0 {
        lo *= 2.0;
    }
    while h(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = h(mid);
        if v == 0.0 || mid == lo || mid == hi {
            return mid;
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaField {
    dim: usize,
    extents: Vec<f64>,
    peak: Vec<f64>,
    k: Vec<f64>,
    amplitude: f64,
    #[serde(skip)]
    values: Field,
    sup: f64,
}

pub fn build_eta(grid: &Grid, omega0: &SubdomainMask, peak: &[f64]) -> Result<EtaField> {
    let dim = grid.dimension();
    if peak.len() != dim {
        return Err(Error::InvalidParameter(format!("peak has {} coordinates", peak.len())));
    }
    if !omega0.regions().iter().any(|r| r.contains(peak)) {
        return Err(Error::CriticalPointOutsideOmega0(format!(
            "peak {peak:?} is not inside omega0"
        )));
    }
    let extents = grid.extents().to_vec();
    let k: Vec<f64> = (0..dim).map(|a| solve_peak_exponent(peak[a], extents[a])).collect();
    let mut eta = EtaField {
        dim,
        extents,
        peak: peak.to_vec(),
        k,
        amplitude: 1.0,
        values: grid.zeros(),
        sup: 0.0,
    };
    eta.refresh(grid);
    let (n1, n2) = grid.shape();
    for i in 0..n1 {
        for j in 0..n2 {
            let x = grid.node(i, j);
            if !(eta.values[(i, j)] > 0.0) {
                return Err(Error::FlatEta(format!("eta <= 0 at interior node {x:?}")));
            }
            if !omega0.is_set(i, j) {
                let g = eta.gradient(x);
                if (g[0] * g[0] + g[1] * g[1]).sqrt() < 1e-12 {
                    return Err(Error::CriticalPointOutsideOmega0(format!(
                        "|grad eta| vanishes at {x:?} outside omega0"
                    )));
                }
            }
        }
    }
    Ok(eta)
}

impl EtaField {
    fn refresh(&mut self, grid: &Grid) {
        self.values = grid.sample(|x| self.value(x));
        self.sup = self.value(self.peak_point());
    }

    fn peak_point(&self) -> [f64; 2] {
        let mut p = [0.0; 2];
        p[..self.dim].copy_from_slice(&self.peak);
        p
    }

    /// Same profile multiplied by `a` (`a = 0` gives the flat field).
    pub fn with_amplitude(&self, a: f64) -> Self {
        let mut e = self.clone();
        e.amplitude = a;
        e.values = &self.values * (a / self.amplitude);
        e.sup = self.value(self.peak_point()) * a / self.amplitude;
        e
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }
    pub fn peak(&self) -> &[f64] {
        &self.peak
    }
    pub fn exponents(&self) -> &[f64] {
        &self.k
    }
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
    pub fn values(&self) -> &Field {
        &self.values
    }
    /// `|eta|_{L^inf}`, attained at the peak.
    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        let mut v = self.amplitude;
        for a in 0..self.dim {
            v *= profile(x[a], self.extents[a], self.k[a]);
        }
        v
    }

    pub fn value_c(&self, x: [Complex64; 2]) -> Complex64 {
        let mut v = Complex64::new(self.amplitude, 0.0);
        for a in 0..self.dim {
            v *= profile_c(x[a], self.extents[a], self.k[a]);
        }
        v
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (a, ga) in g.iter_mut().enumerate().take(self.dim) {
            let mut v = self.amplitude * profile_dx(x[a], self.extents[a], self.k[a]);
            for b in 0..self.dim {
                if b != a {
                    v *= profile(x[b], self.extents[b], self.k[b]);
                }
            }
            *ga = v;
        }
        g
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightSet {
    lambda: f64,
    t_final: f64,
    eta: EtaField,
    eta_sup: f64,
    e4: f64,
    pub m0: f64,
    pub big_m0: f64,
    pub n0: f64,
    pub big_n0: f64,
}

pub fn build_weights(eta: &EtaField, lambda: f64, t_final: f64) -> Result<WeightSet> {
    if !(lambda >= 1.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be >= 1")));
    }
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameter("T must be positive".into()));
    }
    let sup = eta.sup();
    if !(sup > 0.0) {
        return Err(Error::FlatEta(
            "eta vanishes identically, so |grad eta| > 0 fails".into(),
        ));
    }
    let a = lambda * sup;
    if 4.0 * a > MAX_EXPONENT || !a.is_finite() {
        return Err(Error::LambdaTooLarge(4.0 * a));
    }
    let e4 = (4.0 * a).exp();
    let n0 = (2.0 * a).exp();
    let big_n0 = (3.0 * a).exp();
    Ok(WeightSet {
        lambda,
        t_final,
        eta: eta.clone(),
        eta_sup: sup,
        e4,
        m0: n0 - e4,
        big_m0: big_n0 - e4,
        n0,
        big_n0,
    })
}

/// `1 / sqrt(t (T - t))` and its time derivative.
fn theta(t: f64, tf: f64) -> (f64, f64) {
    let p = t * (tf - t);
    let th = 1.0 / p.sqrt();
    (th, -0.5 * (tf - 2.0 * t) * th * th * th)
}

impl WeightSet {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn eta(&self) -> &EtaField {
        &self.eta
    }
    pub fn eta_sup(&self) -> f64 {
        self.eta_sup
    }
    /// `e^{4 lambda |eta|}`
    pub fn e4(&self) -> f64 {
        self.e4
    }

    /// `4T / |M0|`
    pub fn s_threshold(&self) -> f64 {
        4.0 * self.t_final / self.big_m0.abs()
    }

    /// `M = 2 |m0| s / sqrt(T)`
    pub fn weight_exponent(&self, s: f64) -> f64 {
        2.0 * self.m0.abs() * s / self.t_final.sqrt()
    }

    pub fn xi0(&self, x: [f64; 2]) -> f64 {
        (self.lambda * (2.0 * self.eta_sup + self.eta.value(x))).exp()
    }

    pub fn alpha0(&self, x: [f64; 2]) -> f64 {
        self.xi0(x) - self.e4
    }

    fn xi0_c(&self, x: [Complex64; 2]) -> Complex64 {
        ((self.eta.value_c(x) + 2.0 * self.eta_sup) * self.lambda).exp()
    }

    fn alpha0_c(&self, x: [Complex64; 2]) -> Complex64 {
        self.xi0_c(x) - self.e4
    }

    pub fn xi(&self, x: [f64; 2], t: f64) -> f64 {
        self.xi0(x) * theta(t, self.t_final).0
    }

    pub fn alpha(&self, x: [f64; 2], t: f64) -> f64 {
        self.alpha0(x) * theta(t, self.t_final).0
    }

    pub fn ln_xi(&self, x: [f64; 2], t: f64) -> f64 {
        self.lambda * (2.0 * self.eta_sup + self.eta.value(x)) + theta(t, self.t_final).0.ln()
    }

    /// `(alpha_t, xi_t)` by closed form.
    pub fn time_derivatives(&self, x: [f64; 2], t: f64) -> (f64, f64) {
        let (_, dth) = theta(t, self.t_final);
        (self.alpha0(x) * dth, self.xi0(x) * dth)
    }

    /// Spatial gradients of `alpha0` and `xi0` by complex-step differentiation.
    pub fn complex_step_gradients(&self, x: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let h = 1e-30;
        let mut ga = [0.0; 2];
        let mut gx = [0.0; 2];
        for a in 0..self.eta.dim {
            let mut z = [Complex64::new(x[0], 0.0), Complex64::new(x[1], 0.0)];
            z[a].im = h;
            ga[a] = self.alpha0_c(z).im / h;
            gx[a] = self.xi0_c(z).im / h;
        }
        (ga, gx)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub nodes_checked: usize,
    /// Worst `|grad alpha - lambda xi grad eta| / (lambda xi |grad eta|)`.
    pub grad_alpha_rel: f64,
    pub grad_xi_rel: f64,
    /// Worst `1 - xi^{-1} / (T/2)`; nonnegative means the bound holds.
    pub xi_inv_margin: f64,
    /// Worst `1 - (|alpha_t| + |xi_t|) / ((T/2) xi^3)`.
    pub time_derivative_margin: f64,
    /// Largest deviation of `alpha0 - (xi0 - e^{4 lambda |eta|})` over the nodes.
    pub identity_residual: f64,
    pub gradient_pass: bool,
    pub xi_inv_pass: bool,
    pub time_derivative_pass: bool,
}

impl PropertyReport {
    pub fn all_pass(&self) -> bool {
        self.gradient_pass && self.xi_inv_pass && self.time_derivative_pass
    }
}

#[derive(Default, Clone, Copy)]
struct PropAcc {
    n: usize,
    ga: f64,
    gx: f64,
    xi_inv: f64,
    td: f64,
    id: f64,
}

impl PropAcc {
    fn merge(self, o: PropAcc) -> PropAcc {
        PropAcc {
            n: self.n + o.n,
            ga: self.ga.max(o.ga),
            gx: self.gx.max(o.gx),
            xi_inv: self.xi_inv.min(o.xi_inv),
            td: self.td.min(o.td),
            id: self.id.max(o.id),
        }
    }
}

/// Gradient relation, `xi^{-1} <= T/2` and `|alpha_t| + |xi_t| <= (T/2) xi^3`
/// at every space-time node.
pub fn check_weight_properties(weights: &WeightSet, grid: &Grid, exec: Exec) -> PropertyReport {
    let tf = weights.t_final;
    let lam = weights.lambda;
    let (n1, n2) = grid.shape();
    let gscale = (0..n1)
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .map(|(i, j)| {
            let g = weights.eta.gradient(grid.node(i, j));
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        })
        .fold(0.0, f64::max);
    // spatial factors are time-independent; compute them once
    #[allow(clippy::type_complexity)]
    let spatial: Vec<([f64; 2], f64, f64, [f64; 2], [f64; 2], [f64; 2])> = (0..n1)
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .map(|(i, j)| {
            let x = grid.node(i, j);
            let (ga, gx) = weights.complex_step_gradients(x);
            (x, weights.xi0(x), weights.alpha0(x), weights.eta.gradient(x), ga, gx)
        })
        .collect();
    let per_time = exec.map(grid.nt(), |jt| {
        let t = grid.time_node(jt);
        let (th, dth) = theta(t, tf);
        let mut acc = PropAcc {
            xi_inv: f64::INFINITY,
            td: f64::INFINITY,
            ..Default::default()
        };
        for (_x, xi0, a0, ge, ga, gx) in &spatial {
            let xi = xi0 * th;
            let gnorm = (ge[0] * ge[0] + ge[1] * ge[1]).sqrt();
            // floor keeps the relative test meaningful where grad eta happens to vanish
            let denom = lam * xi * gnorm.max(1e-12 * gscale);
            let mut ea: f64 = 0.0;
            let mut ex: f64 = 0.0;
            for a in 0..2 {
                let expect = lam * xi * ge[a];
                ea += (ga[a] * th - expect).powi(2);
                ex += (gx[a] * th - expect).powi(2);
            }
            acc.ga = acc.ga.max(ea.sqrt() / denom);
            acc.gx = acc.gx.max(ex.sqrt() / denom);
            acc.xi_inv = acc.xi_inv.min(1.0 - (1.0 / xi) / (0.5 * tf));
            let lhs = a0.abs() * dth.abs() + xi0 * dth.abs();
            acc.td = acc.td.min(1.0 - lhs / (0.5 * tf * xi.powi(3)));
            acc.id = acc.id.max((a0 - (xi0 - weights.e4)).abs() / weights.e4);
            acc.n += 1;
        }
        acc
    });
    let acc = per_time.into_iter().fold(
        PropAcc {
            xi_inv: f64::INFINITY,
            td: f64::INFINITY,
            ..Default::default()
        },
        PropAcc::merge,
    );
    PropertyReport {
        nodes_checked: acc.n,
        grad_alpha_rel: acc.ga,
        grad_xi_rel: acc.gx,
        xi_inv_margin: acc.xi_inv,
        time_derivative_margin: acc.td,
        identity_residual: acc.id,
        gradient_pass: acc.ga <= 1e-10 && acc.gx <= 1e-10,
        xi_inv_pass: acc.xi_inv >= 0.0,
        time_derivative_pass: acc.td >= 0.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PartReport {
    pub nodes_checked: usize,
    /// Smallest `rhs - lhs` (log space, oriented so that >= 0 means the bound holds).
    pub worst_log_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma23Report {
    pub s: f64,
    pub threshold: f64,
    pub ln_a_s: f64,
    pub m_s: f64,
    pub part1: Option<PartReport>,
    pub part2: PartReport,
    pub part3: PartReport,
    /// `|lhs/rhs - 1|` of part 1 at `s = 4T/|M0|`, `t = T/2`, at the peak of eta.
    pub tightness_gap: f64,
}

impl Lemma23Report {
    pub fn all_pass(&self) -> bool {
        self.part1.as_ref().is_none_or(|p| p.pass) && self.part2.pass && self.part3.pass
    }
}

#[derive(Clone, Copy)]
struct PartAcc {
    n: usize,
    worst: f64,
    pass: bool,
}

impl PartAcc {
    fn new() -> Self {
        PartAcc {
            n: 0,
            worst: f64::INFINITY,
            pass: true,
        }
    }
    /// Record `lhs <= rhs` in log space.
    fn record(&mut self, lhs: f64, rhs: f64) {
        let m = rhs - lhs;
        self.n += 1;
        self.worst = self.worst.min(m);
        if m < -1e-12 * lhs.abs().max(rhs.abs()).max(1.0) {
            self.pass = false;
        }
    }
    fn merge(self, o: PartAcc) -> PartAcc {
        PartAcc {
            n: self.n + o.n,
            worst: self.worst.min(o.worst),
            pass: self.pass && o.pass,
        }
    }
    fn report(self) -> PartReport {
        PartReport {
            nodes_checked: self.n,
            worst_log_margin: self.worst,
            pass: self.pass,
        }
    }
}

impl WeightSet {
    /// `16 ln(2^3 N0 / (|M0| e))`, the log of the part (1) bound.
    fn ln_part1_rhs(&self) -> f64 {
        48.0 * std::f64::consts::LN_2 + 16.0 * (self.big_n0.ln() - self.big_m0.abs().ln() - 1.0)
    }

    fn ln_part1_lhs(&self, s: f64, x: [f64; 2], t: f64) -> f64 {
        16.0 * (s.ln() + self.ln_xi(x, t)) + 2.0 * s * self.alpha(x, t)
    }

    /// `ln A_s` with `A_s = (2 s n0)^6 T^{-6} e^{-2|m0| s / T}`.
    pub fn ln_a_s(&self, s: f64) -> f64 {
        let tf = self.t_final;
        6.0 * (2.0 * s * self.n0).ln() - 6.0 * tf.ln() - 2.0 * self.m0.abs() * s / tf
    }

    /// `M_s = 2|m0| s / sqrt(T)`
    pub fn m_s(&self, s: f64) -> f64 {
        self.weight_exponent(s)
    }

    /// Part (1) relative gap at the point where the bound is attained.
    pub fn tightness_gap(&self) -> f64 {
        let s = self.s_threshold();
        let p = self.eta.peak_point();
        let lhs = self.ln_part1_lhs(s, p, 0.5 * self.t_final);
        (lhs - self.ln_part1_rhs()).exp_m1().abs()
    }
}

/// Sweep the three bounds of the weighted-exponential lemma over the grid.
pub fn check_lemma23(
    weights: &WeightSet,
    s: f64,
    grid: &Grid,
    include_part1: bool,
    exec: Exec,
) -> Result<Lemma23Report> {
    let threshold = weights.s_threshold();
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!("s = {s} must be >= 0")));
    }
    if include_part1 && s < threshold {
        return Err(Error::SBelowThreshold { s, threshold });
    }
    let tf = grid.t_final();
    let ln_a = weights.ln_a_s(s);
    let m_s = weights.m_s(s);
    let ln_p1 = weights.ln_part1_rhs();
    let n0 = weights.n0;
    let ln_p3 = -6.0 * (2.0 * n0).ln() + 6.0 * tf.ln() + 8.0 * weights.m0.abs() * s / (3.0 * tf).sqrt();
    let (n1, n2) = grid.shape();
    let nodes: Vec<[f64; 2]> = (0..n1)
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .map(|(i, j)| grid.node(i, j))
        .collect();
    let parts = exec.map(grid.nt(), |jt| {
        let t = grid.time_node(jt);
        let mut p = [PartAcc::new(), PartAcc::new(), PartAcc::new()];
        for &x in &nodes {
            let ln_xi = weights.ln_xi(x, t);
            let two_s_alpha = 2.0 * s * weights.alpha(x, t);
            if include_part1 {
                p[0].record(16.0 * (s.ln() + ln_xi) + two_s_alpha, ln_p1);
            }
            if t < 0.5 * tf && s > 0.0 {
                // s^6 xi^6 e^{2 s alpha} >= A_s e^{-M_s / sqrt t}
                let lhs = 6.0 * (s.ln() + ln_xi) + two_s_alpha;
                p[1].record(ln_a - m_s / t.sqrt(), lhs);
            } else if t < 0.5 * tf {
                p[1].n += 1;
            }
            if t > 0.25 * tf && t < 0.75 * tf {
                p[2].record(-6.0 * ln_xi - two_s_alpha, ln_p3);
            }
        }
        p
    });
    let mut acc = [PartAcc::new(), PartAcc::new(), PartAcc::new()];
    for p in parts {
        for k in 0..3 {
            acc[k] = acc[k].merge(p[k]);
        }
    }
    Ok(Lemma23Report {
        s,
        threshold,
        ln_a_s: ln_a,
        m_s,
        part1: include_part1.then(|| acc[0].report()),
        part2: acc[1].report(),
        part3: acc[2].report(),
        tightness_gap: weights.tightness_gap(),
    })
}

/// Declared sup norms of the lower-order coefficients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CoefficientBounds {
    pub a0: f64,
    pub b0: f64,
    pub b: f64,
    pub a1: f64,
}

impl CoefficientBounds {
    /// `beta = 2 + |a0|^2 + |B0|^2 + |B|^2 + |a1|^2`
    pub fn beta(&self) -> f64 {
        2.0 + self.a0.powi(2) + self.b0.powi(2) + self.b.powi(2) + self.a1.powi(2)
    }
}

/// Constants of the observability inequality, up to the unknown constant `C`
/// (supplied as `c_proxy`).
#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityConstants {
    pub s: f64,
    pub m: f64,
    pub beta: f64,
    pub c_proxy: f64,
    /// `ln H` with the `e^{2 beta T}` exponent.
    pub ln_h: f64,
    pub h: f64,
    /// `ln H` with `e^{beta T / 2 - 16}` in the second term instead.
    pub ln_h_alt: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn observability_constants(
    weights: &WeightSet,
    s: f64,
    bounds: &CoefficientBounds,
    c_proxy: f64,
) -> Result<ObservabilityConstants> {
    let threshold = weights.s_threshold();
    if s < threshold {
        return Err(Error::SBelowThreshold { s, threshold });
    }
    if !(c_proxy > 0.0) {
        return Err(Error::InvalidParameter(format!("C proxy = {c_proxy} must be positive")));
    }
    let tf = weights.t_final;
    let m = weights.weight_exponent(s);
    let beta = bounds.beta();
    let m0 = weights.m0.abs();
    let ratio16 = 16.0 * (weights.big_n0.ln() - weights.big_m0.abs().ln() - 1.0);
    let ln2 = std::f64::consts::LN_2;
    let first = 48.0 * ln2 + ratio16;
    let tail = -6.0 * weights.n0.ln() + 6.0 * tf.ln() + 8.0 * m0 * s / (3.0 * tf).sqrt();
    let second = 42.0 * ln2 + ratio16 + 2.0 * beta * tf + tail;
    let second_alt = 42.0 * ln2 + ratio16 + 0.5 * beta * tf - 16.0 + tail;
    let ln_c = c_proxy.ln();
    let ln_h = ln_c + log_add_exp(first, second);
    Ok(ObservabilityConstants {
        s,
        m,
        beta,
        c_proxy,
        ln_h,
        h: ln_h.exp(),
        ln_h_alt: ln_c + log_add_exp(first, second_alt),
    })
}
