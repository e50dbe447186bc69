//! Run configuration. Every key is optional and defaults to the 1D desk
//! problem; unknown keys are rejected.

use std::path::Path;

use insens_core::pde::InnerSolve;
use insens_core::problem::{
    build_smooth_mask, CoefficientField, Force, ScalarFn, DESK_OBSERVATION, DESK_OMEGA, DESK_OMEGA0,
};
use insens_core::{build_grid, build_mask, Nonlinearity, ProblemConfig, Region, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 keeps the runtime default.
    pub threads: usize,
    pub grid: GridConfig,
    pub regions: RegionsConfig,
    pub coefficients: CoefficientsConfig,
    pub force: ForceConfig,
    pub carleman: CarlemanConfig,
    pub control: ControlConfig,
    pub sentinel: SentinelConfig,
    pub semilinear: SemilinearConfig,
    pub observability: ObservabilityConfig,
    pub convergence: ConvergenceConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dimension: usize,
    pub extents: Vec<f64>,
    pub n: usize,
    pub nt: usize,
    pub t_final: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dimension: 1,
            extents: vec![1.0],
            n: 64,
            nt: 200,
            t_final: 1.0,
        }
    }
}

/// Boxes are `[a, b]` in 1D and `[x0, x1, y0, y1]` in 2D.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionsConfig {
    pub omega: Vec<Vec<f64>>,
    pub observation: Vec<Vec<f64>>,
    pub omega0: Vec<Vec<f64>>,
    /// Smoothed indicator functions instead of sharp ones.
    pub smooth: bool,
}

impl Default for RegionsConfig {
    fn default() -> Self {
        let iv = |(a, b): (f64, f64)| vec![vec![a, b]];
        RegionsConfig {
            omega: iv(DESK_OMEGA),
            observation: iv(DESK_OBSERVATION),
            omega0: iv(DESK_OMEGA0),
            smooth: false,
        }
    }
}

/// Constant lower-order coefficients; `b0` has `d` entries and `b` has `d*d`
/// (row-major). Empty vectors mean zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientsConfig {
    pub a0: f64,
    pub a1: f64,
    pub b0: Vec<f64>,
    pub b: Vec<f64>,
}

impl Default for CoefficientsConfig {
    fn default() -> Self {
        CoefficientsConfig {
            a0: 0.0,
            a1: 9.0,
            b0: Vec::new(),
            b: Vec::new(),
        }
    }
}

/// `f = amplitude * e^{-decay t} * prod sin(m_a pi x_a / L_a)` for `t > start`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceConfig {
    pub amplitude: f64,
    pub modes: [usize; 2],
    pub decay: f64,
    /// Defaults to `T / 4`.
    pub start: Option<f64>,
}

impl Default for ForceConfig {
    fn default() -> Self {
        ForceConfig {
            amplitude: 1000.0,
            modes: [1, 1],
            decay: 0.0,
            start: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanConfig {
    pub lambda: f64,
    /// Defaults to the threshold `4T/|M0|`.
    pub s: Option<f64>,
    pub c_proxy: f64,
    pub eta_peak: Option<Vec<f64>>,
    /// `lambda` values swept by `weights-check`.
    pub lambdas: Vec<f64>,
    /// Multiples of the threshold checked by `weights-check` when `s` is unset.
    pub s_multiples: Vec<f64>,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        CarlemanConfig {
            lambda: 1.0,
            s: None,
            c_proxy: 1.0,
            eta_peak: None,
            lambdas: vec![1.0, 2.0, 4.0],
            s_multiples: vec![1.0, 2.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Exact,
    Quadratic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub epsilon: f64,
    pub variant: VariantName,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            epsilon: 1e-3,
            variant: VariantName::Exact,
            tol: 1e-8,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SentinelConfig {
    pub tau: f64,
    pub directions: usize,
    /// Probe size for the linear duality identity, where the sentinel is
    /// exactly quadratic and a large probe avoids cancellation.
    pub identity_tau: f64,
}

impl Default for SentinelConfig {
    fn default() -> Self {
        SentinelConfig {
            tau: 1e-3,
            directions: 20,
            identity_tau: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemilinearConfig {
    /// `zero`, `constant(c)`, `linear(c)`, `tanh(c)`, `sin(c)`, `square`, `mixed(c)`.
    pub nonlinearity: String,
    pub tol: f64,
    pub max_iter: usize,
    /// Optional declared Lipschitz bound checked by sampling.
    pub declared_bound: Option<f64>,
    /// Half-width of the jet-space sampling cube.
    pub sample_half_width: f64,
}

impl Default for SemilinearConfig {
    fn default() -> Self {
        SemilinearConfig {
            nonlinearity: "tanh(0.1)".into(),
            tol: 1e-8,
            max_iter: 15,
            declared_bound: None,
            sample_half_width: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservabilityConfig {
    pub samples: usize,
    /// Also sample on a grid with this `N` and compare the maxima.
    pub refine_n: Option<usize>,
    pub max_change: f64,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        ObservabilityConfig {
            samples: 50,
            refine_n: Some(96),
            max_change: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub n: usize,
    pub t_final: f64,
    pub nts: Vec<usize>,
    pub min_order: f64,
    pub eigen_t_final: f64,
    pub eigen_nt: usize,
    pub eigen_tol: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            n: 64,
            t_final: 1.0,
            nts: vec![50, 100, 200, 400],
            min_order: 1.9,
            eigen_t_final: 0.01,
            eigen_nt: 200,
            eigen_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerName {
    Auto,
    Dense,
    FixedPoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub inner: InnerName,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub dense_limit: usize,
    pub parallel: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            inner: InnerName::Auto,
            inner_tol: d.inner_tol,
            inner_max_iter: d.inner_max_iter,
            dense_limit: d.dense_limit,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write state, adjoint and control trajectories as binary field dumps.
    pub fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { fields: true }
    }
}

pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn regions(dim: usize, boxes: &[Vec<f64>], name: &str) -> Result<Vec<Region>, CliError> {
    if boxes.is_empty() {
        return Err(CliError::Usage(format!("regions.{name} is empty")));
    }
    boxes
        .iter()
        .map(|b| match (dim, b.as_slice()) {
            (1, &[a, c]) => Ok(Region::interval(a, c)),
            (2, &[x0, x1, y0, y1]) => Ok(Region::rect((x0, x1), (y0, y1))),
            _ => Err(CliError::Usage(format!(
                "regions.{name}: box {b:?} needs {} numbers in dimension {dim}",
                2 * dim
            ))),
        })
        .collect()
}

fn constants(values: &[f64], len: usize, name: &str) -> Result<Option<Vec<ScalarFn>>, CliError> {
    if values.is_empty() {
        return Ok(None);
    }
    if values.len() != len {
        return Err(CliError::Usage(format!(
            "coefficients.{name} needs {len} entries, got {}",
            values.len()
        )));
    }
    Ok(Some(values.iter().map(|&c| ScalarFn::Constant(c)).collect()))
}

impl Config {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            inner: match self.solver.inner {
                InnerName::Auto => InnerSolve::Auto,
                InnerName::Dense => InnerSolve::Dense,
                InnerName::FixedPoint => InnerSolve::FixedPoint,
            },
            inner_tol: self.solver.inner_tol,
            inner_max_iter: self.solver.inner_max_iter,
            dense_limit: self.solver.dense_limit,
            exec: if self.solver.parallel {
                insens_core::Exec::default()
            } else {
                insens_core::Exec::Sequential
            },
        }
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity, CliError> {
        Nonlinearity::parse(&self.semilinear.nonlinearity).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// The problem with the given `N` (the configured one when `None`).
    pub fn problem(&self, n: Option<usize>, f: Nonlinearity) -> Result<ProblemConfig, CliError> {
        let g = &self.grid;
        let dim = g.dimension;
        let grid = build_grid(dim, &g.extents, n.unwrap_or(g.n), g.t_final, g.nt).map_err(usage)?;
        let mask = |boxes: &[Vec<f64>], name: &str| -> Result<_, CliError> {
            let r = regions(dim, boxes, name)?;
            if self.regions.smooth {
                build_smooth_mask(&grid, &r).map_err(usage)
            } else {
                build_mask(&grid, &r).map_err(usage)
            }
        };
        let omega = mask(&self.regions.omega, "omega")?;
        let observation = mask(&self.regions.observation, "observation")?;
        let omega0 = mask(&self.regions.omega0, "omega0")?;
        let mut c = ProblemConfig::new(grid, omega, observation, omega0);
        let k = &self.coefficients;
        if k.a0 != 0.0 {
            c.coefficients.a0 = CoefficientField::a0(ScalarFn::Constant(k.a0));
        }
        if k.a1 != 0.0 {
            c.coefficients.a1 = CoefficientField::a1(ScalarFn::Constant(k.a1));
        }
        if let Some(fs) = constants(&k.b0, dim, "b0")? {
            c.coefficients.b0 = CoefficientField::b0(fs);
        }
        if let Some(fs) = constants(&k.b, dim * dim, "b")? {
            c.coefficients.b = CoefficientField::b(fs);
        }
        let fc = &self.force;
        c.force = Force {
            field: if fc.amplitude == 0.0 {
                ScalarFn::Zero
            } else {
                ScalarFn::Mode {
                    amplitude: fc.amplitude,
                    modes: fc.modes,
                    decay: fc.decay,
                }
            },
            start: fc.start.unwrap_or(g.t_final / 4.0),
        };
        c.nonlinearity = f;
        c.epsilon = self.control.epsilon;
        c.lambda = self.carleman.lambda;
        c.s = self.carleman.s;
        c.c_proxy = self.carleman.c_proxy;
        c.eta_peak = self.carleman.eta_peak.clone();
        c.solver = self.solver_options();
        Ok(c)
    }
}

pub fn usage(e: insens_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = toml::to_string(&Config::default()).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(toml::from_str::<Config>("[grid]\nnn = 3\n").is_err());
        assert!(toml::from_str::<Config>("sed = 3\n").is_err());
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c: Config = toml::from_str("seed = 7\n[grid]\nn = 32\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.grid.n, 32);
        assert_eq!(c.grid.nt, 200);
    }

    #[test]
    fn box_arity_is_checked() {
        let c: Config = toml::from_str("[regions]\nomega = [[0.1, 0.2, 0.3]]\n").unwrap();
        assert!(c.problem(None, Nonlinearity::Zero).is_err());
    }
}
