use thiserror::Error;

/// Every failure the pipeline can surface.
///
/// Display strings start with a stable kebab-case token so reports and the
/// command line can match on them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("invalid-grid: {0}")]
    InvalidGrid(String),
    #[error("box-outside-domain: {0}")]
    BoxOutsideDomain(String),
    #[error("empty-mask: {0}")]
    EmptyMask(String),
    #[error("disjoint-omega-O: control and observation sets share no grid cell")]
    DisjointOmegaO,
    #[error("omega0-not-compact: {0}")]
    Omega0NotCompact(String),
    #[error("nonzero-y0: insensitization runs require y0 = 0 (max |y0| = {0:e})")]
    NonzeroY0(f64),
    #[error("degenerate-yhat0: perturbation direction has zero norm")]
    DegenerateYhat0,
    #[error("force-weight-divergent: weighted force integral {0:e} exceeds the overflow guard")]
    ForceWeightDivergent(f64),
    #[error("coefficient-bound-violated: {role} sampled sup {sampled:e} > declared {declared:e}")]
    CoefficientBoundViolated { role: String, sampled: f64, declared: f64 },
    #[error("nonlinearity-partials-mismatch: {0}")]
    NonlinearityPartialsMismatch(String),
    #[error("critical-point-outside-omega0: {0}")]
    CriticalPointOutsideOmega0(String),
    #[error("flat-eta: {0}")]
    FlatEta(String),
    #[error("lambda-too-large: exp(4 lambda |eta|) overflows (4 lambda |eta| = {0})")]
    LambdaTooLarge(f64),
    #[error("invalid-parameter: {0}")]
    InvalidParameter(String),
    #[error("s-below-threshold: s = {s} < 4T/|M0| = {threshold}")]
    SBelowThreshold { s: f64, threshold: f64 },
    #[error("inner-solve-divergence: fixed-point inner solve did not reach {tol:e} in {iterations} iterations (residual {residual:e})")]
    InnerSolveDivergence { iterations: usize, residual: f64, tol: f64 },
    #[error("mismatched-grids: {0}")]
    MismatchedGrids(String),
    #[error("nonlinear-step-divergence: lagged Picard step {step} stalled at increment {increment:e}")]
    NonlinearStepDivergence { step: usize, increment: f64 },
    #[error("cg-stall: relative residual {residual:e} after {iterations} iterations")]
    CgStall {
        iterations: usize,
        residual: f64,
        last: Box<crate::hum::ControlResult>,
    },
    #[error("prox-stall: backtracking exhausted at iteration {iterations}")]
    ProxStall {
        iterations: usize,
        last: Box<crate::hum::ControlResult>,
    },
    #[error("degenerate-psi: denominator {0:e} underflows")]
    DegeneratePsi(f64),
    #[error("nonlinearity-eval-failure: {0}")]
    NonlinearityEvalFailure(String),
    #[error("declared-bound-violated: sampled {sampled:e} > declared M_F {declared:e}")]
    DeclaredBoundViolated { sampled: f64, declared: f64 },
    #[error("picard-divergence: increment grew for {0} consecutive iterations")]
    PicardDivergence(usize, Box<crate::semilinear::SemilinearResult>),
    #[error("maxIter-exceeded: Picard stopped after {0} iterations without meeting the tolerance")]
    MaxIterExceeded(usize, Box<crate::semilinear::SemilinearResult>),
}

pub type Result<T> = std::result::Result<T, Error>;
