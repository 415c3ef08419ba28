use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("singular matrix: pivot {index} has magnitude {magnitude:e}")]
    SingularMatrix { index: usize, magnitude: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("syntax error at line {line}, column {column}: expected {}", expected.join(" | "))]
    Syntax {
        line: usize,
        column: usize,
        expected: Vec<String>,
    },

    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),

    #[error("degree overflow: forms of degree {degree} do not exist on a {dim}-dimensional chart (max degree 4)")]
    DegreeOverflow { degree: usize, dim: usize },

    #[error("degree underflow: interior product needs a form of degree at least 1")]
    DegreeUnderflow,

    #[error("point {0:?} maps outside the target domain")]
    TargetInadmissible(Vec<f64>),

    #[error("point {0:?} is not admissible in the chart")]
    InadmissiblePoint(Vec<f64>),

    #[error("chart shape mismatch: {0}")]
    ChartShapeMismatch(String),

    #[error("automatic differentiation nested deeper than the supported tower")]
    DepthExceeded,

    #[error("chart error: {0}")]
    Chart(String),

    #[error("scale factor beta must be nonzero")]
    ZeroBeta,

    #[error("1 - theta(X) = {value:e} is too close to zero")]
    DenominatorNearZero { value: f64 },

    #[error("Hamiltonian vanishes on too many samples to estimate the degree ({usable} usable, {required} required)")]
    IndeterminateDegree { usable: usize, required: usize },

    #[error("integration step failure at t = {t}: step size {step:e} below minimum")]
    StepFailure { t: f64, step: f64 },

    #[error("initial point {0:?} is not admissible")]
    InadmissibleStart(Vec<f64>),

    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),

    #[error("residuals {0:?} reached the rounding floor; no convergence order can be estimated")]
    NoiseFloor(Vec<f64>),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("scenario schema error: {0}")]
    Schema(String),

    #[error("unknown check `{0}`")]
    UnknownCheck(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
