use thiserror::Error;

/// Which first-fundamental-form coefficient failed the isotropy test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsotropyDefect {
    /// `E = <z_u, z_u>` is not zero.
    E,
    /// `F = <z_u, z_v>` is not negative.
    F,
    /// `G = <z_v, z_v>` is not zero.
    G,
}

impl std::fmt::Display for IsotropyDefect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            IsotropyDefect::E => "E",
            IsotropyDefect::F => "F",
            IsotropyDefect::G => "G",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small along {axis}: {len} samples, stencil needs {required}")]
    GridTooSmall {
        axis: char,
        len: usize,
        required: usize,
    },

    #[error("invalid grid domain: {0}")]
    InvalidDomain(String),

    #[error("non-finite value in {what} at sample {index}")]
    NonFinite { what: String, index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("f must be positive; found {value} at ({i}, {j})")]
    NonPositiveMetric { i: usize, j: usize, value: f64 },

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("parametrization is not isotropic: {defect} = {value:e} at ({i}, {j})")]
    NotIsotropic {
        defect: IsotropyDefect,
        i: usize,
        j: usize,
        value: f64,
    },

    #[error("minimal point at ({i}, {j}): |H| = {nu:e}")]
    MinimalPoint { i: usize, j: usize, nu: f64 },

    #[error("ambiguous surface type: {field} is neither identically zero nor nowhere zero")]
    AmbiguousType { field: &'static str },

    #[error("mu1 vanishes while mu2 does not; swap the parameters (u <-> v) first")]
    SwapRequired,

    #[error("denominator {field} = {value:e} at ({i}, {j}) is below tolerance")]
    DivisionGuard {
        field: &'static str,
        i: usize,
        j: usize,
        value: f64,
    },

    #[error("surface type mismatch: {0}")]
    TypeMismatch(String),

    #[error("integration unstable at ({i}, {j}): frame component magnitude {magnitude:e}")]
    StepUnstable { i: usize, j: usize, magnitude: f64 },

    #[error("incompatible invariant data: {0}")]
    IncompatibleData(String),

    #[error("grid domains differ")]
    DomainMismatch,

    #[error("surface patch has no frame attached at the origin sample")]
    MissingFrames,

    #[error("probe infeasible: {condition} residual {residual:e} exceeds {threshold:e}")]
    ProbeInfeasible {
        condition: String,
        residual: f64,
        threshold: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
