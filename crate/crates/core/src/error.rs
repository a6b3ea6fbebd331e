use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-invertible deformation (det = {0:e})")]
    NonInvertibleDeformation(f64),

    #[error("degenerate interface: S is singular in direction {0:?}")]
    DegenerateInterface([f64; 3]),

    #[error("rotation matrix is not orthogonal (|R^T R - I| = {0:e})")]
    NonOrthogonal(f64),

    #[error("network depth {0} out of range [1, 12]")]
    DepthOutOfRange(usize),

    #[error("two-phase assignment requires a phase-2 stiffness")]
    MissingPhase2,

    #[error("target stiffness has zero norm")]
    ZeroNormTarget,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("material point divergence: {0}")]
    MaterialPointDivergence(String),

    #[error("indeterminate network: interaction Jacobian is singular")]
    IndeterminateNetwork,

    #[error("Newton solver failed to converge at t = {time} after {bisections} bisections")]
    NewtonFailure { time: f64, bisections: usize },

    #[error("all orientation weights are zero")]
    ZeroWeights,

    #[error("ODF grids do not match")]
    GridMismatch,

    #[error("reference ODF has zero norm")]
    ZeroReference,

    #[error("rejection sampling exceeded {0} attempts")]
    RetryCapExceeded(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported {kind} version {found} (expected {expected})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Classifies the error for process exit codes: 3 for data problems,
    /// 4 for numerical failures.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonInvertibleDeformation(_)
                | Error::DegenerateInterface(_)
                | Error::Divergence { .. }
                | Error::MaterialPointDivergence(_)
                | Error::IndeterminateNetwork
                | Error::NewtonFailure { .. }
                | Error::RetryCapExceeded(_)
        )
    }
}
