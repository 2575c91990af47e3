use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// The link failed validation; the payload lists every error diagnostic.
    #[error("invalid link: {}", .0.join("; "))]
    InvalidLink(Vec<String>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("SRS solver diverged in span {span} at z = {z:.3} m: {reason}")]
    SolverDivergence { span: usize, z: f64, reason: String },

    #[error("degenerate fit geometry (condition number {condition:.3e})")]
    DegenerateFit { condition: f64 },

    #[error("fit failed for span {span}, channel {channel}: {reason}")]
    FitFailed {
        span: usize,
        channel: usize,
        reason: String,
    },

    #[error("dispersion singularity: |beta2_eff| = {beta2_eff:.3e} s^2/m")]
    DispersionSingularity { beta2_eff: f64 },

    #[error("span {span}, interferer {interferer}: {source}")]
    Contribution {
        span: usize,
        interferer: usize,
        source: Box<Error>,
    },

    #[error("invalid correction factor {name} = {value}")]
    InvalidCorrection { name: &'static str, value: f64 },

    #[error("quadrature did not converge on island {island}")]
    QuadratureNonConvergence { island: String },

    #[error("oracle refused: {island_spans} island-spans exceeds the guard of {limit}")]
    OracleGuard { island_spans: usize, limit: usize },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("{stage} stage: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    /// True for failures of the numerical stages (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::InvalidLink(_)
            | Error::InvalidInput(_)
            | Error::InvalidCorrection { .. }
            | Error::MissingArtifact(_) => false,
            Error::Contribution { source, .. } | Error::Stage { source, .. } => source.is_numeric(),
            _ => true,
        }
    }
}
