use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("point ({u}, {v}) lies outside the chart domain")]
    PointOutsideDomain { u: f64, v: f64 },

    #[error("degenerate immersion at ({u}, {v}): smallest singular value {sigma_min:e} below rank tolerance")]
    DegenerateImmersion { u: f64, v: f64, sigma_min: f64 },

    #[error("unknown surface `{0}`")]
    UnknownSurface(String),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("invalid chart domain: {0}")]
    InvalidDomain(String),

    #[error("normal-frame gauge continuation failed at grid point ({i}, {j}): projected rank dropped (min overlap eigenvalue {min_eig:e})")]
    GaugeContinuationFailure { i: usize, j: usize, min_eig: f64 },

    #[error("loop leaves the valid region of the connection at grid point ({i}, {j})")]
    LoopLeavesDomain { i: usize, j: usize },

    #[error("section support touches the boundary margin at grid point ({i}, {j})")]
    SupportTouchesBoundary { i: usize, j: usize },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("eigensolver did not converge in {iterations} iterations (best estimate {estimate}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    #[error("matrix is not positive definite at pivot {0}")]
    NotPositiveDefinite(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        source: Box<LabError>,
    },
}

impl LabError {
    /// Tags an error with the pipeline step that raised it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        LabError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
