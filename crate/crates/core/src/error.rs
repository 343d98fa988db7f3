use thiserror::Error;

#[derive(Debug, Error)]
pub enum LodError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("coefficient value {value} at cell {cell} is not positive")]
    NonPositiveCoefficient { cell: usize, value: f64 },
    #[error("value {value} outside the admissible range [{lo}, {hi}] at cell {cell}")]
    OutOfRange {
        cell: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("matrix is not positive definite (pivot {pivot}: {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("singular KKT system for element {element}, dof {dof}: {detail}")]
    SingularKkt {
        element: usize,
        dof: usize,
        detail: String,
    },
    #[error("self-adaptive weight {index} is not positive ({value:e})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("non-finite loss at epoch {epoch} in the {term} term (max |alpha| = {max_alpha:e})")]
    NonFiniteLoss {
        epoch: usize,
        term: &'static str,
        max_alpha: f64,
    },
    #[error("energy loss {energy:e} fell below its lower bound {bound:e} at epoch {epoch}")]
    LowerBoundViolated {
        epoch: usize,
        energy: f64,
        bound: f64,
    },
    #[error("missing corrector for element {element}, dof {dof}")]
    MissingCorrector { element: usize, dof: usize },
    #[error("missing trained network for pairs {0:?}")]
    MissingNetwork(Vec<(usize, usize)>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = LodError> = std::result::Result<T, E>;
