use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular: no acceptable pivot for row {row}")]
    SingularMatrix { row: usize },
    #[error("system with {n} unknowns exceeds the cap of {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("newton iteration did not converge in {iterations} steps (residual {residual:e})")]
    NewtonNotConverged { iterations: usize, residual: f64 },
    #[error("non-finite residual at newton iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutsideMesh { x: f64, y: f64 },
    #[error("incompatible systems: {0}")]
    Incompatible(String),
    #[error("cell {cell} has a non-positive jacobian determinant")]
    InvertedCell { cell: usize },
    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange { what: &'static str, index: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
