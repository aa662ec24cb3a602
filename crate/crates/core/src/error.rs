//! Error type shared by all solver modules.

use crate::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("coarse element {element} is degenerate (measure {measure:e})")]
    DegenerateElement { element: usize, measure: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("point {point:?} lies outside the domain")]
    OutOfDomain { point: Point },

    #[error("non-positive Jacobian determinant {det:e} in micro-element {element}")]
    Geometry { element: usize, det: f64 },

    #[error("{solver} did not converge: {iterations} iterations, relative residual {residual:e}")]
    SolverFailure {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
