use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("matrix is not symmetric positive definite (eigenvalue {eigenvalue})")]
    MatrixDomain { eigenvalue: f64 },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("chart window: {0}")]
    Window(String),
    #[error("Newton inversion did not converge after {iterations} iterations (residual {residual:e})")]
    Inversion { iterations: usize, residual: f64 },
    #[error("singular point: {0}")]
    Singular(String),
    #[error("branch tracking failed: {0}")]
    Branch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature budget exhausted: estimate {estimate} with error {error:e} > tol {tol:e}")]
    Quadrature { estimate: f64, error: f64, tol: f64 },
    #[error("fit: {0}")]
    Fit(String),
    #[error("parameter: {0}")]
    Parameter(String),
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error("linear solver: {0}")]
    Solver(String),
    #[error("point {0:?} is outside the mesh")]
    Locate([f64; 2]),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
