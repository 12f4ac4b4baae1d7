use std::path::PathBuf;

/// Every failure the laboratory can report.
#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular metric at node {node}")]
    SingularMetric { node: usize },
    #[error("metric not positive definite at node {node} (smallest eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { node: usize, eigenvalue: f64 },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("CFL number {cfl} exceeds the stability limit {limit}")]
    Cfl { cfl: f64, limit: f64 },
    #[error("curvature blow-up: sup|Rm| = {value:.4e} exceeds {limit} at t = {time:.6}")]
    BlowUp { value: f64, limit: f64, time: f64 },
    #[error("probe lag {lag:.4e} exceeds the wrap guard {limit:.4e}")]
    ProbeHorizon { lag: f64, limit: f64 },
    #[error("empty parabolic cylinder: r^2 = {r2:.4e} is below the first sample time {first:.4e}")]
    EmptyCylinder { r2: f64, first: f64 },
    #[error("degenerate pair: the two trajectories coincide in X_T")]
    DegeneratePair,
    #[error("Picard iteration did not converge in {iterations} iterations (last ratio {ratio:.4})")]
    NoConvergence { iterations: usize, ratio: f64 },
    #[error("iterate {iteration} left the delta-ball: |h|_X = {norm:.4e} > {delta:.4e}")]
    BallEscape { iteration: usize, norm: f64, delta: f64 },
    #[error("perturbed metric lost positive definiteness at t = {time:.6} (node {node})")]
    PerturbationTooLarge { time: f64, node: usize },
    #[error("flow-map Jacobian determinant {det:.4} at node {node}, t = {time:.6} left [0.1, 10]")]
    JacobianDegenerate { node: usize, time: f64, det: f64 },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<FlowError>,
    },
}

pub type Result<T> = std::result::Result<T, FlowError>;

impl FlowError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlowError::Io { path: path.into(), source }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        FlowError::Context { context: context.into(), source: Box::new(self) }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FlowError::NonFinite(what))
    }
}
