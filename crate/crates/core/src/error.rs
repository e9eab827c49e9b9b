use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants split into two families that the CLI maps to distinct exit
/// codes: input/validation problems and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Node indices are zero-based; the message shows ids (index + 1).
    #[error("communication graph is disconnected; components: {}", format_components(.components))]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("removing link {}-{} disconnects the communication graph", .0 + 1, .1 + 1)]
    CutDisconnects(usize, usize),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("{path}:{line}: {message}")]
    Data {
        path: String,
        line: u64,
        message: String,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("forecast value {z_f} lies outside the support of the mixture")]
    OutOfSupport { z_f: f64 },

    #[error("data point {index} has zero likelihood under every component")]
    ZeroLikelihood { index: usize },

    #[error("component {component} has non-positive posterior degrees of freedom ({dof})")]
    InvalidPosterior { component: usize, dof: f64 },

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("consensus did not converge after {iterations} rounds (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("log-posterior decreased from {previous} to {current} at iteration {iteration}")]
    NonMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    /// `node` is an index; the message shows the id.
    #[error("node {} at outer iteration {iteration}: {source}", .node + 1)]
    AtNode {
        node: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("outer iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bin {bin}: {source}")]
    AtBin {
        bin: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::OutOfSupport { .. }
            | Error::ZeroLikelihood { .. }
            | Error::InvalidPosterior { .. }
            | Error::Degenerate(_)
            | Error::NonConvergence { .. }
            | Error::NonMonotone { .. } => true,
            Error::AtNode { source, .. }
            | Error::AtIteration { source, .. }
            | Error::AtBin { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_node(self, node: usize, iteration: usize) -> Error {
        Error::AtNode {
            node,
            iteration,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

fn format_components(components: &[Vec<usize>]) -> String {
    components
        .iter()
        .map(|c| {
            let ids: Vec<String> = c.iter().map(|i| (i + 1).to_string()).collect();
            format!("{{{}}}", ids.join(", "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}
