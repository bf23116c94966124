use thiserror::Error;

/// Errors surfaced by the reconstruction library.
///
/// Numerical failures carry enough context (stage names, offending nodes,
/// residuals) for the caller to report them without re-running the stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("grid too small: need nx >= 5 and ny >= 5, got {nx} x {ny}")]
    GridTooSmall { nx: usize, ny: usize },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("point ({0}, {1}) outside the grid rectangle")]
    OutOfRange(f64, f64),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failed to converge after {iterations} iterations (residual {residual:.3e}, tolerance {tol:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("singular linear system: 0 appears to be a discrete eigenvalue of the operator; try a different potential extension or grid")]
    EigenvalueCollision,

    #[error("Born series diverges (contraction ratio {ratio:.3} >= 1); increase |kappa| or reduce the potential")]
    BornDivergence { ratio: f64 },

    #[error("vector-field degeneracy at {count} node(s), first few: {nodes:?}; characteristics stall there")]
    DegenerateField { count: usize, nodes: Vec<(usize, usize)> },

    #[error("{count} characteristic(s) failed to exit the domain ({stalled} stalled, {timed_out} exceeded t_max), first few nodes: {nodes:?}")]
    NonExitingPaths {
        count: usize,
        stalled: usize,
        timed_out: usize,
        nodes: Vec<(usize, usize)>,
    },

    #[error("coefficient matrix condition number {cond:.3e} exceeds {max:.3e} at node ({i}, {j}): vector fields do not form a basis there")]
    BasisDegeneracy { i: usize, j: usize, cond: f64, max: f64 },

    #[error("|u| = {min_abs:.3e} below the floor {floor:.3e}: solution too close to vanishing for potential recovery")]
    VanishingSolution { min_abs: f64, floor: f64 },

    #[error("|g| = {min_abs:.3e} below the floor {floor:.3e} on a boundary node: division hazard")]
    DivisionHazard { min_abs: f64, floor: f64 },

    #[error("envelope overflow: |kappa . (x - x_c)| = {span:.1} exceeds {max:.1}; recenter or reduce |kappa|")]
    EnvelopeOverflow { span: f64, max: f64 },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
