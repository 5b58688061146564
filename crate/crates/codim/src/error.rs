use thiserror::Error;

/// Errors produced across the simulation pipeline.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),

    #[error("degenerate primitive: {0}")]
    DegeneratePrimitive(String),

    #[error("primitives share a vertex and form no contact stencil")]
    SharedVertexPair,

    #[error("infeasible distance {distance} (bound {bound}) for pair {pair}")]
    InfeasibleDistance {
        distance: f64,
        bound: f64,
        pair: String,
    },

    #[error("reference mesh self-intersects intrinsically at pair {0}; cannot filter")]
    IntrinsicSelfIntersection(String),

    #[error("core-penetrating input: pair {pair} starts at distance {distance} <= eta {eta}")]
    CorePenetratingInput {
        pair: String,
        distance: f64,
        eta: f64,
    },

    #[error("CCD query started with non-positive gap {0}")]
    InfeasibleStart(f64),

    #[error("singular bend configuration at vertex {0} (antiparallel edges)")]
    SingularBend(usize),

    #[error("non-manifold edge ({0}, {1})")]
    NonManifoldEdge(usize, usize),

    #[error("inverted or degenerate element at triangle {0}")]
    InvertedElement(usize),

    #[error("linear solver failed: {0}")]
    SolverFailure(String),

    #[error("line search failed: step underflow at alpha {0}")]
    LineSearchFailure(f64),

    #[error("equilibrium not reached within {steps} steps (residual {residual})")]
    NonConvergence { steps: usize, residual: f64 },

    #[error("conflicting boundary prescriptions on vertex {0}")]
    ConflictingPrescription(usize),

    #[error("scenario config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
