use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("generator matrix is singular (|det| = {det:e})")]
    SingularGenerators { det: f64 },

    #[error("potential coefficient at G = {g:?} lies beyond the coupling reach of n_cut = {n_cut}")]
    CoefficientOutsideCutoff { g: Vec<i32>, n_cut: usize },

    #[error("eigensolver residual {residual:e} exceeds tolerance {tol:e}")]
    EigenFailure { residual: f64, tol: f64 },

    #[error("gap {gap:e} at k = {k:?}, t = {t} does not exceed threshold {delta:e}")]
    GapClosed { k: Vec<f64>, t: f64, gap: f64, delta: f64 },

    #[error("projector jump {jump:.3} between nodes {a} and {b}; mesh too coarse")]
    ContinuityBreak { a: usize, b: usize, jump: f64 },

    #[error("curvature has imaginary residue {residual:e} at node {node}")]
    NonRealCurvature { node: usize, residual: f64 },

    #[error("transported frame lost rank at k-node {k_node}, t-node {t_node} (smallest singular value {sigma:e})")]
    RankDrop { k_node: usize, t_node: usize, sigma: f64 },

    #[error("holonomy logarithm jumps by {jump:.3} between neighbouring lines; bundle is not trivial over the k-torus")]
    NontrivialBundle { jump: f64 },

    #[error("link overlap |det| = {det:.3e} below 0.1 at node {node}, axis {axis}")]
    SingularOverlap { node: usize, axis: usize, det: f64 },

    #[error("frames do not come from the same transport (tokens {a:#x} and {b:#x})")]
    GaugeMismatch { a: u64, b: u64 },

    #[error("plaquette sum {value:.6} is {residue:.3} away from the nearest integer")]
    NonIntegral { value: f64, residue: f64 },

    #[error("time stencil at t-node {node} leaves the mesh; schedule is neither periodic nor flat at the endpoints")]
    StencilOutOfRange { node: usize },

    #[error("spectrum of the almost-projector is not split: eigenvalue {value:.4} at node {node}")]
    SpectrumNotSplit { node: usize, value: f64 },

    #[error("normalizer eigenvalue {value:.4} below 1/2 at node {node}")]
    SingularNormalizer { node: usize, value: f64 },

    #[error("time step {dt:e} exceeds c·ε = {limit:e}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("band {band} is not isolated and nondegenerate: gap {gap:e} at k = {k:?}, t = {t}")]
    BandDegenerate { band: usize, k: Vec<f64>, t: f64, gap: f64 },

    #[error("k-gauge jump: neighbour overlap {overlap:.3} below 0.9 at k-node {node}")]
    GaugeDiscontinuity { node: usize, overlap: f64 },

    #[error("k-mesh is not symmetric under k -> -k: {0}")]
    AsymmetricMesh(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}
