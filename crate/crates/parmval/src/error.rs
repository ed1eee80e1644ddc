use thiserror::Error;

/// Errors surfaced by the library. The CLI maps the operational failures
/// (non-convergence, resonance, proof impossible, unsupported degree) to
/// distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index set too large: {0}")]
    SizeOverflow(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("scaling entries must be positive (got {0})")]
    NonPositiveScaling(f64),
    #[error("iteration did not converge: {0}")]
    NonConvergence(String),
    #[error("singular Jacobian in Newton iteration")]
    SingularJacobian,
    #[error("near-singular homological block at order {order:?} (|det| = {det:.3e})")]
    SingularHomological { order: Vec<u32>, det: f64 },
    #[error("finite block of the approximate inverse is singular")]
    SingularBlock,
    #[error("defective or repeated eigenvalue detected (residual {0:.3e})")]
    DefectiveMatrix(f64),
    #[error("equilibrium is not hyperbolic enough: |Re lambda| = {0:.3e}")]
    NonHyperbolic(f64),
    #[error("resonance detected: alpha = {alpha:?} against eigenvalue {j} (|alpha.lambda - lambda_j| = {gap:.3e})")]
    ResonanceDetected { alpha: Vec<u32>, j: usize, gap: f64 },
    #[error("contraction bounds are only derived for fields of degree <= 2 (got degree {0}); use defect mode")]
    UnsupportedDegree(usize),
    #[error("no scaling satisfies the proof threshold; first failing bound: {0}")]
    ProofImpossible(String),
    #[error("defect level set is empty: defect {defect:.3e} >= {eps_max:.3e} even as the scaling vanishes")]
    EmptyLevelSet { defect: f64, eps_max: f64 },
    #[error("conjugate symmetry violated: imaginary residue {0:.3e}")]
    SymmetryViolated(f64),
    #[error("division by an interval containing zero")]
    DivisionByZeroInterval,
    #[error("square root of an interval with negative lower bound")]
    NegativeSqrt,
    #[error("problem file error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
