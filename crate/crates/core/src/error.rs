use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeoError {
    #[error("gradient norm {norm:.3e} at or below tolerance {tol:.1e}")]
    SingularGradient { norm: f64, tol: f64 },
    #[error("point is off the surface: |Q| = {residual:.3e} > {tol:.1e}")]
    OffSurface { residual: f64, tol: f64 },
    #[error("vector is not tangent: |<u, grad Q>| = {residual:.3e}")]
    NotTangent { residual: f64 },
    #[error("no surface points found after {attempts} projection attempts")]
    NoSurfacePointsFound { attempts: usize },
    #[error("projection onto the surface diverged after {iters} iterations (|Q| = {residual:.3e})")]
    ProjectionDiverged { iters: usize, residual: f64 },
    #[error("step size underflow at t = {t:.6} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("segment self-intersects within the tube: samples at t = {t1:.4} and t = {t2:.4} are {dist:.3e} apart")]
    SelfIntersectingTube { t1: f64, t2: f64, dist: f64 },
    #[error("chart inversion failed (residual {residual:.3e})")]
    ChartInversionFailed { residual: f64 },
    #[error("fundamental matrix is singular at t = {t:.4}")]
    SingularU { t: f64 },
    #[error("normal curvature {kappa:.3e} vanishes on the bump support near t = {t:.4}")]
    KappaVanishesOnSupport { t: f64, kappa: f64 },
    #[error("no return to the section within t_max = {t_max}")]
    NoReturnWithinTmax { t_max: f64 },
    #[error("Newton iteration diverged (residual {residual:.3e} after {iters} iterations)")]
    NewtonDiverged { iters: usize, residual: f64 },
    #[error("matrix is not symplectic: |M^T J M - J| = {defect:.3e}")]
    NotSymplectic { defect: f64 },
    #[error("curve collapsed to a point (length {length:.3e})")]
    CollapseToPoint { length: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tuple has length {got}, polynomial space has dimension {expected}")]
    WrongTupleLength { expected: usize, got: usize },
    #[error("vectors u + eps* v do not form a basis (|det| = {det:.3e})")]
    PreconditionBasisFails { det: f64 },
    #[error("polynomial has degree {got}, expected homogeneous degree {expected}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error("surface is not strictly convex: kappa = {kappa:.3e} at the witness")]
    NotConvex { kappa: f64 },
    #[error("map evaluation failed: {0}")]
    MapEvaluationFailed(String),
    #[error("arclength budget exceeded ({points} points)")]
    ArclengthBudgetExceeded { points: usize },
    #[error("section point lies outside the chart radius ({radius:.3e} > {max:.3e})")]
    OutsideChartRadius { radius: f64, max: f64 },
    #[error("parse error at column {col}: {msg}")]
    Parse { col: usize, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, GeoError>;
