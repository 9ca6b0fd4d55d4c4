use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("matrix is zero; its normalized numerical range is empty and it has no phase")]
    ZeroMatrix,

    #[error("matrix is not sectorial")]
    NotSectorial,

    #[error("matrix is singular")]
    Singular,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("frequency response evaluated within {distance:.3e} of a pole at s = {pole}")]
    PoleEvaluation { pole: String, distance: f64 },

    #[error("leading coefficient matrix at ω = {omega} is rank deficient")]
    RankDeficientLeadingCoeff { omega: f64 },

    #[error("pole and zero coincide on the imaginary axis at ω = {omega}")]
    PoleZeroCollision { omega: f64 },

    #[error("system is not semi-stable: pole at {0}")]
    NotSemiStable(String),

    #[error("system does not have full normal rank")]
    NotFullNormalRank,

    #[error("indentation radius {epsilon} is too large for the pole/zero spacing {gap}")]
    EpsilonTooLarge { epsilon: f64, gap: f64 },

    #[error("phase center jumps by {jump:.3} rad near s = {at}; phase is not single-valued between samples")]
    ContinuationJump { at: String, jump: f64 },

    #[error("algebraic loop: I + D_m···D_1 is singular")]
    AlgebraicLoop,

    #[error("unstable pole-zero cancellation in the loop")]
    CancellationPresent,

    #[error("subsystem {index} has poles on the imaginary axis; the gain condition needs stable subsystems")]
    SemiStableNotAllowed { index: usize },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("combined pole/zero order {order} at ω = {omega} exceeds 2")]
    PoleOrderTooHigh { omega: f64, order: usize },

    #[error("angular scaling profile of subsystem {index} jumps by {jump:.3} rad at ω = {omega}")]
    ProfileDiscontinuity { index: usize, omega: f64, jump: f64 },

    #[error("an eigenlocus passes within {distance:.3e} of the critical point -1")]
    CriticalPointOnLocus { distance: f64 },

    #[error("rejection sampling exhausted after {attempts} attempts")]
    ExhaustedSampling { attempts: usize },

    #[error("this certificate needs every subsystem to be known")]
    UncertainSubsystem,
}

pub type Result<T> = std::result::Result<T, PhaseError>;
