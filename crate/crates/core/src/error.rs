use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("candidate set is empty")]
    EmptySet,
    #[error("candidate {candidate_id}: embedding has dimension {found}, expected {expected}")]
    DimensionMismatch {
        candidate_id: usize,
        expected: usize,
        found: usize,
    },
    #[error("candidate {candidate_id}: missing reward `{name}`")]
    MissingReward { candidate_id: usize, name: String },
    #[error("candidate {candidate_id}: candidate set has no rewards")]
    NoRewards { candidate_id: usize },
    #[error("candidate {candidate_id}: non-finite value in {field}")]
    NonFinite { candidate_id: usize, field: String },
    #[error("candidate {candidate_id}: log-probability {value} is positive")]
    PositiveLogprob { candidate_id: usize, value: f64 },
    #[error("candidate at position {position} has id {found}, expected {position}")]
    CandidateIdOrder { position: usize, found: usize },
    #[error("zero-norm embedding{}", .candidate_id.map(|id| format!(" (candidate {id})")).unwrap_or_default())]
    ZeroVector { candidate_id: Option<usize> },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("utility matrix has {found} rows but the candidate set has {expected} candidates")]
    MatrixShapeMismatch { expected: usize, found: usize },
    #[error("beta must be finite and non-negative (or inf), got {0}")]
    NegativeBeta(f64),
    #[error("candidate {candidate_id}: missing log-probability")]
    MissingLogprob { candidate_id: usize },
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("support size {n} exceeds the limit of {max}")]
    SupportTooLarge { n: usize, max: usize },
    #[error("index {index} out of range for {n} candidates")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("MBR/WD equivalence violated: {0}")]
    PropositionViolation(String),
    #[error("development set is empty")]
    EmptyDevSet,
    #[error("subsample size {size} exceeds development set size {dev}")]
    SizeExceedsDev { size: usize, dev: usize },
    #[error("N = {n} exceeds the {available} candidates available")]
    NExceedsCandidates { n: usize, available: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("instruction `{instruction_id}`: {source}")]
    Validation {
        instruction_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
