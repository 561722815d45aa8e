use thiserror::Error;

pub type Result<T> = std::result::Result<T, MteError>;

/// Every failure the estimators can report.
#[derive(Debug, Error)]
pub enum MteError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("column not found: {0}")]
    ColumnNotFound(String),

    #[error("non-binary treatment: row {row} has value {value:?}")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("degenerate bandwidth: {0}")]
    DegenerateBandwidth(String),

    #[error("no local data: {0}")]
    NoLocalData(String),

    #[error("trimming empties treatment arm {arm}")]
    EmptyArm { arm: u8 },

    #[error("collinear covariates after differencing: {0}")]
    CollinearDifferences(String),

    #[error("bandwidth too small: all pair weights are zero for {0}")]
    BandwidthTooSmall(String),

    #[error("P·X collinear with X (insufficient propensity variation)")]
    LivCollinear,

    #[error("rank deficient design, collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("singular local-linear system at p = {p}")]
    SingularLocalFit { p: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate score: {0}")]
    DegenerateScore(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bootstrap failed: {failed} of {total} replications failed (limit 20%)")]
    BootstrapFailed { failed: usize, total: usize },
}

impl MteError {
    /// Pipeline stage that raised the error, used for CLI diagnostics.
    pub fn module(&self) -> &'static str {
        use MteError::*;
        match self {
            Io(_) | Csv(_) | Json(_) | ColumnNotFound(_) | NonBinaryTreatment { .. }
            | EmptySample(_) | InvalidSample(_) => "data-model",
            Config(_) => "cli",
            DegenerateBandwidth(_) => "smoothing",
            NoLocalData(_) | EmptyArm { .. } | DegenerateScore(_) => "propensity",
            CollinearDifferences(_) | BandwidthTooSmall(_) | SingularLocalFit { .. }
            | RankDeficient(_) => "separate-estimation",
            LivCollinear => "liv-estimation",
            GridMismatch(_) | InvalidArgument(_) => "effects",
            BootstrapFailed { .. } => "inference",
        }
    }

    pub fn hint(&self) -> &'static str {
        use MteError::*;
        match self {
            ColumnNotFound(_) => "check the column mapping against the CSV header",
            NonBinaryTreatment { .. } => "recode the treatment column to 0/1 or set treated/untreated labels",
            DegenerateBandwidth(_) => "a covariate or score has no spread; drop it or fix the bandwidth",
            NoLocalData(_) => "increase the first-step bandwidth or the minimum cell size",
            EmptyArm { .. } => "reduce the trimming percentages",
            CollinearDifferences(_) | RankDeficient(_) => {
                "remove covariates that are constant or collinear within a treatment arm"
            }
            BandwidthTooSmall(_) => "increase the second-step bandwidth",
            LivCollinear => "the propensity score needs more variation for the LIV procedure",
            SingularLocalFit { .. } => "increase the local-linear bandwidth",
            BootstrapFailed { .. } => "inspect the logged replication failures; larger bandwidths usually help",
            _ => "see the message above",
        }
    }

    /// Process exit code for this error: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        use MteError::*;
        match self {
            Config(_) | ColumnNotFound(_) | NonBinaryTreatment { .. } | Io(_) | Csv(_)
            | Json(_) | InvalidArgument(_) => 2,
            _ => 3,
        }
    }
}
