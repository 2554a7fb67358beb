//! CLI error type: every failure exits nonzero with one machine-parsable
//! line on stderr, `error[Category] message`.

use infkit_core::compress::CompressError;
use infkit_core::eval::EvalError;
use infkit_core::gradstore::GradStoreError;
use infkit_core::influence::InfluenceError;
use infkit_core::linalg::LinalgError;
use infkit_core::theory::TheoryError;
use infkit_core::trainer::TrainerError;

#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("Config", message)
    }

    pub fn stderr_line(&self) -> String {
        format!("error[{}] {}", self.category, self.message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.stderr_line())
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("Io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("Json", e.to_string())
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        let category = match &e {
            LinalgError::NotSpd { .. } => "NotSPD",
            LinalgError::NotSymmetric => "NotSymmetric",
            LinalgError::DimensionMismatch { .. } => "DimensionMismatch",
            LinalgError::ConvergenceFailure => "ConvergenceFailure",
            LinalgError::NotPowerOfTwo { .. } => "NotPowerOfTwo",
            LinalgError::NonFinite => "NonFinite",
        };
        Self::new(category, e.to_string())
    }
}

impl From<GradStoreError> for CliError {
    fn from(e: GradStoreError) -> Self {
        let category = match &e {
            GradStoreError::BadMagic => "BadMagic",
            GradStoreError::UnsupportedVersion(_) => "UnsupportedVersion",
            GradStoreError::TruncatedFile(_) => "TruncatedFile",
            GradStoreError::ChecksumMismatch { .. } => "ChecksumMismatch",
            GradStoreError::NoValidationExamples => "NoValidationExamples",
            GradStoreError::WidthMismatch { .. } => "WidthMismatch",
            GradStoreError::MissingMeta(_) => "MissingMeta",
            GradStoreError::NonFiniteEntry(_) => "NonFiniteEntry",
            GradStoreError::BadLayerSpec(_) | GradStoreError::BadDataset(_) => "BadDataset",
            GradStoreError::BadField { .. } => "BadField",
            GradStoreError::Io(_) => "Io",
            GradStoreError::Csv(_) => "Csv",
        };
        Self::new(category, e.to_string())
    }
}

impl From<CompressError> for CliError {
    fn from(e: CompressError) -> Self {
        let category = match &e {
            CompressError::BudgetTooLarge { .. } => "BudgetTooLarge",
            CompressError::BudgetTooSmall { .. } => "BudgetTooSmall",
            CompressError::PcaNeedsGradients => "PcaNeedsGradients",
            CompressError::LograNeedsLinearLayers(_) => "LograNeedsLinearLayers",
            CompressError::PlanMismatch(_) => "PlanMismatch",
            CompressError::Linalg(inner) => return Self::from(inner.clone()),
            CompressError::Grad(_) => "BadDataset",
        };
        Self::new(category, e.to_string())
    }
}

impl From<InfluenceError> for CliError {
    fn from(e: InfluenceError) -> Self {
        let category = match &e {
            InfluenceError::AllZeroGradients(_) => "AllZeroGradients",
            InfluenceError::InfeasibleDense { .. } => "InfeasibleDense",
            InfluenceError::NonPositiveDamping(_) | InfluenceError::DampingArity { .. } => {
                "BadDamping"
            }
            InfluenceError::NoTrainExamples => "NoTrainExamples",
            InfluenceError::QueryWidth { .. } => "DimensionMismatch",
            InfluenceError::Linalg(inner) => return Self::from(inner.clone()),
            InfluenceError::Grad(_) => "BadDataset",
        };
        Self::new(category, e.to_string())
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        let category = match &e {
            TrainerError::NotBinary => "NotBinary",
            TrainerError::DivergedLoss { .. } => "DivergedLoss",
            TrainerError::EmptyTrainSet => "EmptyTrainSet",
            TrainerError::BadTask(_) => "BadTask",
            TrainerError::ShapeMismatch(_) => "DimensionMismatch",
            TrainerError::Grad(_) => "BadDataset",
        };
        Self::new(category, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::DegenerateClasses => Self::new("DegenerateClasses", e.to_string()),
            EvalError::FlagArity { .. } => Self::new("DimensionMismatch", e.to_string()),
            EvalError::BadConfig(_) => Self::new("Config", e.to_string()),
            EvalError::Trainer(inner) => Self::from(inner),
            EvalError::Influence(inner) => Self::from(inner),
            EvalError::Compress(inner) => Self::from(inner),
            EvalError::Grad(inner) => Self::from(inner),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        let category = match &e {
            TheoryError::SingularIntermediate { .. } => "SingularIntermediate",
            TheoryError::SingularInput => "SingularInput",
            TheoryError::Linalg(inner) => return Self::from(inner.clone()),
            TheoryError::Compress(_) => "PlanMismatch",
        };
        Self::new(category, e.to_string())
    }
}
