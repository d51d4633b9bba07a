use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("count overflow while aggregating cell ({row}, {col}) month {month_id}")]
    CountOverflow { row: usize, col: usize, month_id: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("month range: {0}")]
    MonthRange(String),
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("non-finite loss on head {head} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss { head: &'static str, epoch: usize, batch: usize },
    #[error("non-finite forecast output at step {step}")]
    NonFiniteForecast { step: usize },
    #[error("empty mask: no cells selected for scoring")]
    EmptyMask,
}
