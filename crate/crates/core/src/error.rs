use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsepError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameters outside the fan region: a*b = {ab} (requires a*b < 1)")]
    OutsideFan { ab: f64 },

    #[error("truncation insufficient: certified error {bound:e} exceeds tolerance {tol:e}")]
    Truncation { bound: f64, tol: f64 },

    #[error("resource budget exceeded: {needed} states requested, budget {budget}")]
    Resource { needed: u128, budget: u128 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty path set: {0}")]
    EmptySet(String),

    #[error("boundary data not ordered: {0}")]
    Unordered(String),

    #[error("events must be both increasing or both decreasing")]
    MixedMonotonicity,

    #[error("window acceptance {acceptance:e} below the rejection floor")]
    RejectionStarvation { acceptance: f64 },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, AsepError>;
