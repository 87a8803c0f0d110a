use alloc::string::String;
use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {ctx}: left is {a_rows}x{a_cols}, right is {b_rows}x{b_cols}")]
    ShapeMismatch {
        ctx: &'static str,
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },

    #[error("data length {len} does not match a {rows}x{cols} matrix")]
    BadLength { rows: usize, cols: usize, len: usize },

    #[error("temperature must be positive and finite, got {tau}")]
    BadTemperature { tau: f64 },

    #[error("cannot orthonormalize a {rows}x{cols} matrix: need rows >= cols >= 1")]
    NotTall { rows: usize, cols: usize },

    #[error("rank-deficient input: column {col} is numerically dependent on earlier columns")]
    RankDeficient { col: usize },

    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("token stream too short: have {len} tokens, need at least {need}")]
    StreamTooShort { len: usize, need: usize },

    #[error("slice [{offset}, {offset}+{len}) out of range for a stream of {stream_len} tokens")]
    SliceOutOfRange {
        offset: usize,
        len: usize,
        stream_len: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite at epoch {epoch}, window {window}")]
    NonFiniteLoss { epoch: usize, window: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
