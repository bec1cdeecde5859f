use std::io;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("incompatible spec: checkpoint fingerprint {found} does not match {expected}")]
    IncompatibleSpec { expected: String, found: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing traces: backward needs a capture-enabled forward pass")]
    MissingTraces,
    #[error("missing gradient for parameter `{0}`")]
    MissingGradients(String),
    #[error("zero standard deviation in channel {0}")]
    ZeroStd(usize),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
