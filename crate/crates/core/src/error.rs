use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid hyperparameters, architecture or experiment setup.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid label distribution: {0}")]
    Distribution(String),
    /// A caller-side precondition that should be unreachable in normal use.
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("partition failed: {0}")]
    Partition(String),
    #[error("client {0} has an empty shard")]
    EmptyShard(usize),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}
