use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GsddError>;

#[derive(Debug, Error)]
pub enum GsddError {
    #[error("storage budget too small: {0}")]
    Budget(String),

    #[error("index out of range: {what} = {index}, bound {bound}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed data: {0}")]
    Format(String),

    /// A position sits on or beyond the frame after clipping, which the
    /// boundary term cannot evaluate.
    #[error("position {value} outside the open interval (-1, 1)")]
    Boundary { value: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image encoding: {0}")]
    Image(String),
}

pub(crate) fn check_index(what: &'static str, index: usize, bound: usize) -> Result<()> {
    if index < bound {
        Ok(())
    } else {
        Err(GsddError::OutOfRange { what, index, bound })
    }
}
