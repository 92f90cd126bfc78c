use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("timestamps not monotonic at index {index}: {prev} followed by {next}")]
    NonMonotonic { index: usize, prev: f64, next: f64 },

    #[error("degenerate packet: all timestamps equal {0}")]
    DegeneratePacket(f64),

    #[error("undistortion did not converge at pixel ({x}, {y})")]
    Undistortion { x: u32, y: u32 },

    #[error("no event could be mapped onto the canvas")]
    NoMappableEvents,

    #[error("prior not identifiable: {0}")]
    PriorNotIdentifiable(String),

    #[error("non-finite loss at parameters {0:?}")]
    NonFiniteLoss(Vec<f64>),

    #[error("query time {t} outside ground-truth range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("ground truth does not cover estimates at t = {0:?}")]
    Coverage(Vec<f64>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("simulated motion moves every scene point off the sensor")]
    NoEventsOnSensor,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
