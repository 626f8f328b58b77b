use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty payload: nothing to transmit")]
    EmptyPayload,

    #[error("channel grid does not fit the mirror array along {dimension}: needs {needed} mirrors, array has {available}")]
    LayoutDoesNotFit {
        dimension: &'static str,
        needed: u64,
        available: u32,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("symbol alphabet must have at least 2 symbols, got {0}")]
    InvalidSymbolCount(u32),

    #[error("bitstreams do not match layout channels (missing: {missing:?}, extra/duplicate: {extra:?})")]
    StreamMismatch { missing: Vec<u32>, extra: Vec<u32> },

    #[error("channel {channel}: stream symbol rate {found} Hz does not match rate class {expected} Hz")]
    RateMismatch {
        channel: u32,
        expected: f64,
        found: f64,
    },

    #[error("projection transform is not invertible")]
    NonInvertible,

    #[error("projection scale too small / channels merge: channels {a} and {b} touch on the pixel plane")]
    ChannelsMerge { a: u32, b: u32 },

    #[error("channel {0} covers no camera pixel")]
    ChannelNotVisible(u32),

    #[error("log intensity undefined for illuminance {lux} with zero dark current")]
    LogUndefined { lux: f64 },

    #[error("no channels detected")]
    NoChannelsDetected,

    #[error("ambiguous mapping: channel index {index} decoded at boxes {first} and {second}")]
    AmbiguousMapping {
        index: u32,
        first: usize,
        second: usize,
    },

    #[error("event sequence does not alternate polarity: dedup required")]
    DedupRequired,

    #[error("{path}: line {line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
