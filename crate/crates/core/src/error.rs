use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters.
    #[error("config error: {0}")]
    Config(String),

    /// A required knowledge-base table has not been produced yet.
    #[error("layer dependency not yet computed: layer {layer} table `{table}`")]
    MissingTable { layer: u8, table: String },

    /// A producer tried to read its own layer or a later one.
    #[error(
        "hierarchical read violation: layer-{reader} producer may not read layer {layer} table `{table}`"
    )]
    HierarchicalRead { layer: u8, table: String, reader: u8 },

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
