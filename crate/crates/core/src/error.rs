use std::fmt;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Machine-parsable category used by the command line on failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Dimension,
    Index,
    Input,
    Config,
    Compatibility,
    Parse,
    Validation,
    Numeric,
    Contract,
    Format,
    Io,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Dimension => "dimension",
            Category::Index => "index",
            Category::Input => "input",
            Category::Config => "config",
            Category::Compatibility => "compatibility",
            Category::Parse => "parse",
            Category::Validation => "validation",
            Category::Numeric => "numeric",
            Category::Contract => "contract",
            Category::Format => "format",
            Category::Io => "io",
        };
        f.write_str(s)
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Dimension(_) => Category::Dimension,
            Error::Index(_) => Category::Index,
            Error::Input(_) => Category::Input,
            Error::Config(_) => Category::Config,
            Error::Compatibility(_) => Category::Compatibility,
            Error::Parse { .. } => Category::Parse,
            Error::Validation(_) => Category::Validation,
            Error::Numeric(_) => Category::Numeric,
            Error::Contract(_) => Category::Contract,
            Error::Format(_) | Error::Json(_) => Category::Format,
            Error::Io(_) => Category::Io,
        }
    }

    /// The message without its category prefix.
    pub fn detail(&self) -> String {
        match self {
            Error::Dimension(m)
            | Error::Index(m)
            | Error::Input(m)
            | Error::Config(m)
            | Error::Compatibility(m)
            | Error::Validation(m)
            | Error::Numeric(m)
            | Error::Contract(m)
            | Error::Format(m) => m.clone(),
            Error::Parse { line, msg } => format!("line {line}: {msg}"),
            Error::Io(e) => e.to_string(),
            Error::Json(e) => e.to_string(),
        }
    }
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
