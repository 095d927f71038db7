use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fancyvideo_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("format: {0}")]
    Format(String),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        use fancyvideo_core::Error as C;
        match self {
            Error::Core(C::UnknownToken(_) | C::TokenLength { .. }) => "caption",
            Error::Core(C::Config(_) | C::MissingImage(_)) => "config",
            Error::Core(C::NonFiniteLoss(_) | C::NonFinite(_)) => "non_finite",
            Error::Core(C::Analysis(_)) => "analysis",
            Error::Core(_) => "core",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Image(_) => "image",
            Error::Checkpoint(_) => "checkpoint",
            Error::Format(_) => "format",
            Error::Usage(_) => "usage",
        }
    }

    /// `error kind=<kind> message=<json string>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = serde_json::to_string(&self.to_string()).unwrap_or_else(|_| "\"\"".into());
        format!("error kind={} message={msg}", self.kind())
    }
}
