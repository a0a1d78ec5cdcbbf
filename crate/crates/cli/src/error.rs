use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or unreadable configuration, bad flags.
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read config {path}: {msg}")]
    ConfigFile { path: PathBuf, msg: String },
    /// Refusing to clobber existing output.
    #[error("{0} already exists (pass --force to overwrite)")]
    Exists(PathBuf),
    #[error(transparent)]
    Core(#[from] drain_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use drain_core::Error as E;
        match self {
            Self::Config(_) | Self::ConfigFile { .. } | Self::Exists(_) => 1,
            Self::Core(E::InvalidConfig(_) | E::InvalidSchema(_)) => 1,
            Self::Core(_) | Self::Io { .. } => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
