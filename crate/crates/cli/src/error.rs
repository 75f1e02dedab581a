//! Failure classification mapped onto process exit codes.

use lindopt_core::CoreError;

/// What went wrong, split by exit code: configuration problems exit 2,
/// numerical failures during a run exit 3 (with a diagnostic JSON on stderr).
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(CoreError),
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure::Config(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

/// Core errors escaping a resolved, validated run are numerical failures.
/// (Resolution code maps core errors to `Config` explicitly.)
impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Numerical(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("i/o error: {e}"))
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(e) => write!(f, "numerical failure: {e}"),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;
