use thiserror::Error;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Bad flags, conflicting options, missing inputs, invalid configurations.
pub const EXIT_USAGE: i32 = 2;
/// Unreadable or malformed files.
pub const EXIT_IO: i32 = 3;
/// Non-finite values or solver divergence.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] h2tf::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use h2tf::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                E::Io(_) | E::Format { .. } | E::Length { .. } | E::Parse(_) => EXIT_IO,
                E::Numeric(_) | E::Diverged { .. } => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: h2tf::Error| CliError::from(e).exit_code();
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(code(h2tf::Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(code(h2tf::Error::Parse("x".into())), EXIT_IO);
        assert_eq!(code(h2tf::Error::Length { expected: 8, found: 4 }), EXIT_IO);
        assert_eq!(code(std::io::Error::other("x").into()), EXIT_IO);
        assert_eq!(code(h2tf::Error::Numeric("x".into())), EXIT_NUMERIC);
        let diverged = h2tf::Error::Diverged {
            iteration: 3,
            reason: "x".into(),
            diagnostics: Vec::new(),
        };
        assert_eq!(code(diverged), EXIT_NUMERIC);
    }
}
