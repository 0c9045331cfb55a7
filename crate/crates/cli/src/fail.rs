use std::fmt;

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad config, bad input data or failed validation (exit 2).
    Config(String),
    /// Training diverged or another numerical breakdown (exit 3).
    Numerical(String),
    /// Reading or writing files failed (exit 4).
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Failure::Config(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical error: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<saelab::Error> for Failure {
    fn from(e: saelab::Error) -> Self {
        use saelab::Error as E;
        match e {
            E::Io { .. } => Failure::Io(e.to_string()),
            E::Diverged { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
