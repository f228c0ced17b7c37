//! Exit-code classification: 1 for bad input, 2 for failures while running.

use std::fmt::Display;
use std::process::ExitCode;

#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Validation(_) => ExitCode::from(1),
            Failure::Runtime(_) => ExitCode::from(2),
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) => e,
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn invalid(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
    fn invalid_ctx(self, context: impl Display + Send + Sync + 'static) -> CmdResult<T>;
    fn runtime_ctx(self, context: impl Display + Send + Sync + 'static) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }

    fn invalid_ctx(self, context: impl Display + Send + Sync + 'static) -> CmdResult<T> {
        self.map_err(|e| Failure::Validation(e.into().context(context)))
    }

    fn runtime_ctx(self, context: impl Display + Send + Sync + 'static) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into().context(context)))
    }
}

pub fn invalid(message: impl Display + Send + Sync + 'static) -> Failure {
    Failure::Validation(anyhow::anyhow!("{message}"))
}
