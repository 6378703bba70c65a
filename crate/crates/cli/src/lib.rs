//! Service, client and command implementations behind the `m2a` binary.

pub mod client;
pub mod commands;
pub mod service;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] m2a_core::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("http: {0}")]
    Http(String),

    #[error("server answered {status}: {message}")]
    Api { status: u16, message: String },

    #[error("{0}")]
    Invalid(String),
}
