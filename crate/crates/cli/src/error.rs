use std::fmt;

use iotguard_core::ErrorClass;

/// A failure with the class that decides the exit status.
#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { class: ErrorClass::Config, message: message.into() }
    }

    pub fn io(context: impl fmt::Display, e: std::io::Error) -> Self {
        CliError { class: ErrorClass::Io, message: format!("{context}: {e}") }
    }

    pub fn class_name(&self) -> &'static str {
        match self.class {
            ErrorClass::Config => "config",
            ErrorClass::Parse => "parse",
            ErrorClass::Transport => "transport",
            ErrorClass::Numeric => "numeric",
            ErrorClass::Io => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            ErrorClass::Config => 2,
            ErrorClass::Parse => 3,
            ErrorClass::Transport => 4,
            ErrorClass::Numeric => 5,
            ErrorClass::Io => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.class_name(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<iotguard_core::Error> for CliError {
    fn from(e: iotguard_core::Error) -> Self {
        CliError { class: e.class(), message: e.to_string() }
    }
}

impl From<iotguard_core::llm::GatewayError> for CliError {
    fn from(e: iotguard_core::llm::GatewayError) -> Self {
        iotguard_core::Error::from(e).into()
    }
}
