use persuasion_core::align::AlignError;
use persuasion_core::analysis::AnalysisError;
use persuasion_core::corpus::CorpusError;
use persuasion_core::detect::DetectError;
use persuasion_core::gateway::GatewayError;
use persuasion_core::hlq::HlqError;
use persuasion_core::metrics::MetricsError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Data,
    Provider,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> CliError {
        CliError {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> CliError {
        CliError {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn missing(what: &str, hint: &str) -> CliError {
        CliError::usage(format!("missing input: {what} ({hint})"))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Provider => 3,
        }
    }

    /// One-line JSON summary for standard error.
    pub fn summary(&self, command: &str) -> String {
        serde_json::json!({
            "status": "error",
            "command": command,
            "exit_code": self.exit_code(),
            "kind": self.kind,
            "message": self.message,
        })
        .to_string()
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        let kind = match e {
            GatewayError::Exhausted { .. } => ErrorKind::Provider,
            GatewayError::Config(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

macro_rules! data_or_gateway {
    ($($t:ident),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                match e {
                    $t::Gateway(g) => g.into(),
                    other => CliError::data(other.to_string()),
                }
            }
        }
    )*};
}

data_or_gateway!(DetectError, HlqError, AlignError);

macro_rules! data {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::data(e.to_string())
            }
        }
    )*};
}

data!(CorpusError, MetricsError, AnalysisError, std::io::Error);
