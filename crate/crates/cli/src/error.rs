use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] cdnet_core::Error),
}

#[derive(Serialize)]
struct Report<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    /// 1 invalid config, 2 missing input, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) if e.is_missing_input() => 2,
            CliError::Core(_) => 3,
        }
    }

    pub fn to_json(&self) -> String {
        let code = self.exit_code();
        let kind = match code {
            1 => "config_invalid",
            2 => "missing_input",
            _ => "runtime_failure",
        };
        serde_json::to_string(&Report {
            error: kind,
            message: self.to_string(),
            exit_code: code,
        })
        .expect("error report serializes")
    }
}

/// Validation failures before any work starts count as config errors.
pub fn invalid(e: cdnet_core::Error) -> CliError {
    CliError::Config(e.to_string())
}
