use std::fmt;

use serde::Serialize;

/// Failure of one CLI run: exit code plus the JSON written to stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    #[serde(skip)]
    pub exit: i32,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn usage(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            exit: 1,
            error: "USAGE".into(),
            key: Some(key.into()),
            message: message.into(),
        }
    }

    /// Same error, reported as a usage problem.
    pub fn as_usage(mut self) -> Self {
        self.exit = 1;
        self
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.key.get_or_insert_with(|| key.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.error))
    }
}

impl From<ssrb::Error> for CliError {
    fn from(e: ssrb::Error) -> Self {
        let key = match &e {
            ssrb::Error::InvalidParameter { name, .. } => Some((*name).to_owned()),
            _ => None,
        };
        Self {
            exit: 2,
            error: e.code().into(),
            key,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        ssrb::Error::from(e).into()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "{} ({k}): {}", self.error, self.message),
            None => write!(f, "{}: {}", self.error, self.message),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
