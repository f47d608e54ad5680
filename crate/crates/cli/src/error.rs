use awe::{AweError, ErrorClass};
use thiserror::Error;

/// A failed command, tagged with the exit class it maps to.
#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { class: ErrorClass::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { class: ErrorClass::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError { class: ErrorClass::Numeric, message: message.into() }
    }

    /// Prefixes the message with the file it concerns.
    pub fn with_context(self, path: &std::path::Path) -> Self {
        CliError { class: self.class, message: format!("{}: {}", path.display(), self.message) }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }

    pub fn class_name(&self) -> &'static str {
        match self.class {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
        }
    }

    /// The single stderr line printed on failure.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.class_name(), "exit": self.exit_code(), "message": self.message }).to_string()
    }
}

impl From<AweError> for CliError {
    fn from(e: AweError) -> Self {
        CliError { class: e.class(), message: e.to_string() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::config("x").exit_code(), 2);
        assert_eq!(CliError::data("x").exit_code(), 3);
        assert_eq!(CliError::numeric("x").exit_code(), 4);
        let e: CliError = AweError::NonFinite("loss".into()).into();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn error_line_is_single_line_json() {
        let line = CliError::data("bad\nfile \"x\"").to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "data");
        assert_eq!(v["exit"], 3);
        assert_eq!(v["message"], "bad\nfile \"x\"");
    }
}
