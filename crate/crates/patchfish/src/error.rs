use std::fmt;
use std::path::{Path, PathBuf};

use patchfish_core::ErrorClass;
use serde::Serialize;

/// Failure class and the exit status scripts can branch on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Config,
    Data,
    Numerical,
}

impl Class {
    pub fn exit_code(self) -> i32 {
        match self {
            Class::Config => 2,
            Class::Data => 3,
            Class::Numerical => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub class: Class,
    /// Component that failed, e.g. `ingest` or `stage2`.
    pub module: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl CliError {
    pub fn new(class: Class, module: &'static str, message: impl Into<String>) -> Self {
        Self { class, module, message: message.into(), file: None }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Class::Config, "config", message)
    }

    pub fn data(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(Class::Data, module, message)
    }

    pub fn with_file(mut self, path: &Path) -> Self {
        self.file = Some(path.to_path_buf());
        self
    }

    /// Wraps a core error. Invalid inputs to the core are configuration
    /// problems from the command line's point of view.
    pub fn core(module: &'static str, err: patchfish_core::Error) -> Self {
        let class = match err.class() {
            ErrorClass::Input => Class::Config,
            ErrorClass::Data => Class::Data,
            ErrorClass::Numerical => Class::Numerical,
        };
        Self::new(class, module, err.to_string())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::data("io", format!("{}: {err}", path.display())).with_file(path)
    }

    /// One JSON object on one line.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self, "exit_code": self.class.exit_code() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.module, self.message)?;
        if let Some(file) = &self.file {
            write!(f, " ({})", file.display())?;
        }
        Ok(())
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

/// Adapter for `map_err` on core results.
pub fn in_module(module: &'static str) -> impl Fn(patchfish_core::Error) -> CliError {
    move |e| CliError::core(module, e)
}
