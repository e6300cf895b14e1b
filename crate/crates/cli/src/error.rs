use std::path::PathBuf;

use crate::config::ConfigIssue;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config:\n{}", list(.0))]
    Invalid(Vec<ConfigIssue>),
    #[error("{command} needs {what}")]
    Unsupported { command: &'static str, what: String },
    #[error(transparent)]
    Analysis(#[from] kernelrn::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot serialize report: {0}")]
    Serialize(#[from] serde_json::Error),
}

fn list(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}
