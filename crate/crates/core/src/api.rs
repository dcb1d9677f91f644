//! Request and response bodies of the HTTP service.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{OracleRow, RunSummary};

/// Where a configuration comes from, plus command-line style adjustments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigSource {
    /// TOML document text.
    pub config_toml: Option<String>,
    pub preset: Option<String>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub deterministic: bool,
}

impl ConfigSource {
    pub fn preset(name: &str) -> Self {
        Self { preset: Some(name.into()), ..Default::default() }
    }

    /// The configuration after overrides and flags.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config_toml, &self.preset) {
            (Some(_), Some(_)) => {
                return Err(Error::usage("give either a configuration document or a preset, not both"))
            }
            (Some(text), None) => ExperimentConfig::from_toml_str(text)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => return Err(Error::usage("a configuration document or a preset is required")),
        };
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("training.seed={s}"));
        }
        if let Some(n) = self.iterations {
            overrides.push(format!("training.iterations={n}"));
        }
        if self.deterministic {
            overrides.push("training.deterministic=true".into());
        }
        if !overrides.is_empty() {
            cfg.apply_overrides(&overrides)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    #[serde(flatten)]
    pub source: ConfigSource,
    /// Run directory; defaults to `<output.dir>/<preset or "custom">`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub dir: PathBuf,
    pub summary: RunSummary,
    /// Divergence message; artifacts were still written.
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    #[serde(flatten)]
    pub source: ConfigSource,
    pub xs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub rows: Vec<OracleRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetInfo {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Usage,
    Diverged,
    MissingArtifacts,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
    /// One entry per schema violation or missing file.
    #[serde(default)]
    pub details: Vec<String>,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        let (kind, details) = match e {
            Error::Schema(v) => (ErrorKind::Config, v.clone()),
            Error::Config(_) => (ErrorKind::Config, vec![]),
            Error::Usage(_) => (ErrorKind::Usage, vec![]),
            Error::Diverged { .. } => (ErrorKind::Diverged, vec![]),
            Error::MissingArtifacts(v) => (ErrorKind::MissingArtifacts, v.clone()),
            _ => (ErrorKind::Internal, vec![]),
        };
        Self { kind, message: e.to_string(), details }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_become_overrides() {
        let src = ConfigSource {
            seed: Some(9),
            iterations: Some(0),
            deterministic: true,
            ..ConfigSource::preset("fwd-fixed-eu")
        };
        let cfg = src.resolve().unwrap();
        assert_eq!((cfg.training.seed, cfg.training.iterations, cfg.training.deterministic), (9, 0, true));
        assert_eq!(cfg.preset.as_deref(), Some("fwd-fixed-eu"));
    }

    #[test]
    fn source_needs_exactly_one_origin() {
        assert!(ConfigSource::default().resolve().is_err());
        let both = ConfigSource { config_toml: Some(String::new()), ..ConfigSource::preset("fwd-fixed-eu") };
        assert!(both.resolve().is_err());
    }

    #[test]
    fn schema_errors_keep_their_details() {
        let e = ConfigSource { config_toml: Some("bogus = 1\n".into()), ..Default::default() }.resolve().unwrap_err();
        let body = ErrorBody::from(&e);
        assert_eq!(body.kind, ErrorKind::Config);
        assert_eq!(body.details, vec!["bogus: unknown key".to_string()]);
    }
}
