//! The JSON run summary written by every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: String,
    pub message: String,
}

/// A mean exit time in seconds from one solver or estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredSummary {
    pub mean_s: f64,
    pub exited: usize,
    pub censored: usize,
    pub exit_mean_s: f64,
    pub tail_mean_s: Option<f64>,
    pub fit_rate_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub name: String,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub steps: Option<usize>,
    pub dt_s: Option<f64>,
}

/// A file written next to the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// `runs`, `mass-curve`, `histogram`, `profile`, `met-grid`, `positions`, `density` or `figure`.
    pub kind: String,
    /// Relative to the summary's directory.
    pub path: String,
    pub label: String,
    /// Snapshot time for `positions` and `density`.
    pub t_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsMetric {
    pub a: String,
    pub b: String,
    pub d: f64,
    pub corners: usize,
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub a: String,
    pub b: String,
    /// `b − a` in s.
    pub delta_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub status: Status,
    pub error: Option<ErrorInfo>,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub rng: String,
    pub estimates: Vec<Estimate>,
    pub censored_mean: Option<CensoredSummary>,
    pub solvers: Vec<SolverDiagnostics>,
    pub artifacts: Vec<Artifact>,
    pub ks: Vec<KsMetric>,
    pub deltas: Vec<Delta>,
    /// Named differences such as `classical-vs-delayed`, in s.
    pub gaps: BTreeMap<String, f64>,
    /// Wall-clock seconds per stage; the only nondeterministic field.
    pub timings_s: BTreeMap<String, f64>,
}

impl RunSummary {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            status: Status::Ok,
            error: None,
            config_digest: None,
            seed: None,
            rng: turndelay::rng::RNG_ALGORITHM.into(),
            estimates: Vec::new(),
            censored_mean: None,
            solvers: Vec::new(),
            artifacts: Vec::new(),
            ks: Vec::new(),
            deltas: Vec::new(),
            gaps: BTreeMap::new(),
            timings_s: BTreeMap::new(),
        }
    }

    pub fn failed(command: &str, err: &CliError) -> Self {
        Self {
            status: Status::Error,
            error: Some(ErrorInfo {
                code: err.code().into(),
                message: err.to_string(),
            }),
            ..Self::new(command)
        }
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates.iter().find(|e| e.name == name).map(|e| e.seconds)
    }

    pub fn push_estimate(&mut self, name: &str, seconds: f64) {
        self.estimates.push(Estimate {
            name: name.into(),
            seconds,
        });
    }

    pub fn push_artifact(&mut self, kind: &str, path: &str, label: &str, t_s: Option<f64>) {
        self.artifacts.push(Artifact {
            kind: kind.into(),
            path: path.into(),
            label: label.into(),
            t_s,
        });
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(SUMMARY_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("summary serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Reads a summary file, or `summary.json` inside a directory.
    pub fn read(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let file = if path.is_dir() {
            path.join(SUMMARY_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
        let summary: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Schema(format!("{} is not a run summary: {e}", file.display())))?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((summary, dir))
    }
}
