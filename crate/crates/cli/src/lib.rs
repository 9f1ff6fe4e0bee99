//! Command-line harness around [`svdatk_core`]: dataset generation, model
//! training, adversarial-batch crafting, transfer evaluation, ablation
//! sweeps, representation-similarity reports, and saliency rendering.
//!
//! The binary (`svdatk`) is a thin wrapper over [`commands`]; everything it
//! does is reachable through this library, which is what the integration
//! tests exercise.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod plot;

pub use config::RunConfig;

use std::fmt;
use std::io;
use std::path::Path;

use svdatk_core::attack::AttackError;
use svdatk_core::cka::CkaError;
use svdatk_core::container::ContainerError;
use svdatk_core::data::DataError;
use svdatk_core::models::ModelError;
use svdatk_core::spectral::SpectralError;
use svdatk_core::tensor::TensorError;

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum CliError {
    /// Config file rejected; `line` is 1-based.
    Config { line: usize, message: String },
    /// A config value failed to parse as the documented type.
    BadValue { key: String, value: String, want: &'static str },
    /// Anything else the harness refuses to do, with a human explanation.
    Invalid(String),
    Io { path: String, source: io::Error },
    Csv(String),
    Json(String),
    Data(DataError),
    Model(ModelError),
    Attack(AttackError),
    Cka(CkaError),
    Container(ContainerError),
    Spectral(SpectralError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { line, message } => {
                write!(f, "config line {line}: {message}")
            }
            CliError::BadValue { key, value, want } => {
                write!(f, "config key `{key}`: `{value}` is not a valid {want}")
            }
            CliError::Invalid(msg) => write!(f, "{msg}"),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
            CliError::Csv(msg) => write!(f, "csv: {msg}"),
            CliError::Json(msg) => write!(f, "json: {msg}"),
            CliError::Data(e) => write!(f, "dataset: {e}"),
            CliError::Model(e) => write!(f, "model: {e}"),
            CliError::Attack(e) => write!(f, "attack: {e}"),
            CliError::Cka(e) => write!(f, "cka: {e}"),
            CliError::Container(e) => write!(f, "container: {e}"),
            CliError::Spectral(e) => write!(f, "spectral: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}
impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e)
    }
}
impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Model(ModelError::Tensor(e))
    }
}
impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        CliError::Attack(e)
    }
}
impl From<CkaError> for CliError {
    fn from(e: CkaError) -> Self {
        CliError::Cka(e)
    }
}
impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        CliError::Container(e)
    }
}
impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        CliError::Spectral(e)
    }
}
impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e.to_string())
    }
}
impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e.to_string())
    }
}

/// Wraps an io::Error with the path it happened on.
pub fn io_at<P: AsRef<Path>>(path: P) -> impl FnOnce(io::Error) -> CliError {
    let path = path.as_ref().display().to_string();
    move |source| CliError::Io { path, source }
}
