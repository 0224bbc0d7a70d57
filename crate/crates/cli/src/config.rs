//! Run configuration: loading, defaults and validation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use star_core::attention::{AttentionConfig, CorpusSpec};
use star_core::costmodel::{CostParams, Geometry};
use star_core::engine::EngineConfig;
use star_core::fxp::FxFormat;
use star_core::Error as CoreError;

/// Shipped defaults, identical to `RunConfig::default()`.
pub const DEFAULTS_JSON: &str = include_str!("../data/defaults.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigErrorKind {
    Parse,
    Validation,
    UnknownKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    pub message: String,
}

impl ConfigError {
    pub fn parse(message: impl Into<String>) -> Self {
        Self {
            kind: ConfigErrorKind::Parse,
            message: message.into(),
        }
    }

    pub fn validation(path: &str, message: impl fmt::Display) -> Self {
        Self {
            kind: ConfigErrorKind::Validation,
            message: format!("{path}: {message}"),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ConfigErrorKind::Parse => 2,
            ConfigErrorKind::Validation => 3,
            ConfigErrorKind::UnknownKey => 4,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ConfigErrorKind::Parse => "parse error",
            ConfigErrorKind::Validation => "validation error",
            ConfigErrorKind::UnknownKey => "unknown key",
        };
        write!(f, "{what}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Output file names. Relative paths are resolved against `--out-dir`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub softmax: PathBuf,
    pub trace: Option<PathBuf>,
    pub attention: PathBuf,
    pub sweep: PathBuf,
    pub cost: PathBuf,
    pub schedule: PathBuf,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            softmax: "softmax.csv".into(),
            trace: None,
            attention: "attention.json".into(),
            sweep: "sweep.csv".into(),
            cost: "cost.json".into(),
            schedule: "schedule.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub attention: AttentionConfig,
    /// Cost parameter file; the shipped calibrated parameters when absent.
    pub cost_params: Option<PathBuf>,
    pub corpus: CorpusSpec,
    pub seed: u64,
    pub outputs: Outputs,
}

/// Deserializes `text`, classifying failures by exit code.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError::parse(format!("{origin}: {e}")))?;
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let kind = if inner.starts_with("unknown field") {
            ConfigErrorKind::UnknownKey
        } else {
            ConfigErrorKind::Validation
        };
        ConfigError {
            kind,
            message: format!("{origin}: {path}: {inner}"),
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::parse(format!("{}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

/// Reads, defaults and validates a run configuration. Relative
/// `cost_params` paths are taken relative to the config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = read_json(path)?;
    if let (Some(p), Some(dir)) = (&cfg.cost_params, path.parent()) {
        if p.is_relative() {
            cfg.cost_params = Some(dir.join(p));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn format_error(path: &str, e: CoreError) -> ConfigError {
    let field = match &e {
        CoreError::InvalidFormat(m) if m.starts_with("frac_bits") => ".frac_bits",
        CoreError::InvalidFormat(_) => ".total_bits",
        _ => "",
    };
    ConfigError::validation(&format!("{path}{field}"), e)
}

pub fn validate_input_format(path: &str, fmt: &FxFormat) -> Result<(), ConfigError> {
    fmt.validate().map_err(|e| format_error(path, e))
}

pub fn validate_engine(path: &str, e: &EngineConfig) -> Result<(), ConfigError> {
    validate_input_format(&format!("{path}.input_format"), &e.input_format)?;
    FxFormat::new(
        e.lut_out_format.total_bits,
        e.lut_out_format.frac_bits,
        e.lut_out_format.signed,
    )
    .map_err(|err| format_error(&format!("{path}.lut_out_format"), err))?;
    e.validate().map_err(|err| {
        let msg = err.to_string();
        let field = [
            "lut_out_format",
            "divider_frac_bits",
            "max_seq_len",
            "vmm_adc_bits",
        ]
        .into_iter()
        .find(|f| msg.contains(f))
        .unwrap_or("");
        ConfigError::validation(&format!("{path}.{field}"), msg)
    })
}

pub fn validate_attention(
    path: &str,
    a: &AttentionConfig,
    e: &EngineConfig,
) -> Result<(), ConfigError> {
    a.validate(e).map_err(|err| {
        let msg = err.to_string();
        let field = ["seq_len", "d_model", "n_heads", "matmul_tile"]
            .into_iter()
            .find(|f| msg.contains(f))
            .unwrap_or("");
        ConfigError::validation(&format!("{path}.{field}"), msg)
    })?;
    Geometry::derive(e, a)
        .check(e)
        .map_err(|err| ConfigError::validation(path, err))
}

pub fn validate_params(path: &str, p: &CostParams) -> Result<(), ConfigError> {
    p.validate().map_err(|e| ConfigError::validation(path, e))
}

impl RunConfig {
    pub fn defaults() -> Self {
        parse_json(DEFAULTS_JSON, "defaults.json").expect("shipped defaults parse")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_engine("engine", &self.engine)?;
        validate_attention("attention", &self.attention, &self.engine)?;
        self.corpus
            .distribution
            .validate()
            .map_err(|e| ConfigError::validation("corpus.distribution", e))?;
        if self.corpus.rows == 0 {
            return Err(ConfigError::validation("corpus.rows", "must be >= 1"));
        }
        if self.corpus.seq_len == 0 || self.corpus.seq_len > self.engine.max_seq_len {
            return Err(ConfigError::validation(
                "corpus.seq_len",
                format!("must be in 1..={}", self.engine.max_seq_len),
            ));
        }
        if let Some(p) = &self.cost_params {
            if !p.is_file() {
                return Err(ConfigError::validation(
                    "cost_params",
                    format!("{} is not a readable file", p.display()),
                ));
            }
        }
        Ok(())
    }

    /// Cost parameters named by the config, or the shipped calibration.
    pub fn load_params(&self) -> Result<CostParams, ConfigError> {
        let params = match &self.cost_params {
            Some(p) => read_json(p)?,
            None => CostParams::calibrated(),
        };
        validate_params("cost_params", &params)?;
        Ok(params)
    }
}
