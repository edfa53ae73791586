//! Analysis settings and the JSON config record.
//!
//! The same record appears as the `config` object in report headers, so a
//! report's settings can be fed back through `--config`. Every field is
//! optional; missing fields fall back to the defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmdc::{FitOptions, RankRule, DEFAULT_MSE_GATE};
use crate::embed::EmbedConfig;
use crate::specmetrics::DEFAULT_CTRB_REL_TOL;

pub const CONFIG_FORMAT: &str = "koopctl-config-v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config is not valid UTF-8")]
    Utf8,
    #[error("malformed config record: {0}")]
    Malformed(String),
    #[error("unsupported config format tag {0:?}")]
    FormatTag(String),
    #[error("invalid setting `{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        msg: msg.into(),
    }
}

/// Sliding-window hidden-progress detector settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpConfig {
    window: usize,
    pub reward_flat_frac: f64,
    pub trend_t_threshold: f64,
}

impl HpConfig {
    pub fn new(window: usize, reward_flat_frac: f64, trend_t_threshold: f64) -> Result<Self, ConfigError> {
        let hp = Self {
            window,
            reward_flat_frac,
            trend_t_threshold,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.window < 3 {
            return Err(invalid("window", format!("must be at least 3, got {}", self.window)));
        }
        if !(self.reward_flat_frac.is_finite() && self.reward_flat_frac > 0.0) {
            return Err(invalid("reward_flat_frac", "must be a positive number"));
        }
        if !(self.trend_t_threshold.is_finite() && self.trend_t_threshold > 0.0) {
            return Err(invalid("trend_t_threshold", "must be a positive number"));
        }
        Ok(())
    }
}

impl Default for HpConfig {
    fn default() -> Self {
        Self {
            window: 3,
            reward_flat_frac: 0.05,
            trend_t_threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub embed: EmbedConfig,
    pub fit: FitOptions,
    pub ctrb_rel_tol: f64,
    pub mse_gate: f64,
    pub hidden_progress: HpConfig,
}

impl Default for AnalysisConfig {
    /// CartPole settings: four delays, 95% energy.
    fn default() -> Self {
        Self {
            embed: EmbedConfig::new(4, true).expect("positive delay"),
            fit: FitOptions::output_only(RankRule::Energy(0.95)),
            ctrb_rel_tol: DEFAULT_CTRB_REL_TOL,
            mse_gate: DEFAULT_MSE_GATE,
            hidden_progress: HpConfig::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.mse_gate.is_finite() && self.mse_gate > 0.0) {
            return Err(invalid("mse_gate", "must be a positive number"));
        }
        if !(self.ctrb_rel_tol > 0.0 && self.ctrb_rel_tol < 1.0) {
            return Err(invalid("ctrb_tol", "must lie in (0, 1)"));
        }
        self.hidden_progress.validate()
    }

    /// Applies every field present in `overrides`.
    pub fn apply(&mut self, overrides: &ConfigOverrides) -> Result<(), ConfigError> {
        let next = self.with(overrides)?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn with(mut self, o: &ConfigOverrides) -> Result<Self, ConfigError> {
        if let Some(n) = o.n_delay {
            self.embed = EmbedConfig::new(n, self.embed.standardize).map_err(|e| invalid("n_delay", e.to_string()))?;
        }
        if let Some(s) = o.standardize {
            self.embed.standardize = s;
        }
        if let Some(r) = &o.svd_rank {
            self.fit.output_rule = r.rule("svd_rank")?;
        }
        if let Some(r) = &o.svd_rank_omega {
            self.fit.input_rule = r.rule("svd_rank_omega")?;
        }
        if let Some(t) = o.ctrb_tol {
            self.ctrb_rel_tol = t;
        }
        if let Some(g) = o.mse_gate {
            self.mse_gate = g;
        }
        if let Some(w) = o.window {
            self.hidden_progress.window = w;
        }
        if let Some(f) = o.reward_flat_frac {
            self.hidden_progress.reward_flat_frac = f;
        }
        if let Some(t) = o.trend_t_threshold {
            self.hidden_progress.trend_t_threshold = t;
        }
        Ok(self)
    }

    /// Fully populated record of these settings.
    pub fn to_overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            format: None,
            n_delay: Some(self.embed.n_delay()),
            standardize: Some(self.embed.standardize),
            svd_rank: Some(RankValue::Text(self.fit.output_rule.to_string())),
            svd_rank_omega: Some(RankValue::Text(self.fit.input_rule.to_string())),
            ctrb_tol: Some(self.ctrb_rel_tol),
            mse_gate: Some(self.mse_gate),
            window: Some(self.hidden_progress.window),
            reward_flat_frac: Some(self.hidden_progress.reward_flat_frac),
            trend_t_threshold: Some(self.hidden_progress.trend_t_threshold),
        }
    }
}

/// A rank rule as written in JSON: `"full"`, `"0.95"`, `0.95` or `5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankValue {
    Text(String),
    Number(serde_json::Number),
}

impl RankValue {
    fn rule(&self, field: &'static str) -> Result<RankRule, ConfigError> {
        let text = match self {
            Self::Text(s) => s.clone(),
            Self::Number(n) => n.to_string(),
        };
        text.parse().map_err(|e: crate::dmdc::DmdcError| invalid(field, e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_delay: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svd_rank: Option<RankValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svd_rank_omega: Option<RankValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctrb_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_gate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_flat_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend_t_threshold: Option<f64>,
}

/// Parses a config record: one JSON object, optionally tagged with
/// `"format":"koopctl-config-v1"`. Values are checked when applied.
pub fn parse_config(bytes: &[u8]) -> Result<ConfigOverrides, ConfigError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ConfigError::Utf8)?;
    let cfg: ConfigOverrides = serde_json::from_str(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    if let Some(tag) = &cfg.format {
        if tag != CONFIG_FORMAT {
            return Err(ConfigError::FormatTag(tag.clone()));
        }
    }
    Ok(cfg)
}
