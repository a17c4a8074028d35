//! Protocol and harness configuration.
//!
//! The config file is TOML. Top-level keys are the protocol parameters;
//! `[channel]`, `[scorer]` and `[sim]` tables hold transport, risk and
//! harness settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::blind::MIN_PROTOCOL_BITS;
use crate::time::SECONDS_PER_DAY;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub epoch_duration_sec: u64,
    pub ct_days: u32,
    /// Exposure-status requests allowed per day.
    pub esr_per_day: u64,
    /// Fixed number of tokens carried by every request.
    pub padding_t: usize,
    pub min_encounter_sec: u64,
    pub peer_loss_timeout_sec: u64,
    pub reset_days: u32,
    pub notify_p: f64,
    pub risk_threshold_sec: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            epoch_duration_sec: 900,
            ct_days: 14,
            esr_per_day: 4,
            padding_t: 64,
            min_encounter_sec: 120,
            peer_loss_timeout_sec: 60,
            reset_days: 3,
            notify_p: 0.0,
            risk_threshold_sec: 900.0,
        }
    }
}

impl ProtocolConfig {
    /// Minimum number of epochs between two requests of one user.
    pub fn esr_min_epochs(&self) -> u64 {
        SECONDS_PER_DAY / (self.esr_per_day * self.epoch_duration_sec)
    }

    pub fn epochs_per_day(&self) -> u64 {
        SECONDS_PER_DAY / self.epoch_duration_sec
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.epoch_duration_sec == 0 || self.ct_days == 0 || self.esr_per_day == 0 {
            return bad("epoch_duration_sec, ct_days and esr_per_day must be positive");
        }
        if self.padding_t == 0 || self.min_encounter_sec == 0 || self.peer_loss_timeout_sec == 0 {
            return bad("padding_t, min_encounter_sec and peer_loss_timeout_sec must be positive");
        }
        if self.reset_days == 0 {
            return bad("reset_days must be positive");
        }
        if !SECONDS_PER_DAY.is_multiple_of(self.epoch_duration_sec) {
            return bad("epoch_duration_sec must divide a day");
        }
        if !SECONDS_PER_DAY.is_multiple_of(self.esr_per_day * self.epoch_duration_sec) {
            return bad("esr_per_day * epoch_duration_sec must divide a day");
        }
        if !(0.0..=1.0).contains(&self.notify_p) {
            return bad("notify_p must lie in [0, 1]");
        }
        if self.risk_threshold_sec.is_nan() || self.risk_threshold_sec < 0.0 {
            return bad("risk_threshold_sec must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub mix_enabled: bool,
    /// Upper end of the per-message delay window, seconds.
    pub mix_delay_max_sec: u64,
    pub proxy_drop_rate: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            mix_enabled: true,
            mix_delay_max_sec: 6 * 3600,
            proxy_drop_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    /// Scoring strategy; only `additive` is built in.
    pub name: String,
    /// A "1" needs at least this many matched tuples. 2 enables the
    /// one-entry mitigation.
    pub min_match_count: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            name: "additive".into(),
            min_match_count: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub beacon_interval_sec: u64,
    /// Modulus size for the authorization-token keys.
    pub rsa_bits: usize,
    /// Run device steps on a thread pool between global barriers.
    pub parallel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            beacon_interval_sec: 3,
            rsa_bits: 1024,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HarnessConfig {
    pub protocol: ProtocolConfig,
    pub channel: ChannelConfig,
    pub scorer: ScorerConfig,
    pub sim: SimConfig,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text)?;
        let mut section = |name: &str| -> Result<Option<toml::Value>, ConfigError> {
            match table.remove(name) {
                Some(v @ toml::Value::Table(_)) => Ok(Some(v)),
                Some(_) => Err(ConfigError::Invalid(format!("`{name}` must be a table"))),
                None => Ok(None),
            }
        };
        let channel = section("channel")?;
        let scorer = section("scorer")?;
        let sim = section("sim")?;
        let cfg = HarnessConfig {
            channel: channel.map(|v| v.try_into()).transpose()?.unwrap_or_default(),
            scorer: scorer.map(|v| v.try_into()).transpose()?.unwrap_or_default(),
            sim: sim.map(|v| v.try_into()).transpose()?.unwrap_or_default(),
            protocol: toml::Value::Table(table).try_into()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path.as_ref())?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.protocol.validate()?;
        if !(0.0..=1.0).contains(&self.channel.proxy_drop_rate) {
            return Err(ConfigError::Invalid("proxy_drop_rate must lie in [0, 1]".into()));
        }
        if self.scorer.name != "additive" {
            return Err(ConfigError::Invalid(format!("unknown scorer `{}`", self.scorer.name)));
        }
        if self.scorer.min_match_count == 0 {
            return Err(ConfigError::Invalid("min_match_count must be positive".into()));
        }
        if self.sim.beacon_interval_sec == 0 {
            return Err(ConfigError::Invalid("beacon_interval_sec must be positive".into()));
        }
        if self.sim.rsa_bits < MIN_PROTOCOL_BITS {
            return Err(ConfigError::Invalid(format!(
                "rsa_bits {} below minimum {MIN_PROTOCOL_BITS}",
                self.sim.rsa_bits
            )));
        }
        Ok(())
    }
}
