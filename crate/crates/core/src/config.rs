//! Scenario configuration (TOML). Every key is optional; missing keys take
//! the reference values.
//!
//! ```toml
//! node_count = 36
//! protocol = "cprtd"          # cprtd | aodv | dsdv
//! condition = "none"          # none | central_per_group
//! runs = 100
//! base_seed = 1
//! packet_size = 1000
//! generation_interval = 0.1
//! first_packet_at = 1.0
//! last_packet_at = 99.9
//! n_packets = 990
//! expiry = 30.0
//! common_random_numbers = true
//! oracle_knows_failures = false
//! output_dir = "results"
//!
//! [phases]
//! boundaries = [0.0, 30.1, 37.7, 60.1, 62.8, 100.0]
//!
//! [radio]      # tx_power_dbm, rx_threshold_dbm, frequency_hz, data_rate_bps, ...
//! [mac]        # difs, slot, cw_min, cw_max, max_retries, header_bytes, ...
//! [earth]      # equatorial_radius, oblateness, gravity, standard_radii
//! [formation]  # speed, spacing, group_gap, turn_angle, turn_rate, ...
//! [cprtd]      # per_hop_timeout, max_route_retries, duplicate_window
//! [aodv]       # active_route_timeout, net_traversal_time, hello_interval, ...
//! [dsdv]       # update_interval, stale_intervals
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{AodvParams, DsdvParams};
use crate::kinematics::EarthModel;
use crate::mobility::{diamond_side, DiversionParams, ScenarioPhases};
use crate::netsim::mac::MacParams;
use crate::netsim::radio::RadioParams;
use crate::protocol::CprTdParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {reason}")]
    Validation { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation { key, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Cprtd,
    Aodv,
    Dsdv,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Cprtd, Protocol::Aodv, Protocol::Dsdv];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Cprtd => "cprtd",
            Protocol::Aodv => "aodv",
            Protocol::Dsdv => "dsdv",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cprtd" | "cpr-td" => Ok(Protocol::Cprtd),
            "aodv" => Ok(Protocol::Aodv),
            "dsdv" => Ok(Protocol::Dsdv),
            other => Err(format!("unknown protocol `{other}` (expected cprtd, aodv or dsdv)")),
        }
    }
}

/// Which nodes are out of service for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCondition {
    /// Condition 1: every node works.
    None,
    /// Condition 2: the central node of each group has failed.
    CentralPerGroup,
}

impl FailureCondition {
    pub fn number(self) -> u8 {
        match self {
            FailureCondition::None => 1,
            FailureCondition::CentralPerGroup => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(FailureCondition::None),
            2 => Some(FailureCondition::CentralPerGroup),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub node_count: usize,
    pub protocol: Protocol,
    pub condition: FailureCondition,
    pub runs: usize,
    pub base_seed: u64,
    pub packet_size: usize,
    pub generation_interval: f64,
    pub first_packet_at: f64,
    pub last_packet_at: f64,
    pub n_packets: usize,
    pub expiry: f64,
    /// Reuse the traffic sequence of a seed across protocols.
    pub common_random_numbers: bool,
    /// Let CPR-TD's predicted connectivity account for failed nodes.
    pub oracle_knows_failures: bool,
    pub output_dir: PathBuf,
    pub phases: ScenarioPhases,
    pub radio: RadioParams,
    pub mac: MacParams,
    pub earth: EarthConfig,
    pub formation: DiversionParams,
    pub cprtd: CprTdParams,
    pub aodv: AodvParams,
    pub dsdv: DsdvParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarthConfig {
    pub equatorial_radius: f64,
    pub oblateness: f64,
    pub gravity: f64,
    pub standard_radii: bool,
}

impl Default for EarthConfig {
    fn default() -> Self {
        let e = EarthModel::default();
        Self {
            equatorial_radius: e.equatorial_radius,
            oblateness: e.oblateness,
            gravity: e.gravity,
            standard_radii: e.standard_radii,
        }
    }
}

impl From<EarthConfig> for EarthModel {
    fn from(c: EarthConfig) -> Self {
        EarthModel {
            equatorial_radius: c.equatorial_radius,
            oblateness: c.oblateness,
            gravity: c.gravity,
            standard_radii: c.standard_radii,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            node_count: 36,
            protocol: Protocol::Cprtd,
            condition: FailureCondition::None,
            runs: 100,
            base_seed: 1,
            packet_size: 1000,
            generation_interval: 0.1,
            first_packet_at: 1.0,
            last_packet_at: 99.9,
            n_packets: 990,
            expiry: 30.0,
            common_random_numbers: true,
            oracle_knows_failures: false,
            output_dir: PathBuf::from("results"),
            phases: ScenarioPhases::default(),
            radio: RadioParams::default(),
            mac: MacParams::default(),
            earth: EarthConfig::default(),
            formation: DiversionParams::default(),
            cprtd: CprTdParams::default(),
            aodv: AodvParams::default(),
            dsdv: DsdvParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn earth_model(&self) -> EarthModel {
        self.earth.into()
    }

    /// Generation instants of the application packets.
    pub fn packet_times(&self) -> Vec<f64> {
        (0..self.n_packets).map(|i| self.first_packet_at + i as f64 * self.generation_interval).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if diamond_side(self.node_count).is_err() {
            return Err(invalid("node_count", format!("{} is not 4·k² for an integer k ≥ 1", self.node_count)));
        }
        if self.node_count > u16::MAX as usize {
            return Err(invalid("node_count", "too many nodes"));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if self.packet_size == 0 {
            return Err(invalid("packet_size", "must be positive"));
        }
        if !(self.generation_interval > 0.0) {
            return Err(invalid("generation_interval", "must be positive"));
        }
        if !(self.expiry > 0.0) {
            return Err(invalid("expiry", "must be positive"));
        }
        self.phases.validate().map_err(|e| invalid("phases", e.to_string()))?;
        let end = self.phases.end();
        if !(self.first_packet_at >= 0.0 && self.first_packet_at <= self.last_packet_at) {
            return Err(invalid("first_packet_at", "must lie in [0, last_packet_at]"));
        }
        if self.last_packet_at > end {
            return Err(invalid("last_packet_at", format!("must not exceed the scenario end {end} s")));
        }
        if self.n_packets > 0 {
            let last = self.first_packet_at + (self.n_packets - 1) as f64 * self.generation_interval;
            if last > self.last_packet_at + 1e-9 {
                return Err(invalid(
                    "n_packets",
                    format!("{} packets every {} s from {} s run past {} s", self.n_packets, self.generation_interval, self.first_packet_at, self.last_packet_at),
                ));
            }
        }
        if !self.radio.is_valid() {
            return Err(invalid("radio", "frequency and data rate must be positive, system loss ≥ 1"));
        }
        if !self.mac.is_valid() {
            return Err(invalid("mac", "inconsistent MAC constants"));
        }
        if !self.earth_model().is_valid() {
            return Err(invalid("earth", "radius and gravity must be positive, oblateness in [0, 1)"));
        }
        self.formation.validate().map_err(|e| invalid("formation", e.to_string()))?;
        if !(self.cprtd.per_hop_timeout > 0.0) {
            return Err(invalid("cprtd", "per_hop_timeout must be positive"));
        }
        if self.aodv.hello_interval.is_some_and(|h| !(h > 0.0)) || !(self.aodv.net_traversal_time > 0.0) {
            return Err(invalid("aodv", "intervals must be positive"));
        }
        if !(self.dsdv.update_interval > 0.0) {
            return Err(invalid("dsdv", "update_interval must be positive"));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    ScenarioConfig::from_toml(&text)
}
