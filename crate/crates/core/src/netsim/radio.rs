//! Friis free-space radio and frame airtime.

use serde::{Deserialize, Serialize};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    /// Received power below which a frame is lost (dBm).
    pub rx_threshold_dbm: f64,
    pub frequency_hz: f64,
    pub data_rate_bps: f64,
    pub tx_gain_db: f64,
    pub rx_gain_db: f64,
    /// System loss factor L ≥ 1 (linear).
    pub system_loss: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 16.0206,
            rx_threshold_dbm: -96.0,
            frequency_hz: 2.4e9,
            data_rate_bps: 11e6,
            tx_gain_db: 0.0,
            rx_gain_db: 0.0,
            system_loss: 1.0,
        }
    }
}

impl RadioParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    pub fn is_valid(&self) -> bool {
        self.frequency_hz > 0.0
            && self.data_rate_bps > 0.0
            && self.system_loss >= 1.0
            && self.tx_power_dbm.is_finite()
            && self.rx_threshold_dbm.is_finite()
    }

    /// Received power at distance `d` metres.
    pub fn rx_power_dbm(&self, d: f64) -> f64 {
        let ratio = self.wavelength() / (4.0 * std::f64::consts::PI * d);
        self.tx_power_dbm + self.tx_gain_db + self.rx_gain_db + 20.0 * ratio.log10()
            - 10.0 * self.system_loss.log10()
    }

    /// Distance at which the received power equals the threshold.
    pub fn comm_range(&self) -> f64 {
        let margin_db = self.tx_power_dbm + self.tx_gain_db + self.rx_gain_db
            - 10.0 * self.system_loss.log10()
            - self.rx_threshold_dbm;
        self.wavelength() / (4.0 * std::f64::consts::PI) * 10f64.powf(margin_db / 20.0)
    }

    /// Time on air for `bytes` bytes.
    pub fn airtime(&self, bytes: usize) -> f64 {
        bytes as f64 * 8.0 / self.data_rate_bps
    }
}

pub fn propagation_delay(d: f64) -> f64 {
    d / SPEED_OF_LIGHT
}
