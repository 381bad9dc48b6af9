//! Network profiles and a transcript-driven wall-clock estimate.
//!
//! Jitter, loss and the shaping parameters are carried for reference only;
//! the estimate uses bandwidth and delay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Transcript;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub name: String,
    pub bandwidth_mbps: f64,
    pub delay_ms: f64,
    pub jitter_ms: f64,
    pub loss_pct: f64,
    pub burst_kb: Option<f64>,
    pub quantum: u32,
    pub r2q: u32,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_mbps > 0.0) {
            return Err(Error::Config(format!("{}: bandwidth must be positive", self.name)));
        }
        if !(self.delay_ms >= 0.0) {
            return Err(Error::Config(format!("{}: delay must be non-negative", self.name)));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn profile(name: &str, bw: f64, delay: f64, jitter: f64, loss: f64, burst: Option<f64>, quantum: u32, r2q: u32) -> NetworkConfig {
    NetworkConfig {
        name: name.into(),
        bandwidth_mbps: bw,
        delay_ms: delay,
        jitter_ms: jitter,
        loss_pct: loss,
        burst_kb: burst,
        quantum,
        r2q,
    }
}

/// The ten built-in profiles: LAN, regional WAN, cross-continent WAN and a
/// corporate WAN.
pub fn profiles() -> Vec<NetworkConfig> {
    vec![
        profile("LAN500", 500.0, 1.0, 0.2, 0.0, None, 1500, 10),
        profile("LAN1000", 1000.0, 0.3, 0.02, 0.0, None, 3000, 15),
        profile("LAN10000", 10000.0, 0.1, 0.01, 0.0, None, 9000, 25),
        profile("regWAN100", 100.0, 20.0, 15.0, 0.1, Some(500.0), 1200, 10),
        profile("regWAN250", 250.0, 15.0, 5.0, 0.1, Some(1000.0), 1500, 20),
        profile("regWAN500", 500.0, 10.0, 2.0, 0.1, Some(1500.0), 1500, 25),
        profile("ccWAN50", 50.0, 150.0, 25.0, 0.5, Some(500.0), 1000, 10),
        profile("ccWAN100", 100.0, 120.0, 15.0, 0.3, Some(1000.0), 1000, 15),
        profile("ccWAN200", 200.0, 100.0, 10.0, 0.2, Some(2000.0), 1200, 20),
        profile("crpWAN500", 500.0, 50.0, 5.0, 0.1, Some(1000.0), 1500, 15),
    ]
}

pub fn profile_by_name(name: &str) -> Result<NetworkConfig> {
    profiles()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown network profile {name:?}")))
}

/// Transfer time of `bytes` plus one round trip per sequential exchange.
pub fn phase_seconds(bytes: u64, exchanges: u64, net: &NetworkConfig) -> f64 {
    bytes as f64 * 8.0 / (net.bandwidth_mbps * 1e6) + exchanges as f64 * 2.0 * net.delay_ms / 1e3
}

pub fn estimate_wallclock(t: &Transcript, net: &NetworkConfig, compute_seconds: f64) -> f64 {
    compute_seconds
        + t.phases()
            .iter()
            .map(|p| phase_seconds(p.bytes, p.exchanges, net))
            .sum::<f64>()
}
