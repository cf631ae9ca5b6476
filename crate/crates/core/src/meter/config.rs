use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MeterError;

/// Partial-flow export trigger.
///
/// Ordering is packet count, then duration, then bytes, each by value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trigger {
    /// `PC=N`: the flow has exactly N packets.
    PacketCount(u32),
    /// `FD=T`: the flow duration is within tolerance of T milliseconds.
    Duration(u64),
    /// `BC=B`: the flow has first reached B wire bytes.
    Bytes(u64),
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::PacketCount(n) => write!(f, "PC={n}"),
            Trigger::Duration(t) => write!(f, "FD={t}"),
            Trigger::Bytes(b) => write!(f, "BC={b}"),
        }
    }
}

impl FromStr for Trigger {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .split_once('=')
            .ok_or_else(|| format!("bad trigger {s:?}"))?;
        let bad = |_| format!("bad trigger value in {s:?}");
        match kind.trim() {
            "PC" => Ok(Trigger::PacketCount(value.trim().parse().map_err(bad)?)),
            "FD" => Ok(Trigger::Duration(value.trim().parse().map_err(bad)?)),
            "BC" => Ok(Trigger::Bytes(value.trim().parse().map_err(bad)?)),
            _ => Err(format!("unknown trigger kind in {s:?}")),
        }
    }
}

impl Serialize for Trigger {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Trigger {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_idle() -> f64 {
    60.0
}
fn default_active() -> f64 {
    18_000.0
}
fn default_true() -> bool {
    true
}
fn default_pc() -> BTreeSet<u32> {
    (2..=20).collect()
}
fn default_fd() -> BTreeSet<u64> {
    [
        5, 10, 50, 100, 150, 300, 500, 1000, 5000, 10000, 15000, 20000,
    ]
    .into()
}
fn default_tolerance() -> f64 {
    0.20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterConfig {
    #[serde(default = "default_idle")]
    pub idle_timeout_s: f64,
    #[serde(default = "default_active")]
    pub active_timeout_s: f64,
    #[serde(default = "default_true")]
    pub fin_rst_expiration: bool,
    #[serde(default = "default_pc")]
    pub pc_triggers: BTreeSet<u32>,
    #[serde(default = "default_fd")]
    pub fd_triggers_ms: BTreeSet<u64>,
    #[serde(default = "default_tolerance")]
    pub fd_tolerance: f64,
    #[serde(default)]
    pub byte_triggers: BTreeSet<u64>,
}

impl Default for MeterConfig {
    fn default() -> Self {
        Self {
            idle_timeout_s: default_idle(),
            active_timeout_s: default_active(),
            fin_rst_expiration: true,
            pc_triggers: default_pc(),
            fd_triggers_ms: default_fd(),
            fd_tolerance: default_tolerance(),
            byte_triggers: BTreeSet::new(),
        }
    }
}

impl MeterConfig {
    /// Settings of the exploratory run used for auditing: 60 s idle, 120 s
    /// active, no FIN/RST expiration.
    pub fn preliminary() -> Self {
        Self {
            active_timeout_s: 120.0,
            fin_rst_expiration: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MeterError> {
        let bad = |m: &str| Err(MeterError::InvalidConfig(m.to_string()));
        if !(self.idle_timeout_s.is_finite() && self.idle_timeout_s > 0.0) {
            return bad("idle_timeout_s must be > 0");
        }
        if !(self.active_timeout_s.is_finite() && self.active_timeout_s > 0.0) {
            return bad("active_timeout_s must be > 0");
        }
        if !(0.0..1.0).contains(&self.fd_tolerance) {
            return bad("fd_tolerance must be in [0, 1)");
        }
        if self.pc_triggers.contains(&0) {
            return bad("packet-count triggers must be >= 1");
        }
        if self.fd_triggers_ms.contains(&0) {
            return bad("duration triggers must be > 0 ms");
        }
        if self.byte_triggers.contains(&0) {
            return bad("byte triggers must be > 0");
        }
        Ok(())
    }

    pub fn idle_timeout_us(&self) -> i64 {
        (self.idle_timeout_s * 1e6).round() as i64
    }

    pub fn active_timeout_us(&self) -> i64 {
        (self.active_timeout_s * 1e6).round() as i64
    }

    /// Every configured trigger in [`Trigger`] order.
    pub fn triggers(&self) -> Vec<Trigger> {
        self.pc_triggers
            .iter()
            .map(|&n| Trigger::PacketCount(n))
            .chain(self.fd_triggers_ms.iter().map(|&t| Trigger::Duration(t)))
            .chain(self.byte_triggers.iter().map(|&b| Trigger::Bytes(b)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = MeterConfig::default();
        assert_eq!(c.idle_timeout_us(), 60_000_000);
        assert_eq!(c.active_timeout_us(), 18_000_000_000);
        assert_eq!(c.pc_triggers.len(), 19);
        assert_eq!(c.fd_triggers_ms.len(), 12);
        assert!(c.validate().is_ok());
        let parsed: MeterConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn invalid_configs() {
        for c in [
            MeterConfig {
                idle_timeout_s: 0.0,
                ..Default::default()
            },
            MeterConfig {
                active_timeout_s: -1.0,
                ..Default::default()
            },
            MeterConfig {
                fd_tolerance: 1.0,
                ..Default::default()
            },
            MeterConfig {
                pc_triggers: [0].into(),
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn trigger_text() {
        for t in [
            Trigger::PacketCount(7),
            Trigger::Duration(150),
            Trigger::Bytes(4096),
        ] {
            assert_eq!(t.to_string().parse::<Trigger>().unwrap(), t);
        }
        assert!("XX=1".parse::<Trigger>().is_err());
        assert!(Trigger::PacketCount(20) < Trigger::Duration(5));
    }
}
