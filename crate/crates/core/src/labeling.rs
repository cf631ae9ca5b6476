//! Ground-truth labels from declarative endpoint / protocol / time rules.
//!
//! Rule files are JSON:
//!
//! ```json
//! {
//!   "default_label": "BENIGN",
//!   "rules": [{
//!     "label": "DoS Hulk",
//!     "src_ips": ["172.16.0.1"], "dst_ips": ["192.168.10.0/24"],
//!     "src_ports": [], "dst_ports": [80, "8000-8080"],
//!     "protocol": 6,
//!     "window_us": [1499262180000000, 1499263259999999],
//!     "bidirectional": true
//!   }]
//! }
//! ```
//!
//! Empty sets are wildcards. The first matching rule wins.

use std::fmt;
use std::fs;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::meter::{Endpoint, FlowRecord};

pub const DEFAULT_LABEL: &str = "BENIGN";

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("cannot read rule file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid rule file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid rule {index}: {reason}")]
    Invalid { index: usize, reason: String },
}

/// An address or CIDR block. Bare addresses are host routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IpMatch(pub IpNet);

impl IpMatch {
    pub fn contains(&self, ip: &IpAddr) -> bool {
        self.0.contains(ip)
    }
}

impl FromStr for IpMatch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(net) = s.parse::<IpNet>() {
            return Ok(IpMatch(net.trunc()));
        }
        s.parse::<IpAddr>()
            .map(|ip| IpMatch(IpNet::from(ip)))
            .map_err(|_| format!("not an IP address or CIDR block: {s:?}"))
    }
}

impl fmt::Display for IpMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.prefix_len() == self.0.max_prefix_len() {
            write!(f, "{}", self.0.addr())
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for IpMatch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IpMatch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Inclusive port range; written as `80` or `"8000-8080"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
}

impl PortRange {
    pub fn single(p: u16) -> Self {
        Self { lo: p, hi: p }
    }

    pub fn contains(&self, p: u16) -> bool {
        (self.lo..=self.hi).contains(&p)
    }
}

impl Serialize for PortRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.lo == self.hi {
            s.serialize_u16(self.lo)
        } else {
            s.collect_str(&format_args!("{}-{}", self.lo, self.hi))
        }
    }
}

impl<'de> Deserialize<'de> for PortRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u16),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Ok(PortRange::single(p)),
            Raw::Text(t) => {
                let parse = |s: &str| s.trim().parse::<u16>().map_err(serde::de::Error::custom);
                match t.split_once('-') {
                    Some((a, b)) => {
                        let (lo, hi) = (parse(a)?, parse(b)?);
                        if lo > hi {
                            return Err(serde::de::Error::custom(format!(
                                "empty port range {t:?}"
                            )));
                        }
                        Ok(PortRange { lo, hi })
                    }
                    None => parse(&t).map(PortRange::single),
                }
            }
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub label: String,
    #[serde(default)]
    pub src_ips: Vec<IpMatch>,
    #[serde(default)]
    pub dst_ips: Vec<IpMatch>,
    #[serde(default)]
    pub src_ports: Vec<PortRange>,
    #[serde(default)]
    pub dst_ports: Vec<PortRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_us: Option<[i64; 2]>,
    #[serde(default = "default_true")]
    pub bidirectional: bool,
}

impl LabelRule {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            src_ips: Vec::new(),
            dst_ips: Vec::new(),
            src_ports: Vec::new(),
            dst_ports: Vec::new(),
            protocol: None,
            window_us: None,
            bidirectional: true,
        }
    }

    fn endpoints_match(&self, src: &Endpoint, dst: &Endpoint) -> bool {
        let ip_ok =
            |set: &[IpMatch], ip: &IpAddr| set.is_empty() || set.iter().any(|m| m.contains(ip));
        let port_ok =
            |set: &[PortRange], p: u16| set.is_empty() || set.iter().any(|r| r.contains(p));
        ip_ok(&self.src_ips, &src.ip)
            && ip_ok(&self.dst_ips, &dst.ip)
            && port_ok(&self.src_ports, src.port)
            && port_ok(&self.dst_ports, dst.port)
    }

    pub fn matches(&self, record: &FlowRecord) -> bool {
        if self.protocol.is_some_and(|p| p != record.id.key.protocol) {
            return false;
        }
        if let Some([start, end]) = self.window_us {
            if record.first_us > end || record.last_us < start {
                return false;
            }
        }
        let (src, dst) = record.id.key.endpoints(record.direction_anchor);
        self.endpoints_match(&src, &dst) || (self.bidirectional && self.endpoints_match(&dst, &src))
    }
}

fn default_label() -> String {
    DEFAULT_LABEL.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default = "default_label")]
    pub default_label: String,
    #[serde(default)]
    pub rules: Vec<LabelRule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self {
            description: None,
            default_label: default_label(),
            rules: Vec::new(),
        }
    }
}

impl RuleSet {
    pub fn new(rules: Vec<LabelRule>) -> Self {
        Self {
            rules,
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RuleError> {
        let rs: RuleSet = serde_json::from_str(text)?;
        rs.validate()?;
        Ok(rs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RuleError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RuleError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if self.default_label.is_empty() {
            return Err(RuleError::Invalid {
                index: 0,
                reason: "empty default_label".into(),
            });
        }
        for (index, r) in self.rules.iter().enumerate() {
            if r.label.is_empty() {
                return Err(RuleError::Invalid {
                    index,
                    reason: "empty label".into(),
                });
            }
            if let Some([a, b]) = r.window_us {
                if a > b {
                    return Err(RuleError::Invalid {
                        index,
                        reason: format!("window start {a} > end {b}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn is_default(&self, label: &str) -> bool {
        label == self.default_label
    }
}

/// Label of the first matching rule, or the default label.
pub fn label_flow<'a>(record: &FlowRecord, rules: &'a RuleSet) -> &'a str {
    rules
        .rules
        .iter()
        .find(|r| r.matches(record))
        .map_or(rules.default_label.as_str(), |r| r.label.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meter::{ExpirationReason, FeatureVector, FlowId, FlowKey};

    fn record(src: (&str, u16), dst: (&str, u16), first: i64, last: i64) -> FlowRecord {
        let (key, anchor) = FlowKey::oriented(
            Endpoint::new(src.0.parse().unwrap(), src.1),
            Endpoint::new(dst.0.parse().unwrap(), dst.1),
            6,
        );
        FlowRecord {
            id: FlowId::new(key, first),
            direction_anchor: anchor,
            first_us: first,
            last_us: last,
            features: FeatureVector::default(),
            expiration_reason: ExpirationReason::EndOfTrace,
            expired_at_us: last,
        }
    }

    fn hulk() -> LabelRule {
        LabelRule {
            src_ips: vec!["172.16.0.1".parse().unwrap()],
            dst_ips: vec!["192.168.10.50".parse().unwrap()],
            ..LabelRule::new("DoS Hulk")
        }
    }

    #[test]
    fn empty_ruleset_is_benign() {
        let r = record(("1.1.1.1", 1), ("2.2.2.2", 2), 0, 1);
        assert_eq!(label_flow(&r, &RuleSet::default()), "BENIGN");
    }

    #[test]
    fn bidirectional_rule_matches_reverse_anchor() {
        let r = record(("192.168.10.50", 80), ("172.16.0.1", 40000), 0, 1);
        let rules = RuleSet::new(vec![hulk()]);
        assert_eq!(label_flow(&r, &rules), "DoS Hulk");
        let one_way = RuleSet::new(vec![LabelRule {
            bidirectional: false,
            ..hulk()
        }]);
        assert_eq!(label_flow(&r, &one_way), "BENIGN");
    }

    #[test]
    fn window_overlap_semantics() {
        let rule = LabelRule {
            window_us: Some([100, 200]),
            ..hulk()
        };
        let rules = RuleSet::new(vec![rule]);
        let at = |first, last| {
            label_flow(
                &record(("172.16.0.1", 5), ("192.168.10.50", 80), first, last),
                &rules,
            )
            .to_string()
        };
        assert_eq!(at(50, 100), "DoS Hulk");
        assert_eq!(at(200, 300), "DoS Hulk");
        assert_eq!(at(0, 1000), "DoS Hulk");
        assert_eq!(at(0, 99), "BENIGN");
        assert_eq!(at(201, 300), "BENIGN");
    }

    #[test]
    fn first_match_wins_and_ports_filter() {
        let rules = RuleSet::from_json(
            r#"{"rules": [
                {"label": "web", "dst_ports": ["80-81"], "protocol": 6},
                {"label": "any-tcp", "protocol": 6},
                {"label": "udp", "protocol": 17}
            ]}"#,
        )
        .unwrap();
        assert_eq!(
            label_flow(&record(("1.1.1.1", 5000), ("2.2.2.2", 81), 0, 1), &rules),
            "web"
        );
        assert_eq!(
            label_flow(&record(("1.1.1.1", 5000), ("2.2.2.2", 82), 0, 1), &rules),
            "any-tcp"
        );
    }

    #[test]
    fn cidr_and_json_round_trip() {
        let rules = RuleSet::from_json(
            r#"{"default_label": "normal", "rules": [
                {"label": "x", "src_ips": ["10.0.0.0/8", "2001:db8::1"], "dst_ports": [22, "1000-2000"],
                 "window_us": [1, 2], "bidirectional": false}
            ]}"#,
        )
        .unwrap();
        assert!(rules.rules[0].src_ips[0].contains(&"10.200.1.1".parse().unwrap()));
        let text = serde_json::to_string(&rules).unwrap();
        assert_eq!(RuleSet::from_json(&text).unwrap(), rules);
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(RuleSet::from_json(r#"{"rules": [{"label": "x", "window_us": [5, 1]}]}"#).is_err());
        assert!(RuleSet::from_json(r#"{"rules": [{"label": ""}]}"#).is_err());
        assert!(RuleSet::from_json(r#"{"rules": [{"label": "x", "src_ips": ["nope"]}]}"#).is_err());
        assert!(
            RuleSet::from_json(r#"{"rules": [{"label": "x", "dst_ports": ["9-1"]}]}"#).is_err()
        );
    }
}
