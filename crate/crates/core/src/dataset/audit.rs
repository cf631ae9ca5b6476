//! Diagnostics over labelled, unfiltered flow records.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::labeling::{label_flow, RuleSet};
use crate::meter::FlowRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub benign: usize,
    pub attack: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, benign: bool) {
        if benign {
            self.benign += 1;
        } else {
            self.attack += 1;
        }
        self.total += 1;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAudit {
    /// Flows with zero transport payload.
    pub zpl_flows: usize,
    pub payload_flows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub per_label: BTreeMap<String, LabelAudit>,
    /// Flows with more than two FIN-flagged packets.
    pub fin_over_2: Tally,
    /// Flows with more than two RST-flagged packets.
    pub rst_over_2: Tally,
    /// Flows whose largest inter-arrival gap is in `[0.8·idle, idle)`.
    pub piat_near_idle: Tally,
    /// Five-tuples that produced more than one flow record.
    pub repeated_key_groups: usize,
    /// Records belonging to those five-tuples.
    pub repeated_key_records: usize,
}

pub fn audit(records: &[FlowRecord], rules: &RuleSet, idle_timeout_s: f64) -> AuditReport {
    let mut report = AuditReport::default();
    let idle_ms = idle_timeout_s * 1000.0;
    let mut per_key: HashMap<_, usize> = HashMap::new();
    for r in records {
        let label = label_flow(r, rules);
        let benign = rules.is_default(label);
        let f = &r.features;
        let entry = report.per_label.entry(label.to_string()).or_default();
        if f.bidirectional.payload_bytes == 0 {
            entry.zpl_flows += 1;
        } else {
            entry.payload_flows += 1;
        }
        if f.flags.fin > 2 {
            report.fin_over_2.add(benign);
        }
        if f.flags.rst > 2 {
            report.rst_over_2.add(benign);
        }
        let max_piat = f.bidirectional.max_piat_ms;
        if f.bidirectional.packets >= 2 && max_piat >= 0.8 * idle_ms && max_piat < idle_ms {
            report.piat_near_idle.add(benign);
        }
        *per_key.entry(r.id.key).or_default() += 1;
    }
    for n in per_key.into_values().filter(|&n| n > 1) {
        report.repeated_key_groups += 1;
        report.repeated_key_records += n;
    }
    report
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self
            .per_label
            .keys()
            .map(|l| l.len())
            .max()
            .unwrap_or(5)
            .max(12);
        writeln!(f, "{:<w$} {:>14} {:>14}", "label", "payload>0", "payload=0")?;
        let (mut p, mut z) = (0, 0);
        for (label, a) in &self.per_label {
            writeln!(
                f,
                "{:<w$} {:>14} {:>14}",
                label, a.payload_flows, a.zpl_flows
            )?;
            p += a.payload_flows;
            z += a.zpl_flows;
        }
        writeln!(f, "{:<w$} {:>14} {:>14}", "total", p, z)?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<24} {:>10} {:>10} {:>10}",
            "metric", "benign", "attack", "total"
        )?;
        for (name, t) in [
            ("flows with FIN > 2", self.fin_over_2),
            ("flows with RST > 2", self.rst_over_2),
            ("max PIAT near idle", self.piat_near_idle),
        ] {
            writeln!(
                f,
                "{:<24} {:>10} {:>10} {:>10}",
                name, t.benign, t.attack, t.total
            )?;
        }
        writeln!(
            f,
            "repeated five-tuples: {} groups, {} records",
            self.repeated_key_groups, self.repeated_key_records
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::LabelRule;
    use crate::meter::{Endpoint, ExpirationReason, FeatureVector, FlowId, FlowKey, Orientation};

    fn rec(
        port: u16,
        start: i64,
        payload: u64,
        fin: u64,
        rst: u64,
        max_piat_ms: f64,
    ) -> FlowRecord {
        let key = FlowKey::new(
            Endpoint::new("10.0.0.1".parse().unwrap(), port),
            Endpoint::new("10.0.0.2".parse().unwrap(), 80),
            6,
        );
        let mut features = FeatureVector::default();
        features.bidirectional.payload_bytes = payload;
        features.bidirectional.packets = 5;
        features.bidirectional.max_piat_ms = max_piat_ms;
        features.flags.fin = fin;
        features.flags.rst = rst;
        FlowRecord {
            id: FlowId::new(key, start),
            direction_anchor: Orientation::AToB,
            first_us: start,
            last_us: start,
            features,
            expiration_reason: ExpirationReason::Idle,
            expired_at_us: start,
        }
    }

    #[test]
    fn empty_input_gives_zero_report() {
        assert_eq!(
            audit(&[], &RuleSet::default(), 60.0),
            AuditReport::default()
        );
    }

    #[test]
    fn planted_counts() {
        let rules = RuleSet::new(vec![LabelRule {
            src_ports: vec![crate::labeling::PortRange { lo: 100, hi: 199 }],
            ..LabelRule::new("attack")
        }]);
        let records = vec![
            rec(1, 0, 0, 3, 0, 10.0),        // benign ZPL, FIN>2
            rec(1, 100, 10, 0, 3, 48_000.0), // same key again, RST>2, near idle
            rec(2, 0, 10, 2, 2, 59_999.0),   // near idle
            rec(150, 0, 0, 5, 9, 60_000.0),  // attack ZPL, FIN>2, RST>2, not near (== idle)
            rec(151, 0, 4, 0, 0, 47_999.0),  // attack, below band
        ];
        let r = audit(&records, &rules, 60.0);
        assert_eq!(
            r.per_label["BENIGN"],
            LabelAudit {
                zpl_flows: 1,
                payload_flows: 2
            }
        );
        assert_eq!(
            r.per_label["attack"],
            LabelAudit {
                zpl_flows: 1,
                payload_flows: 1
            }
        );
        assert_eq!(
            r.fin_over_2,
            Tally {
                benign: 1,
                attack: 1,
                total: 2
            }
        );
        assert_eq!(
            r.rst_over_2,
            Tally {
                benign: 1,
                attack: 1,
                total: 2
            }
        );
        assert_eq!(
            r.piat_near_idle,
            Tally {
                benign: 2,
                attack: 0,
                total: 2
            }
        );
        assert_eq!(r.repeated_key_groups, 1);
        assert_eq!(r.repeated_key_records, 2);
        let text = r.to_string();
        assert!(text.contains("flows with FIN > 2"));
    }
}
