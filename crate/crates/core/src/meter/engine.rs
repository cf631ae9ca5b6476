use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::config::{MeterConfig, Trigger};
use super::features::{FeatureVector, FlowAccumulator};
use super::key::{FlowId, FlowKey, Orientation};
use super::MeterError;
use crate::trace::{PacketTrace, RawPacket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpirationReason {
    Idle,
    Active,
    FinRst,
    EndOfTrace,
}

/// A complete flow, exported when it expires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub id: FlowId,
    /// Orientation of the first packet; defines `src2dst`.
    pub direction_anchor: Orientation,
    pub first_us: i64,
    pub last_us: i64,
    pub features: FeatureVector,
    pub expiration_reason: ExpirationReason,
    /// Instant the flow became expirable: the timeout deadline, the FIN/RST
    /// packet time, or the last timestamp of the trace.
    pub expired_at_us: i64,
}

/// State of a live flow at the packet that fired an export trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSnapshot {
    pub parent_id: FlowId,
    pub trigger: Trigger,
    pub features: FeatureVector,
    pub exported_at_us: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeterOutput {
    /// In expiration order.
    pub records: Vec<FlowRecord>,
    /// In trigger order: by packet, then by [`Trigger`] order.
    pub snapshots: Vec<FlowSnapshot>,
}

/// Inclusive µs bounds on the flow duration accepted for an `FD=T` export.
pub fn fd_window_us(target_ms: u64, tolerance: f64) -> (i64, i64) {
    let t_us = target_ms as f64 * 1000.0;
    let lo = ((1.0 - tolerance) * t_us - 1e-6).ceil() as i64;
    let hi = ((1.0 + tolerance) * t_us + 1e-6).floor() as i64;
    (lo, hi)
}

struct LiveFlow {
    id: FlowId,
    seq: u64,
    acc: FlowAccumulator,
    deadline: (i64, ExpirationReason),
    /// Unfired duration targets, ascending: (target ms, lo µs, hi µs).
    fd_pending: Vec<(u64, i64, i64)>,
    bytes_pending: Vec<u64>,
}

/// Single-pass flow table.
///
/// Packets must be fed in non-decreasing timestamp order. A live flow
/// expires once the clock (the latest packet timestamp) passes its idle
/// deadline (`last + idle`, exclusive) or reaches its active deadline
/// (`first + active`); whichever deadline comes first names the reason,
/// idle winning ties. The packet that reveals an expiry starts a new flow.
pub struct FlowMeter {
    config: MeterConfig,
    idle_us: i64,
    active_us: i64,
    fd_targets: Vec<(u64, i64, i64)>,
    table: HashMap<FlowKey, LiveFlow>,
    deadlines: BTreeSet<(i64, u64, FlowKey)>,
    clock: Option<i64>,
    packets_seen: u64,
    out: MeterOutput,
}

impl FlowMeter {
    pub fn new(config: MeterConfig) -> Result<Self, MeterError> {
        config.validate()?;
        let fd_targets = config
            .fd_triggers_ms
            .iter()
            .map(|&t| {
                let (lo, hi) = fd_window_us(t, config.fd_tolerance);
                (t, lo, hi)
            })
            .collect();
        Ok(Self {
            idle_us: config.idle_timeout_us(),
            active_us: config.active_timeout_us(),
            fd_targets,
            config,
            table: HashMap::new(),
            deadlines: BTreeSet::new(),
            clock: None,
            packets_seen: 0,
            out: MeterOutput::default(),
        })
    }

    pub fn config(&self) -> &MeterConfig {
        &self.config
    }

    pub fn live_flows(&self) -> usize {
        self.table.len()
    }

    fn deadline_of(&self, acc: &FlowAccumulator) -> (i64, ExpirationReason) {
        let idle = acc.last_us + self.idle_us + 1;
        let active = acc.first_us + self.active_us;
        if idle <= active {
            (idle, ExpirationReason::Idle)
        } else {
            (active, ExpirationReason::Active)
        }
    }

    fn export(&mut self, flow: LiveFlow, reason: ExpirationReason, at_us: i64) {
        self.out.records.push(FlowRecord {
            id: flow.id,
            direction_anchor: flow.acc.anchor,
            first_us: flow.acc.first_us,
            last_us: flow.acc.last_us,
            features: flow.acc.features(),
            expiration_reason: reason,
            expired_at_us: at_us,
        });
    }

    fn expire_until(&mut self, now: i64) {
        while let Some(&(deadline, seq, key)) = self.deadlines.first() {
            if deadline > now {
                break;
            }
            self.deadlines.remove(&(deadline, seq, key));
            let flow = self.table.remove(&key).expect("deadline index out of sync");
            let reason = flow.deadline.1;
            self.export(flow, reason, deadline);
        }
    }

    pub fn push(&mut self, p: &RawPacket) -> Result<(), MeterError> {
        if let Some(clock) = self.clock {
            if p.ts_us < clock {
                return Err(MeterError::UnsortedTrace {
                    index: self.packets_seen,
                    ts_us: p.ts_us,
                    previous_us: clock,
                });
            }
        }
        self.clock = Some(p.ts_us);
        let index = self.packets_seen;
        self.packets_seen += 1;

        self.expire_until(p.ts_us);

        let (key, orientation) = FlowKey::of_packet(p);
        let mut flow = match self.table.remove(&key) {
            Some(f) => {
                self.deadlines.remove(&(f.deadline.0, f.seq, key));
                f
            }
            None => LiveFlow {
                id: FlowId::new(key, p.ts_us),
                seq: index,
                acc: FlowAccumulator::new(orientation, p.ts_us),
                deadline: (0, ExpirationReason::Idle),
                fd_pending: self.fd_targets.clone(),
                bytes_pending: self.config.byte_triggers.iter().copied().collect(),
            },
        };
        flow.acc.push(p, orientation);
        self.emit_snapshots(&mut flow, p.ts_us);

        if self.config.fin_rst_expiration && p.is_fin_or_rst() {
            self.export(flow, ExpirationReason::FinRst, p.ts_us);
        } else {
            flow.deadline = self.deadline_of(&flow.acc);
            self.deadlines.insert((flow.deadline.0, flow.seq, key));
            self.table.insert(key, flow);
        }
        Ok(())
    }

    fn emit_snapshots(&mut self, flow: &mut LiveFlow, now: i64) {
        let packets = flow.acc.packets();
        let mut fired = Vec::new();
        if u32::try_from(packets).is_ok_and(|n| self.config.pc_triggers.contains(&n)) {
            fired.push(Trigger::PacketCount(packets as u32));
        }
        let elapsed = flow.acc.last_us - flow.acc.first_us;
        let consumed = flow
            .fd_pending
            .iter()
            .take_while(|&&(_, lo, _)| elapsed >= lo)
            .count();
        for (target, _, hi) in flow.fd_pending.drain(..consumed) {
            if elapsed <= hi {
                fired.push(Trigger::Duration(target));
            }
        }
        let bytes = flow.acc.bytes();
        let reached = flow
            .bytes_pending
            .iter()
            .take_while(|&&b| bytes >= b)
            .count();
        fired.extend(flow.bytes_pending.drain(..reached).map(Trigger::Bytes));

        if fired.is_empty() {
            return;
        }
        let features = flow.acc.features();
        self.out
            .snapshots
            .extend(fired.into_iter().map(|trigger| FlowSnapshot {
                parent_id: flow.id,
                trigger,
                features,
                exported_at_us: now,
            }));
    }

    /// Expires every live flow (creation order) and returns all exports.
    pub fn finish(mut self) -> MeterOutput {
        let end = self.clock.unwrap_or(0);
        let mut rest: Vec<LiveFlow> = self.table.drain().map(|(_, f)| f).collect();
        rest.sort_by_key(|f| f.seq);
        for flow in rest {
            self.export(flow, ExpirationReason::EndOfTrace, end);
        }
        self.out
    }
}

/// Meters a whole trace. The trace must be sorted by timestamp.
pub fn meter(trace: &PacketTrace, config: &MeterConfig) -> Result<MeterOutput, MeterError> {
    let mut m = FlowMeter::new(config.clone())?;
    for p in &trace.packets {
        m.push(p)?;
    }
    Ok(m.finish())
}
