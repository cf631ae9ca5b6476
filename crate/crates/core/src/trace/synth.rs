//! Deterministic synthetic traces with per-class flow templates.
//!
//! A [`SynthSpec`] is a JSON document:
//!
//! ```json
//! {
//!   "start_us": 1499255000000000,
//!   "flow_gap_us": [1000, 20000],
//!   "shared_prefix": {
//!     "divergence_index": 8,
//!     "iat_us": [1000, 20000], "payload": [100, 400], "reverse_prob": 0.5
//!   },
//!   "templates": [{
//!     "label": "BENIGN", "flows": 200, "protocol": 6, "packets": [18, 24],
//!     "iat_us": [1000, 20000], "payload": [100, 400], "reverse_prob": 0.5,
//!     "first_flags": 2, "data_flags": 24, "close_flags": 17,
//!     "src_pool": ["10.0.0.1", "10.0.0.2"], "dst_pool": ["192.168.10.50"],
//!     "dst_ports": [80], "src_ports": [1024, 65535],
//!     "overrides": [{"from": 8, "to": 8, "payload": [1300, 1400], "flags": 56}]
//!   }]
//! }
//! ```
//!
//! Packet positions are 1-based. Positions before `divergence_index` draw
//! from the shared prefix profile for every template, so classes are
//! statistically identical there. `overrides` then replace individual
//! profile fields over `[from, to]`. Packet 1 always travels
//! source → destination and carries `first_flags`; the last packet carries
//! `close_flags` when set. UDP packets never carry flags.

use std::collections::HashSet;
use std::net::IpAddr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::packet::{
    flags, payload_digest, CapturedFrame, PacketTrace, RawPacket, PROTO_TCP, PROTO_UDP,
};
use super::pcap::{build_frame_with_payload, synthetic_frame_len};
use crate::meter::{Endpoint, FlowId, FlowKey};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid synthetic spec: {0}")]
pub struct InvalidSpec(pub String);

fn default_start() -> i64 {
    1_499_255_000_000_000
}
fn default_gap() -> [i64; 2] {
    [1_000, 20_000]
}
fn default_iat() -> [i64; 2] {
    [1_000, 10_000]
}
fn default_payload() -> [u32; 2] {
    [64, 512]
}
fn default_reverse() -> f64 {
    0.5
}
fn default_first_flags() -> u8 {
    flags::SYN
}
fn default_data_flags() -> u8 {
    flags::PSH | flags::ACK
}
fn default_protocol() -> u8 {
    PROTO_TCP
}
fn default_src_ports() -> [u16; 2] {
    [1024, 65535]
}

/// Per-packet distributions. Ranges are inclusive `[min, max]`, drawn uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketProfile {
    #[serde(default = "default_iat")]
    pub iat_us: [i64; 2],
    #[serde(default = "default_payload")]
    pub payload: [u32; 2],
    #[serde(default = "default_reverse")]
    pub reverse_prob: f64,
    #[serde(default = "default_first_flags")]
    pub first_flags: u8,
    #[serde(default = "default_data_flags")]
    pub data_flags: u8,
}

impl Default for PacketProfile {
    fn default() -> Self {
        Self {
            iat_us: default_iat(),
            payload: default_payload(),
            reverse_prob: default_reverse(),
            first_flags: default_first_flags(),
            data_flags: default_data_flags(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedPrefix {
    /// First 1-based packet position at which templates may differ.
    pub divergence_index: u32,
    #[serde(flatten)]
    pub profile: PacketProfile,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PacketOverride {
    pub from: u32,
    pub to: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iat_us: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTemplate {
    pub label: String,
    pub flows: usize,
    #[serde(default = "default_protocol")]
    pub protocol: u8,
    pub packets: [u32; 2],
    #[serde(flatten)]
    pub profile: PacketProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_flags: Option<u8>,
    pub src_pool: Vec<IpAddr>,
    pub dst_pool: Vec<IpAddr>,
    pub dst_ports: Vec<u16>,
    #[serde(default = "default_src_ports")]
    pub src_ports: [u16; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<PacketOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_start")]
    pub start_us: i64,
    /// Spacing between consecutive flow starts.
    #[serde(default = "default_gap")]
    pub flow_gap_us: [i64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_prefix: Option<SharedPrefix>,
    pub templates: Vec<FlowTemplate>,
}

/// One generated flow as intended by the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthFlow {
    pub id: FlowId,
    pub label: String,
    pub packets: u32,
}

fn check_range<T: PartialOrd + std::fmt::Debug>(what: &str, r: &[T; 2]) -> Result<(), InvalidSpec> {
    if r[0] > r[1] {
        return Err(InvalidSpec(format!(
            "{what}: min {:?} > max {:?}",
            r[0], r[1]
        )));
    }
    Ok(())
}

fn check_profile(what: &str, p: &PacketProfile) -> Result<(), InvalidSpec> {
    check_range(&format!("{what}.iat_us"), &p.iat_us)?;
    check_range(&format!("{what}.payload"), &p.payload)?;
    if p.iat_us[0] < 0 {
        return Err(InvalidSpec(format!("{what}.iat_us must be non-negative")));
    }
    if !(0.0..=1.0).contains(&p.reverse_prob) {
        return Err(InvalidSpec(format!("{what}.reverse_prob outside [0, 1]")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self, InvalidSpec> {
        serde_json::from_str(text).map_err(|e| InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), InvalidSpec> {
        if self.templates.is_empty() {
            return Err(InvalidSpec("no templates".into()));
        }
        check_range("flow_gap_us", &self.flow_gap_us)?;
        if self.flow_gap_us[0] < 0 {
            return Err(InvalidSpec("flow_gap_us must be non-negative".into()));
        }
        if let Some(prefix) = &self.shared_prefix {
            if prefix.divergence_index == 0 {
                return Err(InvalidSpec("divergence_index is 1-based".into()));
            }
            check_profile("shared_prefix", &prefix.profile)?;
        }
        for t in &self.templates {
            let name = format!("template {:?}", t.label);
            if t.label.is_empty() {
                return Err(InvalidSpec("empty template label".into()));
            }
            if t.packets[0] == 0 {
                return Err(InvalidSpec(format!("{name}: zero packet count")));
            }
            check_range(&format!("{name}.packets"), &t.packets)?;
            check_range(&format!("{name}.src_ports"), &t.src_ports)?;
            check_profile(&name, &t.profile)?;
            if t.protocol != PROTO_TCP && t.protocol != PROTO_UDP {
                return Err(InvalidSpec(format!("{name}: protocol must be 6 or 17")));
            }
            if t.src_pool.is_empty() || t.dst_pool.is_empty() || t.dst_ports.is_empty() {
                return Err(InvalidSpec(format!("{name}: empty endpoint pool")));
            }
            let v4 = t.src_pool[0].is_ipv4();
            if t.src_pool
                .iter()
                .chain(&t.dst_pool)
                .any(|ip| ip.is_ipv4() != v4)
            {
                return Err(InvalidSpec(format!("{name}: pools mix IPv4 and IPv6")));
            }
            for o in &t.overrides {
                if o.from == 0 || o.from > o.to {
                    return Err(InvalidSpec(format!(
                        "{name}: bad override range {}..{}",
                        o.from, o.to
                    )));
                }
                if let Some(r) = &o.iat_us {
                    check_range(&format!("{name}.override.iat_us"), r)?;
                }
                if let Some(r) = &o.payload {
                    check_range(&format!("{name}.override.payload"), r)?;
                }
                if o.reverse_prob.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
                    return Err(InvalidSpec(format!(
                        "{name}: override reverse_prob outside [0, 1]"
                    )));
                }
            }
        }
        if self.templates.iter().all(|t| t.flows == 0) {
            return Err(InvalidSpec("no flows requested".into()));
        }
        Ok(())
    }
}

struct Position {
    iat_us: [i64; 2],
    payload: [u32; 2],
    reverse_prob: f64,
    flags: u8,
}

fn position_params(spec: &SynthSpec, t: &FlowTemplate, pos: u32) -> Position {
    let base = match &spec.shared_prefix {
        Some(p) if pos < p.divergence_index => &p.profile,
        _ => &t.profile,
    };
    let mut out = Position {
        iat_us: base.iat_us,
        payload: base.payload,
        reverse_prob: base.reverse_prob,
        flags: if pos == 1 {
            base.first_flags
        } else {
            base.data_flags
        },
    };
    for o in t
        .overrides
        .iter()
        .filter(|o| (o.from..=o.to).contains(&pos))
    {
        if let Some(v) = o.iat_us {
            out.iat_us = v;
        }
        if let Some(v) = o.payload {
            out.payload = v;
        }
        if let Some(v) = o.reverse_prob {
            out.reverse_prob = v;
        }
        if let Some(v) = o.flags {
            out.flags = v;
        }
    }
    out
}

const MAX_ENDPOINT_DRAWS: usize = 256;

/// Generates a trace sorted by timestamp plus the intended flow list.
pub fn synth_trace(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(PacketTrace, Vec<GroundTruthFlow>), InvalidSpec> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut order: Vec<usize> = spec
        .templates
        .iter()
        .enumerate()
        .flat_map(|(i, t)| std::iter::repeat_n(i, t.flows))
        .collect();
    order.shuffle(&mut rng);

    let mut used_keys = HashSet::new();
    let mut packets: Vec<(RawPacket, u64)> = Vec::new();
    let mut truth = Vec::with_capacity(order.len());
    let mut flow_start = spec.start_us;

    for (n, &ti) in order.iter().enumerate() {
        let t = &spec.templates[ti];
        if n > 0 {
            flow_start += rng.gen_range(spec.flow_gap_us[0]..=spec.flow_gap_us[1]);
        }
        let mut drawn = None;
        for _ in 0..MAX_ENDPOINT_DRAWS {
            let client = Endpoint::new(
                *t.src_pool.choose(&mut rng).expect("validated"),
                rng.gen_range(t.src_ports[0]..=t.src_ports[1]),
            );
            let server = Endpoint::new(
                *t.dst_pool.choose(&mut rng).expect("validated"),
                *t.dst_ports.choose(&mut rng).expect("validated"),
            );
            if client == server {
                continue;
            }
            if used_keys.insert(FlowKey::new(client, server, t.protocol)) {
                drawn = Some((client, server));
                break;
            }
        }
        let (client, server) = drawn.ok_or_else(|| {
            InvalidSpec(format!("template {:?}: endpoint pool exhausted", t.label))
        })?;

        let n_packets = rng.gen_range(t.packets[0]..=t.packets[1]);
        let mut ts = flow_start;
        for pos in 1..=n_packets {
            let params = position_params(spec, t, pos);
            if pos > 1 {
                ts += rng.gen_range(params.iat_us[0]..=params.iat_us[1]);
            }
            let reverse = pos > 1 && rng.gen_bool(params.reverse_prob);
            let payload_len = rng.gen_range(params.payload[0]..=params.payload[1]);
            let (src, dst) = if reverse {
                (server, client)
            } else {
                (client, server)
            };
            let mut tcp_flags = params.flags;
            if pos == n_packets {
                if let Some(close) = t.close_flags {
                    tcp_flags = close;
                }
            }
            if t.protocol != PROTO_TCP {
                tcp_flags = 0;
            }
            let tag = packets.len() as u64;
            let prefix = payload_prefix(tag, payload_len);
            packets.push((
                RawPacket {
                    ts_us: ts,
                    src_ip: src.ip,
                    dst_ip: dst.ip,
                    src_port: src.port,
                    dst_port: dst.port,
                    protocol: t.protocol,
                    tcp_flags,
                    payload_len,
                    wire_len: synthetic_frame_len(src.ip, t.protocol, payload_len),
                    payload_digest: Some(tagged_payload_digest(prefix, payload_len)),
                },
                tag,
            ));
        }
        truth.push(GroundTruthFlow {
            id: FlowId::new(FlowKey::new(client, server, t.protocol), flow_start),
            label: t.label.clone(),
            packets: n_packets,
        });
    }

    // stable: ties keep flow-generation order
    packets.sort_by_key(|p| p.0.ts_us);
    let frames = packets
        .iter()
        .map(|(p, tag)| {
            let data = build_frame_with_payload(p, &payload_prefix(*tag, p.payload_len))
                .map_err(|e| InvalidSpec(e.to_string()))?;
            let orig_len = data.len() as u32;
            Ok(CapturedFrame { data, orig_len })
        })
        .collect::<Result<Vec<_>, InvalidSpec>>()?;
    let mut trace = PacketTrace::new(
        packets.into_iter().map(|p| p.0).collect(),
        format!("synthetic:{seed}"),
    );
    trace.frames = Some(frames);
    Ok((trace, truth))
}

/// Every generated packet carries its generation index at the start of its
/// payload, so no two packets with a payload look like retransmissions.
fn payload_prefix(tag: u64, payload_len: u32) -> Vec<u8> {
    tag.to_le_bytes()[..8.min(payload_len as usize)].to_vec()
}

fn tagged_payload_digest(prefix: Vec<u8>, payload_len: u32) -> u64 {
    let mut payload = prefix;
    payload.resize(payload_len as usize, 0);
    payload_digest(&payload)
}
