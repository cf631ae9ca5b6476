use std::fmt::Write as _;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::trace::{fnv1a64, RawPacket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: IpAddr, port: u16) -> Self {
        Self { ip, port }
    }
}

/// Direction-agnostic five-tuple: `a ≤ b` under `(ip, port)` ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub a: Endpoint,
    pub b: Endpoint,
    pub protocol: u8,
}

/// Which canonical endpoint sent a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    AToB,
    BToA,
}

impl Orientation {
    pub fn flip(self) -> Self {
        match self {
            Orientation::AToB => Orientation::BToA,
            Orientation::BToA => Orientation::AToB,
        }
    }
}

impl FlowKey {
    pub fn new(x: Endpoint, y: Endpoint, protocol: u8) -> Self {
        Self::oriented(x, y, protocol).0
    }

    /// Canonical key plus the orientation of `src → dst`.
    pub fn oriented(src: Endpoint, dst: Endpoint, protocol: u8) -> (Self, Orientation) {
        if src <= dst {
            (
                Self {
                    a: src,
                    b: dst,
                    protocol,
                },
                Orientation::AToB,
            )
        } else {
            (
                Self {
                    a: dst,
                    b: src,
                    protocol,
                },
                Orientation::BToA,
            )
        }
    }

    pub fn of_packet(p: &RawPacket) -> (Self, Orientation) {
        Self::oriented(
            Endpoint::new(p.src_ip, p.src_port),
            Endpoint::new(p.dst_ip, p.dst_port),
            p.protocol,
        )
    }

    /// `(source, destination)` as seen from `orientation`.
    pub fn endpoints(&self, orientation: Orientation) -> (Endpoint, Endpoint) {
        match orientation {
            Orientation::AToB => (self.a, self.b),
            Orientation::BToA => (self.b, self.a),
        }
    }
}

/// Six-tuple flow identity: the key plus the first packet's timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowId {
    pub key: FlowKey,
    pub start_us: i64,
    pub hash64: u64,
}

impl FlowId {
    pub fn new(key: FlowKey, start_us: i64) -> Self {
        Self {
            key,
            start_us,
            hash64: flow_hash(&key, start_us),
        }
    }
}

fn push_hex_ip(out: &mut String, ip: &IpAddr) {
    let octets: Vec<u8> = match ip {
        IpAddr::V4(v4) => v4.octets().to_vec(),
        IpAddr::V6(v6) => v6.octets().to_vec(),
    };
    for o in octets {
        let _ = write!(out, "{o:02x}");
    }
}

/// Canonical text form hashed by [`flow_hash`]:
/// `ipA|portA|ipB|portB|proto|start_us`, IPs as lowercase hex octets, ports
/// as four hex digits, protocol and start time in decimal.
pub fn six_tuple_string(key: &FlowKey, start_us: i64) -> String {
    let mut s = String::with_capacity(64);
    push_hex_ip(&mut s, &key.a.ip);
    let _ = write!(s, "|{:04x}|", key.a.port);
    push_hex_ip(&mut s, &key.b.ip);
    let _ = write!(s, "|{:04x}|{}|{}", key.b.port, key.protocol, start_us);
    s
}

/// FNV-1a 64 over [`six_tuple_string`].
pub fn flow_hash(key: &FlowKey, start_us: i64) -> u64 {
    fnv1a64(six_tuple_string(key, start_us).as_bytes())
}
