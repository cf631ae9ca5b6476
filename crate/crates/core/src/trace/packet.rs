use std::net::IpAddr;

use serde::{Deserialize, Serialize};

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// TCP flag bits in header order.
pub mod flags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;
    pub const ECE: u8 = 0x40;
    pub const CWR: u8 = 0x80;
}

/// One parsed TCP or UDP packet.
///
/// `payload_digest` is an FNV-1a digest of the transport payload when the
/// whole payload was captured, and `None` when the capture was truncated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawPacket {
    pub ts_us: i64,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub tcp_flags: u8,
    pub payload_len: u32,
    pub wire_len: u32,
    pub payload_digest: Option<u64>,
}

impl RawPacket {
    pub fn has_flag(&self, flag: u8) -> bool {
        self.tcp_flags & flag != 0
    }

    pub fn is_fin_or_rst(&self) -> bool {
        self.has_flag(flags::FIN | flags::RST)
    }
}

/// Bytes of one captured frame, kept so preprocessing can rewrite a capture
/// without re-encoding the packets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedFrame {
    pub data: Vec<u8>,
    pub orig_len: u32,
}

/// Per-file tallies gathered while reading a capture.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadStats {
    pub records: usize,
    /// Records that were valid but not IPv4/IPv6 TCP/UDP (ARP, ICMP, fragments...).
    pub skipped: usize,
    /// Records whose headers could not be parsed.
    pub malformed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketTrace {
    pub packets: Vec<RawPacket>,
    pub source: String,
    /// Original frame bytes, parallel to `packets`, when read from a file.
    pub frames: Option<Vec<CapturedFrame>>,
    /// pcap link-layer type of `frames`.
    pub link_type: u32,
    pub stats: ReadStats,
}

impl PacketTrace {
    pub fn new(packets: Vec<RawPacket>, source: impl Into<String>) -> Self {
        Self {
            packets,
            source: source.into(),
            frames: None,
            link_type: super::pcap::LINKTYPE_ETHERNET,
            stats: ReadStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.packets.windows(2).all(|w| w[0].ts_us <= w[1].ts_us)
    }

    /// Keeps the packets (and frames) at `indices`, in that order.
    pub(crate) fn select(&self, indices: &[usize]) -> PacketTrace {
        PacketTrace {
            packets: indices.iter().map(|&i| self.packets[i].clone()).collect(),
            source: self.source.clone(),
            frames: self
                .frames
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i].clone()).collect()),
            link_type: self.link_type,
            stats: self.stats,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn payload_digest(payload: &[u8]) -> u64 {
    fnv1a64(payload)
}
