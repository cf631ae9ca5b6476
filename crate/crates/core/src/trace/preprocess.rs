//! Duplicate suppression and timestamp reordering.

use std::collections::{BTreeSet, HashMap};
use std::net::IpAddr;

use super::packet::{PacketTrace, RawPacket};

pub const DEFAULT_DEDUP_WINDOW_US: i64 = 10_000;

/// Fields that make two packets "identical" for duplicate suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct PacketIdentity {
    src_ip: IpAddr,
    dst_ip: IpAddr,
    src_port: u16,
    dst_port: u16,
    protocol: u8,
    tcp_flags: u8,
    payload_len: u32,
    wire_len: u32,
    payload_digest: Option<u64>,
}

impl From<&RawPacket> for PacketIdentity {
    fn from(p: &RawPacket) -> Self {
        Self {
            src_ip: p.src_ip,
            dst_ip: p.dst_ip,
            src_port: p.src_port,
            dst_port: p.dst_port,
            protocol: p.protocol,
            tcp_flags: p.tcp_flags,
            payload_len: p.payload_len,
            wire_len: p.wire_len,
            payload_digest: p.payload_digest,
        }
    }
}

/// Indices of the packets that survive duplicate suppression.
///
/// A packet is dropped when an identical packet appears earlier in the
/// sequence (dropped or not) with `|Δts| ≤ window_us`. The input need not be
/// sorted.
pub fn dedup_indices(packets: &[RawPacket], window_us: i64) -> Vec<usize> {
    let mut seen: HashMap<PacketIdentity, BTreeSet<i64>> = HashMap::new();
    let mut keep = Vec::with_capacity(packets.len());
    for (i, p) in packets.iter().enumerate() {
        let times = seen.entry(PacketIdentity::from(p)).or_default();
        let lo = p.ts_us.saturating_sub(window_us);
        let hi = p.ts_us.saturating_add(window_us);
        if times.range(lo..=hi).next().is_none() {
            keep.push(i);
        }
        times.insert(p.ts_us);
    }
    keep
}

pub fn dedup(trace: &PacketTrace, window_us: i64) -> PacketTrace {
    trace.select(&dedup_indices(&trace.packets, window_us))
}

/// Stable sort permutation by timestamp.
pub fn reorder_indices(packets: &[RawPacket]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..packets.len()).collect();
    idx.sort_by_key(|&i| packets[i].ts_us);
    idx
}

pub fn reorder(trace: &PacketTrace) -> PacketTrace {
    trace.select(&reorder_indices(&trace.packets))
}

/// Number of packets whose position changes under [`reorder`].
pub fn displaced_count(packets: &[RawPacket]) -> usize {
    reorder_indices(packets)
        .iter()
        .enumerate()
        .filter(|(pos, &i)| *pos != i)
        .count()
}
