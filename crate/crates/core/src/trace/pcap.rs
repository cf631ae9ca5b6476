//! Classic pcap reading and writing.
//!
//! Reads both byte orders and the nanosecond variant (truncated to µs).
//! Supported link types are Ethernet (with 802.1Q/802.1ad tags), Linux
//! cooked capture and raw IP. Only IPv4/IPv6 TCP and UDP packets become
//! [`RawPacket`]s; everything else is tallied in [`ReadStats`].

use std::fs;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use super::packet::{
    payload_digest, CapturedFrame, PacketTrace, RawPacket, ReadStats, PROTO_TCP, PROTO_UDP,
};
use super::TraceError;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;
pub const LINKTYPE_LINUX_SLL: u32 = 113;
pub const LINKTYPE_IPV4: u32 = 228;
pub const LINKTYPE_IPV6: u32 = 229;

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

#[derive(Clone, Copy)]
struct Header {
    big_endian: bool,
    nanos: bool,
    link_type: u32,
}

impl Header {
    fn u32_at(&self, b: &[u8], off: usize) -> u32 {
        let raw = [b[off], b[off + 1], b[off + 2], b[off + 3]];
        if self.big_endian {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        }
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, TraceError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(TraceError::MalformedHeader(format!(
            "file is {} bytes, shorter than the 24-byte global header",
            bytes.len()
        )));
    }
    let le = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let be = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (big_endian, nanos) = match (le, be) {
        (MAGIC_MICROS, _) => (false, false),
        (MAGIC_NANOS, _) => (false, true),
        (_, MAGIC_MICROS) => (true, false),
        (_, MAGIC_NANOS) => (true, true),
        _ => return Err(TraceError::MalformedHeader(format!("bad magic 0x{be:08x}"))),
    };
    let mut h = Header {
        big_endian,
        nanos,
        link_type: 0,
    };
    let major = if big_endian {
        u16::from_be_bytes([bytes[4], bytes[5]])
    } else {
        u16::from_le_bytes([bytes[4], bytes[5]])
    };
    if major != 2 {
        return Err(TraceError::MalformedHeader(format!(
            "unsupported version {major}"
        )));
    }
    h.link_type = h.u32_at(bytes, 20) & 0x0fff_ffff;
    Ok(h)
}

/// Reads a classic pcap file.
pub fn read_trace(path: impl AsRef<Path>) -> Result<PacketTrace, TraceError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TraceError::UnreadableFile {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut trace = parse_trace(&bytes)?;
    trace.source = path.display().to_string();
    Ok(trace)
}

/// Parses an in-memory pcap image.
pub fn parse_trace(bytes: &[u8]) -> Result<PacketTrace, TraceError> {
    let header = parse_header(bytes)?;
    let mut stats = ReadStats::default();
    let mut packets = Vec::new();
    let mut frames = Vec::new();
    let mut off = GLOBAL_HEADER_LEN;
    while off < bytes.len() {
        if bytes.len() - off < RECORD_HEADER_LEN {
            stats.malformed += 1;
            break;
        }
        let ts_sec = header.u32_at(bytes, off) as i64;
        let ts_frac = header.u32_at(bytes, off + 4) as i64;
        let incl_len = header.u32_at(bytes, off + 8) as usize;
        let orig_len = header.u32_at(bytes, off + 12);
        off += RECORD_HEADER_LEN;
        if bytes.len() - off < incl_len {
            stats.malformed += 1;
            break;
        }
        let data = &bytes[off..off + incl_len];
        off += incl_len;
        stats.records += 1;

        let frac_us = if header.nanos {
            ts_frac / 1000
        } else {
            ts_frac
        };
        let ts_us = ts_sec * 1_000_000 + frac_us;
        match dissect(header.link_type, data, ts_us, orig_len) {
            Dissected::Packet(p) => {
                packets.push(p);
                frames.push(CapturedFrame {
                    data: data.to_vec(),
                    orig_len,
                });
            }
            Dissected::Skipped => stats.skipped += 1,
            Dissected::Malformed => stats.malformed += 1,
        }
    }
    Ok(PacketTrace {
        packets,
        source: String::new(),
        frames: Some(frames),
        link_type: header.link_type,
        stats,
    })
}

enum Dissected {
    Packet(RawPacket),
    Skipped,
    Malformed,
}

fn be16(b: &[u8], off: usize) -> u16 {
    u16::from_be_bytes([b[off], b[off + 1]])
}

fn dissect(link_type: u32, frame: &[u8], ts_us: i64, orig_len: u32) -> Dissected {
    let (ethertype, l3) = match link_type {
        LINKTYPE_ETHERNET => {
            if frame.len() < 14 {
                return Dissected::Malformed;
            }
            let mut et = be16(frame, 12);
            let mut off = 14;
            while et == ETHERTYPE_VLAN || et == ETHERTYPE_QINQ {
                if frame.len() < off + 4 {
                    return Dissected::Malformed;
                }
                et = be16(frame, off + 2);
                off += 4;
            }
            (et, &frame[off..])
        }
        LINKTYPE_LINUX_SLL => {
            if frame.len() < 16 {
                return Dissected::Malformed;
            }
            (be16(frame, 14), &frame[16..])
        }
        LINKTYPE_RAW | LINKTYPE_IPV4 | LINKTYPE_IPV6 => match frame.first().map(|b| b >> 4) {
            Some(4) => (ETHERTYPE_IPV4, frame),
            Some(6) => (ETHERTYPE_IPV6, frame),
            Some(_) => return Dissected::Skipped,
            None => return Dissected::Malformed,
        },
        _ => return Dissected::Skipped,
    };
    let ip = match ethertype {
        ETHERTYPE_IPV4 => parse_ipv4(l3),
        ETHERTYPE_IPV6 => parse_ipv6(l3),
        _ => return Dissected::Skipped,
    };
    let ip = match ip {
        Ok(Some(ip)) => ip,
        Ok(None) => return Dissected::Skipped,
        Err(()) => return Dissected::Malformed,
    };
    match parse_transport(&ip) {
        Ok(Some(t)) => Dissected::Packet(RawPacket {
            ts_us,
            src_ip: ip.src,
            dst_ip: ip.dst,
            src_port: t.src_port,
            dst_port: t.dst_port,
            protocol: ip.protocol,
            tcp_flags: t.flags,
            payload_len: t.payload_len,
            wire_len: orig_len.max(t.payload_len),
            payload_digest: t.payload.map(payload_digest),
        }),
        Ok(None) => Dissected::Skipped,
        Err(()) => Dissected::Malformed,
    }
}

struct IpLayer<'a> {
    src: IpAddr,
    dst: IpAddr,
    protocol: u8,
    /// Transport bytes actually captured.
    body: &'a [u8],
    /// Transport length according to the IP header.
    body_len: usize,
}

fn parse_ipv4(b: &[u8]) -> Result<Option<IpLayer<'_>>, ()> {
    if b.len() < 20 || b[0] >> 4 != 4 {
        return Err(());
    }
    let ihl = ((b[0] & 0x0f) as usize) * 4;
    let total_len = be16(b, 2) as usize;
    if ihl < 20 || b.len() < ihl || total_len < ihl {
        return Err(());
    }
    let frag_offset = be16(b, 6) & 0x1fff;
    if frag_offset != 0 {
        return Ok(None);
    }
    let src = IpAddr::V4(Ipv4Addr::new(b[12], b[13], b[14], b[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(b[16], b[17], b[18], b[19]));
    let end = total_len.min(b.len());
    Ok(Some(IpLayer {
        src,
        dst,
        protocol: b[9],
        body: &b[ihl..end],
        body_len: total_len - ihl,
    }))
}

fn parse_ipv6(b: &[u8]) -> Result<Option<IpLayer<'_>>, ()> {
    if b.len() < 40 || b[0] >> 4 != 6 {
        return Err(());
    }
    let payload_len = be16(b, 4) as usize;
    let mut next = b[6];
    let src: [u8; 16] = b[8..24].try_into().map_err(|_| ())?;
    let dst: [u8; 16] = b[24..40].try_into().map_err(|_| ())?;
    let mut off = 40;
    let end = (40 + payload_len).min(b.len());
    loop {
        match next {
            // hop-by-hop, routing, destination options
            0 | 43 | 60 => {
                if b.len() < off + 2 {
                    return Err(());
                }
                next = b[off];
                off += (b[off + 1] as usize + 1) * 8;
            }
            // fragment
            44 => {
                if b.len() < off + 8 {
                    return Err(());
                }
                if be16(b, off + 2) >> 3 != 0 {
                    return Ok(None);
                }
                next = b[off];
                off += 8;
            }
            _ => break,
        }
        if off > 40 + payload_len {
            return Err(());
        }
    }
    Ok(Some(IpLayer {
        src: IpAddr::V6(Ipv6Addr::from(src)),
        dst: IpAddr::V6(Ipv6Addr::from(dst)),
        protocol: next,
        body: &b[off.min(end)..end],
        body_len: 40 + payload_len - off,
    }))
}

struct Transport<'a> {
    src_port: u16,
    dst_port: u16,
    flags: u8,
    payload_len: u32,
    payload: Option<&'a [u8]>,
}

fn parse_transport<'a>(ip: &IpLayer<'a>) -> Result<Option<Transport<'a>>, ()> {
    let b = ip.body;
    let header_len = match ip.protocol {
        PROTO_TCP => {
            if b.len() < 20 {
                return Err(());
            }
            let doff = ((b[12] >> 4) as usize) * 4;
            if doff < 20 || doff > ip.body_len {
                return Err(());
            }
            doff
        }
        PROTO_UDP => {
            if b.len() < 8 || ip.body_len < 8 {
                return Err(());
            }
            8
        }
        _ => return Ok(None),
    };
    let payload_len = ip.body_len - header_len;
    let payload = (b.len() == ip.body_len).then(|| &b[header_len..]);
    Ok(Some(Transport {
        src_port: be16(b, 0),
        dst_port: be16(b, 2),
        flags: if ip.protocol == PROTO_TCP { b[13] } else { 0 },
        payload_len: payload_len as u32,
        payload,
    }))
}

fn ip_header_len(p: &RawPacket) -> usize {
    match p.src_ip {
        IpAddr::V4(_) => 20,
        IpAddr::V6(_) => 40,
    }
}

fn transport_header_len(p: &RawPacket) -> usize {
    if p.protocol == PROTO_TCP {
        20
    } else {
        8
    }
}

/// On-wire length of the Ethernet frame [`build_frame`] produces.
pub fn synthetic_frame_len(src_ip: IpAddr, protocol: u8, payload_len: u32) -> u32 {
    let ip = if src_ip.is_ipv4() { 20 } else { 40 };
    let l4 = if protocol == PROTO_TCP { 20 } else { 8 };
    14 + ip + l4 + payload_len
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Encodes a packet as an Ethernet frame with a zero-filled payload.
pub fn build_frame(p: &RawPacket) -> Result<Vec<u8>, TraceError> {
    build_frame_with_payload(p, &[])
}

/// Like [`build_frame`], with the payload starting with `prefix` and
/// zero-padded to `payload_len`.
pub fn build_frame_with_payload(p: &RawPacket, prefix: &[u8]) -> Result<Vec<u8>, TraceError> {
    if prefix.len() > p.payload_len as usize {
        return Err(TraceError::Unencodable(format!(
            "payload prefix of {} bytes exceeds payload_len {}",
            prefix.len(),
            p.payload_len
        )));
    }
    if p.src_ip.is_ipv4() != p.dst_ip.is_ipv4() {
        return Err(TraceError::Unencodable("mixed IPv4/IPv6 endpoints".into()));
    }
    if p.protocol != PROTO_TCP && p.protocol != PROTO_UDP {
        return Err(TraceError::Unencodable(format!("protocol {}", p.protocol)));
    }
    let l4_len = transport_header_len(p) + p.payload_len as usize;
    let mut f = Vec::with_capacity(14 + ip_header_len(p) + l4_len);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01]);
    match (p.src_ip, p.dst_ip) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
            let total = 20 + l4_len;
            if total > u16::MAX as usize {
                return Err(TraceError::Unencodable(
                    "IPv4 packet exceeds 65535 bytes".into(),
                ));
            }
            let mut h = [0u8; 20];
            h[0] = 0x45;
            h[2..4].copy_from_slice(&(total as u16).to_be_bytes());
            h[6] = 0x40;
            h[8] = 64;
            h[9] = p.protocol;
            h[12..16].copy_from_slice(&s.octets());
            h[16..20].copy_from_slice(&d.octets());
            let c = ipv4_checksum(&h);
            h[10..12].copy_from_slice(&c.to_be_bytes());
            f.extend_from_slice(&h);
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            f.extend_from_slice(&ETHERTYPE_IPV6.to_be_bytes());
            if l4_len > u16::MAX as usize {
                return Err(TraceError::Unencodable(
                    "IPv6 payload exceeds 65535 bytes".into(),
                ));
            }
            f.extend_from_slice(&[0x60, 0, 0, 0]);
            f.extend_from_slice(&(l4_len as u16).to_be_bytes());
            f.push(p.protocol);
            f.push(64);
            f.extend_from_slice(&s.octets());
            f.extend_from_slice(&d.octets());
        }
        _ => unreachable!(),
    }
    f.extend_from_slice(&p.src_port.to_be_bytes());
    f.extend_from_slice(&p.dst_port.to_be_bytes());
    if p.protocol == PROTO_TCP {
        f.extend_from_slice(&[0; 8]); // seq, ack
        f.push(5 << 4);
        f.push(p.tcp_flags);
        f.extend_from_slice(&[0xff, 0xff, 0, 0, 0, 0]);
    } else {
        f.extend_from_slice(&(l4_len as u16).to_be_bytes());
        f.extend_from_slice(&[0, 0]);
    }
    f.extend_from_slice(prefix);
    f.resize(f.len() + p.payload_len as usize - prefix.len(), 0);
    Ok(f)
}

/// Writes a little-endian µs pcap. Frames captured from a file are written
/// back verbatim; packets without frames are encoded by [`build_frame`].
pub fn write_trace(trace: &PacketTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let io_err = |e| TraceError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_trace(trace)?).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn encode_trace(trace: &PacketTrace) -> Result<Vec<u8>, TraceError> {
    if let Some(frames) = &trace.frames {
        if frames.len() != trace.packets.len() {
            return Err(TraceError::Unencodable(format!(
                "{} frames for {} packets",
                frames.len(),
                trace.packets.len()
            )));
        }
    }
    let link_type = if trace.frames.is_some() {
        trace.link_type
    } else {
        LINKTYPE_ETHERNET
    };
    let mut out = Vec::with_capacity(GLOBAL_HEADER_LEN + trace.len() * 96);
    out.extend_from_slice(&MAGIC_MICROS.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&65535u32.to_le_bytes());
    out.extend_from_slice(&link_type.to_le_bytes());
    for (i, p) in trace.packets.iter().enumerate() {
        if p.ts_us < 0 || p.ts_us / 1_000_000 > u32::MAX as i64 {
            return Err(TraceError::Unencodable(format!(
                "timestamp {} out of pcap range",
                p.ts_us
            )));
        }
        let built;
        let (data, orig_len) = match trace.frames.as_ref() {
            Some(frames) => (&frames[i].data[..], frames[i].orig_len),
            None => {
                built = build_frame(p)?;
                (&built[..], built.len() as u32)
            }
        };
        out.extend_from_slice(&((p.ts_us / 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&((p.ts_us % 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(&orig_len.to_le_bytes());
        out.extend_from_slice(data);
    }
    Ok(out)
}
