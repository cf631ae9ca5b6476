//! Bidirectional flow features and their incremental accumulators.

use serde::{Deserialize, Serialize};

use super::key::Orientation;
use crate::trace::{flags, RawPacket};

/// Statistics over the packets of one direction scope.
///
/// Packet size is the wire length. Standard deviations are population
/// deviations; deviation and inter-arrival fields are zero below two packets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScopeFeatures {
    pub packets: u64,
    pub bytes: u64,
    pub payload_bytes: u64,
    pub min_ps: u64,
    pub mean_ps: f64,
    pub max_ps: u64,
    pub stddev_ps: f64,
    pub min_piat_ms: f64,
    pub mean_piat_ms: f64,
    pub max_piat_ms: f64,
    pub stddev_piat_ms: f64,
}

/// Packets carrying each TCP flag, over both directions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagCounts {
    pub syn: u64,
    pub fin: u64,
    pub rst: u64,
    pub psh: u64,
    pub ack: u64,
    pub urg: u64,
    pub ece: u64,
    pub cwr: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub duration_ms: f64,
    pub bidirectional: ScopeFeatures,
    pub src2dst: ScopeFeatures,
    pub dst2src: ScopeFeatures,
    pub flags: FlagCounts,
    pub src2dst_fin: u64,
    pub src2dst_rst: u64,
    pub dst2src_fin: u64,
    pub dst2src_rst: u64,
}

const SCOPE_FIELDS: [&str; 11] = [
    "packets",
    "bytes",
    "payload_bytes",
    "min_ps",
    "mean_ps",
    "max_ps",
    "stddev_ps",
    "min_piat_ms",
    "mean_piat_ms",
    "max_piat_ms",
    "stddev_piat_ms",
];

pub const FEATURE_COUNT: usize = 1 + 3 * SCOPE_FIELDS.len() + 8 + 4;

/// Column names in [`FeatureVector::to_values`] order.
pub fn feature_names() -> Vec<String> {
    let mut names = vec!["duration_ms".to_string()];
    for scope in ["bidirectional", "src2dst", "dst2src"] {
        names.extend(SCOPE_FIELDS.iter().map(|f| format!("{scope}_{f}")));
    }
    for flag in ["syn", "fin", "rst", "psh", "ack", "urg", "ece", "cwr"] {
        names.push(format!("bidirectional_{flag}_packets"));
    }
    names.extend(
        [
            "src2dst_fin_packets",
            "src2dst_rst_packets",
            "dst2src_fin_packets",
            "dst2src_rst_packets",
        ]
        .map(String::from),
    );
    debug_assert_eq!(names.len(), FEATURE_COUNT);
    names
}

impl ScopeFeatures {
    fn push_values(&self, out: &mut Vec<f64>) {
        out.extend([
            self.packets as f64,
            self.bytes as f64,
            self.payload_bytes as f64,
            self.min_ps as f64,
            self.mean_ps,
            self.max_ps as f64,
            self.stddev_ps,
            self.min_piat_ms,
            self.mean_piat_ms,
            self.max_piat_ms,
            self.stddev_piat_ms,
        ]);
    }

    fn from_values(v: &[f64]) -> Result<Self, String> {
        Ok(Self {
            packets: as_count(v[0])?,
            bytes: as_count(v[1])?,
            payload_bytes: as_count(v[2])?,
            min_ps: as_count(v[3])?,
            mean_ps: v[4],
            max_ps: as_count(v[5])?,
            stddev_ps: v[6],
            min_piat_ms: v[7],
            mean_piat_ms: v[8],
            max_piat_ms: v[9],
            stddev_piat_ms: v[10],
        })
    }
}

fn as_count(x: f64) -> Result<u64, String> {
    if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(format!("{x} is not a count"))
    }
}

impl FeatureVector {
    pub fn to_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_COUNT);
        v.push(self.duration_ms);
        self.bidirectional.push_values(&mut v);
        self.src2dst.push_values(&mut v);
        self.dst2src.push_values(&mut v);
        let f = &self.flags;
        v.extend([f.syn, f.fin, f.rst, f.psh, f.ack, f.urg, f.ece, f.cwr].map(|c| c as f64));
        v.extend(
            [
                self.src2dst_fin,
                self.src2dst_rst,
                self.dst2src_fin,
                self.dst2src_rst,
            ]
            .map(|c| c as f64),
        );
        v
    }

    pub fn from_values(v: &[f64]) -> Result<Self, String> {
        if v.len() != FEATURE_COUNT {
            return Err(format!("expected {FEATURE_COUNT} values, got {}", v.len()));
        }
        let n = SCOPE_FIELDS.len();
        let c = |i: usize| as_count(v[i]);
        let fl = 1 + 3 * n;
        Ok(Self {
            duration_ms: v[0],
            bidirectional: ScopeFeatures::from_values(&v[1..1 + n])?,
            src2dst: ScopeFeatures::from_values(&v[1 + n..1 + 2 * n])?,
            dst2src: ScopeFeatures::from_values(&v[1 + 2 * n..fl])?,
            flags: FlagCounts {
                syn: c(fl)?,
                fin: c(fl + 1)?,
                rst: c(fl + 2)?,
                psh: c(fl + 3)?,
                ack: c(fl + 4)?,
                urg: c(fl + 5)?,
                ece: c(fl + 6)?,
                cwr: c(fl + 7)?,
            },
            src2dst_fin: c(fl + 8)?,
            src2dst_rst: c(fl + 9)?,
            dst2src_fin: c(fl + 10)?,
            dst2src_rst: c(fl + 11)?,
        })
    }
}

/// Welford running mean / second moment.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn population_stddev(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }
}

#[derive(Debug, Clone, Default)]
struct ScopeAccumulator {
    packets: u64,
    bytes: u64,
    payload_bytes: u64,
    min_ps: u64,
    max_ps: u64,
    size: Moments,
    last_ts: Option<i64>,
    piat_sum_us: i64,
    piat_min_us: i64,
    piat_max_us: i64,
    piat: Moments,
}

impl ScopeAccumulator {
    fn push(&mut self, p: &RawPacket) {
        let size = p.wire_len as u64;
        if self.packets == 0 {
            self.min_ps = size;
            self.max_ps = size;
        } else {
            self.min_ps = self.min_ps.min(size);
            self.max_ps = self.max_ps.max(size);
        }
        self.packets += 1;
        self.bytes += size;
        self.payload_bytes += p.payload_len as u64;
        self.size.push(size as f64);
        if let Some(last) = self.last_ts {
            let gap = p.ts_us - last;
            if self.piat.n == 0 {
                self.piat_min_us = gap;
                self.piat_max_us = gap;
            } else {
                self.piat_min_us = self.piat_min_us.min(gap);
                self.piat_max_us = self.piat_max_us.max(gap);
            }
            self.piat_sum_us += gap;
            self.piat.push(gap as f64);
        }
        self.last_ts = Some(p.ts_us);
    }

    fn features(&self) -> ScopeFeatures {
        let mut f = ScopeFeatures {
            packets: self.packets,
            bytes: self.bytes,
            payload_bytes: self.payload_bytes,
            min_ps: self.min_ps,
            max_ps: self.max_ps,
            ..Default::default()
        };
        if self.packets > 0 {
            f.mean_ps = self.bytes as f64 / self.packets as f64;
            f.stddev_ps = self.size.population_stddev();
        }
        if self.piat.n > 0 {
            f.min_piat_ms = self.piat_min_us as f64 / 1000.0;
            f.max_piat_ms = self.piat_max_us as f64 / 1000.0;
            f.mean_piat_ms = self.piat_sum_us as f64 / self.piat.n as f64 / 1000.0;
            f.stddev_piat_ms = self.piat.population_stddev() / 1000.0;
        }
        f
    }
}

/// Incremental state of one flow, orientation-relative to its first packet.
#[derive(Debug, Clone)]
pub(crate) struct FlowAccumulator {
    pub anchor: Orientation,
    pub first_us: i64,
    pub last_us: i64,
    bidirectional: ScopeAccumulator,
    src2dst: ScopeAccumulator,
    dst2src: ScopeAccumulator,
    flags: FlagCounts,
    src2dst_fin: u64,
    src2dst_rst: u64,
    dst2src_fin: u64,
    dst2src_rst: u64,
}

impl FlowAccumulator {
    pub fn new(anchor: Orientation, first_us: i64) -> Self {
        Self {
            anchor,
            first_us,
            last_us: first_us,
            bidirectional: Default::default(),
            src2dst: Default::default(),
            dst2src: Default::default(),
            flags: Default::default(),
            src2dst_fin: 0,
            src2dst_rst: 0,
            dst2src_fin: 0,
            dst2src_rst: 0,
        }
    }

    pub fn packets(&self) -> u64 {
        self.bidirectional.packets
    }

    pub fn bytes(&self) -> u64 {
        self.bidirectional.bytes
    }

    pub fn duration_ms(&self) -> f64 {
        (self.last_us - self.first_us) as f64 / 1000.0
    }

    pub fn push(&mut self, p: &RawPacket, orientation: Orientation) {
        self.last_us = p.ts_us;
        self.bidirectional.push(p);
        let forward = orientation == self.anchor;
        if forward {
            self.src2dst.push(p);
        } else {
            self.dst2src.push(p);
        }
        let fl = p.tcp_flags;
        let f = &mut self.flags;
        for (bit, counter) in [
            (flags::SYN, &mut f.syn),
            (flags::FIN, &mut f.fin),
            (flags::RST, &mut f.rst),
            (flags::PSH, &mut f.psh),
            (flags::ACK, &mut f.ack),
            (flags::URG, &mut f.urg),
            (flags::ECE, &mut f.ece),
            (flags::CWR, &mut f.cwr),
        ] {
            if fl & bit != 0 {
                *counter += 1;
            }
        }
        let fin = (fl & flags::FIN != 0) as u64;
        let rst = (fl & flags::RST != 0) as u64;
        if forward {
            self.src2dst_fin += fin;
            self.src2dst_rst += rst;
        } else {
            self.dst2src_fin += fin;
            self.dst2src_rst += rst;
        }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector {
            duration_ms: self.duration_ms(),
            bidirectional: self.bidirectional.features(),
            src2dst: self.src2dst.features(),
            dst2src: self.dst2src.features(),
            flags: self.flags,
            src2dst_fin: self.src2dst_fin,
            src2dst_rst: self.src2dst_rst,
            dst2src_fin: self.dst2src_fin,
            dst2src_rst: self.dst2src_rst,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::PROTO_TCP;

    fn pkt(ts: i64, forward: bool, wire: u32, payload: u32, fl: u8) -> (RawPacket, Orientation) {
        let p = RawPacket {
            ts_us: ts,
            src_ip: "10.0.0.1".parse().unwrap(),
            dst_ip: "10.0.0.2".parse().unwrap(),
            src_port: 1,
            dst_port: 2,
            protocol: PROTO_TCP,
            tcp_flags: fl,
            payload_len: payload,
            wire_len: wire,
            payload_digest: None,
        };
        (
            p,
            if forward {
                Orientation::AToB
            } else {
                Orientation::BToA
            },
        )
    }

    #[test]
    fn schema_width_and_names() {
        let names = feature_names();
        assert_eq!(names.len(), FEATURE_COUNT);
        assert_eq!(FEATURE_COUNT, 46);
        assert_eq!(names[0], "duration_ms");
        assert_eq!(names[1], "bidirectional_packets");
        assert_eq!(names[45], "dst2src_rst_packets");
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn hand_computed_flow() {
        let mut acc = FlowAccumulator::new(Orientation::AToB, 0);
        for (p, o) in [
            pkt(0, true, 60, 0, flags::SYN),
            pkt(1_000, false, 60, 0, flags::SYN | flags::ACK),
            pkt(4_000, true, 100, 40, flags::ACK | flags::PSH),
            pkt(10_000, true, 60, 0, flags::FIN | flags::ACK),
        ] {
            acc.push(&p, o);
        }
        let f = acc.features();
        assert_eq!(f.duration_ms, 10.0);
        assert_eq!(f.bidirectional.packets, 4);
        assert_eq!(f.bidirectional.bytes, 280);
        assert_eq!(f.bidirectional.payload_bytes, 40);
        assert_eq!(f.bidirectional.mean_ps, 70.0);
        // sizes 60,60,100,60: variance = (3*100 + 900)/4 = 300
        assert!((f.bidirectional.stddev_ps - 300f64.sqrt()).abs() < 1e-12);
        // gaps 1,3,6 ms
        assert_eq!(f.bidirectional.min_piat_ms, 1.0);
        assert_eq!(f.bidirectional.max_piat_ms, 6.0);
        assert!((f.bidirectional.mean_piat_ms - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.src2dst.packets, 3);
        // forward gaps 4, 6 ms
        assert_eq!(f.src2dst.mean_piat_ms, 5.0);
        assert!((f.src2dst.stddev_piat_ms - 1.0).abs() < 1e-12);
        assert_eq!(f.dst2src.packets, 1);
        assert_eq!(f.dst2src.stddev_ps, 0.0);
        assert_eq!(f.dst2src.max_piat_ms, 0.0);
        assert_eq!(f.flags.syn, 2);
        assert_eq!(f.flags.ack, 3);
        assert_eq!(f.src2dst_fin, 1);
        assert_eq!(f.dst2src_fin, 0);
        assert_eq!(FeatureVector::from_values(&f.to_values()).unwrap(), f);
    }

    #[test]
    fn from_values_rejects_bad_counts() {
        let mut v = FeatureVector::default().to_values();
        v[1] = 1.5;
        assert!(FeatureVector::from_values(&v).is_err());
        assert!(FeatureVector::from_values(&v[..3]).is_err());
    }
}
