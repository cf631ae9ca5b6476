//! Shared fixtures: synthetic corpora and a naive reference meter used as an
//! oracle for the streaming implementation.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use earlyflow::dataset::{build_cf, build_pf, Dataset, DEFAULT_MIN_CLASS_COUNT};
use earlyflow::labeling::{IpMatch, LabelRule, RuleSet};
use earlyflow::meter::{
    feature_names, meter, Endpoint, ExpirationReason, FeatureVector, FlagCounts, FlowId, FlowKey,
    FlowRecord, FlowSnapshot, MeterConfig, MeterOutput, ScopeFeatures, Trigger,
};
use earlyflow::trace::synth::{FlowTemplate, PacketOverride, PacketProfile, SharedPrefix};
use earlyflow::trace::{
    flags, synth_trace, RawPacket, SynthSpec, DEFAULT_DEDUP_WINDOW_US, PROTO_TCP, PROTO_UDP,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ATTACKER: &str = "172.16.0.1";
pub const ANOMALY_LABEL: &str = "DoS";

fn ip(s: &str) -> IpAddr {
    s.parse().unwrap()
}

fn benign_clients() -> Vec<IpAddr> {
    (1..=20).map(|i| ip(&format!("10.0.0.{i}"))).collect()
}

pub fn template(
    label: &str,
    flows: usize,
    packets: [u32; 2],
    src_pool: Vec<IpAddr>,
) -> FlowTemplate {
    FlowTemplate {
        label: label.into(),
        flows,
        protocol: PROTO_TCP,
        packets,
        profile: PacketProfile {
            iat_us: [1_000, 20_000],
            payload: [100, 400],
            reverse_prob: 0.5,
            first_flags: flags::SYN,
            data_flags: flags::PSH | flags::ACK,
        },
        close_flags: None,
        src_pool,
        dst_pool: vec![ip("192.168.10.50")],
        dst_ports: vec![80],
        src_ports: [1024, 65535],
        overrides: Vec::new(),
    }
}

/// Flows are identical in distribution before packet `k`; at packet `k` the
/// anomaly class carries one large, URG/ECE/CWR-flagged packet.
pub fn late_divergence_spec(benign: usize, anomaly: usize, k: u32) -> SynthSpec {
    let b = template("BENIGN", benign, [18, 24], benign_clients());
    let mut a = template(ANOMALY_LABEL, anomaly, [18, 24], vec![ip(ATTACKER)]);
    a.overrides.push(PacketOverride {
        from: k,
        to: k,
        payload: Some([1300, 1400]),
        flags: Some(flags::URG | flags::ECE | flags::CWR | flags::ACK),
        ..Default::default()
    });
    SynthSpec {
        start_us: 1_499_255_000_000_000,
        flow_gap_us: [1_000, 20_000],
        shared_prefix: Some(SharedPrefix {
            divergence_index: k,
            profile: b.profile.clone(),
        }),
        templates: vec![b, a],
    }
}

/// Class signal sits in the first two packets.
pub fn early_divergence_spec(benign: usize, anomaly: usize) -> SynthSpec {
    let b = template("BENIGN", benign, [12, 20], benign_clients());
    let mut a = template(ANOMALY_LABEL, anomaly, [12, 20], vec![ip(ATTACKER)]);
    a.overrides.push(PacketOverride {
        from: 1,
        to: 2,
        payload: Some([1200, 1400]),
        reverse_prob: Some(0.0),
        flags: Some(flags::SYN | flags::URG),
        ..Default::default()
    });
    SynthSpec {
        start_us: 1_499_255_000_000_000,
        flow_gap_us: [1_000, 20_000],
        shared_prefix: None,
        templates: vec![b, a],
    }
}

/// Classes differ in every packet.
pub fn separable_spec(per_class: usize) -> SynthSpec {
    let b = template("BENIGN", per_class, [6, 12], benign_clients());
    let mut a = template(ANOMALY_LABEL, per_class, [6, 12], vec![ip(ATTACKER)]);
    a.profile.payload = [1200, 1400];
    SynthSpec {
        start_us: 1_499_255_000_000_000,
        flow_gap_us: [1_000, 20_000],
        shared_prefix: None,
        templates: vec![b, a],
    }
}

pub fn attacker_rules() -> RuleSet {
    RuleSet::new(vec![LabelRule {
        src_ips: vec![IpMatch(format!("{ATTACKER}/32").parse().unwrap())],
        bidirectional: true,
        ..LabelRule::new(ANOMALY_LABEL)
    }])
}

pub struct Corpus {
    pub output: MeterOutput,
    pub cf: Dataset,
}

impl Corpus {
    pub fn pf(&self, t: Trigger) -> Dataset {
        build_pf(&self.output.snapshots, &self.cf, t).unwrap()
    }

    pub fn pc_family(&self, ns: impl IntoIterator<Item = u32>) -> BTreeMap<Trigger, Dataset> {
        ns.into_iter()
            .map(|n| (Trigger::PacketCount(n), self.pf(Trigger::PacketCount(n))))
            .collect()
    }
}

pub fn corpus(spec: &SynthSpec, seed: u64) -> Corpus {
    let (trace, _) = synth_trace(spec, seed).unwrap();
    let output = meter(&trace, &MeterConfig::default()).unwrap();
    let cf = build_cf(&output.records, &attacker_rules(), DEFAULT_MIN_CLASS_COUNT);
    Corpus { output, cf }
}

/// Random packets over small endpoint pools so five-tuples recur, with
/// bursts of equal timestamps and occasional long silences.
pub fn random_packets<R: Rng>(rng: &mut R, n: usize, gap_scale_us: i64) -> Vec<RawPacket> {
    let ips = [ip("10.0.0.1"), ip("10.0.0.2"), ip("10.0.0.3")];
    let ports = [80u16, 443, 5555];
    let mut ts = 1_000_000i64;
    (0..n)
        .map(|_| {
            ts += match rng.gen_range(0..10) {
                0 => 0,
                1 => rng.gen_range(gap_scale_us..gap_scale_us * 4),
                _ => rng.gen_range(1..gap_scale_us / 4 + 2),
            };
            let protocol = if rng.gen_bool(0.8) {
                PROTO_TCP
            } else {
                PROTO_UDP
            };
            let mut tcp_flags = if protocol == PROTO_TCP {
                rng.gen::<u8>() & !(flags::FIN | flags::RST)
            } else {
                0
            };
            if protocol == PROTO_TCP && rng.gen_bool(0.06) {
                tcp_flags |= if rng.gen_bool(0.5) {
                    flags::FIN
                } else {
                    flags::RST
                };
            }
            let payload_len = rng.gen_range(0..1400);
            RawPacket {
                ts_us: ts,
                src_ip: ips[rng.gen_range(0..3)],
                dst_ip: ips[rng.gen_range(0..3)],
                src_port: ports[rng.gen_range(0..3)],
                dst_port: ports[rng.gen_range(0..3)],
                protocol,
                tcp_flags,
                payload_len,
                wire_len: payload_len + rng.gen_range(40..80),
                payload_digest: None,
            }
        })
        .collect()
}

pub fn random_meter_config<R: Rng>(rng: &mut R, gap_scale_us: i64) -> MeterConfig {
    let idle_us = rng.gen_range(gap_scale_us / 2..gap_scale_us * 3);
    MeterConfig {
        idle_timeout_s: idle_us as f64 / 1e6,
        active_timeout_s: rng.gen_range(idle_us..idle_us * 20) as f64 / 1e6,
        fin_rst_expiration: rng.gen_bool(0.7),
        pc_triggers: (1..=12).filter(|_| rng.gen_bool(0.5)).collect(),
        fd_triggers_ms: (0..4)
            .map(|_| rng.gen_range(1..=(gap_scale_us as u64 / 100).max(2)))
            .collect(),
        fd_tolerance: [0.2, 0.1, 0.0][rng.gen_range(0..3)],
        byte_triggers: (0..3).map(|_| rng.gen_range(100..20_000)).collect(),
    }
}

// ---------------------------------------------------------------------------
// Reference meter: group packets by five-tuple, cut each group into flows,
// compute every feature from the packet list, then sort exports.

fn canonical(p: &RawPacket) -> FlowKey {
    FlowKey::new(
        Endpoint::new(p.src_ip, p.src_port),
        Endpoint::new(p.dst_ip, p.dst_port),
        p.protocol,
    )
}

fn scope(pkts: &[&RawPacket]) -> ScopeFeatures {
    let mut f = ScopeFeatures::default();
    let n = pkts.len();
    if n == 0 {
        return f;
    }
    let sizes: Vec<f64> = pkts.iter().map(|p| p.wire_len as f64).collect();
    f.packets = n as u64;
    f.bytes = pkts.iter().map(|p| p.wire_len as u64).sum();
    f.payload_bytes = pkts.iter().map(|p| p.payload_len as u64).sum();
    f.min_ps = pkts.iter().map(|p| p.wire_len as u64).min().unwrap();
    f.max_ps = pkts.iter().map(|p| p.wire_len as u64).max().unwrap();
    f.mean_ps = sizes.iter().sum::<f64>() / n as f64;
    f.stddev_ps = pop_std(&sizes);
    let gaps: Vec<f64> = pkts
        .windows(2)
        .map(|w| (w[1].ts_us - w[0].ts_us) as f64 / 1000.0)
        .collect();
    if !gaps.is_empty() {
        f.min_piat_ms = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        f.max_piat_ms = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        f.mean_piat_ms = gaps.iter().sum::<f64>() / gaps.len() as f64;
        f.stddev_piat_ms = pop_std(&gaps);
    }
    f
}

fn pop_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn reference_features(pkts: &[&RawPacket]) -> FeatureVector {
    let first = pkts[0];
    let fwd = |p: &RawPacket| {
        p.src_ip == first.src_ip
            && p.src_port == first.src_port
            && p.dst_ip == first.dst_ip
            && p.dst_port == first.dst_port
    };
    let s2d: Vec<&RawPacket> = pkts.iter().copied().filter(|p| fwd(p)).collect();
    let d2s: Vec<&RawPacket> = pkts.iter().copied().filter(|p| !fwd(p)).collect();
    let count =
        |v: &[&RawPacket], bit: u8| v.iter().filter(|p| p.tcp_flags & bit != 0).count() as u64;
    FeatureVector {
        duration_ms: (pkts.last().unwrap().ts_us - first.ts_us) as f64 / 1000.0,
        bidirectional: scope(pkts),
        src2dst: scope(&s2d),
        dst2src: scope(&d2s),
        flags: FlagCounts {
            syn: count(pkts, flags::SYN),
            fin: count(pkts, flags::FIN),
            rst: count(pkts, flags::RST),
            psh: count(pkts, flags::PSH),
            ack: count(pkts, flags::ACK),
            urg: count(pkts, flags::URG),
            ece: count(pkts, flags::ECE),
            cwr: count(pkts, flags::CWR),
        },
        src2dst_fin: count(&s2d, flags::FIN),
        src2dst_rst: count(&s2d, flags::RST),
        dst2src_fin: count(&d2s, flags::FIN),
        dst2src_rst: count(&d2s, flags::RST),
    }
}

struct RefFlow {
    idx: Vec<usize>,
    reason: ExpirationReason,
    expired_at: i64,
    // 0 timeout, 1 FIN/RST, 2 end of trace
    kind: u8,
    tiebreak: usize,
}

pub fn reference_meter(packets: &[RawPacket], cfg: &MeterConfig) -> MeterOutput {
    let idle = (cfg.idle_timeout_s * 1e6).round() as i64;
    let active = (cfg.active_timeout_s * 1e6).round() as i64;
    let Some(end) = packets.last().map(|p| p.ts_us) else {
        return MeterOutput::default();
    };

    let mut groups: BTreeMap<FlowKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in packets.iter().enumerate() {
        groups.entry(canonical(p)).or_default().push(i);
    }

    // Earliest instant the flow can no longer absorb packets.
    let timeout = |idx: &[usize]| -> (i64, ExpirationReason) {
        let idle_at = packets[*idx.last().unwrap()].ts_us + idle + 1;
        let active_at = packets[idx[0]].ts_us + active;
        if idle_at <= active_at {
            (idle_at, ExpirationReason::Idle)
        } else {
            (active_at, ExpirationReason::Active)
        }
    };

    let mut flows = Vec::new();
    for idx in groups.values() {
        let mut cur: Vec<usize> = Vec::new();
        for &i in idx {
            let t = packets[i].ts_us;
            if !cur.is_empty() {
                let (at, reason) = timeout(&cur);
                if t >= at {
                    let tiebreak = cur[0];
                    flows.push(RefFlow {
                        idx: std::mem::take(&mut cur),
                        reason,
                        expired_at: at,
                        kind: 0,
                        tiebreak,
                    });
                }
            }
            cur.push(i);
            if cfg.fin_rst_expiration && packets[i].tcp_flags & (flags::FIN | flags::RST) != 0 {
                flows.push(RefFlow {
                    idx: std::mem::take(&mut cur),
                    reason: ExpirationReason::FinRst,
                    expired_at: t,
                    kind: 1,
                    tiebreak: i,
                });
            }
        }
        if !cur.is_empty() {
            let (at, reason) = timeout(&cur);
            let tiebreak = cur[0];
            flows.push(if at <= end {
                RefFlow {
                    idx: cur,
                    reason,
                    expired_at: at,
                    kind: 0,
                    tiebreak,
                }
            } else {
                RefFlow {
                    idx: cur,
                    reason: ExpirationReason::EndOfTrace,
                    expired_at: end,
                    kind: 2,
                    tiebreak,
                }
            });
        }
    }
    flows.sort_by_key(|f| (f.expired_at, f.kind, f.tiebreak));

    let mut records = Vec::new();
    let mut snaps: Vec<(usize, FlowSnapshot)> = Vec::new();
    for f in &flows {
        let pk: Vec<&RawPacket> = f.idx.iter().map(|&i| &packets[i]).collect();
        let first = pk[0];
        let id = FlowId::new(canonical(first), first.ts_us);
        let (_, anchor) = FlowKey::oriented(
            Endpoint::new(first.src_ip, first.src_port),
            Endpoint::new(first.dst_ip, first.dst_port),
            first.protocol,
        );
        records.push(FlowRecord {
            id,
            direction_anchor: anchor,
            first_us: first.ts_us,
            last_us: pk.last().unwrap().ts_us,
            features: reference_features(&pk),
            expiration_reason: f.reason,
            expired_at_us: f.expired_at,
        });

        let mut emit = |j: usize, trigger: Trigger| {
            snaps.push((
                f.idx[j],
                FlowSnapshot {
                    parent_id: id,
                    trigger,
                    features: reference_features(&pk[..=j]),
                    exported_at_us: pk[j].ts_us,
                },
            ));
        };
        for &n in &cfg.pc_triggers {
            if (n as usize) <= pk.len() {
                emit(n as usize - 1, Trigger::PacketCount(n));
            }
        }
        for &t in &cfg.fd_triggers_ms {
            let lo = (1.0 - cfg.fd_tolerance) * t as f64 * 1000.0;
            let hi = (1.0 + cfg.fd_tolerance) * t as f64 * 1000.0;
            let elapsed = |j: usize| (pk[j].ts_us - first.ts_us) as f64;
            if let Some(j) = (0..pk.len()).find(|&j| elapsed(j) >= lo - 1e-6) {
                if elapsed(j) <= hi + 1e-6 {
                    emit(j, Trigger::Duration(t));
                }
            }
        }
        for &b in &cfg.byte_triggers {
            let mut total = 0u64;
            if let Some(j) = (0..pk.len()).find(|&j| {
                total += pk[j].wire_len as u64;
                total >= b
            }) {
                emit(j, Trigger::Bytes(b));
            }
        }
    }
    snaps.sort_by_key(|s| (s.0, s.1.trigger));
    MeterOutput {
        records,
        snapshots: snaps.into_iter().map(|s| s.1).collect(),
    }
}

fn is_real_feature(name: &str) -> bool {
    name == "duration_ms"
        || name.ends_with("mean_ps")
        || name.ends_with("stddev_ps")
        || name.ends_with("_ms")
}

/// Integers exact, reals within 1e-9 relative.
pub fn features_match(a: &FeatureVector, b: &FeatureVector) -> Result<(), String> {
    let names = feature_names();
    for ((x, y), name) in a.to_values().iter().zip(b.to_values()).zip(&names) {
        let ok = if is_real_feature(name) {
            (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0)
        } else {
            *x == y
        };
        if !ok {
            return Err(format!("{name}: {x} vs {y}"));
        }
    }
    Ok(())
}

pub fn outputs_match(got: &MeterOutput, want: &MeterOutput) -> Result<(), String> {
    if got.records.len() != want.records.len() {
        return Err(format!(
            "{} records vs {} expected",
            got.records.len(),
            want.records.len()
        ));
    }
    for (i, (g, w)) in got.records.iter().zip(&want.records).enumerate() {
        let head = |r: &FlowRecord| {
            (
                r.id,
                r.direction_anchor,
                r.first_us,
                r.last_us,
                r.expiration_reason,
                r.expired_at_us,
            )
        };
        if head(g) != head(w) {
            return Err(format!("record {i}: {:?} vs {:?}", head(g), head(w)));
        }
        features_match(&g.features, &w.features).map_err(|e| format!("record {i}: {e}"))?;
    }
    if got.snapshots.len() != want.snapshots.len() {
        return Err(format!(
            "{} snapshots vs {} expected",
            got.snapshots.len(),
            want.snapshots.len()
        ));
    }
    for (i, (g, w)) in got.snapshots.iter().zip(&want.snapshots).enumerate() {
        if (g.parent_id, g.trigger, g.exported_at_us) != (w.parent_id, w.trigger, w.exported_at_us)
        {
            return Err(format!(
                "snapshot {i}: {:?}/{} vs {:?}/{}",
                g.parent_id, g.trigger, w.parent_id, w.trigger
            ));
        }
        features_match(&g.features, &w.features).map_err(|e| format!("snapshot {i}: {e}"))?;
    }
    Ok(())
}

pub fn anomaly_set() -> BTreeSet<String> {
    BTreeSet::new()
}

// ---------------------------------------------------------------------------
// Preprocessing oracles.

pub fn identical(a: &RawPacket, b: &RawPacket) -> bool {
    let mut b = b.clone();
    b.ts_us = a.ts_us;
    *a == b
}

/// O(n²) statement of the rule: drop `i` iff some earlier identical packet
/// lies within the window.
pub fn brute_dedup(packets: &[RawPacket], w: i64) -> Vec<usize> {
    (0..packets.len())
        .filter(|&i| {
            !(0..i).any(|j| {
                identical(&packets[i], &packets[j])
                    && (packets[i].ts_us - packets[j].ts_us).abs() <= w
            })
        })
        .collect()
}

/// Insertion sort: stable by construction.
pub fn brute_reorder(packets: &[RawPacket]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for i in 0..packets.len() {
        let pos = out
            .iter()
            .rposition(|&j| packets[j].ts_us <= packets[i].ts_us)
            .map_or(0, |p| p + 1);
        out.insert(pos, i);
    }
    out
}

/// Random trace with injected copies at chosen offsets, then lightly shuffled.
pub fn fuzzed(seed: u64) -> Vec<RawPacket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(0..120);
    let mut packets = random_packets(&mut rng, n, 20_000);
    let n = packets.len();
    for _ in 0..rng.gen_range(0..=n / 2) {
        let mut copy = packets[rng.gen_range(0..n)].clone();
        let w = DEFAULT_DEDUP_WINDOW_US;
        let delta = [0, 1, w - 1, w, w + 1, 2 * w, rng.gen_range(0..3 * w)][rng.gen_range(0..7)];
        copy.ts_us += if rng.gen_bool(0.2) { -delta } else { delta };
        packets.push(copy);
    }
    for _ in 0..rng.gen_range(0..=packets.len() / 4) {
        let i = rng.gen_range(0..packets.len());
        let j = rng.gen_range(0..packets.len());
        packets.swap(i, j);
    }
    packets
}

// ---------------------------------------------------------------------------
// Metrics oracle.

pub fn labels_of(v: &[u8]) -> Vec<String> {
    v.iter()
        .map(|&i| ["BENIGN", "A", "B", "C"][i as usize % 4].to_string())
        .collect()
}

/// Per-class (precision, recall, f1, support) from explicit counting.
pub struct Brute {
    pub per_class: BTreeMap<String, (f64, f64, f64, usize)>,
}

pub fn brute_metrics(t: &[String], p: &[String]) -> Brute {
    let classes: BTreeSet<&String> = t.iter().chain(p).collect();
    let mut per_class = BTreeMap::new();
    for c in classes {
        let mut tp = 0;
        let mut fp = 0;
        let mut fnn = 0;
        for (a, b) in t.iter().zip(p) {
            match (a == c, b == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        let pr = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let rc = if tp + fnn == 0 {
            0.0
        } else {
            tp as f64 / (tp + fnn) as f64
        };
        let f1 = if pr + rc == 0.0 {
            0.0
        } else {
            2.0 * pr * rc / (pr + rc)
        };
        per_class.insert(c.clone(), (pr, rc, f1, tp + fnn));
    }
    Brute { per_class }
}
