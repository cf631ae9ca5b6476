//! Fixtures shared by the pipeline benchmarks.

use earlyflow::dataset::{build_cf, Dataset};
use earlyflow::meter::meter;
use earlyflow::trace::synth::{FlowTemplate, PacketOverride, PacketProfile};
use earlyflow::trace::{flags, synth_trace, SynthSpec, PROTO_TCP};
use earlyflow::{LabelRule, MeterConfig, PacketTrace, RuleSet};

const ATTACKER: &str = "172.16.0.1";

fn template(label: &str, flows: usize, src_pool: Vec<&str>) -> FlowTemplate {
    FlowTemplate {
        label: label.into(),
        flows,
        protocol: PROTO_TCP,
        packets: [10, 40],
        profile: PacketProfile {
            iat_us: [500, 20_000],
            payload: [0, 1_200],
            reverse_prob: 0.5,
            first_flags: flags::SYN,
            data_flags: flags::PSH | flags::ACK,
        },
        close_flags: Some(flags::FIN | flags::ACK),
        src_pool: src_pool.into_iter().map(|s| s.parse().unwrap()).collect(),
        dst_pool: vec!["192.168.10.50".parse().unwrap()],
        dst_ports: vec![80, 443],
        src_ports: [1024, 65535],
        overrides: Vec::new(),
    }
}

/// Two-class spec with `flows` flows in total, a third of them attacks
/// that diverge from packet 5 onwards.
pub fn spec(flows: usize) -> SynthSpec {
    let benign = template(
        "BENIGN",
        flows - flows / 3,
        vec!["10.0.0.1", "10.0.0.2", "10.0.0.3", "10.0.0.4"],
    );
    let mut attack = template("DoS", flows / 3, vec![ATTACKER]);
    attack.overrides.push(PacketOverride {
        from: 5,
        to: 40,
        payload: Some([1_000, 1_400]),
        ..Default::default()
    });
    SynthSpec {
        start_us: 1_499_255_000_000_000,
        flow_gap_us: [100, 2_000],
        shared_prefix: None,
        templates: vec![benign, attack],
    }
}

pub fn trace(flows: usize) -> PacketTrace {
    synth_trace(&spec(flows), 1).unwrap().0
}

/// Copies every `every`-th packet 1 ms later so dedup has work to do,
/// leaving the trace slightly out of order.
pub fn with_retransmissions(trace: &PacketTrace, every: usize) -> PacketTrace {
    let mut packets = Vec::with_capacity(trace.len() + trace.len() / every + 1);
    for (i, p) in trace.packets.iter().enumerate() {
        packets.push(p.clone());
        if i % every == 0 {
            let mut copy = p.clone();
            copy.ts_us += 1_000;
            packets.push(copy);
        }
    }
    PacketTrace::new(packets, "bench")
}

pub fn rules() -> RuleSet {
    let mut rule = LabelRule::new("DoS");
    rule.src_ips = vec![format!("{ATTACKER}/32").parse().unwrap()];
    RuleSet::new(vec![rule])
}

/// Labeled complete-flow dataset metered from [`trace`].
pub fn cf_dataset(flows: usize) -> Dataset {
    let out = meter(&trace(flows), &MeterConfig::default()).unwrap();
    build_cf(&out.records, &rules(), 1)
}
