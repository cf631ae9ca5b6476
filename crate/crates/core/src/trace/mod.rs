//! Packet traces: pcap I/O, preprocessing and synthetic generation.

mod packet;
pub mod pcap;
mod preprocess;
pub mod synth;

pub use packet::{
    flags, fnv1a64, payload_digest, CapturedFrame, PacketTrace, RawPacket, ReadStats, PROTO_TCP,
    PROTO_UDP,
};
pub use pcap::{read_trace, write_trace};
pub use preprocess::{
    dedup, dedup_indices, displaced_count, reorder, reorder_indices, DEFAULT_DEDUP_WINDOW_US,
};
pub use synth::{synth_trace, GroundTruthFlow, InvalidSpec, SynthSpec};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pcap header: {0}")]
    MalformedHeader(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("packet cannot be encoded: {0}")]
    Unencodable(String),
}
