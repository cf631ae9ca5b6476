//! Bidirectional flow metering with complete and partial exports.

mod config;
mod engine;
mod features;
mod key;

pub use config::{MeterConfig, Trigger};
pub use engine::{
    fd_window_us, meter, ExpirationReason, FlowMeter, FlowRecord, FlowSnapshot, MeterOutput,
};
pub use features::{feature_names, FeatureVector, FlagCounts, ScopeFeatures, FEATURE_COUNT};
pub use key::{flow_hash, six_tuple_string, Endpoint, FlowId, FlowKey, Orientation};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeterError {
    #[error("trace not sorted: packet {index} at {ts_us} µs precedes {previous_us} µs")]
    UnsortedTrace {
        index: u64,
        ts_us: i64,
        previous_us: i64,
    },
    #[error("invalid meter config: {0}")]
    InvalidConfig(String),
}
