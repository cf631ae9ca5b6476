//! Flow metering and evaluation of anomaly detectors on complete versus
//! partial (early-stage) flows.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`trace`]: read pcap files, drop duplicate packets, restore timestamp
//!    order, or synthesize labelled traces.
//! 2. [`meter`]: assemble bidirectional flows and export complete records
//!    plus partial snapshots at packet-count / duration / byte triggers.
//! 3. [`labeling`]: ground-truth labels from endpoint/time rules.
//! 4. [`dataset`]: filtered complete-flow datasets, parent-matched partial
//!    datasets, audits and CSV interchange.
//! 5. [`forest`]: a Random Forest classifier.
//! 6. [`eval`]: key-level splits, train/test scenarios, metrics and sweeps.

pub mod dataset;
pub mod eval;
pub mod forest;
pub mod labeling;
pub mod meter;
pub mod trace;

pub use dataset::{Dataset, LabeledFlow, Provenance};
pub use eval::{Metrics, Scenario, ScenarioKind, Split, Task};
pub use forest::{RandomForest, TrainConfig};
pub use labeling::{LabelRule, RuleSet};
pub use meter::{FeatureVector, FlowId, FlowKey, FlowRecord, FlowSnapshot, MeterConfig, Trigger};
pub use trace::{PacketTrace, RawPacket};
