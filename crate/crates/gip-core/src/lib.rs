//! Distance-weighted spatial interaction graphs and overlapping community
//! detection with weighted speaker-listener label propagation followed by a
//! per-node one-class SVM label filter.

pub mod bench;
pub mod error;
pub mod filter;
pub mod geo;
pub mod metrics;
pub mod ocsvm;
pub mod propagation;
pub mod rng;
pub mod spatial_graph;
pub mod synth;

pub use error::{Error, Result};
pub use filter::{build_cover, filter_memories, Cover, FilterConfig, LabelFilter};
pub use geo::{DistanceMetric, GeoPoint};
pub use metrics::{crisp_projection, modularity, omega_index, Partition};
pub use propagation::{run_propagation, NeighborMode, PropagationConfig, PropagationState};
pub use spatial_graph::{aggregate_flows, build_graph, FlowMatrix, SpatialGraph, TripRecord, Zone, ZoneSet};
