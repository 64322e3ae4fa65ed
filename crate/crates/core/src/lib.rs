//! Partition planning for DNN inference across device, edge and cloud tiers.
//!
//! The pipeline is:
//!
//! 1. [`graph::parse_graph`] loads a layer DAG and [`graph::find_cut_points`]
//!    groups it into execution units separated by single-edge cut points.
//! 2. [`profile::ingest_profile`] loads the per-unit mean times measured on
//!    each candidate resource.
//! 3. [`network::parse_topology`] describes the tiers, resources and links.
//! 4. [`search::Planner`] enumerates every native and distributed
//!    configuration, costs it, and keeps the best ones.
//! 5. [`query`] narrows the search with user constraints.
//! 6. [`report::PlanReport`] renders the ranking as text or CSV.

pub mod graph;
pub mod network;
pub mod profile;
pub mod query;
pub mod report;
pub mod search;

pub use graph::{find_cut_points, parse_graph, topological_order, DnnGraph, PartitionSchema};
pub use network::{parse_topology, preset, transfer_time, LinkParams, Tier, Topology};
pub use profile::{aggregate_runs, ingest_profile, native_time, ResourceProfile};
pub use query::{parse_query, satisfies, solve, Query};
pub use report::PlanReport;
pub use search::{
    enumerate_configurations, evaluate, rank, Candidate, ConfigMetrics, Configuration, Objective,
    Planner,
};
