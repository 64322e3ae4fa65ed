//! Ranked plan reports: a text table for people, CSV files for plotting.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::Serialize;

use crate::graph::PartitionSchema;
use crate::network::{Tier, Topology};
use crate::search::{Candidate, Objective};

pub const EMPTY_RESULT: &str = "no configuration satisfies constraints";

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSummary {
    pub model: String,
    pub layers: usize,
    pub units: usize,
    pub cuts: usize,
    pub topology: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComputeRow {
    pub resource: String,
    pub tier: Tier,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopRow {
    pub from: String,
    pub to: String,
    pub bytes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub rank: usize,
    /// Segment description, e.g. `pi:0-1 | e1:2-175 | gpu:176`.
    pub configuration: String,
    pub end_to_end_s: f64,
    pub total_transfer_bytes: u64,
    pub compute: Vec<ComputeRow>,
    pub hops: Vec<HopRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub summary: InstanceSummary,
    pub objective: Objective,
    pub query: Option<String>,
    pub evaluated: usize,
    pub matched: usize,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

impl PlanReport {
    /// `ranked` must already be in rank order.
    pub fn new(
        schema: &PartitionSchema,
        topo: &Topology,
        objective: Objective,
        ranked: &[Candidate],
        evaluated: usize,
        matched: usize,
    ) -> Self {
        let rows = ranked
            .iter()
            .enumerate()
            .map(|(i, c)| ReportRow {
                rank: i + 1,
                configuration: c.config.describe(schema, topo),
                end_to_end_s: c.metrics.end_to_end_s,
                total_transfer_bytes: c.metrics.total_transfer_bytes,
                compute: c
                    .metrics
                    .per_resource_compute_s
                    .iter()
                    .map(|&(r, seconds)| ComputeRow {
                        resource: topo.name(r).to_string(),
                        tier: topo.tier_of(r),
                        seconds,
                    })
                    .collect(),
                hops: c
                    .metrics
                    .per_hop_transfer
                    .iter()
                    .map(|h| HopRow {
                        from: topo.name(h.from).to_string(),
                        to: topo.name(h.to).to_string(),
                        bytes: h.bytes,
                        seconds: h.seconds,
                    })
                    .collect(),
            })
            .collect();
        PlanReport {
            summary: InstanceSummary {
                model: schema.model_name.clone(),
                layers: schema.layer_count(),
                units: schema.unit_count(),
                cuts: schema.cut_points.len(),
                topology: topo.to_string(),
            },
            objective,
            query: None,
            evaluated,
            matched,
            rows,
            notes: Vec::new(),
        }
    }

    pub fn with_query(mut self, text: impl Into<String>, notes: Vec<String>) -> Self {
        self.query = Some(text.into());
        self.notes = notes;
        self
    }

    /// Writes `configurations.csv`, `hops.csv` and `compute.csv` into `dir`,
    /// creating it if needed.
    pub fn write_csv(&self, dir: &Path) -> Result<(), csv::Error> {
        std::fs::create_dir_all(dir)?;

        let mut configs = csv::Writer::from_path(dir.join("configurations.csv"))?;
        for row in &self.rows {
            configs.serialize(ConfigurationRecord {
                rank: row.rank,
                configuration: &row.configuration,
                segments: row.compute.len(),
                end_to_end_s: row.end_to_end_s,
                compute_s: row.compute.iter().map(|c| c.seconds).sum(),
                transfer_s: row.hops.iter().map(|h| h.seconds).sum(),
                total_transfer_bytes: row.total_transfer_bytes,
            })?;
        }
        configs.flush()?;

        let mut hops = csv::Writer::from_path(dir.join("hops.csv"))?;
        for row in &self.rows {
            for (hop, h) in row.hops.iter().enumerate() {
                hops.serialize(HopRecord {
                    rank: row.rank,
                    hop,
                    from: &h.from,
                    to: &h.to,
                    bytes: h.bytes,
                    seconds: h.seconds,
                })?;
            }
        }
        hops.flush()?;

        let mut compute = csv::Writer::from_path(dir.join("compute.csv"))?;
        for row in &self.rows {
            for c in &row.compute {
                compute.serialize(ComputeRecord {
                    rank: row.rank,
                    resource: &c.resource,
                    tier: c.tier.as_str(),
                    seconds: c.seconds,
                })?;
            }
        }
        compute.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct ConfigurationRecord<'a> {
    rank: usize,
    configuration: &'a str,
    segments: usize,
    end_to_end_s: f64,
    compute_s: f64,
    transfer_s: f64,
    total_transfer_bytes: u64,
}

#[derive(Serialize)]
struct HopRecord<'a> {
    rank: usize,
    hop: usize,
    from: &'a str,
    to: &'a str,
    bytes: u64,
    seconds: f64,
}

#[derive(Serialize)]
struct ComputeRecord<'a> {
    rank: usize,
    resource: &'a str,
    tier: &'a str,
    seconds: f64,
}

fn megabytes(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.summary;
        writeln!(
            f,
            "model {}: layers={} cuts={} units={}",
            s.model, s.layers, s.cuts, s.units
        )?;
        writeln!(f, "topology: {}", s.topology)?;
        if let Some(q) = &self.query {
            writeln!(f, "query: {q}")?;
        }
        writeln!(
            f,
            "objective: {}  evaluated={} matched={} shown={}",
            self.objective,
            self.evaluated,
            self.matched,
            self.rows.len()
        )?;
        for note in &self.notes {
            writeln!(f, "note: {note}")?;
        }
        if self.rows.is_empty() {
            return writeln!(f, "{EMPTY_RESULT}");
        }

        let width = self
            .rows
            .iter()
            .map(|r| r.configuration.len())
            .max()
            .unwrap_or(0)
            .max("configuration".len());
        writeln!(f)?;
        writeln!(
            f,
            "{:>4}  {:<width$}  {:>14}  {:>13}",
            "rank", "configuration", "end_to_end_s", "transfer_MB"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:>4}  {:<width$}  {:>14.6}  {:>13.6}",
                row.rank,
                row.configuration,
                row.end_to_end_s,
                megabytes(row.total_transfer_bytes)
            )?;
            let mut line = String::from("      compute");
            for c in &row.compute {
                write!(line, "  {}={:.6}s", c.resource, c.seconds)?;
            }
            writeln!(f, "{line}")?;
            for h in &row.hops {
                writeln!(
                    f,
                    "      hop      {} -> {}  {} B  {:.6}s",
                    h.from, h.to, h.bytes, h.seconds
                )?;
            }
        }
        Ok(())
    }
}
