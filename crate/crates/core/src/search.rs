//! Exhaustive enumeration, evaluation and ranking of partition configurations.
//!
//! A configuration assigns contiguous unit ranges to a pipeline of resources
//! drawn from strictly ascending tiers, with every segment boundary on a cut
//! point. With at most three tiers a configuration has at most three
//! segments, so configurations and their metrics live in fixed-size arrays
//! and the hot path does not allocate.

use std::cmp::Ordering;
use std::fmt;

use arrayvec::ArrayVec;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::PartitionSchema;
use crate::network::{transfer_time, ResourceIdx, Tier, Topology};
use crate::profile::{ProfileError, ResourceProfile};

pub const MAX_SEGMENTS: usize = Tier::ALL.len();
/// Input hop, one hop per segment boundary, and the optional result return.
pub const MAX_HOPS: usize = MAX_SEGMENTS + 1;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("no profile for resource '{0}'")]
    MissingProfile(String),
    #[error("more than one profile for resource '{0}'")]
    DuplicateProfile(String),
    #[error("profile for resource '{0}' which is not in the topology")]
    UnknownProfileResource(String),
    #[error("profile for '{resource}' says tier {profile}, topology says {topology}")]
    TierMismatch {
        resource: String,
        profile: Tier,
        topology: Tier,
    },
    #[error("profile for '{resource}': {source}")]
    Profile {
        resource: String,
        source: ProfileError,
    },
    #[error("no link from '{from}' to '{to}'")]
    MissingLink { from: String, to: String },
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Objective {
    #[default]
    Latency,
    Transfer,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Latency => "latency",
            Objective::Transfer => "transfer",
        })
    }
}

/// Units `first_unit..=last_unit` executed on `resource`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub resource: ResourceIdx,
    pub first_unit: usize,
    pub last_unit: usize,
}

impl Segment {
    pub fn contains(&self, unit: usize) -> bool {
        (self.first_unit..=self.last_unit).contains(&unit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    segments: ArrayVec<Segment, MAX_SEGMENTS>,
}

impl Configuration {
    /// Builds a configuration without checking it against a schema; see
    /// [`Configuration::validate`].
    pub fn from_segments(segments: &[Segment]) -> Result<Self, SearchError> {
        let segments = ArrayVec::try_from(segments).map_err(|_| {
            SearchError::InvalidConfiguration(format!("more than {MAX_SEGMENTS} segments"))
        })?;
        Ok(Configuration { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_native(&self) -> bool {
        self.segments.len() == 1
    }

    pub fn segment_of_unit(&self, unit: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.contains(unit))
    }

    pub fn validate(&self, schema: &PartitionSchema, topo: &Topology) -> Result<(), SearchError> {
        let invalid = |msg: String| Err(SearchError::InvalidConfiguration(msg));
        let units = schema.unit_count();
        let Some(first) = self.segments.first() else {
            return invalid("no segments".into());
        };
        if first.first_unit != 0 {
            return invalid("first segment must start at unit 0".into());
        }
        let last = self.segments.last().expect("non-empty");
        if last.last_unit + 1 != units {
            return invalid(format!("last segment must end at unit {}", units - 1));
        }
        for s in &self.segments {
            if s.resource.0 >= topo.resources().len() {
                return invalid(format!("unknown resource index {}", s.resource.0));
            }
            if s.first_unit > s.last_unit {
                return invalid(format!(
                    "empty unit range {}..={}",
                    s.first_unit, s.last_unit
                ));
            }
        }
        for pair in self.segments.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.last_unit + 1 != b.first_unit {
                return invalid("segments are not contiguous".into());
            }
            if !schema.is_cut(a.last_unit) {
                return invalid(format!(
                    "unit {} is not followed by a cut point",
                    a.last_unit
                ));
            }
            if topo.tier_of(a.resource) >= topo.tier_of(b.resource) {
                return invalid(format!(
                    "tiers must ascend: {} ({}) before {} ({})",
                    topo.name(a.resource),
                    topo.tier_of(a.resource),
                    topo.name(b.resource),
                    topo.tier_of(b.resource)
                ));
            }
        }
        Ok(())
    }

    /// Segment description in layer ids, e.g. `pi:0-1 | edge1:2-175 | gpu:176`.
    pub fn describe(&self, schema: &PartitionSchema, topo: &Topology) -> String {
        self.segments
            .iter()
            .map(|s| {
                format!(
                    "{}:{}",
                    topo.name(s.resource),
                    schema.layer_span_label(s.first_unit, s.last_unit)
                )
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }

    /// Inverse of [`Configuration::describe`].
    pub fn parse_description(
        text: &str,
        schema: &PartitionSchema,
        topo: &Topology,
    ) -> Result<Self, SearchError> {
        let invalid = |msg: String| SearchError::InvalidConfiguration(msg);
        let mut segments = Vec::new();
        for part in text.split('|') {
            let part = part.trim();
            let (name, span) = part
                .rsplit_once(':')
                .ok_or_else(|| invalid(format!("segment '{part}' lacks 'resource:layers'")))?;
            let resource = topo
                .lookup(name.trim())
                .ok_or_else(|| invalid(format!("unknown resource '{}'", name.trim())))?;
            let (a, b) = match span.split_once('-') {
                Some((a, b)) => (a, b),
                None => (span, span),
            };
            let layer = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| invalid(format!("bad layer id '{s}' in '{part}'")))
            };
            let (first_layer, last_layer) = (layer(a)?, layer(b)?);
            let first_unit = schema
                .unit_of_layer(first_layer)
                .filter(|&u| schema.units[u].first_layer() == first_layer)
                .ok_or_else(|| invalid(format!("layer {first_layer} does not start a unit")))?;
            let last_unit = schema
                .unit_of_layer(last_layer)
                .filter(|&u| schema.units[u].last_layer() == last_layer)
                .ok_or_else(|| invalid(format!("layer {last_layer} does not end a unit")))?;
            segments.push(Segment {
                resource,
                first_unit,
                last_unit,
            });
        }
        let config = Configuration::from_segments(&segments)?;
        config.validate(schema, topo)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub from: ResourceIdx,
    pub to: ResourceIdx,
    pub bytes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigMetrics {
    pub end_to_end_s: f64,
    /// One entry per segment, in segment order.
    pub per_resource_compute_s: ArrayVec<(ResourceIdx, f64), MAX_SEGMENTS>,
    /// Input hop first (when the first resource is not the source), then one
    /// hop per segment boundary.
    pub per_hop_transfer: ArrayVec<Hop, MAX_HOPS>,
    pub total_transfer_bytes: u64,
}

impl ConfigMetrics {
    pub fn total_compute_s(&self) -> f64 {
        self.per_resource_compute_s.iter().map(|(_, s)| s).sum()
    }

    pub fn total_transfer_s(&self) -> f64 {
        self.per_hop_transfer.iter().map(|h| h.seconds).sum()
    }

    /// Compute seconds on `resource`, 0 if unused.
    pub fn compute_on(&self, resource: ResourceIdx) -> f64 {
        self.per_resource_compute_s
            .iter()
            .find(|(r, _)| *r == resource)
            .map_or(0.0, |(_, s)| *s)
    }
}

/// A configuration together with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub config: Configuration,
    pub metrics: ConfigMetrics,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Also charge sending the final output back to the source resource.
    pub charge_result_return: bool,
}

/// Closed-form configuration count: the sum over ascending tier
/// subsequences of (product of resource choices) x C(cuts, k - 1).
pub fn configuration_count(cut_count: usize, resources_per_tier: &[usize]) -> u128 {
    let tiers = resources_per_tier.len();
    let mut total = 0u128;
    for mask in 1u32..(1 << tiers) {
        let chosen: Vec<usize> = (0..tiers)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| resources_per_tier[i])
            .collect();
        let choices: u128 = chosen.iter().map(|&r| r as u128).product();
        total += choices * binomial(cut_count as u128, chosen.len() as u128 - 1);
    }
    total
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Strictly increasing selections of `k` values from `pool`, in
/// lexicographic order.
struct Combinations<'a> {
    pool: &'a [usize],
    picks: ArrayVec<usize, MAX_SEGMENTS>,
    done: bool,
}

impl<'a> Combinations<'a> {
    fn new(pool: &'a [usize], k: usize) -> Self {
        Combinations {
            pool,
            picks: (0..k).collect(),
            done: k > pool.len(),
        }
    }
}

impl Iterator for Combinations<'_> {
    type Item = ArrayVec<usize, MAX_SEGMENTS>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out = self.picks.iter().map(|&i| self.pool[i]).collect();
        let (n, k) = (self.pool.len(), self.picks.len());
        match (0..k).rev().find(|&i| self.picks[i] < n - k + i) {
            Some(i) => {
                self.picks[i] += 1;
                for j in i + 1..k {
                    self.picks[j] = self.picks[j - 1] + 1;
                }
            }
            None => self.done = true,
        }
        Some(out)
    }
}

fn configurations_for<'a>(
    pipeline: &[ResourceIdx],
    schema: &'a PartitionSchema,
) -> impl Iterator<Item = Configuration> + 'a {
    let units = schema.unit_count();
    let pipeline: ArrayVec<ResourceIdx, MAX_SEGMENTS> = pipeline.iter().copied().collect();
    Combinations::new(&schema.cut_points, pipeline.len() - 1).map(move |cuts| {
        let mut segments = ArrayVec::new();
        let mut start = 0;
        for (i, &resource) in pipeline.iter().enumerate() {
            let end = cuts.get(i).copied().unwrap_or(units - 1);
            segments.push(Segment {
                resource,
                first_unit: start,
                last_unit: end,
            });
            start = end + 1;
        }
        Configuration { segments }
    })
}

/// Streams every native and distributed configuration.
pub fn enumerate_configurations<'a>(
    schema: &'a PartitionSchema,
    topo: &'a Topology,
) -> impl Iterator<Item = Configuration> + 'a {
    topo.pipelines()
        .into_iter()
        .flat_map(move |pipeline| configurations_for(&pipeline, schema))
}

/// Evaluation context: profiles aligned to a schema, validated links, and
/// per-resource prefix sums of unit times.
#[derive(Debug, Clone)]
pub struct Planner<'a> {
    schema: &'a PartitionSchema,
    topo: &'a Topology,
    // prefix[r][u] = sum of the first u unit times on resource r
    prefix: Vec<Vec<f64>>,
    // position of each resource name in sorted order, for tie-breaks
    name_rank: Vec<usize>,
    pipelines: Vec<Vec<ResourceIdx>>,
    options: EvalOptions,
}

impl<'a> Planner<'a> {
    pub fn new(
        schema: &'a PartitionSchema,
        profiles: &[ResourceProfile],
        topo: &'a Topology,
        options: EvalOptions,
    ) -> Result<Self, SearchError> {
        let n = topo.resources().len();
        let mut by_resource: Vec<Option<&ResourceProfile>> = vec![None; n];
        for p in profiles {
            let idx = topo
                .lookup(&p.resource_id)
                .ok_or_else(|| SearchError::UnknownProfileResource(p.resource_id.clone()))?;
            if by_resource[idx.0].replace(p).is_some() {
                return Err(SearchError::DuplicateProfile(p.resource_id.clone()));
            }
            if p.tier != topo.tier_of(idx) {
                return Err(SearchError::TierMismatch {
                    resource: p.resource_id.clone(),
                    profile: p.tier,
                    topology: topo.tier_of(idx),
                });
            }
            p.check_alignment(schema)
                .map_err(|source| SearchError::Profile {
                    resource: p.resource_id.clone(),
                    source,
                })?;
        }
        let mut prefix = Vec::with_capacity(n);
        for (i, p) in by_resource.iter().enumerate() {
            let p = p.ok_or_else(|| {
                SearchError::MissingProfile(topo.name(ResourceIdx(i)).to_string())
            })?;
            let mut sums = Vec::with_capacity(p.unit_times.len() + 1);
            let mut acc = 0.0;
            sums.push(acc);
            for &t in &p.unit_times {
                acc += t;
                sums.push(acc);
            }
            prefix.push(sums);
        }

        let require = |from: ResourceIdx, to: ResourceIdx| {
            topo.link(from, to)
                .map(|_| ())
                .ok_or_else(|| SearchError::MissingLink {
                    from: topo.name(from).to_string(),
                    to: topo.name(to).to_string(),
                })
        };
        let source = topo.source();
        for a in (0..n).map(ResourceIdx) {
            if a != source {
                require(source, a)?;
                if options.charge_result_return {
                    require(a, source)?;
                }
            }
            for b in (0..n).map(ResourceIdx) {
                if topo.tier_of(a) < topo.tier_of(b) {
                    require(a, b)?;
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| topo.resources()[a].id.cmp(&topo.resources()[b].id));
        let mut name_rank = vec![0; n];
        for (rank, idx) in order.into_iter().enumerate() {
            name_rank[idx] = rank;
        }

        Ok(Planner {
            schema,
            topo,
            prefix,
            name_rank,
            pipelines: topo.pipelines(),
            options,
        })
    }

    pub fn schema(&self) -> &'a PartitionSchema {
        self.schema
    }

    pub fn topology(&self) -> &'a Topology {
        self.topo
    }

    pub fn configuration_count(&self) -> u128 {
        let per_tier: Vec<usize> = self
            .topo
            .tiers()
            .iter()
            .map(|&t| self.topo.resources_in(t).count())
            .collect();
        configuration_count(self.schema.cut_points.len(), &per_tier)
    }

    pub fn enumerate(&self) -> impl Iterator<Item = Configuration> + '_ {
        self.pipelines
            .iter()
            .flat_map(|p| configurations_for(p, self.schema))
    }

    /// Whole-model time on one resource.
    pub fn native_time(&self, resource: ResourceIdx) -> f64 {
        *self.prefix[resource.0]
            .last()
            .expect("prefix has a leading zero")
    }

    pub fn evaluate(&self, config: &Configuration) -> Result<ConfigMetrics, SearchError> {
        config.validate(self.schema, self.topo)?;
        Ok(self.evaluate_valid(config))
    }

    fn evaluate_valid(&self, config: &Configuration) -> ConfigMetrics {
        let mut per_resource_compute_s = ArrayVec::new();
        let mut per_hop_transfer = ArrayVec::new();
        let mut hop = |from: ResourceIdx, to: ResourceIdx, bytes: u64| {
            let link = self
                .topo
                .link(from, to)
                .expect("links validated at construction");
            per_hop_transfer.push(Hop {
                from,
                to,
                bytes,
                seconds: transfer_time(bytes, link),
            });
        };

        let segments = config.segments();
        let source = self.topo.source();
        if segments[0].resource != source {
            hop(
                source,
                segments[0].resource,
                self.schema.reference_input_bytes,
            );
        }
        for (i, s) in segments.iter().enumerate() {
            let sums = &self.prefix[s.resource.0];
            per_resource_compute_s.push((s.resource, sums[s.last_unit + 1] - sums[s.first_unit]));
            if let Some(next) = segments.get(i + 1) {
                hop(
                    s.resource,
                    next.resource,
                    self.schema.units[s.last_unit].boundary_output_bytes,
                );
            }
        }
        let last = segments[segments.len() - 1];
        if self.options.charge_result_return && last.resource != source {
            hop(
                last.resource,
                source,
                self.schema.units[last.last_unit].boundary_output_bytes,
            );
        }

        let compute: f64 = per_resource_compute_s.iter().map(|(_, s)| s).sum();
        let transfer: f64 = per_hop_transfer.iter().map(|h| h.seconds).sum();
        ConfigMetrics {
            end_to_end_s: compute + transfer,
            total_transfer_bytes: per_hop_transfer.iter().map(|h| h.bytes).sum(),
            per_resource_compute_s,
            per_hop_transfer,
        }
    }

    /// Total order used for ranking: objective, then fewer segments, then
    /// less data moved, then segment-wise (resource id, first unit, last unit).
    pub fn compare(&self, a: &Candidate, b: &Candidate, objective: Objective) -> Ordering {
        compare_candidates(a, b, objective, &self.name_rank)
    }

    /// Ranks every configuration accepted by `filter`. `parallel` spreads the
    /// pipelines over the current rayon pool; the result is identical either way.
    pub fn search<F>(
        &self,
        objective: Objective,
        n: usize,
        filter: F,
        parallel: bool,
    ) -> SearchOutcome
    where
        F: Fn(&Configuration, &ConfigMetrics) -> bool + Sync,
    {
        let run = |pipeline: &Vec<ResourceIdx>| {
            let mut top = TopN::new(n, objective, &self.name_rank);
            let mut evaluated = 0;
            for config in configurations_for(pipeline, self.schema) {
                evaluated += 1;
                let metrics = self.evaluate_valid(&config);
                if filter(&config, &metrics) {
                    top.push(Candidate { config, metrics });
                }
            }
            (top, evaluated)
        };
        let empty = || (TopN::new(n, objective, &self.name_rank), 0);

        let (top, evaluated) = if parallel {
            self.pipelines
                .par_iter()
                .map(run)
                .reduce(empty, merge_partial)
        } else {
            self.pipelines.iter().map(run).fold(empty(), merge_partial)
        };
        let matched = top.seen;
        SearchOutcome {
            ranked: top.into_sorted(),
            evaluated,
            matched,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub ranked: Vec<Candidate>,
    pub evaluated: usize,
    pub matched: usize,
}

fn objective_cmp(a: &ConfigMetrics, b: &ConfigMetrics, objective: Objective) -> Ordering {
    match objective {
        Objective::Latency => a.end_to_end_s.total_cmp(&b.end_to_end_s),
        Objective::Transfer => a.total_transfer_bytes.cmp(&b.total_transfer_bytes),
    }
}

fn compare_candidates(
    a: &Candidate,
    b: &Candidate,
    objective: Objective,
    name_rank: &[usize],
) -> Ordering {
    let key = |s: &Segment| (name_rank[s.resource.0], s.first_unit, s.last_unit);
    objective_cmp(&a.metrics, &b.metrics, objective)
        .then_with(|| a.config.segments.len().cmp(&b.config.segments.len()))
        .then_with(|| {
            a.metrics
                .total_transfer_bytes
                .cmp(&b.metrics.total_transfer_bytes)
        })
        .then_with(|| {
            a.config
                .segments
                .iter()
                .map(key)
                .cmp(b.config.segments.iter().map(key))
        })
}

fn merge_partial<'r>(
    (mut a, ea): (TopN<'r>, usize),
    (b, eb): (TopN<'r>, usize),
) -> (TopN<'r>, usize) {
    a.merge(b);
    (a, ea + eb)
}

/// Bounded best-n buffer. Holds up to 2n items and prunes back to n, so
/// pushing is amortised O(1) plus a linear selection per n pushes.
struct TopN<'r> {
    n: usize,
    objective: Objective,
    name_rank: &'r [usize],
    items: Vec<Candidate>,
    seen: usize,
}

impl<'r> TopN<'r> {
    fn new(n: usize, objective: Objective, name_rank: &'r [usize]) -> Self {
        TopN {
            n,
            objective,
            name_rank,
            items: Vec::new(),
            seen: 0,
        }
    }

    fn push(&mut self, candidate: Candidate) {
        self.seen += 1;
        self.items.push(candidate);
        if self.items.len() >= self.n.saturating_mul(2).max(1) {
            self.prune();
        }
    }

    fn merge(&mut self, other: TopN<'r>) {
        self.seen += other.seen;
        self.items.extend(other.items);
        if self.items.len() > self.n {
            self.prune();
        }
    }

    fn prune(&mut self) {
        let (objective, ranks) = (self.objective, self.name_rank);
        if self.n == 0 {
            self.items.clear();
        } else if self.items.len() > self.n {
            self.items.select_nth_unstable_by(self.n - 1, |a, b| {
                compare_candidates(a, b, objective, ranks)
            });
            self.items.truncate(self.n);
        }
    }

    fn into_sorted(mut self) -> Vec<Candidate> {
        self.prune();
        let (objective, ranks) = (self.objective, self.name_rank);
        self.items
            .sort_by(|a, b| compare_candidates(a, b, objective, ranks));
        self.items
    }
}

/// Best `n` candidates in ascending order of `objective`, ties broken as in
/// [`Planner::compare`].
pub fn rank(
    candidates: impl IntoIterator<Item = Candidate>,
    objective: Objective,
    n: usize,
    topo: &Topology,
) -> Vec<Candidate> {
    let mut order: Vec<usize> = (0..topo.resources().len()).collect();
    order.sort_by(|&a, &b| topo.resources()[a].id.cmp(&topo.resources()[b].id));
    let mut name_rank = vec![0; order.len()];
    for (rank, idx) in order.into_iter().enumerate() {
        name_rank[idx] = rank;
    }
    let mut top = TopN::new(n, objective, &name_rank);
    for c in candidates {
        top.push(c);
    }
    top.into_sorted()
}

/// One-shot evaluation of a single configuration.
pub fn evaluate(
    config: &Configuration,
    schema: &PartitionSchema,
    profiles: &[ResourceProfile],
    topo: &Topology,
) -> Result<ConfigMetrics, SearchError> {
    Planner::new(schema, profiles, topo, EvalOptions::default())?.evaluate(config)
}
