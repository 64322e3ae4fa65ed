//! Tiers, resources and links, and the transfer cost model.
//!
//! Sizes and rates use decimal SI units: 1 KB = 1000 B, 1 Mbps = 10^6 bit/s.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Resources beyond this count cannot be addressed by query masks.
pub const MAX_RESOURCES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("malformed topology document: {0}")]
    Malformed(String),
    #[error("unknown network preset '{0}' (expected 3g, 4g, wired or edge-cloud)")]
    UnknownPreset(String),
    #[error("unknown tier '{0}'")]
    UnknownTier(String),
    #[error("tiers must be distinct and ordered device < edge < cloud, got {0:?}")]
    TierOrder(Vec<Tier>),
    #[error("tier {0} has no resources")]
    EmptyTier(Tier),
    #[error("resources listed for tier {0} which is not in the tier list")]
    UndeclaredTier(Tier),
    #[error("resource '{0}' is declared more than once")]
    DuplicateResource(String),
    #[error("resource id '{0}' clashes with a tier name")]
    ReservedName(String),
    #[error("too many resources ({0}, limit {MAX_RESOURCES})")]
    TooManyResources(usize),
    #[error("source resource '{0}' is not declared")]
    UnknownSource(String),
    #[error("link endpoint '{0}' is neither a resource nor a tier")]
    UnknownEndpoint(String),
    #[error("link {from} -> {to} is declared more than once")]
    DuplicateLink { from: String, to: String },
    #[error("link {from} -> {to} connects a resource to itself")]
    SelfLink { from: String, to: String },
    #[error("link {from} -> {to}: {reason}")]
    InvalidLink {
        from: String,
        to: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Device,
    Edge,
    Cloud,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Device, Tier::Edge, Tier::Cloud];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Device => "device",
            Tier::Edge => "edge",
            Tier::Cloud => "cloud",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "device" => Ok(Tier::Device),
            "edge" => Ok(Tier::Edge),
            "cloud" => Ok(Tier::Cloud),
            other => Err(NetworkError::UnknownTier(other.to_string())),
        }
    }
}

/// Latency and bandwidth of a directed link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkParams {
    pub latency_s: f64,
    /// Bits per second. `f64::INFINITY` models a free link.
    pub bandwidth_bps: f64,
}

impl LinkParams {
    pub fn new(latency_s: f64, bandwidth_bps: f64) -> Self {
        LinkParams {
            latency_s,
            bandwidth_bps,
        }
    }

    /// A link that costs nothing, used for zero-network studies.
    pub fn free() -> Self {
        LinkParams {
            latency_s: 0.0,
            bandwidth_bps: f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.latency_s.is_finite() && self.latency_s >= 0.0) {
            return Err(format!(
                "latency must be finite and non-negative, got {}",
                self.latency_s
            ));
        }
        if self.bandwidth_bps.is_nan() || self.bandwidth_bps <= 0.0 {
            return Err(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_bps
            ));
        }
        Ok(())
    }
}

/// A directed link between two named resources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub from_resource: String,
    pub to_resource: String,
    #[serde(flatten)]
    pub params: LinkParams,
}

/// Network condition presets: 3G, 4G and wired fibre uplinks, plus the
/// edge-to-cloud backbone.
pub fn preset(name: &str) -> Result<LinkParams, NetworkError> {
    match name {
        "3g" => Ok(LinkParams::new(0.067, 1.6e6)),
        "4g" => Ok(LinkParams::new(0.055, 12.4e6)),
        "wired" => Ok(LinkParams::new(0.020, 20e6)),
        "edge-cloud" => Ok(LinkParams::new(0.025, 50e6)),
        other => Err(NetworkError::UnknownPreset(other.to_string())),
    }
}

/// Seconds to move `bytes` over a link: latency plus serialization delay.
pub fn transfer_time(bytes: u64, link: &LinkParams) -> f64 {
    link.latency_s + (bytes as f64 * 8.0) / link.bandwidth_bps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceIdx(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resource {
    pub id: String,
    pub tier: Tier,
}

/// Wire form of a link entry: either a preset or explicit numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDocument {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_mbps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    pub tiers: Vec<String>,
    pub resources: HashMap<String, Vec<String>>,
    pub source: String,
    pub links: Vec<LinkDocument>,
}

/// Ordered tiers with their candidate resources and the links between them.
///
/// Resources are indexed densely, grouped by tier in tier order and in
/// declaration order within a tier.
#[derive(Debug, Clone)]
pub struct Topology {
    tiers: Vec<Tier>,
    resources: Vec<Resource>,
    by_name: HashMap<String, ResourceIdx>,
    source: ResourceIdx,
    // row-major [from][to]
    links: Vec<Option<LinkParams>>,
}

impl Topology {
    pub fn builder() -> TopologyBuilder {
        TopologyBuilder::default()
    }

    pub fn tiers(&self) -> &[Tier] {
        &self.tiers
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn resource(&self, idx: ResourceIdx) -> &Resource {
        &self.resources[idx.0]
    }

    pub fn name(&self, idx: ResourceIdx) -> &str {
        &self.resources[idx.0].id
    }

    pub fn tier_of(&self, idx: ResourceIdx) -> Tier {
        self.resources[idx.0].tier
    }

    pub fn lookup(&self, name: &str) -> Option<ResourceIdx> {
        self.by_name.get(name).copied()
    }

    pub fn source(&self) -> ResourceIdx {
        self.source
    }

    pub fn resources_in(&self, tier: Tier) -> impl Iterator<Item = ResourceIdx> + '_ {
        self.resources
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.tier == tier)
            .map(|(i, _)| ResourceIdx(i))
    }

    pub fn link(&self, from: ResourceIdx, to: ResourceIdx) -> Option<&LinkParams> {
        self.links[from.0 * self.resources.len() + to.0].as_ref()
    }

    /// Replaces (or adds) the link between two resources.
    pub fn set_link(&mut self, from: ResourceIdx, to: ResourceIdx, params: LinkParams) {
        let n = self.resources.len();
        self.links[from.0 * n + to.0] = Some(params);
    }

    pub fn links(&self) -> Vec<Link> {
        let n = self.resources.len();
        self.links
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                l.map(|params| Link {
                    from_resource: self.resources[i / n].id.clone(),
                    to_resource: self.resources[i % n].id.clone(),
                    params,
                })
            })
            .collect()
    }

    /// Every pipeline: one resource from each tier of a non-empty ascending
    /// tier subsequence.
    pub fn pipelines(&self) -> Vec<Vec<ResourceIdx>> {
        let per_tier: Vec<Vec<ResourceIdx>> = self
            .tiers
            .iter()
            .map(|&t| self.resources_in(t).collect())
            .collect();
        let mut out = Vec::new();
        for mask in 1u32..(1 << per_tier.len()) {
            let chosen: Vec<&Vec<ResourceIdx>> = per_tier
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, r)| r)
                .collect();
            let mut partial: Vec<Vec<ResourceIdx>> = vec![Vec::new()];
            for options in chosen {
                partial = partial
                    .into_iter()
                    .flat_map(|prefix| {
                        options.iter().map(move |&r| {
                            let mut next = prefix.clone();
                            next.push(r);
                            next
                        })
                    })
                    .collect();
            }
            out.extend(partial);
        }
        out
    }

    pub fn to_document(&self) -> TopologyDocument {
        let mut resources: HashMap<String, Vec<String>> = HashMap::new();
        for r in &self.resources {
            resources
                .entry(r.tier.to_string())
                .or_default()
                .push(r.id.clone());
        }
        TopologyDocument {
            tiers: self.tiers.iter().map(|t| t.to_string()).collect(),
            resources,
            source: self.name(self.source).to_string(),
            links: self
                .links()
                .into_iter()
                .map(|l| LinkDocument {
                    from: l.from_resource,
                    to: l.to_resource,
                    preset: None,
                    latency_ms: Some(l.params.latency_s * 1e3),
                    bandwidth_mbps: Some(l.params.bandwidth_bps / 1e6),
                })
                .collect(),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .tiers
            .iter()
            .map(|&t| {
                let names: Vec<&str> = self.resources_in(t).map(|r| self.name(r)).collect();
                format!("{t}[{}]", names.join(", "))
            })
            .collect();
        write!(
            f,
            "{} (source {})",
            parts.join(" -> "),
            self.name(self.source)
        )
    }
}

#[derive(Debug, Default)]
pub struct TopologyBuilder {
    tiers: Vec<Tier>,
    resources: Vec<(Tier, String)>,
    source: Option<String>,
    links: Vec<(String, String, LinkParams)>,
}

impl TopologyBuilder {
    pub fn tier(mut self, tier: Tier, resources: &[&str]) -> Self {
        self.tiers.push(tier);
        self.resources
            .extend(resources.iter().map(|r| (tier, r.to_string())));
        self
    }

    pub fn source(mut self, name: &str) -> Self {
        self.source = Some(name.to_string());
        self
    }

    /// `from` and `to` may be resource ids or tier names; a tier name stands
    /// for every resource of that tier. Resource-level links override
    /// tier-level ones.
    pub fn link(mut self, from: &str, to: &str, params: LinkParams) -> Self {
        self.links.push((from.to_string(), to.to_string(), params));
        self
    }

    pub fn build(self) -> Result<Topology, NetworkError> {
        let tiers = self.tiers;
        if tiers.is_empty() || tiers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NetworkError::TierOrder(tiers));
        }

        let mut resources: Vec<Resource> = Vec::new();
        let mut by_name = HashMap::new();
        for &tier in &tiers {
            let listed: Vec<&String> = self
                .resources
                .iter()
                .filter(|(t, _)| *t == tier)
                .map(|(_, r)| r)
                .collect();
            if listed.is_empty() {
                return Err(NetworkError::EmptyTier(tier));
            }
            for id in listed {
                if id.parse::<Tier>().is_ok() {
                    return Err(NetworkError::ReservedName(id.clone()));
                }
                if by_name
                    .insert(id.clone(), ResourceIdx(resources.len()))
                    .is_some()
                {
                    return Err(NetworkError::DuplicateResource(id.clone()));
                }
                resources.push(Resource {
                    id: id.clone(),
                    tier,
                });
            }
        }
        if let Some((tier, _)) = self.resources.iter().find(|(t, _)| !tiers.contains(t)) {
            return Err(NetworkError::UndeclaredTier(*tier));
        }
        if resources.len() > MAX_RESOURCES {
            return Err(NetworkError::TooManyResources(resources.len()));
        }

        let source_name = self.source.unwrap_or_default();
        let source = *by_name
            .get(&source_name)
            .ok_or_else(|| NetworkError::UnknownSource(source_name.clone()))?;

        let n = resources.len();
        let mut links: Vec<Option<LinkParams>> = vec![None; n * n];
        // 0 = set from a tier-level entry, 1 = set from a resource-level entry
        let mut specificity: Vec<Option<u8>> = vec![None; n * n];
        let endpoints = |name: &str| -> Result<(Vec<ResourceIdx>, u8), NetworkError> {
            if let Some(&idx) = by_name.get(name) {
                Ok((vec![idx], 1))
            } else if let Ok(tier) = name.parse::<Tier>() {
                let members = resources
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.tier == tier)
                    .map(|(i, _)| ResourceIdx(i))
                    .collect();
                Ok((members, 0))
            } else {
                Err(NetworkError::UnknownEndpoint(name.to_string()))
            }
        };
        for (from, to, params) in &self.links {
            params
                .validate()
                .map_err(|reason| NetworkError::InvalidLink {
                    from: from.clone(),
                    to: to.clone(),
                    reason,
                })?;
            let (froms, fs) = endpoints(from)?;
            let (tos, ts) = endpoints(to)?;
            let level = fs.min(ts);
            if level == 1 && froms[0] == tos[0] {
                return Err(NetworkError::SelfLink {
                    from: from.clone(),
                    to: to.clone(),
                });
            }
            for &a in &froms {
                for &b in &tos {
                    if a == b {
                        continue;
                    }
                    let slot = a.0 * n + b.0;
                    match specificity[slot] {
                        Some(existing) if existing == level => {
                            return Err(NetworkError::DuplicateLink {
                                from: resources[a.0].id.clone(),
                                to: resources[b.0].id.clone(),
                            });
                        }
                        Some(existing) if existing > level => continue,
                        _ => {
                            links[slot] = Some(*params);
                            specificity[slot] = Some(level);
                        }
                    }
                }
            }
        }

        Ok(Topology {
            tiers,
            resources,
            by_name,
            source,
            links,
        })
    }
}

/// Parses a topology document.
pub fn parse_topology(document: &str) -> Result<Topology, NetworkError> {
    let doc: TopologyDocument =
        serde_json::from_str(document).map_err(|e| NetworkError::Malformed(e.to_string()))?;
    Topology::from_document(&doc)
}

impl Topology {
    pub fn from_document(doc: &TopologyDocument) -> Result<Topology, NetworkError> {
        let mut builder = Topology::builder().source(&doc.source);
        for name in &doc.tiers {
            let tier: Tier = name.parse()?;
            let listed: Vec<&str> = doc
                .resources
                .get(name)
                .map(|v| v.iter().map(String::as_str).collect())
                .unwrap_or_default();
            builder = builder.tier(tier, &listed);
        }
        for key in doc.resources.keys() {
            let tier: Tier = key.parse()?;
            if !doc.tiers.iter().any(|t| t == key) {
                return Err(NetworkError::UndeclaredTier(tier));
            }
        }
        for link in &doc.links {
            let invalid = |reason: &str| NetworkError::InvalidLink {
                from: link.from.clone(),
                to: link.to.clone(),
                reason: reason.to_string(),
            };
            let params = match (&link.preset, link.latency_ms, link.bandwidth_mbps) {
                (Some(name), None, None) => preset(name)?,
                (None, Some(ms), Some(mbps)) => LinkParams::new(ms / 1e3, mbps * 1e6),
                (Some(_), _, _) => {
                    return Err(invalid(
                        "give either a preset or latency_ms/bandwidth_mbps, not both",
                    ))
                }
                _ => {
                    return Err(invalid(
                        "needs a preset or both latency_ms and bandwidth_mbps",
                    ))
                }
            };
            builder = builder.link(&link.from, &link.to, params);
        }
        builder.build()
    }
}
