//! Random instances and a brute-force planner used as an oracle.
//!
//! Instance values are dyadic (times in 1/1024 s, latencies in 1/64 s,
//! bandwidths powers of two) so every sum is exact and rankings can be
//! compared without tolerance.
#![allow(dead_code)]

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use tierplan::graph::{find_cut_points, DnnGraph, Layer, LayerKind, PartitionSchema};
use tierplan::network::{LinkParams, ResourceIdx, Tier, Topology};
use tierplan::profile::ResourceProfile;
use tierplan::query::{parse_query, Cmp, Constraint, Query, QueryError, ResRef};
use tierplan::search::{Candidate, Objective};

pub const MODEL: &str = "synthetic";

pub struct Instance {
    pub schema: PartitionSchema,
    pub topo: Topology,
    pub profiles: Vec<ResourceProfile>,
}

/// Input layer followed by a mix of single layers and fan-out/merge blocks.
pub fn random_graph<R: Rng>(rng: &mut R, segments: usize) -> DnnGraph {
    let mut layers = Vec::new();
    let mut edges = Vec::new();
    let push = |layers: &mut Vec<Layer>, kind: LayerKind, rng: &mut R| {
        let id = layers.len();
        layers.push(Layer {
            id,
            name: format!("l{id}"),
            kind,
            output_bytes: 8 * rng.gen_range(1..=512),
        });
        id
    };
    let mut prev = push(&mut layers, LayerKind::Input, rng);
    for _ in 0..segments {
        if rng.gen_bool(0.7) {
            let id = push(&mut layers, LayerKind::Convolution, rng);
            edges.push((prev, id));
            prev = id;
        } else {
            let mut tails = Vec::new();
            for _ in 0..rng.gen_range(2..=3) {
                let mut at = prev;
                for _ in 0..rng.gen_range(1..=2) {
                    let id = push(&mut layers, LayerKind::Convolution, rng);
                    edges.push((at, id));
                    at = id;
                }
                tails.push(at);
            }
            let merge = push(&mut layers, LayerKind::Merge, rng);
            edges.extend(tails.into_iter().map(|t| (t, merge)));
            prev = merge;
        }
    }
    let sink = push(&mut layers, LayerKind::Softmax, rng);
    edges.push((prev, sink));
    DnnGraph::new(MODEL, 8 * rng.gen_range(1..=1024), layers, edges)
        .expect("generated graph is valid")
}

const NAMES: [&str; 10] = [
    "pi", "nano", "jetson", "xeon", "gpu", "tpu", "alpha", "zeta", "m1", "rack",
];

fn dyadic_link<R: Rng>(rng: &mut R) -> LinkParams {
    LinkParams::new(
        rng.gen_range(0..8) as f64 / 64.0,
        (1u64 << rng.gen_range(12..20)) as f64,
    )
}

/// Random tiers (1 to 3, ascending) with 1 to `max_per_tier` resources each.
pub fn random_topology<R: Rng>(rng: &mut R, max_per_tier: usize) -> Topology {
    let mut tiers: Vec<Tier> = Tier::ALL
        .iter()
        .copied()
        .filter(|_| rng.gen_bool(0.6))
        .collect();
    if tiers.is_empty() {
        tiers.push(*Tier::ALL.choose(rng).unwrap());
    }
    let mut names = NAMES.to_vec();
    names.shuffle(rng);
    let mut names = names.into_iter();
    let mut builder = Topology::builder();
    let mut declared: Vec<(&str, Tier)> = Vec::new();
    for &tier in &tiers {
        let members: Vec<&str> = (0..rng.gen_range(1..=max_per_tier))
            .map(|_| names.next().unwrap())
            .collect();
        declared.extend(members.iter().map(|&m| (m, tier)));
        builder = builder.tier(tier, &members);
    }
    let first_tier: Vec<&str> = declared
        .iter()
        .filter(|(_, t)| *t == tiers[0])
        .map(|(n, _)| *n)
        .collect();
    let source = *first_tier.choose(rng).unwrap();
    builder = builder.source(source);
    for &(a, ta) in &declared {
        for &(b, tb) in &declared {
            if a != b && (a == source || ta < tb) {
                builder = builder.link(a, b, dyadic_link(rng));
            }
        }
    }
    builder.build().expect("generated topology is valid")
}

pub fn random_profiles<R: Rng>(
    rng: &mut R,
    schema: &PartitionSchema,
    topo: &Topology,
) -> Vec<ResourceProfile> {
    topo.resources()
        .iter()
        .map(|r| {
            let times = (0..schema.unit_count())
                .map(|_| rng.gen_range(0..1024) as f64 / 1024.0)
                .collect();
            ResourceProfile::from_means(r.id.clone(), r.tier, MODEL, times)
        })
        .collect()
}

/// Profiles where each resource runs every unit at a fixed speed, so one
/// resource is fastest on every unit.
pub fn uniform_speed_profiles<R: Rng>(
    rng: &mut R,
    schema: &PartitionSchema,
    topo: &Topology,
) -> Vec<ResourceProfile> {
    let work: Vec<f64> = (0..schema.unit_count())
        .map(|_| rng.gen_range(0..64) as f64 / 64.0)
        .collect();
    topo.resources()
        .iter()
        .map(|r| {
            let speed = (1u32 << rng.gen_range(0..5)) as f64;
            ResourceProfile::from_means(
                r.id.clone(),
                r.tier,
                MODEL,
                work.iter().map(|w| w / speed).collect(),
            )
        })
        .collect()
}

/// Graph with between 3 and `max_units` units (counting input and sink).
pub fn random_instance<R: Rng>(rng: &mut R, max_units: usize) -> Instance {
    let segments = rng.gen_range(1..=max_units - 2);
    let graph = random_graph(rng, segments);
    let schema = find_cut_points(&graph);
    assert!(schema.unit_count() <= max_units);
    let topo = random_topology(rng, 2);
    let profiles = random_profiles(rng, &schema, &topo);
    Instance {
        schema,
        topo,
        profiles,
    }
}

/// Copy of `topo` with every link made free.
pub fn free_network(topo: &Topology) -> Topology {
    let mut t = topo.clone();
    for link in topo.links() {
        let (a, b) = (
            t.lookup(&link.from_resource).unwrap(),
            t.lookup(&link.to_resource).unwrap(),
        );
        t.set_link(a, b, LinkParams::free());
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    /// (resource name, tier, first unit, last unit)
    pub segments: Vec<(String, Tier, usize, usize)>,
    pub compute: Vec<f64>,
    /// (from, to, bytes, seconds)
    pub hops: Vec<(String, String, u64, f64)>,
    pub end_to_end_s: f64,
    pub total_bytes: u64,
}

fn transfer_seconds(bytes: u64, link: &LinkParams) -> f64 {
    if link.bandwidth_bps.is_infinite() {
        link.latency_s
    } else {
        link.latency_s + (bytes as f64 * 8.0) / link.bandwidth_bps
    }
}

fn cost(inst: &Instance, assignment: &[usize]) -> OracleRow {
    let topo = &inst.topo;
    let mut segments: Vec<(String, Tier, usize, usize)> = Vec::new();
    let mut compute: Vec<f64> = Vec::new();
    for (unit, &r) in assignment.iter().enumerate() {
        let res = &topo.resources()[r];
        let t = inst
            .profiles
            .iter()
            .find(|p| p.resource_id == res.id)
            .unwrap()
            .unit_times[unit];
        match segments.last_mut() {
            Some(last) if last.0 == res.id => {
                last.3 = unit;
                *compute.last_mut().unwrap() += t;
            }
            _ => {
                segments.push((res.id.clone(), res.tier, unit, unit));
                compute.push(t);
            }
        }
    }
    let link = |a: &str, b: &str| {
        *topo
            .link(topo.lookup(a).unwrap(), topo.lookup(b).unwrap())
            .expect("link")
    };
    let mut hops = Vec::new();
    let source = topo.name(topo.source()).to_string();
    if segments[0].0 != source {
        let bytes = inst.schema.reference_input_bytes;
        hops.push((
            source.clone(),
            segments[0].0.clone(),
            bytes,
            transfer_seconds(bytes, &link(&source, &segments[0].0)),
        ));
    }
    for pair in segments.windows(2) {
        let bytes = inst.schema.units[pair[0].3].boundary_output_bytes;
        hops.push((
            pair[0].0.clone(),
            pair[1].0.clone(),
            bytes,
            transfer_seconds(bytes, &link(&pair[0].0, &pair[1].0)),
        ));
    }
    let end_to_end_s = compute.iter().sum::<f64>() + hops.iter().map(|h| h.3).sum::<f64>();
    let total_bytes = hops.iter().map(|h| h.2).sum();
    OracleRow {
        segments,
        compute,
        hops,
        end_to_end_s,
        total_bytes,
    }
}

/// Every configuration, found by assigning a resource to each unit in turn.
/// A unit may switch resource only after a cut point and only to a higher tier.
pub fn oracle_enumerate(inst: &Instance) -> Vec<OracleRow> {
    fn walk(inst: &Instance, assignment: &mut Vec<usize>, out: &mut Vec<OracleRow>) {
        let u = assignment.len();
        if u == inst.schema.unit_count() {
            out.push(cost(inst, assignment));
            return;
        }
        let resources = inst.topo.resources();
        for r in 0..resources.len() {
            let allowed = match assignment.last() {
                None => true,
                Some(&prev) => {
                    r == prev
                        || (inst.schema.cut_points.contains(&(u - 1))
                            && resources[r].tier > resources[prev].tier)
                }
            };
            if allowed {
                assignment.push(r);
                walk(inst, assignment, out);
                assignment.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(inst, &mut Vec::new(), &mut out);
    out
}

pub fn oracle_order(a: &OracleRow, b: &OracleRow, objective: Objective) -> Ordering {
    let primary = match objective {
        Objective::Latency => a.end_to_end_s.partial_cmp(&b.end_to_end_s).unwrap(),
        Objective::Transfer => a.total_bytes.cmp(&b.total_bytes),
    };
    let key = |r: &OracleRow| {
        r.segments
            .iter()
            .map(|(n, _, f, l)| (n.clone(), *f, *l))
            .collect::<Vec<_>>()
    };
    primary
        .then(a.segments.len().cmp(&b.segments.len()))
        .then(a.total_bytes.cmp(&b.total_bytes))
        .then_with(|| key(a).cmp(&key(b)))
}

pub fn oracle_rank(mut rows: Vec<OracleRow>, objective: Objective, n: usize) -> Vec<OracleRow> {
    rows.sort_by(|a, b| oracle_order(a, b, objective));
    rows.truncate(n);
    rows
}

fn matches(r: &ResRef, name: &str, tier: Tier) -> bool {
    match r {
        ResRef::Tier(t) => *t == tier,
        ResRef::Resource(n) => n == name,
    }
}

fn tier_named(topo: &Topology, name: &str) -> Tier {
    topo.tier_of(topo.lookup(name).unwrap())
}

pub fn oracle_satisfies(inst: &Instance, row: &OracleRow, query: &Query) -> bool {
    let seg_matches = |r: &ResRef| row.segments.iter().any(|(n, t, _, _)| matches(r, n, *t));
    let compute_in = |r: &ResRef| -> f64 {
        row.segments
            .iter()
            .zip(&row.compute)
            .filter(|((n, t, _, _), _)| matches(r, n, *t))
            .map(|(_, s)| s)
            .sum()
    };
    query.constraints.iter().all(|c| match c {
        Constraint::UseResource(r) => seg_matches(r),
        Constraint::ExcludeResource(r) => !seg_matches(r),
        Constraint::Native(r) => row.segments.len() == 1 && seg_matches(r),
        Constraint::Place { layer, resource } => {
            let unit = inst
                .schema
                .units
                .iter()
                .position(|u| u.member_layer_ids.contains(layer))
                .unwrap();
            row.segments
                .iter()
                .any(|(n, t, f, l)| (*f..=*l).contains(&unit) && matches(resource, n, *t))
        }
        Constraint::TimeBound {
            resource,
            cmp,
            seconds,
        } => holds(*cmp, compute_in(resource), *seconds),
        Constraint::TimeFraction {
            resource,
            cmp,
            fraction,
        } => {
            let total: f64 = row.compute.iter().sum();
            let share = if total > 0.0 {
                compute_in(resource) / total
            } else {
                0.0
            };
            holds(*cmp, share, *fraction)
        }
        Constraint::HopTransferBound {
            from,
            to,
            cmp,
            bytes,
        } => {
            let moved: u64 = row
                .hops
                .iter()
                .filter(|(a, b, _, _)| {
                    matches(from, a, tier_named(&inst.topo, a))
                        && matches(to, b, tier_named(&inst.topo, b))
                })
                .map(|h| h.2)
                .sum();
            holds(*cmp, moved as f64, *bytes)
        }
        Constraint::TotalTransferBound { cmp, bytes } => {
            holds(*cmp, row.total_bytes as f64, *bytes)
        }
    })
}

fn holds(cmp: Cmp, value: f64, bound: f64) -> bool {
    match cmp {
        Cmp::Le => value <= bound,
        Cmp::Ge => value >= bound,
    }
}

fn random_ref<R: Rng>(rng: &mut R, topo: &Topology) -> ResRef {
    if rng.gen_bool(0.5) {
        ResRef::Tier(*Tier::ALL.choose(rng).unwrap())
    } else {
        ResRef::Resource(topo.resources().choose(rng).unwrap().id.clone())
    }
}

/// A random constraint with bounds taken from `sample` so they sit near
/// real values.
pub fn random_constraint<R: Rng>(rng: &mut R, inst: &Instance, sample: &OracleRow) -> Constraint {
    let cmp = if rng.gen_bool(0.5) { Cmp::Le } else { Cmp::Ge };
    let topo = &inst.topo;
    match rng.gen_range(0..8) {
        0 => Constraint::UseResource(random_ref(rng, topo)),
        1 => Constraint::ExcludeResource(random_ref(rng, topo)),
        2 => Constraint::Native(random_ref(rng, topo)),
        3 => Constraint::Place {
            layer: rng.gen_range(0..inst.schema.layer_count()),
            resource: random_ref(rng, topo),
        },
        4 => {
            let i = rng.gen_range(0..sample.segments.len());
            let resource = ResRef::Resource(sample.segments[i].0.clone());
            Constraint::TimeBound {
                resource,
                cmp,
                seconds: sample.compute[i],
            }
        }
        5 => Constraint::TimeFraction {
            resource: random_ref(rng, topo),
            cmp,
            fraction: rng.gen_range(0..=8) as f64 / 8.0,
        },
        6 => match sample.hops.choose(rng) {
            Some((a, b, bytes, _)) => Constraint::HopTransferBound {
                from: ResRef::Resource(a.clone()),
                to: ResRef::Tier(tier_named(topo, b)),
                cmp,
                bytes: *bytes as f64,
            },
            None => Constraint::TotalTransferBound { cmp, bytes: 0.0 },
        },
        _ => Constraint::TotalTransferBound {
            cmp,
            bytes: sample.total_bytes as f64,
        },
    }
}

/// A random query of one to three constraints that parses back to itself.
/// Queries the parser rejects as contradictory are redrawn.
pub fn random_query<R: Rng>(rng: &mut R, inst: &Instance, rows: &[OracleRow]) -> Query {
    loop {
        let mut q = Query {
            objective: if rng.gen_bool(0.5) {
                Objective::Latency
            } else {
                Objective::Transfer
            },
            constraints: Vec::new(),
            n: rng.gen_range(1..6),
        };
        for _ in 0..rng.gen_range(1..=3) {
            let sample = &rows[rng.gen_range(0..rows.len())];
            q.constraints.push(random_constraint(rng, inst, sample));
        }
        match parse_query(&q.to_string()) {
            Ok(parsed) => {
                assert_eq!(parsed, q, "display of {q:?} does not parse back");
                return q;
            }
            Err(QueryError::Contradiction(_)) => continue,
            Err(e) => panic!("generated query failed to parse: {e}: {q}"),
        }
    }
}

/// Checks a ranked candidate list against oracle rows: same order exactly and
/// values within `tol`. Returns a description of the first mismatch.
pub fn compare_ranked(
    inst: &Instance,
    got: &[Candidate],
    want: &[OracleRow],
    tol: f64,
) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("length {} vs oracle {}", got.len(), want.len()));
    }
    for (i, (c, w)) in got.iter().zip(want).enumerate() {
        let segs: Vec<(String, Tier, usize, usize)> = c
            .config
            .segments()
            .iter()
            .map(|s| {
                let idx: ResourceIdx = s.resource;
                (
                    inst.topo.name(idx).to_string(),
                    inst.topo.tier_of(idx),
                    s.first_unit,
                    s.last_unit,
                )
            })
            .collect();
        if segs != w.segments {
            return Err(format!(
                "rank {i}: segments {segs:?} vs oracle {:?}",
                w.segments
            ));
        }
        if (c.metrics.end_to_end_s - w.end_to_end_s).abs() > tol {
            return Err(format!(
                "rank {i}: e2e {} vs oracle {}",
                c.metrics.end_to_end_s, w.end_to_end_s
            ));
        }
        if c.metrics.total_transfer_bytes != w.total_bytes {
            return Err(format!(
                "rank {i}: bytes {} vs oracle {}",
                c.metrics.total_transfer_bytes, w.total_bytes
            ));
        }
        let hops: Vec<u64> = c.metrics.per_hop_transfer.iter().map(|h| h.bytes).collect();
        let want_hops: Vec<u64> = w.hops.iter().map(|h| h.2).collect();
        if hops != want_hops {
            return Err(format!(
                "rank {i}: hop bytes {hops:?} vs oracle {want_hops:?}"
            ));
        }
        for (j, ((_, s), w)) in c
            .metrics
            .per_resource_compute_s
            .iter()
            .zip(&w.compute)
            .enumerate()
        {
            if (s - w).abs() > tol {
                return Err(format!("rank {i}: segment {j} compute {s} vs oracle {w}"));
            }
        }
    }
    Ok(())
}
