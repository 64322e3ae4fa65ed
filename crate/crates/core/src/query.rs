//! Constraint queries over partition configurations.
//!
//! ```text
//! query  := clause (";" clause)*
//! clause := "minimize" ("latency" | "transfer") | "topn" INT | atom
//! atom   := "use(" RES ")" | "exclude(" RES ")" | "native(" RES ")"
//!         | "place(" INT "," RES ")"
//!         | "time(" RES ")" CMP DUR | "time_frac(" RES ")" CMP FLOAT
//!         | "transfer(" RES "->" RES ")" CMP SIZE | "total_transfer" CMP SIZE
//! CMP    := "<=" | ">="
//! DUR    := FLOAT ("s" | "ms")
//! SIZE   := FLOAT ("B" | "KB" | "MB")      decimal multipliers
//! RES    := resource id or tier name
//! ```
//!
//! Constraints are conjunctive. A tier name in a resource position stands for
//! the resources of that tier: `use(edge)` needs some edge resource, and
//! `time(edge)` bounds the compute time spent on the edge tier.

use std::fmt;

use thiserror::Error;

use crate::graph::PartitionSchema;
use crate::network::{ResourceIdx, Tier, Topology};
use crate::profile::ResourceProfile;
use crate::search::{
    Candidate, ConfigMetrics, Configuration, EvalOptions, Objective, Planner, SearchError,
};

pub const DEFAULT_TOP_N: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("contradictory constraints: {0}")]
    Contradiction(String),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown resource or tier '{0}'")]
    UnknownResource(String),
    #[error("layer {layer} not found (model has {layers} layers)")]
    LayerNotFound { layer: usize, layers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
}

impl Cmp {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Cmp::Le => value <= bound,
            Cmp::Ge => value >= bound,
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ResRef {
    Tier(Tier),
    Resource(String),
}

impl fmt::Display for ResRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResRef::Tier(t) => write!(f, "{t}"),
            ResRef::Resource(r) => f.write_str(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    UseResource(ResRef),
    ExcludeResource(ResRef),
    Native(ResRef),
    /// Layer id and where it must run; resolves to the enclosing unit.
    Place {
        layer: usize,
        resource: ResRef,
    },
    TimeBound {
        resource: ResRef,
        cmp: Cmp,
        seconds: f64,
    },
    TimeFraction {
        resource: ResRef,
        cmp: Cmp,
        fraction: f64,
    },
    HopTransferBound {
        from: ResRef,
        to: ResRef,
        cmp: Cmp,
        bytes: f64,
    },
    TotalTransferBound {
        cmp: Cmp,
        bytes: f64,
    },
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::UseResource(r) => write!(f, "use({r})"),
            Constraint::ExcludeResource(r) => write!(f, "exclude({r})"),
            Constraint::Native(r) => write!(f, "native({r})"),
            Constraint::Place { layer, resource } => write!(f, "place({layer},{resource})"),
            Constraint::TimeBound {
                resource,
                cmp,
                seconds,
            } => write!(f, "time({resource}) {cmp} {seconds}s"),
            Constraint::TimeFraction {
                resource,
                cmp,
                fraction,
            } => {
                write!(f, "time_frac({resource}) {cmp} {fraction}")
            }
            Constraint::HopTransferBound {
                from,
                to,
                cmp,
                bytes,
            } => {
                write!(f, "transfer({from}->{to}) {cmp} {bytes}B")
            }
            Constraint::TotalTransferBound { cmp, bytes } => {
                write!(f, "total_transfer {cmp} {bytes}B")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
    pub n: usize,
}

impl Default for Query {
    fn default() -> Self {
        Query {
            objective: Objective::Latency,
            constraints: Vec::new(),
            n: DEFAULT_TOP_N,
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "minimize {}; topn {}", self.objective, self.n)?;
        for c in &self.constraints {
            write!(f, "; {c}")?;
        }
        Ok(())
    }
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error<T>(&self, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            column: self.text[..self.pos].chars().count() + 1,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn found(&self) -> String {
        match self.rest().chars().next() {
            Some(c) => format!("'{c}'"),
            None => "end of query".to_string(),
        }
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), QueryError> {
        if self.eat(token) {
            Ok(())
        } else {
            self.error(format!("expected '{token}', found {}", self.found()))
        }
    }

    fn take_while(&mut self, pred: impl Fn(char, &str) -> bool) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.rest().chars().next() {
            if !pred(c, &self.rest()[c.len_utf8()..]) {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.text[start..self.pos]
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        self.take_while(|c, _| c.is_ascii_alphanumeric() || c == '_')
    }

    fn resource(&mut self) -> Result<ResRef, QueryError> {
        self.skip_ws();
        let name = self.take_while(|c, after| {
            c.is_ascii_alphanumeric()
                || c == '_'
                || c == '.'
                || (c == '-' && !after.starts_with('>'))
        });
        if name.is_empty() {
            return self.error(format!(
                "expected a resource or tier name, found {}",
                self.found()
            ));
        }
        Ok(match name.parse::<Tier>() {
            Ok(t) => ResRef::Tier(t),
            Err(_) => ResRef::Resource(name.to_string()),
        })
    }

    fn integer(&mut self) -> Result<usize, QueryError> {
        self.skip_ws();
        let digits = self.take_while(|c, _| c.is_ascii_digit());
        if digits.is_empty() {
            return self.error(format!("expected an integer, found {}", self.found()));
        }
        digits
            .parse()
            .or_else(|_| self.error("integer out of range"))
    }

    fn float(&mut self) -> Result<f64, QueryError> {
        self.skip_ws();
        let start = self.pos;
        let int = self.take_while(|c, _| c.is_ascii_digit());
        if int.is_empty() {
            return self.error(format!("expected a number, found {}", self.found()));
        }
        if self.rest().starts_with('.') {
            self.pos += 1;
            if self.take_while(|c, _| c.is_ascii_digit()).is_empty() {
                return self.error("expected digits after '.'");
            }
        }
        Ok(self.text[start..self.pos]
            .parse()
            .expect("digits with optional fraction"))
    }

    fn cmp(&mut self) -> Result<Cmp, QueryError> {
        if self.eat("<=") {
            Ok(Cmp::Le)
        } else if self.eat(">=") {
            Ok(Cmp::Ge)
        } else {
            self.error(format!("expected '<=' or '>=', found {}", self.found()))
        }
    }

    fn duration(&mut self) -> Result<f64, QueryError> {
        let value = self.float()?;
        if self.eat("ms") {
            Ok(value * 1e-3)
        } else if self.eat("s") {
            Ok(value)
        } else {
            self.error(format!("expected unit 's' or 'ms', found {}", self.found()))
        }
    }

    fn size(&mut self) -> Result<f64, QueryError> {
        let value = self.float()?;
        if self.eat("MB") {
            Ok(value * 1e6)
        } else if self.eat("KB") {
            Ok(value * 1e3)
        } else if self.eat("B") {
            Ok(value)
        } else {
            self.error(format!(
                "expected unit 'B', 'KB' or 'MB', found {}",
                self.found()
            ))
        }
    }

    fn parenthesized(&mut self) -> Result<ResRef, QueryError> {
        self.expect("(")?;
        let r = self.resource()?;
        self.expect(")")?;
        Ok(r)
    }
}

enum Clause {
    Minimize(Objective),
    TopN(usize),
    Atom(Constraint),
}

fn parse_clause(p: &mut Parser<'_>) -> Result<Clause, QueryError> {
    let start = p.pos;
    let keyword = p.word();
    let clause = match keyword {
        "minimize" => match p.word() {
            "latency" => Clause::Minimize(Objective::Latency),
            "transfer" => Clause::Minimize(Objective::Transfer),
            _ => return p.error("expected 'latency' or 'transfer' after 'minimize'"),
        },
        "topn" => Clause::TopN(p.integer()?),
        "use" => Clause::Atom(Constraint::UseResource(p.parenthesized()?)),
        "exclude" => Clause::Atom(Constraint::ExcludeResource(p.parenthesized()?)),
        "native" => Clause::Atom(Constraint::Native(p.parenthesized()?)),
        "place" => {
            p.expect("(")?;
            let layer = p.integer()?;
            p.expect(",")?;
            let resource = p.resource()?;
            p.expect(")")?;
            Clause::Atom(Constraint::Place { layer, resource })
        }
        "time" => {
            let resource = p.parenthesized()?;
            let cmp = p.cmp()?;
            Clause::Atom(Constraint::TimeBound {
                resource,
                cmp,
                seconds: p.duration()?,
            })
        }
        "time_frac" => {
            let resource = p.parenthesized()?;
            let cmp = p.cmp()?;
            p.skip_ws();
            let at = p.pos;
            let fraction = p.float()?;
            if fraction > 1.0 {
                p.pos = at;
                return p.error(format!("fraction {fraction} is outside [0, 1]"));
            }
            Clause::Atom(Constraint::TimeFraction {
                resource,
                cmp,
                fraction,
            })
        }
        "transfer" => {
            p.expect("(")?;
            let from = p.resource()?;
            p.expect("->")?;
            let to = p.resource()?;
            p.expect(")")?;
            let cmp = p.cmp()?;
            Clause::Atom(Constraint::HopTransferBound {
                from,
                to,
                cmp,
                bytes: p.size()?,
            })
        }
        "total_transfer" => {
            let cmp = p.cmp()?;
            Clause::Atom(Constraint::TotalTransferBound {
                cmp,
                bytes: p.size()?,
            })
        }
        "" => return p.error(format!("expected a clause, found {}", p.found())),
        other => {
            p.pos = start;
            p.skip_ws();
            return p.error(format!("unknown clause '{other}'"));
        }
    };
    Ok(clause)
}

/// Parses query text. Empty text is the default query.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    parse_query_with_defaults(text, Objective::default(), DEFAULT_TOP_N)
}

/// Like [`parse_query`], with `objective` and `n` used when the text has no
/// `minimize` or `topn` clause.
pub fn parse_query_with_defaults(
    text: &str,
    objective: Objective,
    n: usize,
) -> Result<Query, QueryError> {
    let default = Query {
        objective,
        constraints: Vec::new(),
        n,
    };
    let mut p = Parser { text, pos: 0 };
    let mut query = default.clone();
    let mut objective: Option<Objective> = None;
    let mut top: Option<usize> = None;

    p.skip_ws();
    if p.rest().is_empty() {
        return Ok(query);
    }
    loop {
        match parse_clause(&mut p)? {
            Clause::Minimize(o) => {
                if objective.is_some_and(|prev| prev != o) {
                    return Err(QueryError::Contradiction(
                        "both 'minimize latency' and 'minimize transfer'".into(),
                    ));
                }
                objective = Some(o);
            }
            Clause::TopN(n) => {
                if n == 0 {
                    return Err(QueryError::Invalid("topn must be at least 1".into()));
                }
                if top.is_some_and(|prev| prev != n) {
                    return Err(QueryError::Contradiction(format!(
                        "topn {} and topn {n}",
                        top.unwrap()
                    )));
                }
                top = Some(n);
            }
            Clause::Atom(c) => query.constraints.push(c),
        }
        p.skip_ws();
        if p.rest().is_empty() {
            break;
        }
        p.expect(";")?;
    }
    query.objective = objective.unwrap_or(default.objective);
    query.n = top.unwrap_or(default.n);
    check_contradictions(&query.constraints)?;
    Ok(query)
}

fn check_contradictions(constraints: &[Constraint]) -> Result<(), QueryError> {
    for c in constraints {
        if let Constraint::ExcludeResource(x) = c {
            let clash = constraints.iter().find(|other| match other {
                Constraint::UseResource(r) | Constraint::Native(r) => r == x,
                Constraint::Place { resource, .. } => resource == x,
                _ => false,
            });
            if let Some(other) = clash {
                return Err(QueryError::Contradiction(format!("{other} and {c}")));
            }
        }
    }
    let natives: Vec<&ResRef> = constraints
        .iter()
        .filter_map(|c| match c {
            Constraint::Native(r) => Some(r),
            _ => None,
        })
        .collect();
    for (i, a) in natives.iter().enumerate() {
        for b in &natives[i + 1..] {
            let disjoint = matches!(
                (a, b),
                (ResRef::Tier(_), ResRef::Tier(_)) | (ResRef::Resource(_), ResRef::Resource(_))
            );
            if disjoint && a != b {
                return Err(QueryError::Contradiction(format!(
                    "native({a}) and native({b})"
                )));
            }
        }
    }
    Ok(())
}

/// Set of resources a reference stands for, one bit per resource index.
type Mask = u64;

fn bit(r: ResourceIdx) -> Mask {
    1 << r.0
}

#[derive(Debug, Clone, PartialEq)]
enum Resolved {
    Use(Mask),
    Exclude(Mask),
    Native(Mask),
    Place {
        unit: usize,
        mask: Mask,
    },
    Time {
        mask: Mask,
        cmp: Cmp,
        seconds: f64,
    },
    Fraction {
        mask: Mask,
        cmp: Cmp,
        fraction: f64,
    },
    Hop {
        from: Mask,
        to: Mask,
        cmp: Cmp,
        bytes: f64,
    },
    Total {
        cmp: Cmp,
        bytes: f64,
    },
}

/// A query bound to a schema and topology.
#[derive(Debug, Clone)]
pub struct ResolvedQuery {
    pub query: Query,
    constraints: Vec<Resolved>,
    /// Remarks for the user, e.g. a pinned layer that drags its block along.
    pub notes: Vec<String>,
}

impl Query {
    pub fn resolve(
        &self,
        schema: &PartitionSchema,
        topo: &Topology,
    ) -> Result<ResolvedQuery, QueryError> {
        let mask = |r: &ResRef| -> Result<Mask, QueryError> {
            match r {
                ResRef::Tier(t) => Ok(topo.resources_in(*t).fold(0, |m, idx| m | bit(idx))),
                ResRef::Resource(name) => topo
                    .lookup(name)
                    .map(bit)
                    .ok_or_else(|| QueryError::UnknownResource(name.clone())),
            }
        };
        let mut notes = Vec::new();
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            constraints.push(match c {
                Constraint::UseResource(r) => Resolved::Use(mask(r)?),
                Constraint::ExcludeResource(r) => Resolved::Exclude(mask(r)?),
                Constraint::Native(r) => Resolved::Native(mask(r)?),
                Constraint::Place { layer, resource } => {
                    let unit = schema.unit_of_layer(*layer).ok_or(QueryError::LayerNotFound {
                        layer: *layer,
                        layers: schema.layer_count(),
                    })?;
                    if schema.units[unit].is_block() {
                        notes.push(format!(
                            "layer {layer} lies in block unit {unit} (layers {}); the whole block is placed on {resource}",
                            schema.layer_span_label(unit, unit)
                        ));
                    }
                    Resolved::Place { unit, mask: mask(resource)? }
                }
                Constraint::TimeBound { resource, cmp, seconds } => {
                    Resolved::Time { mask: mask(resource)?, cmp: *cmp, seconds: *seconds }
                }
                Constraint::TimeFraction { resource, cmp, fraction } => {
                    Resolved::Fraction { mask: mask(resource)?, cmp: *cmp, fraction: *fraction }
                }
                Constraint::HopTransferBound { from, to, cmp, bytes } => {
                    Resolved::Hop { from: mask(from)?, to: mask(to)?, cmp: *cmp, bytes: *bytes }
                }
                Constraint::TotalTransferBound { cmp, bytes } => Resolved::Total { cmp: *cmp, bytes: *bytes },
            });
        }
        Ok(ResolvedQuery {
            query: self.clone(),
            constraints,
            notes,
        })
    }
}

impl ResolvedQuery {
    /// True when the configuration meets every constraint.
    pub fn satisfies(&self, config: &Configuration, metrics: &ConfigMetrics) -> bool {
        let segments = config.segments();
        let used = segments.iter().fold(0, |m, s| m | bit(s.resource));
        let compute_in = |mask: Mask| -> f64 {
            metrics
                .per_resource_compute_s
                .iter()
                .filter(|(r, _)| bit(*r) & mask != 0)
                .map(|(_, s)| s)
                .sum()
        };
        self.constraints.iter().all(|c| match *c {
            Resolved::Use(mask) => used & mask != 0,
            Resolved::Exclude(mask) => used & mask == 0,
            Resolved::Native(mask) => segments.len() == 1 && used & mask != 0,
            Resolved::Place { unit, mask } => config
                .segment_of_unit(unit)
                .is_some_and(|s| bit(s.resource) & mask != 0),
            Resolved::Time { mask, cmp, seconds } => cmp.holds(compute_in(mask), seconds),
            Resolved::Fraction {
                mask,
                cmp,
                fraction,
            } => {
                let total = metrics.total_compute_s();
                let share = if total > 0.0 {
                    compute_in(mask) / total
                } else {
                    0.0
                };
                cmp.holds(share, fraction)
            }
            Resolved::Hop {
                from,
                to,
                cmp,
                bytes,
            } => {
                let moved: u64 = metrics
                    .per_hop_transfer
                    .iter()
                    .filter(|h| bit(h.from) & from != 0 && bit(h.to) & to != 0)
                    .map(|h| h.bytes)
                    .sum();
                cmp.holds(moved as f64, bytes)
            }
            Resolved::Total { cmp, bytes } => cmp.holds(metrics.total_transfer_bytes as f64, bytes),
        })
    }
}

/// Convenience over [`ResolvedQuery::satisfies`].
pub fn satisfies(config: &Configuration, metrics: &ConfigMetrics, query: &ResolvedQuery) -> bool {
    query.satisfies(config, metrics)
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub ranked: Vec<Candidate>,
    pub evaluated: usize,
    pub matched: usize,
    pub notes: Vec<String>,
}

/// Ranks the configurations that satisfy a resolved query.
pub fn solve_with(planner: &Planner<'_>, query: &ResolvedQuery, parallel: bool) -> Solution {
    let outcome = planner.search(
        query.query.objective,
        query.query.n,
        |c, m| query.satisfies(c, m),
        parallel,
    );
    Solution {
        ranked: outcome.ranked,
        evaluated: outcome.evaluated,
        matched: outcome.matched,
        notes: query.notes.clone(),
    }
}

/// Top-n configurations meeting `query`. An empty result is not an error.
pub fn solve(
    query: &Query,
    schema: &PartitionSchema,
    profiles: &[ResourceProfile],
    topo: &Topology,
) -> Result<Solution, SolveError> {
    let planner = Planner::new(schema, profiles, topo, EvalOptions::default())?;
    let resolved = query.resolve(schema, topo)?;
    Ok(solve_with(&planner, &resolved, true))
}
