//! Layer graphs and partition schemas.
//!
//! A model is a DAG of layers with a single input and a single output. The
//! schema computed by [`find_cut_points`] groups the layers into execution
//! units: boundaries in the topological order that carry exactly one edge
//! become cut points, and everything between two such boundaries is a block
//! that is placed and benchmarked as a whole.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Malformed(String),
    #[error("duplicate layer id {0}")]
    DuplicateId(usize),
    #[error("layer ids must form 0..{count}; id {id} is out of range")]
    IdOutOfRange { id: usize, count: usize },
    #[error("edge ({from}, {to}) references unknown layer {missing}")]
    UnknownEdgeEndpoint {
        from: usize,
        to: usize,
        missing: usize,
    },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("cycle detected involving layers {0:?}")]
    Cycle(Vec<usize>),
    #[error("expected exactly one input layer, found {0:?}")]
    InputCount(Vec<usize>),
    #[error("input layer {0} has predecessors")]
    InputHasPredecessors(usize),
    #[error("multiple sources: layers {0:?} have no predecessors")]
    MultipleSources(Vec<usize>),
    #[error("multiple sinks: layers {0:?} have no successors")]
    MultipleSinks(Vec<usize>),
    #[error("layer {0} is unreachable from the input or cannot reach the output")]
    Unreachable(usize),
    #[error("layer {0} has output_bytes = 0 but is not the terminal layer")]
    ZeroOutputBytes(usize),
    #[error("graph has no layers")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Input,
    Convolution,
    Pooling,
    Dense,
    Activation,
    Normalization,
    #[serde(alias = "add")]
    Merge,
    Softmax,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub id: usize,
    pub name: String,
    pub kind: LayerKind,
    /// Bytes of this layer's serialized output tensor for the reference input.
    pub output_bytes: u64,
}

/// Wire form of the graph-interchange document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub model_name: String,
    pub reference_input_bytes: u64,
    pub layers: Vec<Layer>,
    pub edges: Vec<(usize, usize)>,
}

/// A validated layer DAG with one input and one output.
#[derive(Debug, Clone)]
pub struct DnnGraph {
    model_name: String,
    reference_input_bytes: u64,
    layers: Vec<Layer>,
    edges: Vec<(usize, usize)>,
    successors: Vec<Vec<usize>>,
    predecessors: Vec<Vec<usize>>,
}

impl DnnGraph {
    /// Builds and validates a graph. Layers may be given in any order.
    pub fn new(
        model_name: impl Into<String>,
        reference_input_bytes: u64,
        layers: Vec<Layer>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let count = layers.len();
        if count == 0 {
            return Err(GraphError::Empty);
        }
        let mut slots: Vec<Option<Layer>> = vec![None; count];
        for layer in layers {
            if layer.id >= count {
                return Err(GraphError::IdOutOfRange {
                    id: layer.id,
                    count,
                });
            }
            let id = layer.id;
            if slots[id].replace(layer).is_some() {
                return Err(GraphError::DuplicateId(id));
            }
        }
        // count slots, no out-of-range ids and no duplicates: every slot is filled
        let layers: Vec<Layer> = slots.into_iter().map(Option::unwrap).collect();

        let mut successors = vec![Vec::new(); count];
        let mut predecessors = vec![Vec::new(); count];
        let mut seen = HashSet::with_capacity(edges.len());
        for &(from, to) in &edges {
            for end in [from, to] {
                if end >= count {
                    return Err(GraphError::UnknownEdgeEndpoint {
                        from,
                        to,
                        missing: end,
                    });
                }
            }
            if from == to {
                return Err(GraphError::Cycle(vec![from]));
            }
            if !seen.insert((from, to)) {
                return Err(GraphError::DuplicateEdge(from, to));
            }
            successors[from].push(to);
            predecessors[to].push(from);
        }
        for list in successors.iter_mut().chain(predecessors.iter_mut()) {
            list.sort_unstable();
        }

        let inputs: Vec<usize> = layers
            .iter()
            .filter(|l| l.kind == LayerKind::Input)
            .map(|l| l.id)
            .collect();
        if inputs.len() != 1 {
            return Err(GraphError::InputCount(inputs));
        }
        let input = inputs[0];
        if !predecessors[input].is_empty() {
            return Err(GraphError::InputHasPredecessors(input));
        }

        let graph = DnnGraph {
            model_name: model_name.into(),
            reference_input_bytes,
            layers,
            edges,
            successors,
            predecessors,
        };

        let order = graph.kahn_order();
        if order.len() != count {
            let mut placed = vec![false; count];
            for &v in &order {
                placed[v] = true;
            }
            let remaining = (0..count).filter(|&v| !placed[v]).collect();
            return Err(GraphError::Cycle(remaining));
        }

        let sources: Vec<usize> = (0..count)
            .filter(|&v| graph.predecessors[v].is_empty())
            .collect();
        if sources.len() != 1 {
            return Err(GraphError::MultipleSources(sources));
        }
        let sinks: Vec<usize> = (0..count)
            .filter(|&v| graph.successors[v].is_empty())
            .collect();
        if sinks.len() != 1 {
            return Err(GraphError::MultipleSinks(sinks));
        }
        let sink = sinks[0];

        let forward = reachable(input, &graph.successors);
        let backward = reachable(sink, &graph.predecessors);
        if let Some(v) = (0..count).find(|&v| !forward[v] || !backward[v]) {
            return Err(GraphError::Unreachable(v));
        }

        if let Some(layer) = graph
            .layers
            .iter()
            .find(|l| l.output_bytes == 0 && l.id != sink)
        {
            return Err(GraphError::ZeroOutputBytes(layer.id));
        }

        Ok(graph)
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        Self::new(
            doc.model_name,
            doc.reference_input_bytes,
            doc.layers,
            doc.edges,
        )
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            model_name: self.model_name.clone(),
            reference_input_bytes: self.reference_input_bytes,
            layers: self.layers.clone(),
            edges: self.edges.clone(),
        }
    }

    /// A linear chain `0 -> 1 -> ... -> n-1` with the given output sizes.
    /// Layer 0 is the input; the last size should be the classifier output.
    pub fn chain(
        model_name: impl Into<String>,
        reference_input_bytes: u64,
        output_bytes: &[u64],
    ) -> Result<Self, GraphError> {
        let layers = output_bytes
            .iter()
            .enumerate()
            .map(|(id, &bytes)| Layer {
                id,
                name: format!("layer_{id}"),
                kind: if id == 0 {
                    LayerKind::Input
                } else {
                    LayerKind::Other
                },
                output_bytes: bytes,
            })
            .collect();
        let edges = (1..output_bytes.len()).map(|v| (v - 1, v)).collect();
        Self::new(model_name, reference_input_bytes, layers, edges)
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn reference_input_bytes(&self) -> u64 {
        self.reference_input_bytes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: usize) -> Option<&Layer> {
        self.layers.get(id)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn successors(&self, id: usize) -> &[usize] {
        &self.successors[id]
    }

    pub fn predecessors(&self, id: usize) -> &[usize] {
        &self.predecessors[id]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input(&self) -> usize {
        self.layers
            .iter()
            .find(|l| l.kind == LayerKind::Input)
            .map(|l| l.id)
            .expect("validated graph has an input layer")
    }

    pub fn sink(&self) -> usize {
        (0..self.len())
            .find(|&v| self.successors[v].is_empty())
            .expect("validated graph has a sink")
    }

    // Kahn's algorithm with a min-heap so ties go to the smallest id.
    fn kahn_order(&self) -> Vec<usize> {
        let mut indegree: Vec<usize> = self.predecessors.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(v, _)| Reverse(v))
            .collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for &w in &self.successors[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.push(Reverse(w));
                }
            }
        }
        order
    }
}

fn reachable(start: usize, adjacency: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &w in &adjacency[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Parses and validates a graph-interchange document.
pub fn parse_graph(document: &str) -> Result<DnnGraph, GraphError> {
    let doc: GraphDocument =
        serde_json::from_str(document).map_err(|e| GraphError::Malformed(e.to_string()))?;
    DnnGraph::from_document(doc)
}

/// Topological order of the layer ids, ties broken by ascending id.
pub fn topological_order(graph: &DnnGraph) -> Vec<usize> {
    graph.kahn_order()
}

/// A layer or a block of layers that is placed as a whole.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionUnit {
    pub unit_id: usize,
    /// Member layers in topological order.
    pub member_layer_ids: Vec<usize>,
    /// Bytes crossing the boundary after this unit.
    pub boundary_output_bytes: u64,
}

impl ExecutionUnit {
    pub fn is_block(&self) -> bool {
        self.member_layer_ids.len() > 1
    }

    pub fn first_layer(&self) -> usize {
        self.member_layer_ids[0]
    }

    pub fn last_layer(&self) -> usize {
        *self.member_layer_ids.last().expect("units are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionSchema {
    pub model_name: String,
    pub reference_input_bytes: u64,
    pub units: Vec<ExecutionUnit>,
    /// A cut at `c` splits after unit `c`.
    pub cut_points: Vec<usize>,
    layer_to_unit: Vec<usize>,
}

impl PartitionSchema {
    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_to_unit.len()
    }

    /// Unit enclosing the given layer id.
    pub fn unit_of_layer(&self, layer_id: usize) -> Option<usize> {
        self.layer_to_unit.get(layer_id).copied()
    }

    pub fn is_cut(&self, unit: usize) -> bool {
        self.cut_points.binary_search(&unit).is_ok()
    }

    /// Layer range label for a span of units, e.g. `2-175` or `176`.
    pub fn layer_span_label(&self, first_unit: usize, last_unit: usize) -> String {
        let first = self.units[first_unit].first_layer();
        let last = self.units[last_unit].last_layer();
        if first == last {
            first.to_string()
        } else {
            format!("{first}-{last}")
        }
    }

    /// The schema of a plain chain of this schema's units, one layer per unit.
    pub fn condensed_graph(&self) -> DnnGraph {
        let sizes: Vec<u64> = self.units.iter().map(|u| u.boundary_output_bytes).collect();
        DnnGraph::chain(self.model_name.clone(), self.reference_input_bytes, &sizes)
            .expect("units of a valid schema form a valid chain")
    }
}

impl fmt::Display for PartitionSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "layers={} cuts={} units={}",
            self.layer_count(),
            self.cut_points.len(),
            self.unit_count()
        )?;
        let cuts: Vec<String> = self.cut_points.iter().map(|c| c.to_string()).collect();
        writeln!(f, "cut_points=[{}]", cuts.join(","))?;
        for unit in &self.units {
            let kind = if unit.is_block() { "block" } else { "layer" };
            writeln!(
                f,
                "unit {:>4}  {:<6} layers {:<12} out_bytes={}",
                unit.unit_id,
                kind,
                self.layer_span_label(unit.unit_id, unit.unit_id),
                unit.boundary_output_bytes
            )?;
        }
        Ok(())
    }
}

/// Computes the execution units and valid cut points of a graph.
///
/// Sweeps the topological order keeping a running count of edges leaving the
/// prefix. A boundary carrying exactly one edge is a unit boundary. The input
/// layer always forms unit 0 on its own, and the cut directly after it is not
/// offered since the following partition would need a second input layer.
pub fn find_cut_points(graph: &DnnGraph) -> PartitionSchema {
    let order = topological_order(graph);
    let count = order.len();

    // crossing[i]: edges from order[..=i] to order[i+1..]
    let mut crossing = Vec::with_capacity(count);
    let mut running: isize = 0;
    for &v in &order {
        running += graph.successors(v).len() as isize - graph.predecessors(v).len() as isize;
        crossing.push(running);
    }

    let mut position = vec![0; count];
    for (pos, &v) in order.iter().enumerate() {
        position[v] = pos;
    }

    let mut units: Vec<ExecutionUnit> = Vec::new();
    let mut members = Vec::new();
    for (pos, &v) in order.iter().enumerate() {
        members.push(v);
        let last = pos + 1 == count;
        if pos == 0 || last || crossing[pos] == 1 {
            // every edge leaving the prefix here starts at one member layer
            let source = members
                .iter()
                .copied()
                .find(|&m| graph.successors(m).iter().any(|&s| position[s] > pos))
                .unwrap_or(v);
            units.push(ExecutionUnit {
                unit_id: units.len(),
                member_layer_ids: std::mem::take(&mut members),
                boundary_output_bytes: graph.layers()[source].output_bytes,
            });
        }
    }

    let mut layer_to_unit = vec![0; count];
    for unit in &units {
        for &l in &unit.member_layer_ids {
            layer_to_unit[l] = unit.unit_id;
        }
    }

    let cut_points = (1..units.len().saturating_sub(1)).collect();

    PartitionSchema {
        model_name: graph.model_name().to_string(),
        reference_input_bytes: graph.reference_input_bytes(),
        units,
        cut_points,
        layer_to_unit,
    }
}
