//! Computation-graph IR for HE-executable networks.
//!
//! A [`Graph`] is an id-indexed DAG of [`Node`]s. Nodes are keyed by their
//! string id in a `BTreeMap`, so structural equality and every traversal are
//! independent of the order nodes were inserted in.

mod format;
mod meta;

pub use format::{emit_graph, parse_graph};
pub(crate) use meta::output_tile;
pub use meta::{canonical_tile, infer_meta, weight_specs, TensorMeta, WeightSpec, DEFAULT_SLOTS};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a node inside a [`Graph`].
pub type NodeId = String;

/// Errors raised while parsing or validating a graph.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    /// The document is not well-formed.
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    /// The document parsed but violates a graph invariant.
    #[error("validation error ({kind}) at node `{node}`: {message}")]
    Validation {
        kind: ValidationKind,
        node: NodeId,
        message: String,
    },
    /// Tensor dimensions do not line up.
    #[error("shape error at node `{node}`: {message}")]
    Shape { node: NodeId, message: String },
}

impl GraphError {
    pub(crate) fn validation(kind: ValidationKind, node: &str, message: impl Into<String>) -> Self {
        GraphError::Validation {
            kind,
            node: node.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(node: &str, message: impl Into<String>) -> Self {
        GraphError::Shape {
            node: node.to_string(),
            message: message.into(),
        }
    }
}

/// Which graph invariant a [`GraphError::Validation`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationKind {
    Cycle,
    DanglingInput,
    Arity,
    DuplicateId,
    UnknownOutput,
    BadAttribute,
}

impl fmt::Display for ValidationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationKind::Cycle => "cycle",
            ValidationKind::DanglingInput => "dangling input",
            ValidationKind::Arity => "arity",
            ValidationKind::DuplicateId => "duplicate id",
            ValidationKind::UnknownOutput => "unknown output",
            ValidationKind::BadAttribute => "bad attribute",
        })
    }
}

// ---------------------------------------------------------------------------
// Ciphertext metadata
// ---------------------------------------------------------------------------

/// Packing of a tensor into ciphertext slots, along three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileShape {
    pub batch_tile: u32,
    pub channel_tile: u32,
    pub spatial_tile: u32,
}

impl TileShape {
    pub fn new(batch_tile: u32, channel_tile: u32, spatial_tile: u32) -> Option<Self> {
        (batch_tile >= 1 && channel_tile >= 1 && spatial_tile >= 1).then_some(TileShape {
            batch_tile,
            channel_tile,
            spatial_tile,
        })
    }

    pub fn slots(&self) -> u64 {
        self.batch_tile as u64 * self.channel_tile as u64 * self.spatial_tile as u64
    }
}

impl fmt::Display for TileShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}",
            self.batch_tile, self.channel_tile, self.spatial_tile
        )
    }
}

/// Per-edge ciphertext metadata: chain index, packing and logical shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherMeta {
    pub cidx: u32,
    pub tile: TileShape,
    pub tensor_dims: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// The operation a node performs.
///
/// `MaxPool` and `Relu` only exist in networks that have not been made
/// HE-friendly yet. `Bootstrap`, `Rescale` and `TileTransform` only appear in
/// planner output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpKind {
    /// Encrypted model input with logical dims (e.g. `[C, H, W]`) and an
    /// optional explicit packing; the default packing is derived from dims.
    Input {
        dims: Vec<usize>,
        tile: Option<TileShape>,
    },
    /// 2-D convolution with "same"-style padding `(kernel - 1) / 2`.
    /// `dirac` adds the identity path `diag(a) x` to the kernel.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dirac: bool,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    /// Fully connected layer over the flattened input.
    Dense {
        out_features: usize,
    },
    /// Polynomial activation of the given degree.
    PolyAct {
        degree: u32,
    },
    Relu,
    /// Elementwise addition of two ciphertexts; the skip connection join.
    Add,
    /// Elementwise ciphertext-ciphertext multiplication.
    Mul,
    BatchNorm,
    Bootstrap,
    /// Adjust a ciphertext up to the given chain index.
    Rescale {
        target_cidx: u32,
    },
    /// Repack a ciphertext into another tile shape.
    TileTransform {
        target_tile: TileShape,
    },
    Output,
}

impl OpKind {
    /// Name used in the `.hegraph` document.
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input { .. } => "Input",
            OpKind::Conv { .. } => "Conv",
            OpKind::AvgPool { .. } => "AvgPool",
            OpKind::MaxPool { .. } => "MaxPool",
            OpKind::Dense { .. } => "Dense",
            OpKind::PolyAct { .. } => "PolyAct",
            OpKind::Relu => "ReLU",
            OpKind::Add => "Add",
            OpKind::Mul => "Mul",
            OpKind::BatchNorm => "BatchNorm",
            OpKind::Bootstrap => "Bootstrap",
            OpKind::Rescale { .. } => "Rescale",
            OpKind::TileTransform { .. } => "TileTransform",
            OpKind::Output => "Output",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::Input { .. } => 0,
            OpKind::Add | OpKind::Mul => 2,
            _ => 1,
        }
    }

    /// True for the ops only the planner inserts.
    pub fn is_planner_op(&self) -> bool {
        matches!(
            self,
            OpKind::Bootstrap | OpKind::Rescale { .. } | OpKind::TileTransform { .. }
        )
    }

    /// True for ops that join two ciphertexts and need aligned operands.
    pub fn is_join(&self) -> bool {
        matches!(self, OpKind::Add | OpKind::Mul)
    }

    fn check_attrs(&self, id: &str) -> Result<(), GraphError> {
        let bad = |msg: &str| {
            Err(GraphError::validation(
                ValidationKind::BadAttribute,
                id,
                msg,
            ))
        };
        match self {
            OpKind::Input { dims, .. } if dims.is_empty() || dims.contains(&0) => {
                bad("input dims must be non-empty and positive")
            }
            OpKind::Conv {
                out_channels,
                kernel,
                stride,
                ..
            } if *out_channels == 0 || *kernel == 0 || *stride == 0 => {
                bad("conv out_channels, kernel and stride must be >= 1")
            }
            OpKind::AvgPool { kernel, stride } | OpKind::MaxPool { kernel, stride }
                if *kernel == 0 || *stride == 0 =>
            {
                bad("pool kernel and stride must be >= 1")
            }
            OpKind::Dense { out_features: 0 } => bad("dense out_features must be >= 1"),
            OpKind::PolyAct { degree: 0 } => bad("activation degree must be >= 1"),
            _ => Ok(()),
        }
    }
}

/// One operation in the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
}

impl Node {
    pub fn new(id: impl Into<NodeId>, op: OpKind, inputs: &[&str]) -> Self {
        Node {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

/// A validated computation DAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub name: String,
    nodes: BTreeMap<NodeId, Node>,
    outputs: Vec<NodeId>,
}

impl Graph {
    /// Build and validate a graph.
    pub fn new(
        name: impl Into<String>,
        nodes: impl IntoIterator<Item = Node>,
        outputs: Vec<NodeId>,
    ) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for node in nodes {
            if map.contains_key(&node.id) {
                return Err(GraphError::validation(
                    ValidationKind::DuplicateId,
                    &node.id,
                    "node id defined more than once",
                ));
            }
            map.insert(node.id.clone(), node);
        }
        let g = Graph {
            name: name.into(),
            nodes: map,
            outputs,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), GraphError> {
        for node in self.nodes.values() {
            if node.inputs.len() != node.op.arity() {
                return Err(GraphError::validation(
                    ValidationKind::Arity,
                    &node.id,
                    format!(
                        "{} expects {} input(s), got {}",
                        node.op.name(),
                        node.op.arity(),
                        node.inputs.len()
                    ),
                ));
            }
            for input in &node.inputs {
                if !self.nodes.contains_key(input) {
                    return Err(GraphError::validation(
                        ValidationKind::DanglingInput,
                        &node.id,
                        format!("input `{input}` does not exist"),
                    ));
                }
            }
            node.op.check_attrs(&node.id)?;
        }
        for out in &self.outputs {
            if !self.nodes.contains_key(out) {
                return Err(GraphError::validation(
                    ValidationKind::UnknownOutput,
                    out,
                    "listed output does not exist",
                ));
            }
        }
        topo_order(self)?;
        Ok(())
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Nodes in lexicographic id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    /// Consumers of each node, in lexicographic order, one entry per edge.
    pub fn consumers(&self) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = self
            .nodes
            .keys()
            .map(|k| (k.as_str(), Vec::new()))
            .collect();
        for node in self.nodes.values() {
            for input in &node.inputs {
                out.get_mut(input.as_str()).unwrap().push(node.id.as_str());
            }
        }
        out
    }

    /// Every node that transitively feeds `id` (excluding `id`).
    pub fn ancestors(&self, id: &str) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = self.nodes[id].inputs.iter().map(String::as_str).collect();
        while let Some(cur) = stack.pop() {
            if seen.insert(cur) {
                stack.extend(self.nodes[cur].inputs.iter().map(String::as_str));
            }
        }
        seen
    }

    /// Nodes that no listed output depends on.
    pub fn dead_nodes(&self) -> BTreeSet<&str> {
        let mut live: BTreeSet<&str> = BTreeSet::new();
        for out in &self.outputs {
            live.insert(out);
            live.extend(self.ancestors(out));
        }
        self.nodes
            .keys()
            .map(String::as_str)
            .filter(|id| !live.contains(id))
            .collect()
    }

    /// True if the graph carries planner-inserted nodes.
    pub fn is_planned(&self) -> bool {
        self.nodes.values().any(|n| n.op.is_planner_op())
    }

    /// Number of nodes whose op satisfies the predicate.
    pub fn count_ops(&self, pred: impl Fn(&OpKind) -> bool) -> usize {
        self.nodes.values().filter(|n| pred(&n.op)).count()
    }

    /// Remove every unary node whose op satisfies `pred`, wiring its
    /// consumers (and output slots) to its input instead.
    pub fn bypass(&self, pred: impl Fn(&OpKind) -> bool) -> Result<Graph, GraphError> {
        let removed = |id: &str| {
            let n = &self.nodes[id];
            n.op.arity() == 1 && pred(&n.op)
        };
        let resolve = |id: &NodeId| {
            let mut cur = id;
            while removed(cur) {
                cur = &self.nodes[cur].inputs[0];
            }
            cur.clone()
        };
        let nodes = self
            .nodes
            .values()
            .filter(|n| !removed(&n.id))
            .map(|n| Node {
                inputs: n.inputs.iter().map(resolve).collect(),
                ..n.clone()
            });
        let outputs = self.outputs.iter().map(resolve).collect();
        Graph::new(self.name.clone(), nodes, outputs)
    }

    /// Consume the graph and return its parts.
    pub fn into_parts(self) -> (String, Vec<Node>, Vec<NodeId>) {
        (self.name, self.nodes.into_values().collect(), self.outputs)
    }
}

/// Deterministic topological order: Kahn's algorithm, ready nodes taken in
/// lexicographic id order.
pub fn topo_order(g: &Graph) -> Result<Vec<NodeId>, GraphError> {
    let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
    for node in g.nodes.values() {
        indegree.insert(&node.id, node.inputs.len());
    }
    let consumers = g.consumers();
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_string());
        for consumer in &consumers[id] {
            let d = indegree.get_mut(consumer).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(consumer);
            }
        }
    }
    if order.len() != g.nodes.len() {
        let stuck = indegree
            .iter()
            .find(|(_, d)| **d > 0)
            .map(|(k, _)| k.to_string())
            .unwrap_or_default();
        return Err(GraphError::validation(
            ValidationKind::Cycle,
            &stuck,
            "graph contains a cycle",
        ));
    }
    Ok(order)
}
