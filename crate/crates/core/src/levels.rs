//! Static chain-index propagation.
//!
//! Every ciphertext starts at chain index 0. Plaintext-weight ops (conv,
//! dense, average pooling) consume `cp_mult_cost` levels, ciphertext products
//! land at `max(x, y) + cc_mult_cost`, and a skip addition resolves to the
//! larger operand index. Adds whose operands disagree are recorded as
//! mismatches: each one forces a rescale or bootstrap once the graph is
//! planned.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{topo_order, Graph, GraphError, NodeId, OpKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LevelError {
    #[error("node `{node}` is a planner op ({op}); run level analysis on unplanned graphs")]
    UnplannedOp { node: NodeId, op: &'static str },
    #[error("node `{node}` ({op}) has no HE evaluation; make the graph HE-friendly first")]
    NotHeFriendly { node: NodeId, op: &'static str },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Levels consumed per op class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelRules {
    pub cc_mult_cost: u32,
    pub cp_mult_cost: u32,
    pub bn_cost: u32,
    /// Per-degree overrides of the activation depth.
    pub polyact_overrides: BTreeMap<u32, u32>,
}

impl Default for LevelRules {
    fn default() -> Self {
        LevelRules {
            cc_mult_cost: 1,
            cp_mult_cost: 1,
            bn_cost: 0,
            polyact_overrides: BTreeMap::new(),
        }
    }
}

/// Skip additions never consume a level.
pub const ADD_COST: u32 = 0;

impl LevelRules {
    /// Depth of a degree-`d` activation: `ceil(log2(d + 1))` unless overridden.
    pub fn polyact_depth(&self, degree: u32) -> u32 {
        if let Some(&d) = self.polyact_overrides.get(&degree) {
            return d;
        }
        ceil_log2(degree as u64 + 1)
    }

    /// Levels a single-input op adds on top of its input, `None` for ops
    /// without a fixed unary cost.
    pub fn unary_cost(&self, op: &OpKind) -> Option<u32> {
        match op {
            OpKind::Conv { .. } | OpKind::Dense { .. } | OpKind::AvgPool { .. } => {
                Some(self.cp_mult_cost)
            }
            OpKind::PolyAct { degree } => Some(self.polyact_depth(*degree)),
            OpKind::BatchNorm => Some(self.bn_cost),
            OpKind::Output | OpKind::TileTransform { .. } => Some(0),
            _ => None,
        }
    }

    /// Largest single-step level cost that any op in `g` needs.
    pub fn max_step_cost(&self, g: &Graph) -> u32 {
        g.nodes()
            .map(|n| match n.op {
                OpKind::Mul => self.cc_mult_cost,
                ref op => self.unary_cost(op).unwrap_or(0),
            })
            .max()
            .unwrap_or(0)
    }
}

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// An Add whose operands arrive at different chain indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub node: NodeId,
    pub delta: u32,
}

/// Resolved chain index of every node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LevelTrace {
    pub cidx_of: BTreeMap<NodeId, u32>,
    /// Maximum chain index over the output nodes.
    pub depth: u32,
    pub mismatches: Vec<Mismatch>,
}

impl LevelTrace {
    pub fn cidx(&self, id: &str) -> u32 {
        self.cidx_of[id]
    }

    /// Largest chain index anywhere in the graph.
    pub fn peak(&self) -> u32 {
        self.cidx_of.values().copied().max().unwrap_or(0)
    }

    /// `node id -> cidx` as a JSON object.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.cidx_of).expect("maps of integers serialize")
    }
}

/// How planner-inserted ops are interpreted during propagation.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PlannerOps {
    Reject,
    Accept { reset_to: u32 },
}

/// Propagate chain indices through an unplanned graph.
pub fn propagate(g: &Graph, rules: &LevelRules) -> Result<LevelTrace, LevelError> {
    propagate_with(g, rules, PlannerOps::Reject)
}

/// Multiplicative depth of an unplanned graph.
pub fn multiplicative_depth(g: &Graph, rules: &LevelRules) -> Result<u32, LevelError> {
    Ok(propagate(g, rules)?.depth)
}

pub(crate) fn propagate_with(
    g: &Graph,
    rules: &LevelRules,
    planner_ops: PlannerOps,
) -> Result<LevelTrace, LevelError> {
    let mut cidx_of: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut mismatches = Vec::new();
    for id in topo_order(g)? {
        let node = g.node(&id).unwrap();
        let arg = |i: usize| cidx_of[&node.inputs[i]];
        let level = match &node.op {
            OpKind::Input { .. } => 0,
            OpKind::Add => {
                let (l, r) = (arg(0), arg(1));
                if l != r {
                    mismatches.push(Mismatch {
                        node: id.clone(),
                        delta: l.abs_diff(r),
                    });
                }
                l.max(r) + ADD_COST
            }
            OpKind::Mul => arg(0).max(arg(1)) + rules.cc_mult_cost,
            op @ (OpKind::Relu | OpKind::MaxPool { .. }) => {
                return Err(LevelError::NotHeFriendly {
                    node: id,
                    op: op.name(),
                })
            }
            op @ (OpKind::Bootstrap | OpKind::Rescale { .. } | OpKind::TileTransform { .. }) => {
                match (planner_ops, op) {
                    (PlannerOps::Reject, _) => {
                        return Err(LevelError::UnplannedOp {
                            node: id,
                            op: op.name(),
                        })
                    }
                    (PlannerOps::Accept { reset_to }, OpKind::Bootstrap) => reset_to,
                    (PlannerOps::Accept { .. }, OpKind::Rescale { target_cidx }) => *target_cidx,
                    (PlannerOps::Accept { .. }, _) => arg(0),
                }
            }
            op => arg(0) + rules.unary_cost(op).expect("remaining ops are unary"),
        };
        cidx_of.insert(id, level);
    }
    let depth = g.outputs().iter().map(|o| cidx_of[o]).max().unwrap_or(0);
    Ok(LevelTrace {
        cidx_of,
        depth,
        mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;

    fn input(id: &str) -> Node {
        Node::new(
            id,
            OpKind::Input {
                dims: vec![1, 4, 4],
                tile: None,
            },
            &[],
        )
    }

    fn conv(id: &str, src: &str) -> Node {
        Node::new(
            id,
            OpKind::Conv {
                out_channels: 1,
                kernel: 1,
                stride: 1,
                dirac: false,
            },
            &[src],
        )
    }

    #[test]
    fn ciphertext_product_lands_one_above_max() {
        // x reaches cidx 2, y reaches cidx 3, x*y lands at 4.
        let g = Graph::new(
            "mul",
            [
                input("a"),
                input("b"),
                conv("x1", "a"),
                conv("x2", "x1"),
                conv("y1", "b"),
                conv("y2", "y1"),
                conv("y3", "y2"),
                Node::new("m", OpKind::Mul, &["x2", "y3"]),
                Node::new("out", OpKind::Output, &["m"]),
            ],
            vec!["out".into()],
        )
        .unwrap();
        let t = propagate(&g, &LevelRules::default()).unwrap();
        assert_eq!(t.cidx("x2"), 2);
        assert_eq!(t.cidx("y3"), 3);
        assert_eq!(t.cidx("m"), 4);
        assert_eq!(t.depth, 4);
    }

    #[test]
    fn identity_graph_has_depth_zero() {
        let g = Graph::new(
            "id",
            [input("x"), Node::new("out", OpKind::Output, &["x"])],
            vec!["out".into()],
        )
        .unwrap();
        let t = propagate(&g, &LevelRules::default()).unwrap();
        assert!(t.cidx_of.values().all(|&c| c == 0));
        assert_eq!(t.depth, 0);
        assert!(t.mismatches.is_empty());
    }

    #[test]
    fn activation_depth_defaults() {
        let r = LevelRules::default();
        assert_eq!(r.polyact_depth(1), 1);
        assert_eq!(r.polyact_depth(2), 2);
        assert_eq!(r.polyact_depth(4), 3);
        assert_eq!(r.polyact_depth(8), 4);
        let mut r = r;
        r.polyact_overrides.insert(8, 3);
        assert_eq!(r.polyact_depth(8), 3);
    }

    #[test]
    fn skip_add_records_mismatch() {
        let g = Graph::new(
            "skip",
            [
                input("x"),
                conv("f1", "x"),
                conv("f2", "f1"),
                Node::new("s", OpKind::Add, &["x", "f2"]),
            ],
            vec!["s".into()],
        )
        .unwrap();
        let t = propagate(&g, &LevelRules::default()).unwrap();
        assert_eq!(t.cidx("s"), 2);
        assert_eq!(
            t.mismatches,
            [Mismatch {
                node: "s".into(),
                delta: 2
            }]
        );
    }

    #[test]
    fn rejects_planner_and_cleartext_ops() {
        let g = Graph::new(
            "b",
            [input("x"), Node::new("b", OpKind::Bootstrap, &["x"])],
            vec!["b".into()],
        )
        .unwrap();
        assert!(matches!(
            propagate(&g, &LevelRules::default()),
            Err(LevelError::UnplannedOp { .. })
        ));
        let g = Graph::new(
            "r",
            [input("x"), Node::new("r", OpKind::Relu, &["x"])],
            vec![],
        )
        .unwrap();
        assert!(matches!(
            propagate(&g, &LevelRules::default()),
            Err(LevelError::NotHeFriendly { .. })
        ));
    }
}
