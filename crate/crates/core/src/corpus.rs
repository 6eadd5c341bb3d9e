//! Test and benchmark graph corpora.
//!
//! [`random_dag`] draws small unplanned HE-friendly DAGs over the whole op
//! set; [`preset_corpus`] builds every architecture preset at every studied
//! activation degree.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{build, ArchConfig, Variant};
use crate::graph::{Graph, Node, NodeId, OpKind, TileShape};

/// Activation degrees the architecture study covers.
pub const DEGREES: [u32; 3] = [2, 4, 8];

const CHANNELS: usize = 2;
const EXTENT: usize = 4;
const FEATURES: usize = 4;

/// Shape of a random DAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagSpec {
    /// Upper bound on node count, outputs included.
    pub max_nodes: usize,
    /// Upper bound on nodes that consume levels.
    pub max_consuming: usize,
}

impl Default for DagSpec {
    fn default() -> Self {
        DagSpec {
            max_nodes: 30,
            max_consuming: usize::MAX,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pool {
    Spatial,
    Flat,
}

/// Random unplanned DAG drawn from `seed`.
///
/// Values are either `[2, 4, 4]` feature maps or length-4 vectors, so every
/// join is shape compatible. A second input may carry a non-canonical
/// packing to force tile transforms at its joins.
pub fn random_dag(seed: u64, spec: &DagSpec) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_nodes = spec.max_nodes.max(3);
    let target = rng.gen_range(3..=max_nodes);
    let mut nodes: Vec<(Node, Pool)> = Vec::new();
    let mut consuming = 0;

    let inputs = if rng.gen_bool(0.4) { 2 } else { 1 };
    for i in 0..inputs {
        let tile = (i == 1 && rng.gen_bool(0.5)).then(|| TileShape::new(256, 4, 16).unwrap());
        let op = OpKind::Input {
            dims: vec![CHANNELS, EXTENT, EXTENT],
            tile,
        };
        nodes.push((Node::new(format!("in{i}"), op, &[]), Pool::Spatial));
    }

    // Favour recent values so graphs grow deep rather than wide.
    let pick = |rng: &mut ChaCha8Rng, nodes: &[(Node, Pool)], pool: Pool| -> Option<NodeId> {
        let ids: Vec<&NodeId> = nodes
            .iter()
            .filter(|(_, p)| *p == pool)
            .map(|(n, _)| &n.id)
            .collect();
        if ids.is_empty() {
            return None;
        }
        let back = if rng.gen_bool(0.6) {
            rng.gen_range(0..ids.len().min(3))
        } else {
            rng.gen_range(0..ids.len())
        };
        Some(ids[ids.len() - 1 - back].clone())
    };

    while nodes.len() < target - 1 {
        let id = format!("n{:02}", nodes.len());
        let pool = if nodes.iter().any(|(_, p)| *p == Pool::Flat) && rng.gen_bool(0.3) {
            Pool::Flat
        } else {
            Pool::Spatial
        };
        let free = consuming < spec.max_consuming;
        let choices: &[&str] = match (pool, free) {
            (Pool::Spatial, true) => &[
                "conv", "conv", "avgpool", "dense", "polyact", "bn", "add", "add", "mul",
            ],
            (Pool::Flat, true) => &["dense", "polyact", "bn", "add", "mul"],
            (_, false) => &["bn", "add"],
        };
        let kind = *choices.choose(&mut rng).unwrap();
        let a = pick(&mut rng, &nodes, pool).unwrap();
        let (op, ins, out_pool) = match kind {
            "conv" => (
                OpKind::Conv {
                    out_channels: CHANNELS,
                    kernel: if rng.gen_bool(0.5) { 1 } else { 3 },
                    stride: 1,
                    dirac: rng.gen_bool(0.3),
                },
                vec![a],
                pool,
            ),
            "avgpool" => (
                OpKind::AvgPool {
                    kernel: 3,
                    stride: 1,
                },
                vec![a],
                pool,
            ),
            "dense" => (
                OpKind::Dense {
                    out_features: FEATURES,
                },
                vec![a],
                Pool::Flat,
            ),
            "polyact" => (
                OpKind::PolyAct {
                    degree: *DEGREES.choose(&mut rng).unwrap(),
                },
                vec![a],
                pool,
            ),
            "bn" => (OpKind::BatchNorm, vec![a], pool),
            _ => {
                let b = pick(&mut rng, &nodes, pool).unwrap();
                let op = if kind == "add" {
                    OpKind::Add
                } else {
                    OpKind::Mul
                };
                (op, vec![a, b], pool)
            }
        };
        if !matches!(op, OpKind::Add | OpKind::BatchNorm) {
            consuming += 1;
        }
        let ins: Vec<&str> = ins.iter().map(String::as_str).collect();
        nodes.push((Node::new(id, op, &ins), out_pool));
    }

    let last = nodes.last().unwrap().0.id.clone();
    nodes.push((Node::new("out", OpKind::Output, &[&last]), Pool::Spatial));
    let consumed: std::collections::BTreeSet<&str> = nodes
        .iter()
        .flat_map(|(n, _)| n.inputs.iter().map(String::as_str))
        .collect();
    let outputs = nodes
        .iter()
        .map(|(n, _)| n.id.clone())
        .filter(|id| !consumed.contains(id.as_str()))
        .collect();
    Graph::new(
        format!("dag{seed}"),
        nodes.into_iter().map(|(n, _)| n),
        outputs,
    )
    .expect("generator only emits valid graphs")
}

/// `count` random DAGs with consecutive seeds starting at `seed`.
pub fn random_dags(seed: u64, count: usize, spec: &DagSpec) -> Vec<Graph> {
    (0..count as u64)
        .map(|i| random_dag(seed + i, spec))
        .collect()
}

fn fixture_input(id: &str) -> Node {
    let dims = vec![4, 4, 4];
    Node::new(id, OpKind::Input { dims, tile: None }, &[])
}

fn unit_conv(id: &str, src: &str) -> Node {
    let op = OpKind::Conv {
        out_channels: 4,
        kernel: 1,
        stride: 1,
        dirac: false,
    };
    Node::new(id, op, &[src])
}

/// `x` squared `n` times in sequence: `m{i} = m{i-1} * m{i-1}`.
pub fn mul_chain(n: usize) -> Graph {
    let mut nodes = vec![fixture_input("x")];
    let mut prev = "x".to_string();
    for i in 0..n {
        let id = format!("m{i}");
        nodes.push(Node::new(&id, OpKind::Mul, &[&prev, &prev]));
        prev = id;
    }
    nodes.push(Node::new("out", OpKind::Output, &[&prev]));
    Graph::new("mul-chain", nodes, vec!["out".into()]).expect("valid chain")
}

/// One deep value `h4` (cidx 5) joined with three shallow ones (cidx 1).
pub fn fanout_fixture() -> Graph {
    let mut nodes = vec![fixture_input("x")];
    let mut prev = "x".to_string();
    for i in 0..5 {
        let id = format!("h{i}");
        nodes.push(unit_conv(&id, &prev));
        prev = id;
    }
    let mut outputs = Vec::new();
    for k in 0..3 {
        let (l, j) = (format!("l{k}"), format!("j{k}"));
        nodes.push(unit_conv(&l, "x"));
        nodes.push(Node::new(&j, OpKind::Add, &["h4", &l]));
        outputs.push(j);
    }
    Graph::new("fanout", nodes, outputs).expect("valid fixture")
}

/// Every toy and ResNet50 variant at every degree in [`DEGREES`].
pub fn preset_corpus() -> Vec<Graph> {
    let mut out = Vec::new();
    for make in [
        ArchConfig::toy as fn(Variant, u32) -> ArchConfig,
        ArchConfig::resnet50,
    ] {
        for v in Variant::ALL {
            for d in DEGREES {
                out.push(build(&make(v, d)).expect("presets build"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levels::{propagate, LevelRules};

    #[test]
    fn dags_respect_their_bounds() {
        let spec = DagSpec {
            max_nodes: 20,
            max_consuming: 5,
        };
        for g in random_dags(0, 200, &spec) {
            assert!(g.len() <= 20);
            let consuming = g.count_ops(|o| {
                !matches!(
                    o,
                    OpKind::Input { .. } | OpKind::Add | OpKind::BatchNorm | OpKind::Output
                )
            });
            assert!(consuming <= 5);
            propagate(&g, &LevelRules::default()).unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic_and_varied() {
        let spec = DagSpec::default();
        assert_eq!(random_dag(3, &spec), random_dag(3, &spec));
        let all = random_dags(0, 300, &spec);
        for ctor in [
            "Conv",
            "AvgPool",
            "Dense",
            "PolyAct",
            "BatchNorm",
            "Add",
            "Mul",
        ] {
            assert!(
                all.iter().any(|g| g.count_ops(|o| o.name() == ctor) > 0),
                "{ctor}"
            );
        }
    }
}
