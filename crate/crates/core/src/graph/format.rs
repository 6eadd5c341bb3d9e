//! `.hegraph` documents: UTF-8 JSON, one entry per node.
//!
//! ```json
//! {"name": "g",
//!  "nodes": [{"id": "x", "op": "Input", "attrs": {"dims": [3, 8, 8]}, "inputs": []},
//!            {"id": "out", "op": "Output", "attrs": {}, "inputs": ["x"]}],
//!  "outputs": ["out"]}
//! ```
//!
//! Emission lists nodes in topological order (lexicographic tie-break) with
//! sorted object keys, so equal graphs always serialize to identical bytes.

use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::{topo_order, Graph, GraphError, Node, OpKind, TileShape};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    name: String,
    nodes: Vec<RawNode>,
    outputs: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    op: String,
    #[serde(default)]
    attrs: Map<String, Value>,
    #[serde(default)]
    inputs: Vec<String>,
}

/// Parse and validate a `.hegraph` document.
pub fn parse_graph(text: &str) -> Result<Graph, GraphError> {
    let raw: RawDoc = serde_json::from_str(text).map_err(|e| GraphError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for rn in raw.nodes {
        let op = decode_op(&rn.op, &rn.attrs).map_err(|message| {
            let (line, column) = locate_id(text, &rn.id);
            GraphError::Syntax {
                line,
                column,
                message: format!("node `{}`: {message}", rn.id),
            }
        })?;
        nodes.push(Node {
            id: rn.id,
            op,
            inputs: rn.inputs,
        });
    }
    Graph::new(raw.name, nodes, raw.outputs)
}

/// Serialize a graph to its canonical document.
pub fn emit_graph(g: &Graph) -> String {
    let order = topo_order(g).expect("validated graphs are acyclic");
    let nodes: Vec<Value> = order
        .iter()
        .map(|id| {
            let node = g.node(id).unwrap();
            json!({
                "id": node.id,
                "op": node.op.name(),
                "attrs": encode_attrs(&node.op),
                "inputs": node.inputs,
            })
        })
        .collect();
    let doc = json!({
        "name": g.name,
        "nodes": nodes,
        "outputs": g.outputs(),
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json values always serialize");
    text.push('\n');
    text
}

fn encode_attrs(op: &OpKind) -> Value {
    match op {
        OpKind::Input { dims, tile } => {
            let mut m = Map::new();
            m.insert("dims".into(), json!(dims));
            if let Some(t) = tile {
                m.insert("tile".into(), tile_json(t));
            }
            Value::Object(m)
        }
        OpKind::Conv {
            out_channels,
            kernel,
            stride,
            dirac,
        } => json!({
            "out_channels": out_channels,
            "kernel": kernel,
            "stride": stride,
            "dirac": dirac,
        }),
        OpKind::AvgPool { kernel, stride } | OpKind::MaxPool { kernel, stride } => {
            json!({"kernel": kernel, "stride": stride})
        }
        OpKind::Dense { out_features } => json!({"out_features": out_features}),
        OpKind::PolyAct { degree } => json!({"degree": degree}),
        OpKind::Rescale { target_cidx } => json!({"target_cidx": target_cidx}),
        OpKind::TileTransform { target_tile } => json!({"target_tile": tile_json(target_tile)}),
        OpKind::Relu
        | OpKind::Add
        | OpKind::Mul
        | OpKind::BatchNorm
        | OpKind::Bootstrap
        | OpKind::Output => json!({}),
    }
}

fn tile_json(t: &TileShape) -> Value {
    json!([t.batch_tile, t.channel_tile, t.spatial_tile])
}

/// Typed view over a node's attribute object that tracks which keys were read.
struct Attrs<'a> {
    map: &'a Map<String, Value>,
    allowed: &'static [&'static str],
}

impl<'a> Attrs<'a> {
    fn new(map: &'a Map<String, Value>, allowed: &'static [&'static str]) -> Result<Self, String> {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("unknown attribute `{k}`"));
        }
        Ok(Attrs { map, allowed })
    }

    fn uint(&self, key: &str) -> Result<Option<u64>, String> {
        debug_assert!(self.allowed.contains(&key));
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| format!("attribute `{key}` must be a non-negative integer")),
        }
    }

    fn req_uint(&self, key: &str) -> Result<u64, String> {
        self.uint(key)?
            .ok_or_else(|| format!("missing attribute `{key}`"))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, String> {
        Ok(self.uint(key)?.map(|v| v as usize).unwrap_or(default))
    }

    fn u32(&self, key: &str) -> Result<u32, String> {
        u32::try_from(self.req_uint(key)?).map_err(|_| format!("attribute `{key}` out of range"))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, String> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| format!("attribute `{key}` must be a boolean")),
        }
    }

    fn uint_list(&self, key: &str) -> Result<Option<Vec<u64>>, String> {
        let Some(v) = self.map.get(key) else {
            return Ok(None);
        };
        let arr = v
            .as_array()
            .ok_or_else(|| format!("attribute `{key}` must be an array"))?;
        arr.iter()
            .map(|x| {
                x.as_u64()
                    .ok_or_else(|| format!("attribute `{key}` must hold non-negative integers"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn tile(&self, key: &str) -> Result<Option<TileShape>, String> {
        let Some(list) = self.uint_list(key)? else {
            return Ok(None);
        };
        let bad = || format!("attribute `{key}` must be three positive integers");
        if list.len() != 3 {
            return Err(bad());
        }
        let part = |i: usize| u32::try_from(list[i]).map_err(|_| bad());
        TileShape::new(part(0)?, part(1)?, part(2)?)
            .map(Some)
            .ok_or_else(bad)
    }
}

fn decode_op(name: &str, attrs: &Map<String, Value>) -> Result<OpKind, String> {
    let op = match name {
        "Input" => {
            let a = Attrs::new(attrs, &["dims", "tile"])?;
            let dims = a
                .uint_list("dims")?
                .ok_or("missing attribute `dims`")?
                .into_iter()
                .map(|d| d as usize)
                .collect();
            OpKind::Input {
                dims,
                tile: a.tile("tile")?,
            }
        }
        "Conv" => {
            let a = Attrs::new(attrs, &["out_channels", "kernel", "stride", "dirac"])?;
            OpKind::Conv {
                out_channels: a.req_uint("out_channels")? as usize,
                kernel: a.req_uint("kernel")? as usize,
                stride: a.usize_or("stride", 1)?,
                dirac: a.bool_or("dirac", false)?,
            }
        }
        "AvgPool" | "MaxPool" => {
            let a = Attrs::new(attrs, &["kernel", "stride"])?;
            let kernel = a.req_uint("kernel")? as usize;
            let stride = a.usize_or("stride", kernel)?;
            if name == "AvgPool" {
                OpKind::AvgPool { kernel, stride }
            } else {
                OpKind::MaxPool { kernel, stride }
            }
        }
        "Dense" => {
            let a = Attrs::new(attrs, &["out_features"])?;
            OpKind::Dense {
                out_features: a.req_uint("out_features")? as usize,
            }
        }
        "PolyAct" => {
            let a = Attrs::new(attrs, &["degree"])?;
            OpKind::PolyAct {
                degree: a.u32("degree")?,
            }
        }
        "Rescale" => {
            let a = Attrs::new(attrs, &["target_cidx"])?;
            OpKind::Rescale {
                target_cidx: a.u32("target_cidx")?,
            }
        }
        "TileTransform" => {
            let a = Attrs::new(attrs, &["target_tile"])?;
            OpKind::TileTransform {
                target_tile: a
                    .tile("target_tile")?
                    .ok_or("missing attribute `target_tile`")?,
            }
        }
        "ReLU" | "Add" | "Mul" | "BatchNorm" | "Bootstrap" | "Output" => {
            Attrs::new(attrs, &[])?;
            match name {
                "ReLU" => OpKind::Relu,
                "Add" => OpKind::Add,
                "Mul" => OpKind::Mul,
                "BatchNorm" => OpKind::BatchNorm,
                "Bootstrap" => OpKind::Bootstrap,
                _ => OpKind::Output,
            }
        }
        other => return Err(format!("unknown op `{other}`")),
    };
    Ok(op)
}

/// 1-based line/column of the node entry whose `"id"` is `id`.
fn locate_id(text: &str, id: &str) -> (usize, usize) {
    let needle = serde_json::to_string(id).unwrap_or_default();
    let mut from = 0;
    while let Some(pos) = text[from..].find(&needle) {
        let at = from + pos;
        let before = text[..at].trim_end();
        if before.ends_with(':') && before[..before.len() - 1].trim_end().ends_with("\"id\"") {
            let line = text[..at].matches('\n').count() + 1;
            let column = at - text[..at].rfind('\n').map(|p| p + 1).unwrap_or(0) + 1;
            return (line, column);
        }
        from = at + needle.len();
    }
    (0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ValidationKind;

    const MINIMAL: &str = r#"{"name": "min",
        "nodes": [{"id": "x", "op": "Input", "attrs": {"dims": [2]}, "inputs": []},
                  {"id": "out", "op": "Output", "attrs": {}, "inputs": ["x"]}],
        "outputs": ["out"]}"#;

    #[test]
    fn minimal_document() {
        let g = parse_graph(MINIMAL).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.outputs(), ["out".to_string()]);
        let text = emit_graph(&g);
        assert_eq!(parse_graph(&text).unwrap(), g);
        assert_eq!(emit_graph(&parse_graph(&text).unwrap()), text);
        // Input first, then Output: the canonical two-entry document.
        let x = text.find("\"Input\"").unwrap();
        let o = text.find("\"Output\"").unwrap();
        assert!(x < o);
    }

    #[test]
    fn two_node_cycle_is_a_validation_error() {
        let doc = r#"{"name": "c", "outputs": [],
            "nodes": [{"id": "a", "op": "PolyAct", "attrs": {"degree": 2}, "inputs": ["b"]},
                      {"id": "b", "op": "PolyAct", "attrs": {"degree": 2}, "inputs": ["a"]}]}"#;
        match parse_graph(doc).unwrap_err() {
            GraphError::Validation { kind, node, .. } => {
                assert_eq!(kind, ValidationKind::Cycle);
                assert!(node == "a" || node == "b");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse_graph("{\"name\": \"x\",\n \"nodes\": [,]}").unwrap_err();
        assert!(matches!(err, GraphError::Syntax { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn unknown_op_and_attr_are_syntax_errors() {
        let doc = MINIMAL.replace("\"Output\"", "\"Softmax\"");
        let err = parse_graph(&doc).unwrap_err();
        match err {
            GraphError::Syntax { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("out") && message.contains("Softmax"));
            }
            e => panic!("unexpected {e}"),
        }
        let doc = MINIMAL.replace("{\"dims\": [2]}", "{\"dims\": [2], \"colour\": 1}");
        assert!(matches!(parse_graph(&doc), Err(GraphError::Syntax { .. })));
        let doc = MINIMAL.replace(
            "\"outputs\": [\"out\"]",
            "\"outputs\": [\"out\"], \"extra\": 1",
        );
        assert!(matches!(parse_graph(&doc), Err(GraphError::Syntax { .. })));
    }

    #[test]
    fn planner_ops_round_trip() {
        let doc = r#"{"name": "p", "outputs": ["o"], "nodes": [
            {"id": "x", "op": "Input", "attrs": {"dims": [1, 4, 4], "tile": [1, 1, 16]}},
            {"id": "b", "op": "Bootstrap", "inputs": ["x"]},
            {"id": "r", "op": "Rescale", "attrs": {"target_cidx": 3}, "inputs": ["b"]},
            {"id": "t", "op": "TileTransform", "attrs": {"target_tile": [2, 1, 8]}, "inputs": ["r"]},
            {"id": "o", "op": "Output", "inputs": ["t"]}]}"#;
        let g = parse_graph(doc).unwrap();
        assert!(g.is_planned());
        assert_eq!(parse_graph(&emit_graph(&g)).unwrap(), g);
        assert_eq!(
            g.node("t").unwrap().op,
            OpKind::TileTransform {
                target_tile: TileShape::new(2, 1, 8).unwrap()
            }
        );
    }
}
