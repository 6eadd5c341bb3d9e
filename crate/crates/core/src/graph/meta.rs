//! Shape and packing inference.
//!
//! Packing model: a ciphertext holds [`DEFAULT_SLOTS`] slots split across
//! batch, channel and spatial axes. Ops that materialise a fresh tensor
//! (stride-1 conv, pooling, dense) repack canonically for their output dims.
//! A strided conv keeps its input's spatial tile, leaving the result sparse
//! in the old layout. Elementwise ops keep their input's packing.

use std::collections::BTreeMap;

use super::{topo_order, Graph, GraphError, NodeId, OpKind, TileShape};

/// Slots per ciphertext (CKKS with ring dimension 2^15).
pub const DEFAULT_SLOTS: u32 = 1 << 14;

/// Logical shape and packing of a node's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub dims: Vec<usize>,
    pub tile: TileShape,
}

/// A weight tensor a node expects from the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSpec {
    pub name: String,
    pub dims: Vec<usize>,
}

fn pow2_clip(n: usize, cap: u32) -> u32 {
    let p = n.max(1).next_power_of_two();
    p.min(cap as usize) as u32
}

fn tile_for(channels: usize, spatial_tile: u32) -> TileShape {
    let spatial = spatial_tile.min(DEFAULT_SLOTS);
    let channel = pow2_clip(channels, DEFAULT_SLOTS / spatial);
    TileShape {
        batch_tile: DEFAULT_SLOTS / (spatial * channel),
        channel_tile: channel,
        spatial_tile: spatial,
    }
}

/// Canonical packing of a freshly materialised tensor.
pub fn canonical_tile(dims: &[usize]) -> TileShape {
    let channels = dims.first().copied().unwrap_or(1);
    let spatial: usize = dims.iter().skip(1).product();
    tile_for(channels, pow2_clip(spatial, DEFAULT_SLOTS))
}

fn windowed(node: &str, extent: usize, kernel: usize, stride: usize) -> Result<usize, GraphError> {
    let pad = (kernel - 1) / 2;
    let span = (extent + 2 * pad).checked_sub(kernel).ok_or_else(|| {
        GraphError::shape(node, format!("window {kernel} exceeds extent {extent}"))
    })?;
    Ok(span / stride + 1)
}

fn spatial3(node: &str, dims: &[usize]) -> Result<(usize, usize, usize), GraphError> {
    match dims {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(GraphError::shape(
            node,
            format!("expected [C, H, W], got {dims:?}"),
        )),
    }
}

/// Packing of an op's output given its input packings and output dims.
pub(crate) fn output_tile(op: &OpKind, inputs: &[TileShape], out_dims: &[usize]) -> TileShape {
    match op {
        OpKind::Input { tile, dims } => tile.unwrap_or_else(|| canonical_tile(dims)),
        OpKind::Conv {
            out_channels,
            stride,
            ..
        } if *stride > 1 => tile_for(*out_channels, inputs[0].spatial_tile),
        OpKind::Conv { .. }
        | OpKind::AvgPool { .. }
        | OpKind::MaxPool { .. }
        | OpKind::Dense { .. } => canonical_tile(out_dims),
        OpKind::TileTransform { target_tile } => *target_tile,
        _ => inputs[0],
    }
}

/// Output dims and packing of every node.
pub fn infer_meta(g: &Graph) -> Result<BTreeMap<NodeId, TensorMeta>, GraphError> {
    let mut out: BTreeMap<NodeId, TensorMeta> = BTreeMap::new();
    for id in topo_order(g)? {
        let node = g.node(&id).unwrap();
        let arg = |i: usize| &out[&node.inputs[i]];
        let meta = match &node.op {
            OpKind::Input { dims, tile } => TensorMeta {
                dims: dims.clone(),
                tile: tile.unwrap_or_else(|| canonical_tile(dims)),
            },
            OpKind::Conv {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let src = arg(0);
                let (_, h, w) = spatial3(&id, &src.dims)?;
                let dims = vec![
                    *out_channels,
                    windowed(&id, h, *kernel, *stride)?,
                    windowed(&id, w, *kernel, *stride)?,
                ];
                TensorMeta {
                    tile: output_tile(&node.op, &[src.tile], &dims),
                    dims,
                }
            }
            OpKind::AvgPool { kernel, stride } | OpKind::MaxPool { kernel, stride } => {
                let (c, h, w) = spatial3(&id, &arg(0).dims)?;
                let dims = vec![
                    c,
                    windowed(&id, h, *kernel, *stride)?,
                    windowed(&id, w, *kernel, *stride)?,
                ];
                TensorMeta {
                    tile: canonical_tile(&dims),
                    dims,
                }
            }
            OpKind::Dense { out_features } => {
                let dims = vec![*out_features];
                TensorMeta {
                    tile: canonical_tile(&dims),
                    dims,
                }
            }
            OpKind::Add | OpKind::Mul => {
                let (l, r) = (arg(0), arg(1));
                if l.dims != r.dims {
                    return Err(GraphError::shape(
                        &id,
                        format!("operand dims differ: {:?} vs {:?}", l.dims, r.dims),
                    ));
                }
                l.clone()
            }
            OpKind::TileTransform { target_tile } => TensorMeta {
                dims: arg(0).dims.clone(),
                tile: *target_tile,
            },
            OpKind::PolyAct { .. }
            | OpKind::Relu
            | OpKind::BatchNorm
            | OpKind::Bootstrap
            | OpKind::Rescale { .. }
            | OpKind::Output => arg(0).clone(),
        };
        out.insert(id, meta);
    }
    Ok(out)
}

/// Weight tensors every node needs, in lexicographic node order.
///
/// Conv: `<id>.weight` `[out, in, k, k]`, plus `<id>.dirac` `[min(in, out)]`
/// for Dirac convs. BatchNorm: `<id>.scale` and `<id>.shift`, one per
/// channel. Dense: `<id>.weight` `[out, in]` and `<id>.bias` `[out]`.
pub fn weight_specs(g: &Graph) -> Result<Vec<WeightSpec>, GraphError> {
    let meta = infer_meta(g)?;
    let mut specs = Vec::new();
    let mut push = |name: String, dims: Vec<usize>| specs.push(WeightSpec { name, dims });
    for node in g.nodes() {
        let id = &node.id;
        match &node.op {
            OpKind::Conv {
                out_channels,
                kernel,
                dirac,
                ..
            } => {
                let cin = meta[&node.inputs[0]].dims[0];
                push(
                    format!("{id}.weight"),
                    vec![*out_channels, cin, *kernel, *kernel],
                );
                if *dirac {
                    push(format!("{id}.dirac"), vec![cin.min(*out_channels)]);
                }
            }
            OpKind::BatchNorm => {
                let c = meta[id].dims[0];
                push(format!("{id}.scale"), vec![c]);
                push(format!("{id}.shift"), vec![c]);
            }
            OpKind::Dense { out_features } => {
                let fan_in: usize = meta[&node.inputs[0]].dims.iter().product();
                push(format!("{id}.weight"), vec![*out_features, fan_in]);
                push(format!("{id}.bias"), vec![*out_features]);
            }
            _ => {}
        }
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;

    #[test]
    fn canonical_packing_fills_slots() {
        let t = canonical_tile(&[256, 8, 8]);
        assert_eq!(t, TileShape::new(1, 256, 64).unwrap());
        let t = canonical_tile(&[512, 4, 4]);
        assert_eq!(t, TileShape::new(2, 512, 16).unwrap());
        assert_eq!(canonical_tile(&[10]).slots(), DEFAULT_SLOTS as u64);
    }

    #[test]
    fn strided_conv_keeps_sparse_layout() {
        let g = Graph::new(
            "g",
            [
                Node::new(
                    "x",
                    OpKind::Input {
                        dims: vec![256, 8, 8],
                        tile: None,
                    },
                    &[],
                ),
                Node::new(
                    "proj",
                    OpKind::Conv {
                        out_channels: 512,
                        kernel: 1,
                        stride: 2,
                        dirac: false,
                    },
                    &["x"],
                ),
                Node::new(
                    "pool",
                    OpKind::AvgPool {
                        kernel: 2,
                        stride: 2,
                    },
                    &["x"],
                ),
            ],
            vec![],
        )
        .unwrap();
        let m = infer_meta(&g).unwrap();
        assert_eq!(m["proj"].dims, [512, 4, 4]);
        assert_eq!(m["proj"].tile, TileShape::new(1, 256, 64).unwrap());
        assert_eq!(m["pool"].dims, [256, 4, 4]);
        assert_eq!(m["pool"].tile, canonical_tile(&[256, 4, 4]));
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(windowed("n", 32, 7, 2).unwrap(), 16);
        assert_eq!(windowed("n", 16, 3, 2).unwrap(), 8);
        assert_eq!(windowed("n", 16, 16, 16).unwrap(), 1);
        assert_eq!(windowed("n", 8, 3, 1).unwrap(), 8);
        assert!(windowed("n", 1, 4, 4).is_err());
    }
}
