//! Builders for the HE-friendly ResNet variants.
//!
//! All variants share the bottleneck ResNet skeleton: a strided 7x7 stem,
//! four layers of 1x1 / 3x3 / 1x1 bottleneck blocks and a pooled dense head.
//! They differ only in how blocks are joined:
//!
//! * `Reference`: a mid-term skip `x + f(x)` around every block, with a 1x1
//!   projection where the block changes shape.
//! * `SkipLess`: no skip connections at all.
//! * `DiracOnly`: no skips, Dirac-parameterised first two convs in every
//!   stride-1 block.
//! * `SharedSourceDirac`: `DiracOnly` plus four long-term skips from the stem
//!   conv output to each layer output, each through a 1x1 conv and an average
//!   pool that match channels and spatial size.

use std::fmt;
use std::str::FromStr;

use crate::graph::{Graph, GraphError, Node, NodeId, OpKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArchError {
    #[error("node `{node}` ({op}) has no HE-friendly substitution")]
    UnsupportedOp { node: NodeId, op: &'static str },
    #[error("invalid architecture config: {0}")]
    Config(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Reference,
    SkipLess,
    DiracOnly,
    SharedSourceDirac,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Reference,
        Variant::SkipLess,
        Variant::DiracOnly,
        Variant::SharedSourceDirac,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Reference => "ref",
            Variant::SkipLess => "skipless",
            Variant::DiracOnly => "dirac",
            Variant::SharedSourceDirac => "ssd",
        }
    }

    fn uses_dirac(self) -> bool {
        matches!(self, Variant::DiracOnly | Variant::SharedSourceDirac)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Variant {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.short_name() == s)
            .ok_or_else(|| ArchError::Config(format!("unknown variant `{s}`")))
    }
}

/// Parameters of one network instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub variant: Variant,
    pub poly_degree: u32,
    /// Blocks per layer; ResNet50 is `[3, 4, 6, 3]`.
    pub stage_blocks: [usize; 4],
    /// Stem width; bottleneck widths are `base * 2^layer`, outputs four times that.
    pub base_channels: usize,
    pub input_dims: [usize; 3],
    pub num_classes: usize,
}

impl ArchConfig {
    /// Full-scale ResNet50 on 3x32x32 inputs.
    pub fn resnet50(variant: Variant, poly_degree: u32) -> Self {
        ArchConfig {
            variant,
            poly_degree,
            stage_blocks: [3, 4, 6, 3],
            base_channels: 64,
            input_dims: [3, 32, 32],
            num_classes: 10,
        }
    }

    /// Desk-scale network with one block per layer.
    pub fn toy(variant: Variant, poly_degree: u32) -> Self {
        ArchConfig {
            stage_blocks: [1, 1, 1, 1],
            base_channels: 8,
            ..ArchConfig::resnet50(variant, poly_degree)
        }
    }

    /// Per-block layout, layer by layer.
    pub fn block_specs(&self) -> Vec<BlockSpec> {
        let mut specs = Vec::new();
        let mut in_channels = self.base_channels;
        for (layer, &blocks) in self.stage_blocks.iter().enumerate() {
            let mid = self.base_channels << layer;
            let out = 4 * mid;
            for block in 0..blocks {
                let stride = if layer > 0 && block == 0 { 2 } else { 1 };
                let skip = match self.variant {
                    Variant::Reference => SkipKind::MidTerm,
                    Variant::SharedSourceDirac if block + 1 == blocks => {
                        SkipKind::SharedSourceTarget
                    }
                    _ => SkipKind::None,
                };
                specs.push(BlockSpec {
                    layer,
                    index: block,
                    channels: (in_channels, mid, out),
                    stride,
                    skip,
                    dirac_on_first_two: self.variant.uses_dirac() && stride == 1,
                });
                in_channels = out;
            }
        }
        specs
    }

    fn check(&self) -> Result<(), ArchError> {
        if self.poly_degree == 0 {
            return Err(ArchError::Config("poly_degree must be >= 1".into()));
        }
        if self.base_channels == 0 || self.num_classes == 0 {
            return Err(ArchError::Config("channel counts must be >= 1".into()));
        }
        if self.stage_blocks.contains(&0) {
            return Err(ArchError::Config(
                "every layer needs at least one block".into(),
            ));
        }
        if self.input_dims.contains(&0) {
            return Err(ArchError::Config("input dims must be positive".into()));
        }
        Ok(())
    }
}

/// How a block is joined to the rest of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipKind {
    /// `x + f(x)` around the block.
    MidTerm,
    None,
    /// Last block of a layer; its output receives a shared-source skip.
    SharedSourceTarget,
}

/// Layout of one bottleneck block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub layer: usize,
    pub index: usize,
    /// (input, bottleneck, output) channels.
    pub channels: (usize, usize, usize),
    pub stride: usize,
    pub skip: SkipKind,
    pub dirac_on_first_two: bool,
}

impl BlockSpec {
    fn prefix(&self) -> String {
        format!("layer{}.block{}", self.layer + 1, self.index)
    }
}

/// Output extent of a window op with padding `(kernel - 1) / 2`.
fn window_extent(extent: usize, kernel: usize, stride: usize) -> Option<usize> {
    let pad = (kernel - 1) / 2;
    (extent + 2 * pad)
        .checked_sub(kernel)
        .map(|s| s / stride + 1)
}

fn conv(out_channels: usize, kernel: usize, stride: usize, dirac: bool) -> OpKind {
    OpKind::Conv {
        out_channels,
        kernel,
        stride,
        dirac,
    }
}

struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    fn push(&mut self, id: impl Into<NodeId>, op: OpKind, inputs: &[&str]) -> NodeId {
        let node = Node::new(id, op, inputs);
        let id = node.id.clone();
        self.nodes.push(node);
        id
    }

    /// conv -> bn, returning the bn id.
    fn conv_bn(&mut self, prefix: &str, suffix: &str, op: OpKind, src: &str) -> NodeId {
        let c = self.push(format!("{prefix}.conv{suffix}"), op, &[src]);
        self.push(format!("{prefix}.bn{suffix}"), OpKind::BatchNorm, &[&c])
    }
}

/// Build the cleartext network (ReLU activations, max pooling in the stem).
pub fn build_raw(cfg: &ArchConfig) -> Result<Graph, ArchError> {
    cfg.check()?;
    let [cin, h, w] = cfg.input_dims;
    let mut b = Builder { nodes: Vec::new() };
    let input = b.push(
        "input",
        OpKind::Input {
            dims: vec![cin, h, w],
            tile: None,
        },
        &[],
    );
    let stem_bn = b.conv_bn("stem", "", conv(cfg.base_channels, 7, 2, false), &input);
    let stem_act = b.push("stem.act", OpKind::Relu, &[&stem_bn]);
    let mut x = b.push(
        "stem.pool",
        OpKind::MaxPool {
            kernel: 3,
            stride: 2,
        },
        &[&stem_act],
    );

    let too_small = || ArchError::Config(format!("input {h}x{w} is too small for the stem"));
    let source_hw = (
        window_extent(h, 7, 2).ok_or_else(too_small)?,
        window_extent(w, 7, 2).ok_or_else(too_small)?,
    );
    let mut hw = (
        window_extent(source_hw.0, 3, 2).ok_or_else(too_small)?,
        window_extent(source_hw.1, 3, 2).ok_or_else(too_small)?,
    );

    for spec in cfg.block_specs() {
        let p = spec.prefix();
        let (c_in, mid, out) = spec.channels;
        let d = spec.dirac_on_first_two;
        let bn1 = b.conv_bn(&p, "1", conv(mid, 1, 1, d), &x);
        let a1 = b.push(format!("{p}.act1"), OpKind::Relu, &[&bn1]);
        let bn2 = b.conv_bn(&p, "2", conv(mid, 3, spec.stride, d), &a1);
        let a2 = b.push(format!("{p}.act2"), OpKind::Relu, &[&bn2]);
        let bn3 = b.conv_bn(&p, "3", conv(out, 1, 1, false), &a2);
        hw = (
            window_extent(hw.0, 3, spec.stride).unwrap(),
            window_extent(hw.1, 3, spec.stride).unwrap(),
        );
        let pre_act = if spec.skip == SkipKind::MidTerm {
            let shortcut = if spec.stride == 1 && c_in == out {
                x.clone()
            } else {
                b.conv_bn(&p, "_proj", conv(out, 1, spec.stride, false), &x)
            };
            b.push(format!("{p}.add"), OpKind::Add, &[&bn3, &shortcut])
        } else {
            bn3
        };
        x = b.push(format!("{p}.act3"), OpKind::Relu, &[&pre_act]);

        if spec.skip == SkipKind::SharedSourceTarget {
            let l = spec.layer + 1;
            let adapter = b.push(format!("ssd{l}.conv"), conv(out, 1, 1, false), &[&stem_bn]);
            let (fh, fw) = (source_hw.0 / hw.0, source_hw.1 / hw.1);
            if fh != fw || fh * hw.0 != source_hw.0 || fw * hw.1 != source_hw.1 {
                return Err(ArchError::Config(format!(
                    "no pooling stride maps the {}x{} stem output onto layer {l} ({}x{})",
                    source_hw.0, source_hw.1, hw.0, hw.1
                )));
            }
            let matched = if fh > 1 {
                b.push(
                    format!("ssd{l}.pool"),
                    OpKind::AvgPool {
                        kernel: fh,
                        stride: fh,
                    },
                    &[&adapter],
                )
            } else {
                adapter
            };
            x = b.push(format!("ssd{l}.add"), OpKind::Add, &[&x, &matched]);
        }
    }

    let k = hw.0.max(hw.1);
    let pooled = b.push(
        "head.pool",
        OpKind::AvgPool {
            kernel: k,
            stride: k,
        },
        &[&x],
    );
    let fc = b.push(
        "head.fc",
        OpKind::Dense {
            out_features: cfg.num_classes,
        },
        &[&pooled],
    );
    let out = b.push("output", OpKind::Output, &[&fc]);
    let name = format!(
        "resnet-{}-{}",
        cfg.variant,
        cfg.stage_blocks.map(|n| n.to_string()).join("")
    );
    Ok(Graph::new(name, b.nodes, vec![out])?)
}

/// Build the HE-friendly network for `cfg`.
pub fn build(cfg: &ArchConfig) -> Result<Graph, ArchError> {
    make_he_friendly(&build_raw(cfg)?, cfg.poly_degree)
}

/// Replace MaxPool with AvgPool (same window) and ReLU with a degree
/// `poly_degree` polynomial activation. Everything else is kept as is.
pub fn make_he_friendly(g: &Graph, poly_degree: u32) -> Result<Graph, ArchError> {
    if poly_degree == 0 {
        return Err(ArchError::Config("poly_degree must be >= 1".into()));
    }
    let mut nodes = Vec::with_capacity(g.len());
    for node in g.nodes() {
        let op = match &node.op {
            OpKind::MaxPool { kernel, stride } => OpKind::AvgPool {
                kernel: *kernel,
                stride: *stride,
            },
            OpKind::Relu => OpKind::PolyAct {
                degree: poly_degree,
            },
            op if op.is_planner_op() => {
                return Err(ArchError::UnsupportedOp {
                    node: node.id.clone(),
                    op: op.name(),
                })
            }
            op => op.clone(),
        };
        nodes.push(Node { op, ..node.clone() });
    }
    Ok(Graph::new(g.name.clone(), nodes, g.outputs().to_vec())?)
}

/// Set every polynomial activation to `degree` (and convert any ReLU).
pub fn with_poly_degree(g: &Graph, degree: u32) -> Result<Graph, ArchError> {
    let g = make_he_friendly(g, degree)?;
    let (name, nodes, outputs) = g.into_parts();
    let nodes = nodes.into_iter().map(|mut n| {
        if let OpKind::PolyAct { .. } = n.op {
            n.op = OpKind::PolyAct { degree };
        }
        n
    });
    Ok(Graph::new(name, nodes, outputs)?)
}

/// Named presets: `toy-*` and `resnet50-*` for each variant, degree 8.
pub fn preset(name: &str) -> Result<ArchConfig, ArchError> {
    let unknown = || ArchError::UnknownPreset(name.to_string());
    let (scale, variant) = name.split_once('-').ok_or_else(unknown)?;
    let variant: Variant = variant.parse().map_err(|_| unknown())?;
    match scale {
        "toy" => Ok(ArchConfig::toy(variant, 8)),
        "resnet50" => Ok(ArchConfig::resnet50(variant, 8)),
        _ => Err(unknown()),
    }
}

/// Desk-scale presets only.
pub fn toy_preset(name: &str) -> Result<ArchConfig, ArchError> {
    if !name.starts_with("toy-") {
        return Err(ArchError::UnknownPreset(name.to_string()));
    }
    preset(name)
}

/// Every preset name, toy first.
pub fn preset_names() -> Vec<String> {
    ["toy", "resnet50"]
        .iter()
        .flat_map(|s| Variant::ALL.iter().map(move |v| format!("{s}-{v}")))
        .collect()
}
