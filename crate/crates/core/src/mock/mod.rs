//! Cleartext simulation of planned graphs.
//!
//! [`execute`] runs a [`Plan`] on plaintext tensors while enforcing the HE
//! bookkeeping at runtime: every value carries a [`CipherMeta`], ops that
//! would exceed `max_level` fail, and joins demand equal chain indices and
//! tiles. Bootstraps add uniform noise in `[-epsilon, epsilon]`; rescales and
//! tile transforms are numeric identities. [`cleartext_reference`] evaluates
//! the same numerics with all bookkeeping dropped.

pub mod container;
mod noise;
mod poly;
mod tensor;

pub use noise::noise_bound;
pub use poly::{eval as eval_poly, PolyTable};
pub use tensor::{
    avg_pool, batch_norm, conv2d, dense, dirac_conv_folded, dirac_conv_split, fold_dirac, max_pool,
    Tensor,
};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NoiseConfig;
use crate::cost::{OpCensus, OpClass};
use crate::graph::{
    output_tile, topo_order, weight_specs, CipherMeta, Graph, GraphError, Node, NodeId, OpKind,
    TileShape,
};
use crate::levels::{LevelTrace, ADD_COST};
use crate::planner::Plan;

pub use container::Tensors;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MockError {
    #[error("node `{node}` would reach cidx {cidx}, above max_level {max_level}")]
    LevelOverflow {
        node: NodeId,
        cidx: u32,
        max_level: u32,
    },
    #[error("join `{node}` operands disagree: cidx {left_cidx} vs {right_cidx}, tiles {left_tile} vs {right_tile}")]
    JoinMismatch {
        node: NodeId,
        left_cidx: u32,
        right_cidx: u32,
        left_tile: TileShape,
        right_tile: TileShape,
    },
    #[error("rescale `{node}` cannot move cidx {from} down to {to}")]
    InvalidRescale { node: NodeId, from: u32, to: u32 },
    #[error("node `{node}`: {message}")]
    Shape { node: NodeId, message: String },
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("no activation polynomial for degree {degree}")]
    NoActivation { degree: u32 },
    #[error("node `{node}` ({op}) cannot run under HE")]
    NotHeFriendly { node: NodeId, op: &'static str },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl MockError {
    fn shape(node: &str, message: impl Into<String>) -> Self {
        MockError::Shape {
            node: node.to_string(),
            message: message.into(),
        }
    }
}

/// Value plus HE metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCiphertext {
    pub values: Tensor,
    pub meta: CipherMeta,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExecOptions {
    pub noise: NoiseConfig,
    pub activations: PolyTable,
}

/// Result of [`execute`].
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    /// Every node's value.
    pub values: BTreeMap<NodeId, MockCiphertext>,
    /// Values of the graph outputs.
    pub outputs: Tensors,
    /// Chain indices observed at runtime.
    pub runtime_trace: LevelTrace,
    pub census: OpCensus,
}

/// Check every weight the graph needs is present with the right dims.
pub fn check_weights(g: &Graph, weights: &Tensors) -> Result<(), MockError> {
    for spec in weight_specs(g)? {
        let t = weights
            .get(&spec.name)
            .ok_or_else(|| MockError::Missing(spec.name.clone()))?;
        if t.dims != spec.dims {
            return Err(MockError::shape(
                &spec.name,
                format!("weight dims {:?}, expected {:?}", t.dims, spec.dims),
            ));
        }
    }
    Ok(())
}

fn input_tensor<'a>(node: &Node, inputs: &'a Tensors) -> Result<&'a Tensor, MockError> {
    let OpKind::Input { dims, .. } = &node.op else {
        unreachable!()
    };
    let t = inputs
        .get(&node.id)
        .ok_or_else(|| MockError::Missing(node.id.clone()))?;
    if &t.dims != dims {
        return Err(MockError::shape(
            &node.id,
            format!("input dims {:?}, expected {dims:?}", t.dims),
        ));
    }
    Ok(t)
}

fn weight<'a>(weights: &'a Tensors, node: &str, suffix: &str) -> Result<&'a Tensor, MockError> {
    let name = format!("{node}.{suffix}");
    weights.get(&name).ok_or(MockError::Missing(name))
}

/// Numeric semantics of one non-input op.
fn eval_node(
    node: &Node,
    args: &[&Tensor],
    weights: &Tensors,
    acts: &PolyTable,
) -> Result<Tensor, MockError> {
    let id = node.id.as_str();
    let x = args[0];
    let spatial = |what: &str| -> Result<(), MockError> {
        if x.dims.len() == 3 {
            Ok(())
        } else {
            Err(MockError::shape(
                id,
                format!("{what} needs [C, H, W], got {:?}", x.dims),
            ))
        }
    };
    Ok(match &node.op {
        OpKind::Conv { stride, dirac, .. } => {
            spatial("conv")?;
            let w = weight(weights, id, "weight")?;
            if w.dims.len() != 4 || w.dims[1] != x.dims[0] {
                return Err(MockError::shape(
                    id,
                    format!("weight {:?} vs input {:?}", w.dims, x.dims),
                ));
            }
            if *dirac {
                dirac_conv_split(x, w, weight(weights, id, "dirac")?, *stride)
            } else {
                conv2d(x, w, *stride)
            }
        }
        OpKind::AvgPool { kernel, stride } => {
            spatial("pooling")?;
            avg_pool(x, *kernel, *stride)
        }
        OpKind::MaxPool { kernel, stride } => {
            spatial("pooling")?;
            max_pool(x, *kernel, *stride)
        }
        OpKind::Dense { .. } => {
            let (w, b) = (weight(weights, id, "weight")?, weight(weights, id, "bias")?);
            if w.dims.get(1) != Some(&x.len()) {
                return Err(MockError::shape(
                    id,
                    format!("weight {:?} vs {} inputs", w.dims, x.len()),
                ));
            }
            dense(x, w, b)
        }
        OpKind::BatchNorm => batch_norm(
            x,
            weight(weights, id, "scale")?,
            weight(weights, id, "shift")?,
        ),
        OpKind::PolyAct { degree } => {
            let c = acts.coeffs(*degree)?;
            x.map(|v| eval_poly(c, v))
        }
        OpKind::Relu => x.map(|v| v.max(0.0)),
        OpKind::Add | OpKind::Mul => {
            let y = args[1];
            if x.dims != y.dims {
                return Err(MockError::shape(
                    id,
                    format!("operands {:?} vs {:?}", x.dims, y.dims),
                ));
            }
            if node.op == OpKind::Add {
                x.zip(y, |a, b| a + b)
            } else {
                x.zip(y, |a, b| a * b)
            }
        }
        OpKind::Bootstrap
        | OpKind::Rescale { .. }
        | OpKind::TileTransform { .. }
        | OpKind::Output => x.clone(),
        OpKind::Input { .. } => unreachable!("inputs are bound, not evaluated"),
    })
}

/// Evaluate `g` on cleartext; planner ops are identities.
pub fn cleartext_reference(
    g: &Graph,
    inputs: &Tensors,
    weights: &Tensors,
    acts: &PolyTable,
) -> Result<BTreeMap<NodeId, Tensor>, MockError> {
    let mut values: BTreeMap<NodeId, Tensor> = BTreeMap::new();
    for id in topo_order(g)? {
        let node = g.node(&id).unwrap();
        let t = if let OpKind::Input { .. } = node.op {
            input_tensor(node, inputs)?.clone()
        } else {
            let args: Vec<&Tensor> = node.inputs.iter().map(|i| &values[i]).collect();
            eval_node(node, &args, weights, acts)?
        };
        values.insert(id, t);
    }
    Ok(values)
}

/// Run `p` under runtime HE checks.
pub fn execute(
    p: &Plan,
    inputs: &Tensors,
    weights: &Tensors,
    opts: &ExecOptions,
) -> Result<Execution, MockError> {
    let g = &p.planned;
    let (rules, max_level) = (&p.rules, p.config.max_level);
    check_weights(g, weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.noise.seed);
    let mut values: BTreeMap<NodeId, MockCiphertext> = BTreeMap::new();
    let mut census = OpCensus(OpClass::ALL.iter().map(|&c| (c, 0)).collect());
    let mut count = |c: OpClass, n: u64| *census.0.get_mut(&c).unwrap() += n;

    for id in topo_order(g)? {
        let node = g.node(&id).unwrap();
        let args: Vec<&MockCiphertext> = node.inputs.iter().map(|i| &values[i]).collect();
        let (mut tensor, cidx) = match &node.op {
            OpKind::Input { .. } => (input_tensor(node, inputs)?.clone(), 0),
            op => {
                let base = match op {
                    OpKind::Add | OpKind::Mul => {
                        let (l, r) = (&args[0].meta, &args[1].meta);
                        if l.cidx != r.cidx || l.tile != r.tile {
                            return Err(MockError::JoinMismatch {
                                node: id.clone(),
                                left_cidx: l.cidx,
                                right_cidx: r.cidx,
                                left_tile: l.tile,
                                right_tile: r.tile,
                            });
                        }
                        l.cidx
                    }
                    _ => args[0].meta.cidx,
                };
                let cidx = match op {
                    OpKind::Add => base + ADD_COST,
                    OpKind::Mul => base + rules.cc_mult_cost,
                    OpKind::Bootstrap => p.config.bootstrap_reset_to,
                    OpKind::Rescale { target_cidx } if *target_cidx < base => {
                        return Err(MockError::InvalidRescale {
                            node: id.clone(),
                            from: base,
                            to: *target_cidx,
                        })
                    }
                    OpKind::Rescale { target_cidx } => *target_cidx,
                    op => {
                        base + rules.unary_cost(op).ok_or(MockError::NotHeFriendly {
                            node: id.clone(),
                            op: op.name(),
                        })?
                    }
                };
                let plain: Vec<&Tensor> = args.iter().map(|a| &a.values).collect();
                (eval_node(node, &plain, weights, &opts.activations)?, cidx)
            }
        };
        // An op may fill the budget exactly; going past it is a planning bug.
        if cidx > max_level {
            return Err(MockError::LevelOverflow {
                node: id.clone(),
                cidx,
                max_level,
            });
        }
        match &node.op {
            OpKind::Bootstrap => {
                count(OpClass::Bootstrap, 1);
                if opts.noise.epsilon > 0.0 {
                    let e = opts.noise.epsilon;
                    for v in &mut tensor.data {
                        *v += rng.gen_range(-e..=e);
                    }
                }
            }
            OpKind::Rescale { .. } => count(OpClass::Rescale, 1),
            OpKind::TileTransform { .. } => count(OpClass::Transform, 1),
            OpKind::Mul => count(OpClass::CcMult, 1),
            OpKind::Add => count(OpClass::Add, 1),
            OpKind::Conv { .. } | OpKind::Dense { .. } | OpKind::AvgPool { .. } => {
                count(OpClass::CpMult, 1)
            }
            OpKind::PolyAct { degree } => {
                count(OpClass::CcMult, u64::from(degree - 1));
                count(
                    OpClass::PolyActLevel,
                    u64::from(rules.polyact_depth(*degree)),
                );
            }
            _ => {}
        }
        if let Some(bad) = tensor.data.iter().find(|v| !v.is_finite()) {
            return Err(MockError::shape(&id, format!("non-finite value {bad}")));
        }
        let in_tiles: Vec<TileShape> = args.iter().map(|a| a.meta.tile).collect();
        let meta = CipherMeta {
            cidx,
            tile: output_tile(&node.op, &in_tiles, &tensor.dims),
            tensor_dims: tensor.dims.clone(),
        };
        values.insert(
            id,
            MockCiphertext {
                values: tensor,
                meta,
            },
        );
    }

    let outputs = g
        .outputs()
        .iter()
        .map(|o| (o.clone(), values[o].values.clone()))
        .collect();
    let cidx_of: BTreeMap<NodeId, u32> = values
        .iter()
        .map(|(k, v)| (k.clone(), v.meta.cidx))
        .collect();
    let runtime_trace = LevelTrace {
        depth: g.outputs().iter().map(|o| cidx_of[o]).max().unwrap_or(0),
        cidx_of,
        mismatches: Vec::new(),
    };
    Ok(Execution {
        values,
        outputs,
        runtime_trace,
        census,
    })
}

/// Deterministic weights for every tensor `g` needs, scaled so activations
/// stay inside the polynomial fitting range on toy networks.
pub fn random_weights(g: &Graph, seed: u64) -> Result<Tensors, MockError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tensors::new();
    for spec in weight_specs(g)? {
        let n = spec.dims.len();
        let t = if spec.name.ends_with(".weight") {
            let fan_in: usize = spec.dims[1..].iter().product();
            Tensor::random(spec.dims, (3.0 / fan_in as f64).sqrt() * 0.5, &mut rng)
        } else if spec.name.ends_with(".scale") {
            let len = spec.dims[0];
            Tensor::new(
                spec.dims,
                (0..len).map(|_| rng.gen_range(0.8..1.2)).collect(),
            )
        } else if spec.name.ends_with(".dirac") {
            let len = spec.dims[0];
            Tensor::new(
                spec.dims,
                (0..len).map(|_| rng.gen_range(0.0..0.5)).collect(),
            )
        } else {
            debug_assert!(n == 1);
            Tensor::random(spec.dims, 0.1, &mut rng)
        };
        out.insert(spec.name, t);
    }
    Ok(out)
}

/// Uniform `[-1, 1]` tensors for every input node.
pub fn random_inputs(g: &Graph, seed: u64) -> Tensors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.nodes()
        .filter_map(|n| match &n.op {
            OpKind::Input { dims, .. } => {
                Some((n.id.clone(), Tensor::random(dims.clone(), 1.0, &mut rng)))
            }
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests;
