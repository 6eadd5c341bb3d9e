//! Worst-case deviation of a noisy execution from its cleartext values.

use std::collections::BTreeMap;

use super::{
    avg_pool, batch_norm, cleartext_reference, conv2d, dense, dirac_conv_split, max_pool,
    MockError, PolyTable, Tensor, Tensors,
};
use crate::graph::{topo_order, Graph, NodeId, OpKind};

/// Coefficients of `p(x + d) - p(x)` as a polynomial in `d`.
fn shifted_delta(coeffs: &[f64], x: f64) -> Vec<f64> {
    // Taylor shift by repeated synthetic division.
    let mut c = coeffs.to_vec();
    let n = c.len();
    for i in 0..n {
        for j in (i + 1..n).rev() {
            c[j - 1] += x * c[j];
        }
    }
    c[0] = 0.0;
    c
}

fn abs(t: &Tensor) -> Tensor {
    t.map(f64::abs)
}

/// Per-element bound on `|execute - cleartext_reference|` for a planned
/// graph when every bootstrap perturbs each value by at most `epsilon`.
///
/// Linear ops map bounds through `|W|`; a product of two noisy operands
/// gains `|x| b' + |x'| b + b b'`; a polynomial gains
/// `sum_k |q_k| b^k` with `q` the polynomial re-expanded around `x`.
pub fn noise_bound(
    g: &Graph,
    inputs: &Tensors,
    weights: &Tensors,
    acts: &PolyTable,
    epsilon: f64,
) -> Result<BTreeMap<NodeId, Tensor>, MockError> {
    let clear = cleartext_reference(g, inputs, weights, acts)?;
    let mut bound: BTreeMap<NodeId, Tensor> = BTreeMap::new();
    let w = |id: &str, s: &str| {
        let name = format!("{id}.{s}");
        weights.get(&name).map(abs).ok_or(MockError::Missing(name))
    };
    for id in topo_order(g)? {
        let node = g.node(&id).unwrap();
        let b = |i: usize| &bound[&node.inputs[i]];
        let x = |i: usize| &clear[&node.inputs[i]];
        let t = match &node.op {
            OpKind::Input { .. } => Tensor::zeros(clear[&id].dims.clone()),
            OpKind::Conv { stride, dirac, .. } => {
                let k = w(&id, "weight")?;
                if *dirac {
                    dirac_conv_split(b(0), &k, &w(&id, "dirac")?, *stride)
                } else {
                    conv2d(b(0), &k, *stride)
                }
            }
            OpKind::AvgPool { kernel, stride } => avg_pool(b(0), *kernel, *stride),
            OpKind::MaxPool { kernel, stride } => max_pool(b(0), *kernel, *stride),
            OpKind::Dense { .. } => {
                let zero = Tensor::zeros(vec![clear[&id].len()]);
                dense(b(0), &w(&id, "weight")?, &zero)
            }
            OpKind::BatchNorm => {
                let scale = w(&id, "scale")?;
                batch_norm(b(0), &scale, &Tensor::zeros(scale.dims.clone()))
            }
            OpKind::PolyAct { degree } => {
                let c = acts.coeffs(*degree)?;
                let data = x(0)
                    .data
                    .iter()
                    .zip(&b(0).data)
                    .map(|(&xv, &bv)| {
                        shifted_delta(c, xv)
                            .iter()
                            .rev()
                            .fold(0.0, |acc, q| acc * bv + q.abs())
                    })
                    .collect();
                Tensor::new(x(0).dims.clone(), data)
            }
            OpKind::Add => b(0).zip(b(1), |p, q| p + q),
            OpKind::Mul => {
                let cross = x(0).map(f64::abs).zip(b(1), |a, q| a * q);
                let cross2 = x(1).map(f64::abs).zip(b(0), |a, p| a * p);
                let both = b(0).zip(b(1), |p, q| p * q);
                cross.zip(&cross2, |u, v| u + v).zip(&both, |u, v| u + v)
            }
            OpKind::Bootstrap => b(0).map(|v| v + epsilon),
            OpKind::Relu
            | OpKind::Rescale { .. }
            | OpKind::TileTransform { .. }
            | OpKind::Output => b(0).clone(),
        };
        bound.insert(id, t);
    }
    Ok(bound)
}
