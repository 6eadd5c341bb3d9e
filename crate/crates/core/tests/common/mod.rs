//! Independent oracles shared by the integration suites and the acceptance
//! runner. Nothing here calls the library's own evaluators.
#![allow(dead_code)]

use std::collections::BTreeMap;

use helevel::graph::{Graph, OpKind};
use helevel::mock::{Tensor, Tensors};
use helevel::planner::Plan;

/// Levels of a degree-`d` polynomial under a power-of-two evaluation tree.
fn poly_depth(d: u32) -> u32 {
    let mut k = 0;
    while (1u64 << k) < d as u64 + 1 {
        k += 1;
    }
    k
}

/// Chain index of every node under the default rules, computed by
/// iterating node equations to a fixed point with no topological sort.
/// Planner ops follow `reset_to` for bootstraps and their target for
/// rescales.
pub fn brute_force_levels(g: &Graph, reset_to: u32) -> BTreeMap<String, u32> {
    let mut level: BTreeMap<String, u32> = g.nodes().map(|n| (n.id.clone(), 0)).collect();
    loop {
        let mut changed = false;
        for n in g.nodes() {
            let ins: Vec<u32> = n.inputs.iter().map(|i| level[i]).collect();
            let top = ins.iter().copied().max().unwrap_or(0);
            let v = match &n.op {
                OpKind::Input { .. } => 0,
                OpKind::Conv { .. } | OpKind::Dense { .. } | OpKind::AvgPool { .. } => top + 1,
                OpKind::PolyAct { degree } => top + poly_depth(*degree),
                OpKind::Mul => top + 1,
                OpKind::Bootstrap => reset_to,
                OpKind::Rescale { target_cidx } => *target_cidx,
                _ => top,
            };
            if level[&n.id] != v {
                level.insert(n.id.clone(), v);
                changed = true;
            }
        }
        if !changed {
            return level;
        }
    }
}

/// Join-resolution checks on one plan. Returns the violations found.
pub fn join_violations(g: &Graph, plan: &Plan) -> Vec<String> {
    let mut bad = Vec::new();
    let levels = brute_force_levels(g, 0);
    for n in g.nodes().filter(|n| n.op == OpKind::Add) {
        let (l, r) = (levels[&n.inputs[0]], levels[&n.inputs[1]]);
        let got = levels[&n.id];
        if got != l && got != r {
            bad.push(format!("{}: resolved {got} not in {{{l}, {r}}}", n.id));
        }
    }
    for j in plan.joins.iter().filter(|j| j.op == "Add") {
        let (lo, hi) = (j.left_cidx.min(j.right_cidx), j.left_cidx.max(j.right_cidx));
        if j.resolved != lo && j.resolved != hi {
            bad.push(format!(
                "{}: planned {} not in {{{lo}, {hi}}}",
                j.node, j.resolved
            ));
        }
        if j.resolved.saturating_sub(lo) > hi - lo {
            bad.push(format!(
                "{}: increase {} above delta {}",
                j.node,
                j.resolved - lo,
                hi - lo
            ));
        }
    }
    bad
}

/// Closed interval per tensor element.
#[derive(Debug, Clone)]
pub struct Boxed {
    pub dims: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Boxed {
    fn point(t: &Tensor) -> Self {
        Boxed {
            dims: t.dims.clone(),
            lo: t.data.clone(),
            hi: t.data.clone(),
        }
    }

    fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Boxed {
            dims,
            lo: vec![0.0; n],
            hi: vec![0.0; n],
        }
    }

    fn widen(&self, e: f64) -> Self {
        Boxed {
            dims: self.dims.clone(),
            lo: self.lo.iter().map(|v| v - e).collect(),
            hi: self.hi.iter().map(|v| v + e).collect(),
        }
    }

    /// True if every element of `t` lies inside the box (with slack `tol`).
    pub fn contains(&self, t: &Tensor, tol: f64) -> bool {
        t.dims == self.dims
            && t.data
                .iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lo[i] - tol && v <= self.hi[i] + tol)
    }

    pub fn width(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max)
    }
}

/// `w * [lo, hi]`.
fn scale(w: f64, lo: f64, hi: f64) -> (f64, f64) {
    if w >= 0.0 {
        (w * lo, w * hi)
    } else {
        (w * hi, w * lo)
    }
}

fn mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let p = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    (
        p.iter().copied().fold(f64::INFINITY, f64::min),
        p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// A linear map given as `out[o] = sum_i coeff(o, i) * in[i]` over sparse taps.
fn linear(x: &Boxed, dims: Vec<usize>, taps: impl Fn(usize) -> Vec<(usize, f64)>) -> Boxed {
    let mut out = Boxed::zeros(dims);
    for o in 0..out.lo.len() {
        for (i, w) in taps(o) {
            let (a, b) = scale(w, x.lo[i], x.hi[i]);
            out.lo[o] += a;
            out.hi[o] += b;
        }
    }
    out
}

fn conv_taps<'a>(
    x: &[usize],
    w: &'a Tensor,
    dirac: Option<&'a Tensor>,
    stride: usize,
) -> (Vec<usize>, impl Fn(usize) -> Vec<(usize, f64)> + 'a) {
    let (c, h, wd) = (x[0], x[1], x[2]);
    let (o, k) = (w.dims[0], w.dims[2]);
    let p = (k - 1) / 2;
    let ho = (h + 2 * p - k) / stride + 1;
    let wo = (wd + 2 * p - k) / stride + 1;
    let taps = move |idx: usize| {
        let (oc, oy, ox) = (idx / (ho * wo), idx / wo % ho, idx % wo);
        let mut t = Vec::new();
        for ic in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                    if iy < p || ix < p || iy - p >= h || ix - p >= wd {
                        continue;
                    }
                    let mut coeff = w.data[((oc * c + ic) * k + ky) * k + kx];
                    if let Some(a) = dirac {
                        if ic == oc && oc < a.len() && ky == k / 2 && kx == k / 2 {
                            coeff += a.data[oc];
                        }
                    }
                    t.push(((ic * h + iy - p) * wd + ix - p, coeff));
                }
            }
        }
        t
    };
    (vec![o, ho, wo], taps)
}

fn horner(coeffs: &[f64], x: (f64, f64)) -> (f64, f64) {
    let mut acc = (0.0, 0.0);
    for &c in coeffs.iter().rev() {
        let m = mul(acc, x);
        acc = (m.0 + c, m.1 + c);
    }
    acc
}

/// Interval enclosure of every value a bootstrap-perturbed run of `g` can
/// produce when each bootstrap adds at most `epsilon` per element.
pub fn interval_oracle(
    g: &Graph,
    inputs: &Tensors,
    weights: &Tensors,
    activations: &BTreeMap<u32, Vec<f64>>,
    epsilon: f64,
) -> BTreeMap<String, Boxed> {
    let mut boxes: BTreeMap<String, Boxed> = BTreeMap::new();
    // Nodes in an order where inputs come first: repeated sweeps.
    while boxes.len() < g.len() {
        for n in g.nodes() {
            if boxes.contains_key(&n.id) || n.inputs.iter().any(|i| !boxes.contains_key(i)) {
                continue;
            }
            let x = n.inputs.first().map(|i| &boxes[i]);
            let w = |s: &str| &weights[&format!("{}.{s}", n.id)];
            let b = match &n.op {
                OpKind::Input { .. } => Boxed::point(&inputs[&n.id]),
                OpKind::Conv { stride, dirac, .. } => {
                    let x = x.unwrap();
                    let d = dirac.then(|| w("dirac"));
                    let (dims, taps) = conv_taps(&x.dims, w("weight"), d, *stride);
                    linear(x, dims, taps)
                }
                OpKind::AvgPool { kernel, stride } => {
                    let x = x.unwrap();
                    let c = x.dims[0];
                    let eye = Tensor::new(
                        vec![c, c, *kernel, *kernel],
                        (0..c * c * kernel * kernel)
                            .map(|i| {
                                let (o, ic) =
                                    (i / (c * kernel * kernel), i / (kernel * kernel) % c);
                                if o == ic {
                                    1.0 / (kernel * kernel) as f64
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    );
                    let (dims, taps) = conv_taps(&x.dims, &eye, None, *stride);
                    linear(x, dims, taps)
                }
                OpKind::Dense { out_features } => {
                    let (x, wt, bias) = (x.unwrap(), w("weight"), w("bias"));
                    let n_in = x.lo.len();
                    let mut out = linear(x, vec![*out_features], |o| {
                        (0..n_in).map(|i| (i, wt.data[o * n_in + i])).collect()
                    });
                    for o in 0..*out_features {
                        out.lo[o] += bias.data[o];
                        out.hi[o] += bias.data[o];
                    }
                    out
                }
                OpKind::BatchNorm => {
                    let (x, s, t) = (x.unwrap(), w("scale"), w("shift"));
                    let per = x.lo.len() / x.dims[0];
                    let mut out = x.clone();
                    for i in 0..x.lo.len() {
                        let (a, b) = scale(s.data[i / per], x.lo[i], x.hi[i]);
                        out.lo[i] = a + t.data[i / per];
                        out.hi[i] = b + t.data[i / per];
                    }
                    out
                }
                OpKind::PolyAct { degree } => {
                    let x = x.unwrap();
                    let c = &activations[degree];
                    let mut out = x.clone();
                    for i in 0..x.lo.len() {
                        (out.lo[i], out.hi[i]) = horner(c, (x.lo[i], x.hi[i]));
                    }
                    out
                }
                OpKind::Add | OpKind::Mul => {
                    let (a, b2) = (x.unwrap(), &boxes[&n.inputs[1]]);
                    let mut out = a.clone();
                    for i in 0..a.lo.len() {
                        (out.lo[i], out.hi[i]) = if n.op == OpKind::Add {
                            (a.lo[i] + b2.lo[i], a.hi[i] + b2.hi[i])
                        } else {
                            mul((a.lo[i], a.hi[i]), (b2.lo[i], b2.hi[i]))
                        };
                    }
                    out
                }
                OpKind::Bootstrap => x.unwrap().widen(epsilon),
                OpKind::Rescale { .. } | OpKind::TileTransform { .. } | OpKind::Output => {
                    x.unwrap().clone()
                }
                op => panic!("oracle has no rule for {}", op.name()),
            };
            boxes.insert(n.id.clone(), b);
        }
    }
    boxes
}

/// Coefficients of the shipped activation table as a plain map.
pub fn shipped_activations() -> BTreeMap<u32, Vec<f64>> {
    let table = helevel::mock::PolyTable::shipped();
    table
        .degrees()
        .map(|d| (d, table.coeffs(d).unwrap().to_vec()))
        .collect()
}
