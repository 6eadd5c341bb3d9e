//! Dense row-major tensors and the cleartext kernels behind every op.

use rand::Rng;

/// Row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "dims {dims:?} vs {} values",
            data.len()
        );
        Tensor { dims, data }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor::new(dims, vec![0.0; n])
    }

    /// Uniform samples in `[-scale, scale]`.
    pub fn random(dims: Vec<usize>, scale: f64, rng: &mut impl Rng) -> Self {
        let n = dims.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..=1.0) * scale).collect();
        Tensor::new(dims, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.dims.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.dims, other.dims);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.dims.clone(), data)
    }

    /// Largest elementwise `|self - other|`; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.dims != other.dims {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn chw(&self) -> (usize, usize, usize) {
        match self.dims[..] {
            [c, h, w] => (c, h, w),
            _ => panic!("expected a [C, H, W] tensor, got {:?}", self.dims),
        }
    }
}

fn out_extent(n: usize, k: usize, s: usize) -> usize {
    (n + 2 * ((k - 1) / 2) - k) / s + 1
}

/// Zero-padded 2-D convolution with pad `(k - 1) / 2`.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize) -> Tensor {
    let (c, h, wd) = x.chw();
    let (o, k) = (w.dims[0], w.dims[2]);
    assert_eq!(w.dims, [o, c, k, k]);
    let p = (k - 1) / 2;
    let (ho, wo) = (out_extent(h, k, stride), out_extent(wd, k, stride));
    let mut out = Tensor::zeros(vec![o, ho, wo]);
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ic in 0..c {
                    for ky in 0..k {
                        let Some(iy) = (oy * stride + ky).checked_sub(p).filter(|&v| v < h) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = (ox * stride + kx).checked_sub(p).filter(|&v| v < wd)
                            else {
                                continue;
                            };
                            acc += w.data[((oc * c + ic) * k + ky) * k + kx]
                                * x.data[(ic * h + iy) * wd + ix];
                        }
                    }
                }
                out.data[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

/// `W + diag(a) * delta`: the Dirac path folded into the kernel centre tap.
pub fn fold_dirac(w: &Tensor, a: &Tensor) -> Tensor {
    let (o, c, k) = (w.dims[0], w.dims[1], w.dims[2]);
    let mut folded = w.clone();
    let centre = k / 2;
    for i in 0..o.min(c) {
        folded.data[((i * c + i) * k + centre) * k + centre] += a.data[i];
    }
    folded
}

/// Dirac conv evaluated as `conv(x, W) + diag(a) x` (identity path kept apart).
pub fn dirac_conv_split(x: &Tensor, w: &Tensor, a: &Tensor, stride: usize) -> Tensor {
    let (c, h, wd) = x.chw();
    let (o, k) = (w.dims[0], w.dims[2]);
    let mut out = conv2d(x, w, stride);
    let (ho, wo) = (out.dims[1], out.dims[2]);
    // Input offset of the centre tap relative to the padded window origin.
    let shift = k / 2;
    let p = (k - 1) / 2;
    for i in 0..o.min(c) {
        for oy in 0..ho {
            let Some(iy) = (oy * stride + shift).checked_sub(p).filter(|&v| v < h) else {
                continue;
            };
            for ox in 0..wo {
                let Some(ix) = (ox * stride + shift).checked_sub(p).filter(|&v| v < wd) else {
                    continue;
                };
                out.data[(i * ho + oy) * wo + ox] += a.data[i] * x.data[(i * h + iy) * wd + ix];
            }
        }
    }
    out
}

/// Dirac conv evaluated with the folded kernel.
pub fn dirac_conv_folded(x: &Tensor, w: &Tensor, a: &Tensor, stride: usize) -> Tensor {
    conv2d(x, &fold_dirac(w, a), stride)
}

/// Zero-padded average pooling; the divisor is always `k * k`.
pub fn avg_pool(x: &Tensor, k: usize, stride: usize) -> Tensor {
    pool(
        x,
        k,
        stride,
        0.0,
        |acc, v| acc + v,
        |acc| acc / (k * k) as f64,
    )
}

pub fn max_pool(x: &Tensor, k: usize, stride: usize) -> Tensor {
    pool(x, k, stride, f64::NEG_INFINITY, f64::max, |acc| acc)
}

fn pool(
    x: &Tensor,
    k: usize,
    stride: usize,
    init: f64,
    step: impl Fn(f64, f64) -> f64,
    finish: impl Fn(f64) -> f64,
) -> Tensor {
    let (c, h, w) = x.chw();
    let p = (k - 1) / 2;
    let (ho, wo) = (out_extent(h, k, stride), out_extent(w, k, stride));
    let mut out = Tensor::zeros(vec![c, ho, wo]);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = init;
                for ky in 0..k {
                    let Some(iy) = (oy * stride + ky).checked_sub(p).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..k {
                        if let Some(ix) = (ox * stride + kx).checked_sub(p).filter(|&v| v < w) {
                            acc = step(acc, x.data[(ch * h + iy) * w + ix]);
                        }
                    }
                }
                out.data[(ch * ho + oy) * wo + ox] = finish(acc);
            }
        }
    }
    out
}

/// `W x + b` over the flattened input.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (o, n) = (w.dims[0], w.dims[1]);
    assert_eq!(x.len(), n);
    let data = (0..o)
        .map(|i| b.data[i] + (0..n).map(|j| w.data[i * n + j] * x.data[j]).sum::<f64>())
        .collect();
    Tensor::new(vec![o], data)
}

/// Per-channel affine map `scale[c] * x + shift[c]`.
pub fn batch_norm(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Tensor {
    let c = x.dims[0];
    let per = x.len() / c.max(1);
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| scale.data[i / per] * v + shift.data[i / per])
        .collect();
    Tensor::new(x.dims.clone(), data)
}
