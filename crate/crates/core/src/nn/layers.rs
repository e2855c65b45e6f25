//! Primitive differentiable operations on [C, H, W] feature maps.
//!
//! Each op comes as a forward producing whatever the backward needs and a
//! backward mapping output gradients to input and weight gradients.
//! Convolution runs as im2col + GEMM; the backward recomputes the column
//! matrix instead of caching it, trading FLOPs for memory.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView4};

/// Geometry of one convolution: square kernel, symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// 3x3, stride 1, padding 1: preserves H and W.
    pub const SAME3: ConvSpec = ConvSpec {
        kernel: 3,
        stride: 1,
        pad: 1,
        dilation: 1,
    };

    /// 1x1 pointwise.
    pub const POINT: ConvSpec = ConvSpec {
        kernel: 1,
        stride: 1,
        pad: 0,
        dilation: 1,
    };

    /// 3x3, stride 2, padding 1: halves even H and W.
    pub const DOWN3: ConvSpec = ConvSpec {
        kernel: 3,
        stride: 2,
        pad: 1,
        dilation: 1,
    };

    /// 3x3 dilated with padding = dilation: preserves H and W.
    pub fn dilated3(rate: usize) -> ConvSpec {
        ConvSpec {
            kernel: 3,
            stride: 1,
            pad: rate,
            dilation: rate,
        }
    }

    pub fn out_dim(&self, dim: usize) -> usize {
        (dim + 2 * self.pad - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }
}

/// Unfold x into a [(C*k*k), (OH*OW)] column matrix.
fn im2col(x: &Array3<f64>, spec: ConvSpec) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (spec.out_dim(h), spec.out_dim(w));
    let k = spec.kernel;
    let mut col = Array2::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for out_i in 0..oh {
                    let i = (out_i * spec.stride + ki * spec.dilation) as isize - spec.pad as isize;
                    if i < 0 || i >= h as isize {
                        continue;
                    }
                    for out_j in 0..ow {
                        let j = (out_j * spec.stride + kj * spec.dilation) as isize
                            - spec.pad as isize;
                        if j < 0 || j >= w as isize {
                            continue;
                        }
                        col[[row, out_i * ow + out_j]] = x[[ci, i as usize, j as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Fold a column-matrix gradient back onto the input grid (adjoint of
/// im2col: overlapping taps accumulate).
fn col2im(d_col: &Array2<f64>, c: usize, h: usize, w: usize, spec: ConvSpec) -> Array3<f64> {
    let (oh, ow) = (spec.out_dim(h), spec.out_dim(w));
    let k = spec.kernel;
    let mut dx = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for out_i in 0..oh {
                    let i = (out_i * spec.stride + ki * spec.dilation) as isize - spec.pad as isize;
                    if i < 0 || i >= h as isize {
                        continue;
                    }
                    for out_j in 0..ow {
                        let j = (out_j * spec.stride + kj * spec.dilation) as isize
                            - spec.pad as isize;
                        if j < 0 || j >= w as isize {
                            continue;
                        }
                        dx[[ci, i as usize, j as usize]] += d_col[[row, out_i * ow + out_j]];
                    }
                }
            }
        }
    }
    dx
}

/// y[o] = sum_c w[o,c,:,:] * x[c] + b[o], with the given geometry.
pub fn conv2d(x: &Array3<f64>, w: ArrayView4<f64>, b: ArrayView1<f64>, spec: ConvSpec) -> Array3<f64> {
    let (_, h, win) = x.dim();
    let (o, _, _, _) = w.dim();
    let (oh, ow) = (spec.out_dim(h), spec.out_dim(win));
    let col = im2col(x, spec);
    let w_mat = w.into_shape_with_order((o, col.nrows())).expect("kernel reshape");
    let mut out = w_mat.dot(&col);
    for (mut row, &bias) in out.rows_mut().into_iter().zip(b.iter()) {
        row.mapv_inplace(|v| v + bias);
    }
    out.into_shape_with_order((o, oh, ow)).expect("output reshape")
}

pub struct ConvGrads {
    pub d_x: Array3<f64>,
    pub d_w: Vec<f64>,
    pub d_b: Vec<f64>,
}

/// Gradients of conv2d; `x` is the forward input.
pub fn conv2d_backward(
    x: &Array3<f64>,
    w: ArrayView4<f64>,
    spec: ConvSpec,
    d_out: &Array3<f64>,
) -> ConvGrads {
    let (c, h, win) = x.dim();
    let (o, oh, ow) = d_out.dim();
    let d_mat = d_out
        .view()
        .into_shape_with_order((o, oh * ow))
        .expect("grad reshape");
    let col = im2col(x, spec);
    let d_w = d_mat.dot(&col.t());
    let d_b: Vec<f64> = d_mat.rows().into_iter().map(|r| r.sum()).collect();
    let w_mat = w.into_shape_with_order((o, col.nrows())).expect("kernel reshape");
    let d_col = w_mat.t().dot(&d_mat);
    let d_x = col2im(&d_col, c, h, win, spec);
    ConvGrads {
        d_x,
        d_w: d_w.into_raw_vec_and_offset().0,
        d_b,
    }
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel statistics over the spatial field, population variance.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

pub struct BnCache {
    pub x_hat: Array3<f64>,
    pub inv_std: Array1<f64>,
    pub stats: BnStats,
}

/// Train-mode batch norm: normalize by the map's own per-channel
/// statistics. The caller folds `cache.stats` into running statistics.
pub fn batch_norm_train(
    x: &Array3<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> (Array3<f64>, BnCache) {
    let (c, h, w) = x.dim();
    let n = (h * w) as f64;
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for ci in 0..c {
        let ch = x.index_axis(ndarray::Axis(0), ci);
        let m = ch.sum() / n;
        mean[ci] = m;
        var[ci] = ch.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
    }
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut x_hat = x.clone();
    for ci in 0..c {
        let (m, s) = (mean[ci], inv_std[ci]);
        x_hat
            .index_axis_mut(ndarray::Axis(0), ci)
            .mapv_inplace(|v| (v - m) * s);
    }
    let mut y = x_hat.clone();
    for ci in 0..c {
        let (g, b) = (gamma[ci], beta[ci]);
        y.index_axis_mut(ndarray::Axis(0), ci)
            .mapv_inplace(|v| g * v + b);
    }
    (
        y,
        BnCache {
            x_hat,
            inv_std,
            stats: BnStats { mean, var },
        },
    )
}

/// Eval-mode batch norm: a fixed per-channel affine map using running
/// statistics. Pure; no cache.
pub fn batch_norm_eval(
    x: &Array3<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    mean: ArrayView1<f64>,
    var: ArrayView1<f64>,
) -> Array3<f64> {
    let mut y = x.clone();
    for ci in 0..x.dim().0 {
        let scale = gamma[ci] / (var[ci] + BN_EPS).sqrt();
        let shift = beta[ci] - mean[ci] * scale;
        y.index_axis_mut(ndarray::Axis(0), ci)
            .mapv_inplace(|v| v * scale + shift);
    }
    y
}

pub struct BnGrads {
    pub d_x: Array3<f64>,
    pub d_gamma: Vec<f64>,
    pub d_beta: Vec<f64>,
}

pub fn batch_norm_backward(
    gamma: ArrayView1<f64>,
    cache: &BnCache,
    d_y: &Array3<f64>,
) -> BnGrads {
    let (c, h, w) = d_y.dim();
    let n = (h * w) as f64;
    let mut d_x = Array3::zeros((c, h, w));
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for ci in 0..c {
        let dy = d_y.index_axis(ndarray::Axis(0), ci);
        let xh = cache.x_hat.index_axis(ndarray::Axis(0), ci);
        let sum_dy = dy.sum();
        let sum_dy_xh = dy.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<f64>();
        d_beta[ci] = sum_dy;
        d_gamma[ci] = sum_dy_xh;
        let k = gamma[ci] * cache.inv_std[ci];
        let mut dx = d_x.index_axis_mut(ndarray::Axis(0), ci);
        for ((d, &dyv), &xhv) in dx.iter_mut().zip(dy.iter()).zip(xh.iter()) {
            *d = k * (dyv - sum_dy / n - xhv * sum_dy_xh / n);
        }
    }
    BnGrads {
        d_x,
        d_gamma,
        d_beta,
    }
}

/// ReLU; backward masks by the cached output.
pub fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(y: &Array3<f64>, d_y: &Array3<f64>) -> Array3<f64> {
    let mut d_x = d_y.clone();
    d_x.zip_mut_with(y, |d, &yv| {
        if yv <= 0.0 {
            *d = 0.0;
        }
    });
    d_x
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(sigmoid_scalar)
}

/// d_x from the cached sigmoid output y: dy * y * (1 - y).
pub fn sigmoid_backward(y: &Array3<f64>, d_y: &Array3<f64>) -> Array3<f64> {
    let mut d_x = d_y.clone();
    d_x.zip_mut_with(y, |d, &yv| *d *= yv * (1.0 - yv));
    d_x
}

/// Per-channel global average pool.
pub fn gap(x: &Array3<f64>) -> Array1<f64> {
    let (c, h, w) = x.dim();
    let n = (h * w) as f64;
    Array1::from_iter((0..c).map(|ci| x.index_axis(ndarray::Axis(0), ci).sum() / n))
}

pub fn gap_backward(d_z: ArrayView1<f64>, c: usize, h: usize, w: usize) -> Array3<f64> {
    let n = (h * w) as f64;
    let mut d_x = Array3::zeros((c, h, w));
    for ci in 0..c {
        d_x.index_axis_mut(ndarray::Axis(0), ci)
            .fill(d_z[ci] / n);
    }
    d_x
}

/// logits = w . z + b.
pub fn linear(z: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    w.dot(&z) + b
}

pub struct LinearGrads {
    pub d_z: Array1<f64>,
    pub d_w: Vec<f64>,
    pub d_b: Vec<f64>,
}

pub fn linear_backward(
    z: ArrayView1<f64>,
    w: ArrayView2<f64>,
    d_out: ArrayView1<f64>,
) -> LinearGrads {
    let (k, c) = w.dim();
    let mut d_w = vec![0.0; k * c];
    for i in 0..k {
        for j in 0..c {
            d_w[i * c + j] = d_out[i] * z[j];
        }
    }
    LinearGrads {
        d_z: w.t().dot(&d_out),
        d_w,
        d_b: d_out.to_vec(),
    }
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        for i in 0..2 * h {
            for j in 0..2 * w {
                y[[ci, i, j]] = x[[ci, i / 2, j / 2]];
            }
        }
    }
    y
}

/// Adjoint of nearest-neighbor upsampling: each source pixel collects
/// its four replicas.
pub fn upsample2_backward(d_y: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = d_y.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut d_x = Array3::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                d_x[[ci, i / 2, j / 2]] += d_y[[ci, i, j]];
            }
        }
    }
    d_x
}

/// Channel concatenation [a; b].
pub fn concat(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("same spatial dims")
}

/// Split a concatenation gradient back into the two sources.
pub fn concat_backward(d_y: &Array3<f64>, c_a: usize) -> (Array3<f64>, Array3<f64>) {
    let d_a = d_y.slice(ndarray::s![..c_a, .., ..]).to_owned();
    let d_b = d_y.slice(ndarray::s![c_a.., .., ..]).to_owned();
    (d_a, d_b)
}
