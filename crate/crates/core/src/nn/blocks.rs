//! Composite network blocks, parameterized by name prefix into a store.
//!
//! A block forward reads its weights from the learnable store under
//! `{prefix}.*` names and returns the activations its backward needs.
//! Backwards accumulate into a gradient store that shares the learnable
//! layout, and return the gradient w.r.t. the block input.

use ndarray::{Array1, Array2, Array3, Axis};

use super::layers::{
    batch_norm_backward, batch_norm_eval, batch_norm_train, concat_backward, conv2d,
    conv2d_backward, gap, gap_backward, relu, relu_backward, sigmoid_scalar, BnCache, BnStats,
    ConvSpec,
};
use super::store::TensorStore;

fn n(prefix: &str, suffix: &str) -> String {
    format!("{prefix}.{suffix}")
}

// --- residual unit: y = x + BN2(conv2(ReLU(BN1(conv1(x))))) ---

pub struct ResUnitCache {
    pub x: Array3<f64>,
    pub bn1: BnCache,
    pub relu_y: Array3<f64>,
    pub bn2: BnCache,
}

impl ResUnitCache {
    /// Named batch statistics for the running-stat update.
    pub fn stats(&self, prefix: &str) -> Vec<(String, BnStats)> {
        vec![
            (n(prefix, "bn1"), self.bn1.stats.clone()),
            (n(prefix, "bn2"), self.bn2.stats.clone()),
        ]
    }
}

pub fn res_unit_train(
    params: &TensorStore,
    prefix: &str,
    x: &Array3<f64>,
) -> (Array3<f64>, ResUnitCache) {
    let c1 = conv2d(
        x,
        params.v4(&n(prefix, "conv1.w")),
        params.v1(&n(prefix, "conv1.b")),
        ConvSpec::SAME3,
    );
    let (b1, bn1) = batch_norm_train(
        &c1,
        params.v1(&n(prefix, "bn1.gamma")),
        params.v1(&n(prefix, "bn1.beta")),
    );
    let r = relu(&b1);
    let c2 = conv2d(
        &r,
        params.v4(&n(prefix, "conv2.w")),
        params.v1(&n(prefix, "conv2.b")),
        ConvSpec::SAME3,
    );
    let (b2, bn2) = batch_norm_train(
        &c2,
        params.v1(&n(prefix, "bn2.gamma")),
        params.v1(&n(prefix, "bn2.beta")),
    );
    let y = x + &b2;
    (
        y,
        ResUnitCache {
            x: x.clone(),
            bn1,
            relu_y: r,
            bn2,
        },
    )
}

pub fn res_unit_eval(
    params: &TensorStore,
    stats: &TensorStore,
    prefix: &str,
    x: &Array3<f64>,
) -> Array3<f64> {
    let c1 = conv2d(
        x,
        params.v4(&n(prefix, "conv1.w")),
        params.v1(&n(prefix, "conv1.b")),
        ConvSpec::SAME3,
    );
    let b1 = batch_norm_eval(
        &c1,
        params.v1(&n(prefix, "bn1.gamma")),
        params.v1(&n(prefix, "bn1.beta")),
        stats.v1(&n(prefix, "bn1.mean")),
        stats.v1(&n(prefix, "bn1.var")),
    );
    let r = relu(&b1);
    let c2 = conv2d(
        &r,
        params.v4(&n(prefix, "conv2.w")),
        params.v1(&n(prefix, "conv2.b")),
        ConvSpec::SAME3,
    );
    let b2 = batch_norm_eval(
        &c2,
        params.v1(&n(prefix, "bn2.gamma")),
        params.v1(&n(prefix, "bn2.beta")),
        stats.v1(&n(prefix, "bn2.mean")),
        stats.v1(&n(prefix, "bn2.var")),
    );
    x + &b2
}

pub fn res_unit_backward(
    params: &TensorStore,
    prefix: &str,
    cache: &ResUnitCache,
    d_y: &Array3<f64>,
    grads: &mut TensorStore,
) -> Array3<f64> {
    let g2 = batch_norm_backward(params.v1(&n(prefix, "bn2.gamma")), &cache.bn2, d_y);
    grads.add(&n(prefix, "bn2.gamma"), &g2.d_gamma);
    grads.add(&n(prefix, "bn2.beta"), &g2.d_beta);
    let c2 = conv2d_backward(
        &cache.relu_y,
        params.v4(&n(prefix, "conv2.w")),
        ConvSpec::SAME3,
        &g2.d_x,
    );
    grads.add(&n(prefix, "conv2.w"), &c2.d_w);
    grads.add(&n(prefix, "conv2.b"), &c2.d_b);
    let d_b1 = relu_backward(&cache.relu_y, &c2.d_x);
    let g1 = batch_norm_backward(params.v1(&n(prefix, "bn1.gamma")), &cache.bn1, &d_b1);
    grads.add(&n(prefix, "bn1.gamma"), &g1.d_gamma);
    grads.add(&n(prefix, "bn1.beta"), &g1.d_beta);
    let c1 = conv2d_backward(
        &cache.x,
        params.v4(&n(prefix, "conv1.w")),
        ConvSpec::SAME3,
        &g1.d_x,
    );
    grads.add(&n(prefix, "conv1.w"), &c1.d_w);
    grads.add(&n(prefix, "conv1.b"), &c1.d_b);
    // identity skip
    d_y + &c1.d_x
}

// --- squeeze-excitation: y = x * sigmoid(W2 relu(W1 gap(x))) ---

pub struct SeCache {
    pub x: Array3<f64>,
    pub z: Array1<f64>,
    pub pre1: Array1<f64>,
    pub hidden: Array1<f64>,
    pub scale: Array1<f64>,
}

pub fn se_forward(params: &TensorStore, prefix: &str, x: &Array3<f64>) -> (Array3<f64>, SeCache) {
    let z = gap(x);
    let w1 = params.v2(&n(prefix, "w1"));
    let w2 = params.v2(&n(prefix, "w2"));
    let pre1 = w1.dot(&z);
    let hidden = pre1.mapv(|v| v.max(0.0));
    let scale = w2.dot(&hidden).mapv(sigmoid_scalar);
    let mut y = x.clone();
    for (ci, mut ch) in y.axis_iter_mut(Axis(0)).enumerate() {
        ch.mapv_inplace(|v| v * scale[ci]);
    }
    (
        y,
        SeCache {
            x: x.clone(),
            z,
            pre1,
            hidden,
            scale,
        },
    )
}

pub fn se_backward(
    params: &TensorStore,
    prefix: &str,
    cache: &SeCache,
    d_y: &Array3<f64>,
    grads: &mut TensorStore,
) -> Array3<f64> {
    let (c, h, w) = d_y.dim();
    let w1 = params.v2(&n(prefix, "w1"));
    let w2 = params.v2(&n(prefix, "w2"));
    let mut d_scale = Array1::zeros(c);
    let mut d_x = d_y.clone();
    for ci in 0..c {
        let dy_ch = d_y.index_axis(Axis(0), ci);
        let x_ch = cache.x.index_axis(Axis(0), ci);
        d_scale[ci] = dy_ch.iter().zip(x_ch.iter()).map(|(&a, &b)| a * b).sum();
        d_x.index_axis_mut(Axis(0), ci)
            .mapv_inplace(|v| v * cache.scale[ci]);
    }
    let d_pre2 = &d_scale * &cache.scale.mapv(|s| s * (1.0 - s));
    let mid = cache.hidden.len();
    let mut d_w2 = vec![0.0; c * mid];
    for i in 0..c {
        for j in 0..mid {
            d_w2[i * mid + j] = d_pre2[i] * cache.hidden[j];
        }
    }
    grads.add(&n(prefix, "w2"), &d_w2);
    let d_hidden = w2.t().dot(&d_pre2);
    let d_pre1 = Array1::from_iter(
        d_hidden
            .iter()
            .zip(cache.pre1.iter())
            .map(|(&d, &p)| if p > 0.0 { d } else { 0.0 }),
    );
    let mut d_w1 = vec![0.0; mid * c];
    for i in 0..mid {
        for j in 0..c {
            d_w1[i * c + j] = d_pre1[i] * cache.z[j];
        }
    }
    grads.add(&n(prefix, "w1"), &d_w1);
    let d_z = w1.t().dot(&d_pre1);
    d_x + &gap_backward(d_z.view(), c, h, w)
}

// --- ASPP: parallel dilated 3x3 branches, summed, 1x1 projection ---

pub struct AsppCache {
    pub x: Array3<f64>,
    pub sum: Array3<f64>,
}

pub fn aspp_forward(
    params: &TensorStore,
    prefix: &str,
    rates: &[usize],
    x: &Array3<f64>,
) -> (Array3<f64>, AsppCache) {
    let mut sum: Option<Array3<f64>> = None;
    for (k, &rate) in rates.iter().enumerate() {
        let branch = conv2d(
            x,
            params.v4(&n(prefix, &format!("branch{k}.w"))),
            params.v1(&n(prefix, &format!("branch{k}.b"))),
            ConvSpec::dilated3(rate),
        );
        sum = Some(match sum {
            None => branch,
            Some(acc) => acc + &branch,
        });
    }
    let sum = sum.expect("rates validated non-empty");
    let y = conv2d(
        &sum,
        params.v4(&n(prefix, "proj.w")),
        params.v1(&n(prefix, "proj.b")),
        ConvSpec::POINT,
    );
    (y, AsppCache { x: x.clone(), sum })
}

pub fn aspp_backward(
    params: &TensorStore,
    prefix: &str,
    rates: &[usize],
    cache: &AsppCache,
    d_y: &Array3<f64>,
    grads: &mut TensorStore,
) -> Array3<f64> {
    let proj = conv2d_backward(
        &cache.sum,
        params.v4(&n(prefix, "proj.w")),
        ConvSpec::POINT,
        d_y,
    );
    grads.add(&n(prefix, "proj.w"), &proj.d_w);
    grads.add(&n(prefix, "proj.b"), &proj.d_b);
    let mut d_x: Option<Array3<f64>> = None;
    for (k, &rate) in rates.iter().enumerate() {
        let branch = conv2d_backward(
            &cache.x,
            params.v4(&n(prefix, &format!("branch{k}.w"))),
            ConvSpec::dilated3(rate),
            &proj.d_x,
        );
        grads.add(&n(prefix, &format!("branch{k}.w")), &branch.d_w);
        grads.add(&n(prefix, &format!("branch{k}.b")), &branch.d_b);
        d_x = Some(match d_x {
            None => branch.d_x,
            Some(acc) => acc + &branch.d_x,
        });
    }
    d_x.expect("rates validated non-empty")
}

// --- attention gate: y = sigmoid(W2 tanh(W1 f + b1) + b2) * f ---
// W1, W2 act per pixel on the channel vector (1x1 convolutions).

pub struct AttCache {
    pub f: Array3<f64>,
    pub t: Array2<f64>,
    pub a: Array2<f64>,
}

pub fn attention_forward(
    params: &TensorStore,
    prefix: &str,
    f: &Array3<f64>,
) -> (Array3<f64>, AttCache) {
    let (c, h, w) = f.dim();
    let fm = f
        .view()
        .into_shape_with_order((c, h * w))
        .expect("contiguous feature map");
    let w1 = params.v2(&n(prefix, "w1"));
    let b1 = params.v1(&n(prefix, "b1"));
    let w2 = params.v2(&n(prefix, "w2"));
    let b2 = params.v1(&n(prefix, "b2"));
    let mut u = w1.dot(&fm);
    for (mut row, &bias) in u.rows_mut().into_iter().zip(b1.iter()) {
        row.mapv_inplace(|v| v + bias);
    }
    let t = u.mapv(f64::tanh);
    let mut v = w2.dot(&t);
    for (mut row, &bias) in v.rows_mut().into_iter().zip(b2.iter()) {
        row.mapv_inplace(|v| v + bias);
    }
    let a = v.mapv(sigmoid_scalar);
    let y = (&a * &fm)
        .into_shape_with_order((c, h, w))
        .expect("reshape back");
    (y, AttCache { f: f.clone(), t, a })
}

pub fn attention_backward(
    params: &TensorStore,
    prefix: &str,
    cache: &AttCache,
    d_y: &Array3<f64>,
    grads: &mut TensorStore,
) -> Array3<f64> {
    let (c, h, w) = d_y.dim();
    let dym = d_y
        .view()
        .into_shape_with_order((c, h * w))
        .expect("contiguous gradient");
    let fm = cache
        .f
        .view()
        .into_shape_with_order((c, h * w))
        .expect("contiguous feature map");
    let w1 = params.v2(&n(prefix, "w1"));
    let w2 = params.v2(&n(prefix, "w2"));

    let d_a = &dym * &fm;
    let mut d_f = (&dym * &cache.a).to_owned();
    let d_v = &d_a * &cache.a.mapv(|a| a * (1.0 - a));
    let d_w2 = d_v.dot(&cache.t.t());
    grads.add(&n(prefix, "w2"), d_w2.as_slice().expect("row-major"));
    let d_b2: Vec<f64> = d_v.rows().into_iter().map(|r| r.sum()).collect();
    grads.add(&n(prefix, "b2"), &d_b2);
    let d_t = w2.t().dot(&d_v);
    let d_u = &d_t * &cache.t.mapv(|t| 1.0 - t * t);
    let d_w1 = d_u.dot(&fm.t());
    grads.add(&n(prefix, "w1"), d_w1.as_slice().expect("row-major"));
    let d_b1: Vec<f64> = d_u.rows().into_iter().map(|r| r.sum()).collect();
    grads.add(&n(prefix, "b1"), &d_b1);
    d_f += &w1.t().dot(&d_u);
    d_f.into_shape_with_order((c, h, w)).expect("reshape back")
}

/// Backward of the channel concatenation used by decoder skips.
pub fn split_concat_grad(d_y: &Array3<f64>, c_first: usize) -> (Array3<f64>, Array3<f64>) {
    concat_backward(d_y, c_first)
}
