//! Encoder/decoder denoising network with a classification head.
//!
//! Layout: stem (3x3 conv + BN + ReLU) feeding `levels` encoder stages
//! (residual unit, squeeze-excitation, stride-2 downsampling conv), an
//! ASPP bottleneck, and a mirrored decoder (attention gate, nearest
//! neighbor upsampling, skip concatenation, 1x1 merge, residual unit)
//! closed by a 1x1 conv with sigmoid. Class logits come from a linear
//! layer over the globally pooled bottleneck.
//!
//! All parameters live in one flat [`TensorStore`]; the checkpoint file
//! is that buffer as little-endian f64 behind a JSON header.

pub mod blocks;
pub mod layers;
pub mod store;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::ImageTensor;
use blocks::{
    aspp_backward, aspp_forward, attention_backward, attention_forward, res_unit_backward,
    res_unit_eval, res_unit_train, se_backward, se_forward, split_concat_grad, AsppCache,
    AttCache, ResUnitCache, SeCache,
};
use layers::{
    batch_norm_backward, batch_norm_eval, batch_norm_train, concat, conv2d, conv2d_backward, gap,
    gap_backward, linear, linear_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    upsample2, upsample2_backward, BnCache, BnStats, ConvSpec,
};
use store::{Layout, LayoutEntry, TensorStore};

/// Architecture hyperparameters. Spatial sizes must divide cleanly
/// through every downsampling stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub aspp_rates: Vec<usize>,
    pub num_classes: usize,
    pub input_size: (usize, usize),
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            levels: 3,
            base_channels: 16,
            aspp_rates: vec![1, 2, 4],
            num_classes: crate::image::NUM_CLASSES,
            input_size: (64, 64),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(CoreError::InvalidConfig("levels must be at least 1".into()));
        }
        if self.levels > 16 {
            return Err(CoreError::InvalidConfig(format!(
                "levels {} is out of range",
                self.levels
            )));
        }
        if self.base_channels == 0 {
            return Err(CoreError::InvalidConfig(
                "base_channels must be at least 1".into(),
            ));
        }
        if self.aspp_rates.is_empty() {
            return Err(CoreError::InvalidConfig(
                "aspp_rates must be non-empty".into(),
            ));
        }
        if self.aspp_rates.iter().any(|&r| r == 0) {
            return Err(CoreError::InvalidConfig(
                "aspp_rates must all be at least 1".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(CoreError::InvalidConfig(
                "num_classes must be at least 2".into(),
            ));
        }
        let div = 1usize << self.levels;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "input size {h}x{w} is not divisible by 2^levels = {div}"
            )));
        }
        Ok(())
    }

    /// Channel count at encoder level `i`; `channels(levels)` is the
    /// bottleneck width.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.levels)
    }
}

/// Squeeze-excitation hidden width, reduction ratio 4 with a floor of 1
/// so tiny channel counts stay valid.
fn se_mid(c: usize) -> usize {
    (c / 4).max(1)
}

fn push_res(table: &mut Vec<(String, Vec<usize>)>, prefix: &str, c: usize) {
    table.push((format!("{prefix}.conv1.w"), vec![c, c, 3, 3]));
    table.push((format!("{prefix}.conv1.b"), vec![c]));
    table.push((format!("{prefix}.bn1.gamma"), vec![c]));
    table.push((format!("{prefix}.bn1.beta"), vec![c]));
    table.push((format!("{prefix}.conv2.w"), vec![c, c, 3, 3]));
    table.push((format!("{prefix}.conv2.b"), vec![c]));
    table.push((format!("{prefix}.bn2.gamma"), vec![c]));
    table.push((format!("{prefix}.bn2.beta"), vec![c]));
}

fn push_res_stats(table: &mut Vec<(String, Vec<usize>)>, prefix: &str, c: usize) {
    table.push((format!("{prefix}.bn1.mean"), vec![c]));
    table.push((format!("{prefix}.bn1.var"), vec![c]));
    table.push((format!("{prefix}.bn2.mean"), vec![c]));
    table.push((format!("{prefix}.bn2.var"), vec![c]));
}

/// Learnable-parameter table, in execution order. The order is part of
/// the checkpoint format.
pub fn learnable_layout(config: &NetConfig) -> Layout {
    let b = config.base_channels;
    let mut t: Vec<(String, Vec<usize>)> = Vec::new();
    t.push(("stem.conv.w".into(), vec![b, 1, 3, 3]));
    t.push(("stem.conv.b".into(), vec![b]));
    t.push(("stem.bn.gamma".into(), vec![b]));
    t.push(("stem.bn.beta".into(), vec![b]));
    for i in 0..config.levels {
        let c = config.channels(i);
        push_res(&mut t, &format!("enc{i}.res"), c);
        t.push((format!("enc{i}.se.w1"), vec![se_mid(c), c]));
        t.push((format!("enc{i}.se.w2"), vec![c, se_mid(c)]));
        t.push((format!("enc{i}.down.w"), vec![2 * c, c, 3, 3]));
        t.push((format!("enc{i}.down.b"), vec![2 * c]));
    }
    let cl = config.bottleneck_channels();
    for k in 0..config.aspp_rates.len() {
        t.push((format!("aspp.branch{k}.w"), vec![cl, cl, 3, 3]));
        t.push((format!("aspp.branch{k}.b"), vec![cl]));
    }
    t.push(("aspp.proj.w".into(), vec![cl, cl, 1, 1]));
    t.push(("aspp.proj.b".into(), vec![cl]));
    t.push(("head.w".into(), vec![config.num_classes, cl]));
    t.push(("head.b".into(), vec![config.num_classes]));
    for i in (0..config.levels).rev() {
        let c_in = config.channels(i + 1);
        let c = config.channels(i);
        t.push((format!("dec{i}.att.w1"), vec![c_in, c_in]));
        t.push((format!("dec{i}.att.b1"), vec![c_in]));
        t.push((format!("dec{i}.att.w2"), vec![c_in, c_in]));
        t.push((format!("dec{i}.att.b2"), vec![c_in]));
        t.push((format!("dec{i}.merge.w"), vec![c, c_in + c, 1, 1]));
        t.push((format!("dec{i}.merge.b"), vec![c]));
        push_res(&mut t, &format!("dec{i}.res"), c);
    }
    t.push(("out.conv.w".into(), vec![1, b, 1, 1]));
    t.push(("out.conv.b".into(), vec![1]));
    Layout::build(t).expect("generated names are unique and non-empty")
}

/// Batch-norm running statistics table, one mean/var pair per BN layer.
pub fn stats_layout(config: &NetConfig) -> Layout {
    let b = config.base_channels;
    let mut t: Vec<(String, Vec<usize>)> = Vec::new();
    t.push(("stem.bn.mean".into(), vec![b]));
    t.push(("stem.bn.var".into(), vec![b]));
    for i in 0..config.levels {
        push_res_stats(&mut t, &format!("enc{i}.res"), config.channels(i));
    }
    for i in (0..config.levels).rev() {
        push_res_stats(&mut t, &format!("dec{i}.res"), config.channels(i));
    }
    Layout::build(t).expect("generated names are unique and non-empty")
}

/// Config plus every parameter of one predictor. `params` holds the
/// learnable weights, `stats` the BN running statistics; both are flat
/// buffers addressed through their layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub params: TensorStore,
    pub stats: TensorStore,
}

/// Train-mode forward result: activations retained for backward.
pub struct TrainForward {
    pub denoised: ImageTensor,
    pub logits: Vec<f64>,
    pub cache: ForwardCache,
}

/// Eval-mode forward result.
pub struct EvalForward {
    pub denoised: ImageTensor,
    pub logits: Vec<f64>,
}

struct EncCache {
    res: ResUnitCache,
    se: SeCache,
    se_out: Array3<f64>,
}

struct DecCache {
    level: usize,
    att: AttCache,
    cat: Array3<f64>,
    up_channels: usize,
    res: ResUnitCache,
}

/// Intermediate activations from a train-mode forward.
pub struct ForwardCache {
    input: Array3<f64>,
    stem_bn: BnCache,
    stem_relu: Array3<f64>,
    enc: Vec<EncCache>,
    aspp: AsppCache,
    bottleneck_pool: Array1<f64>,
    dec: Vec<DecCache>,
    final_features: Array3<f64>,
    out_y: Array3<f64>,
}

impl ForwardCache {
    /// Per-layer batch statistics proposed by this forward, keyed by BN
    /// layer name, in a fixed order.
    pub fn bn_stats(&self) -> Vec<(String, BnStats)> {
        let mut out = vec![("stem.bn".to_string(), self.stem_bn.stats.clone())];
        for (i, ec) in self.enc.iter().enumerate() {
            out.extend(ec.res.stats(&format!("enc{i}.res")));
        }
        for dc in &self.dec {
            out.extend(dc.res.stats(&format!("dec{}.res", dc.level)));
        }
        out
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: NetConfig,
    params: Vec<LayoutEntry>,
    stats: Vec<LayoutEntry>,
}

impl Model {
    /// Deterministic initialization: weights are zero-mean gaussian with
    /// std 1/sqrt(fan_in), BN scale 1, running variance 1, everything
    /// else 0. Draws happen in layout order.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut params = TensorStore::zeros(learnable_layout(config));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<LayoutEntry> = params.layout().entries().to_vec();
        for entry in &entries {
            let leaf = entry.name.rsplit('.').next().expect("non-empty name");
            match leaf {
                "w" | "w1" | "w2" => {
                    let fan_in: usize = entry.shape[1..].iter().product();
                    let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt())
                        .expect("positive std");
                    for v in &mut params.data_mut()[entry.offset..entry.offset + entry.len()] {
                        *v = dist.sample(&mut rng);
                    }
                }
                "gamma" => {
                    params.data_mut()[entry.offset..entry.offset + entry.len()].fill(1.0);
                }
                _ => {}
            }
        }
        let mut stats = TensorStore::zeros(stats_layout(config));
        let entries: Vec<LayoutEntry> = stats.layout().entries().to_vec();
        for entry in &entries {
            if entry.name.ends_with(".var") {
                stats.data_mut()[entry.offset..entry.offset + entry.len()].fill(1.0);
            }
        }
        Ok(Model {
            config: config.clone(),
            params,
            stats,
        })
    }

    fn check_input(&self, img: &ImageTensor) -> Result<()> {
        if img.shape() != self.config.input_size {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{}x{}", self.config.input_size.0, self.config.input_size.1),
                actual: format!("{}x{}", img.height(), img.width()),
            });
        }
        Ok(())
    }

    /// Forward pass with per-image batch statistics, retaining every
    /// activation backward needs. Does not mutate the model; proposed BN
    /// statistics are reported through the cache.
    pub fn forward_train(&self, img: &ImageTensor) -> Result<TrainForward> {
        self.check_input(img)?;
        let p = &self.params;
        let input = img.data().clone().insert_axis(Axis(0));
        let stem_conv = conv2d(
            &input,
            p.v4("stem.conv.w"),
            p.v1("stem.conv.b"),
            ConvSpec::SAME3,
        );
        let (stem_bn_out, stem_bn) =
            batch_norm_train(&stem_conv, p.v1("stem.bn.gamma"), p.v1("stem.bn.beta"));
        let stem_relu = relu(&stem_bn_out);

        let mut cur = stem_relu.clone();
        let mut enc = Vec::with_capacity(self.config.levels);
        for i in 0..self.config.levels {
            let (r, res) = res_unit_train(p, &format!("enc{i}.res"), &cur);
            let (s, se) = se_forward(p, &format!("enc{i}.se"), &r);
            cur = conv2d(
                &s,
                p.v4(&format!("enc{i}.down.w")),
                p.v1(&format!("enc{i}.down.b")),
                ConvSpec::DOWN3,
            );
            enc.push(EncCache { res, se, se_out: s });
        }

        let (aspp_out, aspp) = aspp_forward(p, "aspp", &self.config.aspp_rates, &cur);
        let bottleneck_pool = gap(&aspp_out);
        let logits = linear(bottleneck_pool.view(), p.v2("head.w"), p.v1("head.b"));

        let mut cur = aspp_out;
        let mut dec = Vec::with_capacity(self.config.levels);
        for i in (0..self.config.levels).rev() {
            let (att_out, att) = attention_forward(p, &format!("dec{i}.att"), &cur);
            let up = upsample2(&att_out);
            let up_channels = up.dim().0;
            let cat = concat(&up, &enc[i].se_out);
            let merged = conv2d(
                &cat,
                p.v4(&format!("dec{i}.merge.w")),
                p.v1(&format!("dec{i}.merge.b")),
                ConvSpec::POINT,
            );
            let (r, res) = res_unit_train(p, &format!("dec{i}.res"), &merged);
            cur = r;
            dec.push(DecCache {
                level: i,
                att,
                cat,
                up_channels,
                res,
            });
        }

        let pre = conv2d(&cur, p.v4("out.conv.w"), p.v1("out.conv.b"), ConvSpec::POINT);
        let out_y = sigmoid(&pre);
        let denoised = ImageTensor::new(out_y.index_axis(Axis(0), 0).to_owned())?;
        Ok(TrainForward {
            denoised,
            logits: logits.to_vec(),
            cache: ForwardCache {
                input,
                stem_bn,
                stem_relu,
                enc,
                aspp,
                bottleneck_pool,
                dec,
                final_features: cur,
                out_y,
            },
        })
    }

    /// Pure forward pass using running statistics.
    pub fn forward_eval(&self, img: &ImageTensor) -> Result<EvalForward> {
        self.check_input(img)?;
        let p = &self.params;
        let st = &self.stats;
        let input = img.data().clone().insert_axis(Axis(0));
        let stem_conv = conv2d(
            &input,
            p.v4("stem.conv.w"),
            p.v1("stem.conv.b"),
            ConvSpec::SAME3,
        );
        let stem_bn_out = batch_norm_eval(
            &stem_conv,
            p.v1("stem.bn.gamma"),
            p.v1("stem.bn.beta"),
            st.v1("stem.bn.mean"),
            st.v1("stem.bn.var"),
        );
        let mut cur = relu(&stem_bn_out);
        let mut skips = Vec::with_capacity(self.config.levels);
        for i in 0..self.config.levels {
            let r = res_unit_eval(p, st, &format!("enc{i}.res"), &cur);
            let (s, _) = se_forward(p, &format!("enc{i}.se"), &r);
            cur = conv2d(
                &s,
                p.v4(&format!("enc{i}.down.w")),
                p.v1(&format!("enc{i}.down.b")),
                ConvSpec::DOWN3,
            );
            skips.push(s);
        }
        let (aspp_out, _) = aspp_forward(p, "aspp", &self.config.aspp_rates, &cur);
        let logits = linear(gap(&aspp_out).view(), p.v2("head.w"), p.v1("head.b"));
        let mut cur = aspp_out;
        for i in (0..self.config.levels).rev() {
            let (att_out, _) = attention_forward(p, &format!("dec{i}.att"), &cur);
            let up = upsample2(&att_out);
            let cat = concat(&up, &skips[i]);
            let merged = conv2d(
                &cat,
                p.v4(&format!("dec{i}.merge.w")),
                p.v1(&format!("dec{i}.merge.b")),
                ConvSpec::POINT,
            );
            cur = res_unit_eval(p, st, &format!("dec{i}.res"), &merged);
        }
        let pre = conv2d(&cur, p.v4("out.conv.w"), p.v1("out.conv.b"), ConvSpec::POINT);
        let out_y = sigmoid(&pre);
        let denoised = ImageTensor::new(out_y.index_axis(Axis(0), 0).to_owned())?;
        Ok(EvalForward {
            denoised,
            logits: logits.to_vec(),
        })
    }

    /// Reverse-mode gradients of the scalar functional
    /// `sum(d_denoised * denoised) + sum(d_logits * logits)` w.r.t.
    /// every learnable parameter.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_denoised: &Array2<f64>,
        d_logits: &[f64],
    ) -> Result<TensorStore> {
        if d_denoised.dim() != self.config.input_size {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{}x{}", self.config.input_size.0, self.config.input_size.1),
                actual: format!("{}x{}", d_denoised.nrows(), d_denoised.ncols()),
            });
        }
        if d_logits.len() != self.config.num_classes {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} logits", self.config.num_classes),
                actual: format!("{} logits", d_logits.len()),
            });
        }
        let p = &self.params;
        let mut grads = TensorStore::zeros(p.layout().clone());

        let d_y = d_denoised.clone().insert_axis(Axis(0));
        let d_pre = sigmoid_backward(&cache.out_y, &d_y);
        let out_g = conv2d_backward(
            &cache.final_features,
            p.v4("out.conv.w"),
            ConvSpec::POINT,
            &d_pre,
        );
        grads.add("out.conv.w", &out_g.d_w);
        grads.add("out.conv.b", &out_g.d_b);

        let mut d_cur = out_g.d_x;
        let mut d_skips: Vec<Option<Array3<f64>>> = (0..self.config.levels).map(|_| None).collect();
        for dc in cache.dec.iter().rev() {
            let i = dc.level;
            let d_merged = res_unit_backward(p, &format!("dec{i}.res"), &dc.res, &d_cur, &mut grads);
            let merge_g = conv2d_backward(
                &dc.cat,
                p.v4(&format!("dec{i}.merge.w")),
                ConvSpec::POINT,
                &d_merged,
            );
            grads.add(&format!("dec{i}.merge.w"), &merge_g.d_w);
            grads.add(&format!("dec{i}.merge.b"), &merge_g.d_b);
            let (d_up, d_skip) = split_concat_grad(&merge_g.d_x, dc.up_channels);
            d_skips[i] = Some(d_skip);
            let d_att_out = upsample2_backward(&d_up);
            d_cur = attention_backward(p, &format!("dec{i}.att"), &dc.att, &d_att_out, &mut grads);
        }

        // d_cur now sits on the ASPP output; fold in the head path
        let lin_g = linear_backward(
            cache.bottleneck_pool.view(),
            p.v2("head.w"),
            ndarray::ArrayView1::from(d_logits),
        );
        grads.add("head.w", &lin_g.d_w);
        grads.add("head.b", &lin_g.d_b);
        let (c, h, w) = d_cur.dim();
        d_cur += &gap_backward(lin_g.d_z.view(), c, h, w);

        let mut d_enc = aspp_backward(
            p,
            "aspp",
            &self.config.aspp_rates,
            &cache.aspp,
            &d_cur,
            &mut grads,
        );
        for i in (0..self.config.levels).rev() {
            let ec = &cache.enc[i];
            let down_g = conv2d_backward(
                &ec.se_out,
                p.v4(&format!("enc{i}.down.w")),
                ConvSpec::DOWN3,
                &d_enc,
            );
            grads.add(&format!("enc{i}.down.w"), &down_g.d_w);
            grads.add(&format!("enc{i}.down.b"), &down_g.d_b);
            let mut d_se_out = down_g.d_x;
            d_se_out += d_skips[i].as_ref().expect("skip gradient recorded");
            let d_res_out = se_backward(p, &format!("enc{i}.se"), &ec.se, &d_se_out, &mut grads);
            d_enc = res_unit_backward(p, &format!("enc{i}.res"), &ec.res, &d_res_out, &mut grads);
        }

        let d_stem_bn = relu_backward(&cache.stem_relu, &d_enc);
        let bn_g = batch_norm_backward(p.v1("stem.bn.gamma"), &cache.stem_bn, &d_stem_bn);
        grads.add("stem.bn.gamma", &bn_g.d_gamma);
        grads.add("stem.bn.beta", &bn_g.d_beta);
        let stem_g = conv2d_backward(&cache.input, p.v4("stem.conv.w"), ConvSpec::SAME3, &bn_g.d_x);
        grads.add("stem.conv.w", &stem_g.d_w);
        grads.add("stem.conv.b", &stem_g.d_b);
        Ok(grads)
    }

    /// Fold averaged batch statistics into the running statistics:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(&mut self, averaged: &[(String, BnStats)], momentum: f64) {
        for (name, s) in averaged {
            let mut mean = self.stats.v1_mut(&format!("{name}.mean"));
            for (r, &b) in mean.iter_mut().zip(s.mean.iter()) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            let mut var = self.stats.v1_mut(&format!("{name}.var"));
            for (r, &b) in var.iter_mut().zip(s.var.iter()) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }

    /// Serialize as a 4-byte little-endian header length, a JSON header
    /// (format version, config, both layout tables), then the learnable
    /// and statistic buffers as raw little-endian f64.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.layout().entries().to_vec(),
            stats: self.stats.layout().entries().to_vec(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(
            4 + header_bytes.len() + 8 * (self.params.data().len() + self.stats.data().len()),
        );
        buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header_bytes);
        for &v in self.params.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in self.stats.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        file.write_all(&buf).map_err(|e| CoreError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        if bytes.len() < 4 {
            return Err(CoreError::Checkpoint(format!(
                "{} is too short for a header",
                path.display()
            )));
        }
        let header_len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let body = bytes.len() - 4;
        if header_len > body {
            return Err(CoreError::Checkpoint(format!(
                "declared header length {header_len} exceeds file size"
            )));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[4..4 + header_len])?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        header.config.validate()?;
        let expected_params = learnable_layout(&header.config);
        let expected_stats = stats_layout(&header.config);
        if header.params != expected_params.entries() || header.stats != expected_stats.entries() {
            return Err(CoreError::Checkpoint(
                "parameter table does not match config".into(),
            ));
        }
        let total = expected_params.total_len() + expected_stats.total_len();
        let data_bytes = &bytes[4 + header_len..];
        if data_bytes.len() != 8 * total {
            return Err(CoreError::Checkpoint(format!(
                "expected {} data bytes, found {}",
                8 * total,
                data_bytes.len()
            )));
        }
        let mut values = Vec::with_capacity(total);
        for chunk in data_bytes.chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
        let stats_values = values.split_off(expected_params.total_len());
        let params = TensorStore::from_data(expected_params, values)?;
        let stats = TensorStore::from_data(expected_stats, stats_values)?;
        if !params.all_finite() || !stats.all_finite() {
            return Err(CoreError::Checkpoint("non-finite parameter value".into()));
        }
        Ok(Model {
            config: header.config,
            params,
            stats,
        })
    }
}
