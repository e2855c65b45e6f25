//! Dual-model training: two predictors, each learning to reconstruct
//! one checkerboard parity it never sees.
//!
//! The odd predictor trains on images whose odd pixels are blinded and
//! is supervised at those odd positions; the even predictor mirrors
//! this. Inference blinds each parity in turn and fuses the two
//! predictions, so no output pixel was visible to the model that
//! produced it. Both models follow the same Adam + multi-step schedule
//! and the whole loop is a pure function of (data, configs, seed).

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkerboard::{blinded_positions, fuse, make_blind, Parity};
use crate::error::{CoreError, Result};
use crate::image::{DatasetManifest, ImageTensor};
use crate::loss::{composite_loss, LossWeights};
use crate::nn::layers::BnStats;
use crate::nn::store::TensorStore;
use crate::nn::{Model, NetConfig};
use crate::seed::derive_seed2;

/// Momentum for folding batch statistics into BN running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

// derive_seed2 stream allocation within one training run
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const ODD_SUBSTREAM: u64 = 0;
const EVEN_SUBSTREAM: u64 = 1;

/// Which output pixels the reconstruction loss covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPositions {
    /// Only the blinded parity: the model is never rewarded for copying
    /// pixels it can see.
    BlindedOnly,
    /// Every pixel; degrades toward identity learning, kept for ablations.
    FullImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub loss_weights: LossWeights,
    pub loss_positions: LossPositions,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    /// Desk-scale defaults: Adam (0.9, 0.999, 1e-8) at lr 1e-3, decay
    /// 0.1 at 60% and 85% of the epoch budget.
    pub fn defaults(epochs: usize) -> TrainConfig {
        let mut lr_milestones = Vec::new();
        let m1 = epochs * 60 / 100;
        let m2 = epochs * 85 / 100;
        if m1 > 0 && m1 < epochs {
            lr_milestones.push(m1);
        }
        if m2 > m1 && m2 < epochs {
            lr_milestones.push(m2);
        }
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 1e-3,
            lr_milestones,
            lr_gamma: 0.1,
            loss_weights: LossWeights::default(),
            loss_positions: LossPositions::BlindedOnly,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "lr must be finite and positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_gamma.is_finite() && self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "lr_gamma must lie in (0,1], got {}",
                self.lr_gamma
            )));
        }
        for pair in self.lr_milestones.windows(2) {
            if pair[1] <= pair[0] {
                return Err(CoreError::InvalidConfig(
                    "lr_milestones must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = self.lr_milestones.last() {
            if last >= self.epochs {
                return Err(CoreError::InvalidConfig(format!(
                    "milestone {last} is not below epochs {}",
                    self.epochs
                )));
            }
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} must lie in [0,1), got {beta}"
                )));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        self.loss_weights.validate()?;
        Ok(())
    }
}

/// Adam moment accumulators over one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> OptimizerState {
        OptimizerState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One Adam update: `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
/// bias-corrected, then `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut TensorStore,
    grads: &TensorStore,
    state: &mut OptimizerState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    let n = params.data().len();
    if grads.data().len() != n || state.m.len() != n {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{n} parameters"),
            actual: format!("{} gradients, {} moments", grads.data().len(), state.m.len()),
        });
    }
    if !grads.all_finite() {
        return Err(CoreError::Optimizer("non-finite gradient".into()));
    }
    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let p = params.data_mut();
    for (i, &g) in grads.data().iter().enumerate() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
    Ok(())
}

/// Multi-step schedule: the base rate decayed once per milestone already
/// reached. Non-increasing in `epoch`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let decays = config.lr_milestones.iter().filter(|&&m| m <= epoch).count();
    config.lr * config.lr_gamma.powi(decays as i32)
}

/// One optimizer step over a batch: blind each image, forward in train
/// mode, composite loss against the original noisy image, average the
/// per-image gradients in index order, update running BN statistics,
/// then one Adam step. Returns the batch-mean loss.
///
/// `epoch` and `step` only label the divergence diagnostic.
pub fn train_step(
    model: &mut Model,
    opt: &mut OptimizerState,
    batch: &[(ImageTensor, u8)],
    blind_parity: Parity,
    config: &TrainConfig,
    epoch: usize,
    step: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::InvalidConfig("empty batch".into()));
    }
    let frozen: &Model = model;
    let items: Vec<(TensorStore, Vec<(String, BnStats)>, f64)> = batch
        .par_iter()
        .map(|(img, label)| {
            let blinded = make_blind(img, blind_parity);
            let fwd = frozen.forward_train(&blinded.image)?;
            let positions = match config.loss_positions {
                LossPositions::BlindedOnly => {
                    let (h, w) = img.shape();
                    Some(blinded_positions(h, w, blind_parity))
                }
                LossPositions::FullImage => None,
            };
            let loss = composite_loss(
                &fwd.denoised,
                img,
                positions.as_deref(),
                &fwd.logits,
                *label as usize,
                &config.loss_weights,
            )?;
            let grads = frozen.backward(&fwd.cache, &loss.d_pred, &loss.d_logits)?;
            Ok((grads, fwd.cache.bn_stats(), loss.value))
        })
        .collect::<Result<Vec<_>>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mean_loss = items.iter().map(|it| it.2).sum::<f64>() * scale;
    if !mean_loss.is_finite() {
        return Err(CoreError::Diverged { epoch, step });
    }

    // index-ordered reduction keeps the result bit-stable regardless of
    // worker scheduling
    let mut mean_grads = TensorStore::zeros(model.params.layout().clone());
    for (g, _, _) in &items {
        mean_grads.add_store(g);
    }
    mean_grads.scale(scale);

    let mut avg_stats = items[0].1.clone();
    for (_, stats, _) in &items[1..] {
        for (acc, (_, s)) in avg_stats.iter_mut().zip(stats.iter()) {
            acc.1.mean += &s.mean;
            acc.1.var += &s.var;
        }
    }
    for (_, s) in &mut avg_stats {
        s.mean *= scale;
        s.var *= scale;
    }
    model.update_running_stats(&avg_stats, BN_MOMENTUM);

    let lr = lr_at(epoch, config);
    adam_step(&mut model.params, &mean_grads, opt, lr, config)?;
    Ok(mean_loss)
}

/// The two parity predictors. Each one reconstructs the parity named in
/// its field from the opposite parity's pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DualModel {
    pub odd_predictor: Model,
    pub even_predictor: Model,
}

/// One training-log row; rendered to CSV by [`log_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub model: String,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Render log rows as CSV with a header line.
pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,model,mean_loss,lr\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.model, r.mean_loss, r.lr));
    }
    out
}

/// Train both predictors over the manifest with a shared epoch-wise
/// shuffle and schedule. Deterministic given (data, configs, seed).
pub fn train_dual(
    manifest: &DatasetManifest,
    net_config: &NetConfig,
    train_config: &TrainConfig,
) -> Result<(DualModel, Vec<LogRow>)> {
    net_config.validate()?;
    train_config.validate()?;
    if manifest.is_empty() {
        return Err(CoreError::InvalidManifest(
            "cannot train on an empty manifest".into(),
        ));
    }
    let data: Vec<(ImageTensor, u8)> = manifest
        .load_images()?
        .into_iter()
        .map(|(img, label, _)| (img, label))
        .collect();
    for (img, _) in &data {
        if img.shape() != net_config.input_size {
            return Err(CoreError::ShapeMismatch {
                expected: format!(
                    "{}x{}",
                    net_config.input_size.0, net_config.input_size.1
                ),
                actual: format!("{}x{}", img.height(), img.width()),
            });
        }
    }

    let seed = train_config.seed;
    let mut odd = Model::init(net_config, derive_seed2(seed, STREAM_INIT, ODD_SUBSTREAM))?;
    let mut even = Model::init(net_config, derive_seed2(seed, STREAM_INIT, EVEN_SUBSTREAM))?;
    let mut odd_opt = OptimizerState::new(odd.params.data().len());
    let mut even_opt = OptimizerState::new(even.params.data().len());
    let mut log = Vec::with_capacity(2 * train_config.epochs);

    for epoch in 0..train_config.epochs {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed2(
            seed,
            STREAM_SHUFFLE,
            epoch as u64,
        ));
        order.shuffle(&mut rng);
        let lr = lr_at(epoch, train_config);

        for (model, opt, parity) in [
            (&mut odd, &mut odd_opt, Parity::Odd),
            (&mut even, &mut even_opt, Parity::Even),
        ] {
            let mut loss_sum = 0.0;
            for (step, chunk) in order.chunks(train_config.batch_size).enumerate() {
                let batch: Vec<(ImageTensor, u8)> =
                    chunk.iter().map(|&i| data[i].clone()).collect();
                let loss = train_step(model, opt, &batch, parity, train_config, epoch, step)?;
                loss_sum += loss * batch.len() as f64;
            }
            log.push(LogRow {
                epoch,
                model: parity.label().to_string(),
                mean_loss: loss_sum / data.len() as f64,
                lr,
            });
        }
    }

    Ok((
        DualModel {
            odd_predictor: odd,
            even_predictor: even,
        },
        log,
    ))
}

/// Blind each parity in turn, run the matching predictor in eval mode,
/// and fuse so every output pixel comes from the model that never saw
/// its noisy value.
pub fn denoise(dual: &DualModel, img: &ImageTensor) -> Result<ImageTensor> {
    let odd_in = make_blind(img, Parity::Odd);
    let even_in = make_blind(img, Parity::Even);
    let pred_for_odd = dual.odd_predictor.forward_eval(&odd_in.image)?.denoised;
    let pred_for_even = dual.even_predictor.forward_eval(&even_in.image)?.denoised;
    fuse(&pred_for_odd, &pred_for_even)
}

/// Class logits from one predictor's head, with the input blinded the
/// same way that predictor was trained.
pub fn classify(dual: &DualModel, img: &ImageTensor, predictor: Parity) -> Result<Vec<f64>> {
    let model = match predictor {
        Parity::Odd => &dual.odd_predictor,
        Parity::Even => &dual.even_predictor,
    };
    let blinded = make_blind(img, predictor);
    Ok(model.forward_eval(&blinded.image)?.logits)
}

const DUAL_INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DualIndex {
    format_version: u32,
    odd_checkpoint: String,
    even_checkpoint: String,
}

/// Write `odd.ckpt`, `even.ckpt`, and the `dual.json` index into `dir`;
/// returns the index path.
pub fn save_dual(dual: &DualModel, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    dual.odd_predictor.save(dir.join("odd.ckpt"))?;
    dual.even_predictor.save(dir.join("even.ckpt"))?;
    let index = DualIndex {
        format_version: DUAL_INDEX_VERSION,
        odd_checkpoint: "odd.ckpt".into(),
        even_checkpoint: "even.ckpt".into(),
    };
    let path = dir.join("dual.json");
    let text = serde_json::to_string_pretty(&index)?;
    std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
    Ok(path)
}

/// Load a dual model from its `dual.json` index; checkpoint paths
/// resolve relative to the index file.
pub fn load_dual(index_path: impl AsRef<Path>) -> Result<DualModel> {
    let index_path = index_path.as_ref();
    let text = std::fs::read_to_string(index_path).map_err(|e| CoreError::io(index_path, e))?;
    let index: DualIndex = serde_json::from_str(&text)?;
    if index.format_version != DUAL_INDEX_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported dual index version {}",
            index.format_version
        )));
    }
    let base = index_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &str| {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    };
    let odd_predictor = Model::load(resolve(&index.odd_checkpoint))?;
    let even_predictor = Model::load(resolve(&index.even_checkpoint))?;
    if odd_predictor.config != even_predictor.config {
        return Err(CoreError::Checkpoint(
            "odd and even checkpoints disagree on the network config".into(),
        ));
    }
    Ok(DualModel {
        odd_predictor,
        even_predictor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ManifestRecord;
    use crate::nn::store::Layout;
    use crate::phantom::{generate, PhantomConfig};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(value: f64) -> TensorStore {
        let layout = Layout::build(vec![("p".into(), vec![1])]).unwrap();
        let mut s = TensorStore::zeros(layout);
        s.set("p", &[value]);
        s
    }

    fn default_cfg() -> TrainConfig {
        TrainConfig::defaults(10)
    }

    #[test]
    fn adam_zero_gradient_is_identity_on_params() {
        let mut p = scalar_store(0.7);
        let g = scalar_store(0.0);
        let mut st = OptimizerState::new(1);
        adam_step(&mut p, &g, &mut st, 1e-3, &default_cfg()).unwrap();
        assert_eq!(p.data(), &[0.7]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_matches_hand_evaluation() {
        // theta=0, g=1: m_hat = v_hat = 1, so theta = -lr / (1 + eps)
        let mut p = scalar_store(0.0);
        let g = scalar_store(1.0);
        let mut st = OptimizerState::new(1);
        adam_step(&mut p, &g, &mut st, 1e-3, &default_cfg()).unwrap();
        let expected = -9.9999999e-4;
        assert!(
            (p.data()[0] - expected).abs() < 1e-15,
            "got {}",
            p.data()[0]
        );
    }

    #[test]
    fn adam_constant_gradient_keeps_descending() {
        let mut p = scalar_store(0.0);
        let g = scalar_store(1.0);
        let mut st = OptimizerState::new(1);
        adam_step(&mut p, &g, &mut st, 1e-3, &default_cfg()).unwrap();
        let after_one = p.data()[0];
        adam_step(&mut p, &g, &mut st, 1e-3, &default_cfg()).unwrap();
        assert!(p.data()[0] < after_one);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = scalar_store(0.0);
        let g = scalar_store(f64::NAN);
        let mut st = OptimizerState::new(1);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, 1e-3, &default_cfg()),
            Err(CoreError::Optimizer(_))
        ));
    }

    #[test]
    fn lr_schedule_follows_milestones() {
        let mut cfg = TrainConfig::defaults(30);
        cfg.lr = 1e-3;
        cfg.lr_milestones = vec![10, 20];
        cfg.lr_gamma = 0.1;
        assert!((lr_at(5, &cfg) - 1e-3).abs() < 1e-18);
        assert!((lr_at(15, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_at(25, &cfg) - 1e-5).abs() < 1e-18);
        // non-increasing over the whole range
        let mut prev = f64::INFINITY;
        for epoch in 0..30 {
            let lr = lr_at(epoch, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = TrainConfig::defaults(20);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.lr_milestones, vec![12, 17]);

        let mut c = ok.clone();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.lr_gamma = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.lr_gamma = 1.0;
        assert!(c.validate().is_ok());
        let mut c = ok.clone();
        c.lr_milestones = vec![5, 5];
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.lr_milestones = vec![5, 25];
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.adam_beta1 = 1.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.adam_eps = 0.0;
        assert!(c.validate().is_err());
    }

    fn tiny_net() -> NetConfig {
        NetConfig {
            levels: 2,
            base_channels: 2,
            aspp_rates: vec![1, 2],
            num_classes: 3,
            input_size: (16, 16),
        }
    }

    fn tiny_batch(n: usize) -> Vec<(ImageTensor, u8)> {
        (0..n)
            .map(|i| {
                let cfg = PhantomConfig {
                    height: 16,
                    width: 16,
                    class_label: (i % 3) as u8,
                    seed: 100 + i as u64,
                    ..PhantomConfig::default()
                };
                let (noisy, _, label) = generate(&cfg).unwrap();
                (noisy, label)
            })
            .collect()
    }

    #[test]
    fn zero_loss_weights_leave_params_unchanged() {
        let net = tiny_net();
        let mut model = Model::init(&net, 1).unwrap();
        let before = model.params.data().to_vec();
        let mut opt = OptimizerState::new(before.len());
        let mut cfg = TrainConfig::defaults(4);
        cfg.loss_weights = LossWeights { w_r: 0.0, w_c: 0.0 };
        let batch = tiny_batch(2);
        let loss = train_step(&mut model, &mut opt, &batch, Parity::Odd, &cfg, 0, 0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(model.params.data(), &before[..]);
        // the step still advances the optimizer clock
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn train_step_is_deterministic() {
        let net = tiny_net();
        let cfg = TrainConfig::defaults(4);
        let batch = tiny_batch(3);
        let run = || {
            let mut model = Model::init(&net, 5).unwrap();
            let mut opt = OptimizerState::new(model.params.data().len());
            train_step(&mut model, &mut opt, &batch, Parity::Even, &cfg, 0, 0).unwrap();
            (model, opt)
        };
        let (m1, o1) = run();
        let (m2, o2) = run();
        assert_eq!(m1.params.data(), m2.params.data());
        assert_eq!(m1.stats.data(), m2.stats.data());
        assert_eq!(o1, o2);
    }

    #[test]
    fn blinded_loss_gradient_vanishes_off_the_blinded_parity() {
        // inspect d_pred of the loss exactly as train_step computes it
        let batch = tiny_batch(1);
        let (img, label) = &batch[0];
        let net = tiny_net();
        let model = Model::init(&net, 2).unwrap();
        let blinded = make_blind(img, Parity::Odd);
        let fwd = model.forward_train(&blinded.image).unwrap();
        let positions = blinded_positions(16, 16, Parity::Odd);
        let loss = composite_loss(
            &fwd.denoised,
            img,
            Some(&positions),
            &fwd.logits,
            *label as usize,
            &LossWeights::default(),
        )
        .unwrap();
        for i in 0..16 {
            for j in 0..16 {
                if Parity::of(i, j) == Parity::Even {
                    assert_eq!(loss.d_pred[[i, j]], 0.0);
                } else {
                    assert!(loss.d_pred[[i, j]] != 0.0 || fwd.denoised.get(i, j) == img.get(i, j));
                }
            }
        }
    }

    #[test]
    fn train_step_updates_running_stats() {
        let net = tiny_net();
        let mut model = Model::init(&net, 3).unwrap();
        let stats_before = model.stats.data().to_vec();
        let mut opt = OptimizerState::new(model.params.data().len());
        let cfg = TrainConfig::defaults(4);
        let batch = tiny_batch(2);
        train_step(&mut model, &mut opt, &batch, Parity::Odd, &cfg, 0, 0).unwrap();
        assert_ne!(model.stats.data(), &stats_before[..]);
        assert!(model.stats.all_finite());
    }

    fn write_manifest(dir: &Path, images: &[(ImageTensor, u8)]) -> DatasetManifest {
        let mut records = Vec::new();
        for (i, (img, label)) in images.iter().enumerate() {
            let name = format!("img{i:02}.f32");
            img.save(dir.join(&name)).unwrap();
            records.push(ManifestRecord {
                path: name,
                label: *label,
                subject: format!("s{i:02}"),
            });
        }
        DatasetManifest::new(records, dir).unwrap()
    }

    #[test]
    fn zero_epochs_return_fresh_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(dir.path(), &tiny_batch(2));
        let net = tiny_net();
        let cfg = TrainConfig::defaults(0);
        let (dual, log) = train_dual(&manifest, &net, &cfg).unwrap();
        assert!(log.is_empty());
        let odd = Model::init(&net, derive_seed2(cfg.seed, STREAM_INIT, ODD_SUBSTREAM)).unwrap();
        let even = Model::init(&net, derive_seed2(cfg.seed, STREAM_INIT, EVEN_SUBSTREAM)).unwrap();
        assert_eq!(dual.odd_predictor.params.data(), odd.params.data());
        assert_eq!(dual.even_predictor.params.data(), even.params.data());
        // the two predictors start from different draws
        assert_ne!(
            dual.odd_predictor.params.data(),
            dual.even_predictor.params.data()
        );
    }

    #[test]
    fn train_dual_is_deterministic_and_logs_every_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(dir.path(), &tiny_batch(4));
        let net = tiny_net();
        let mut cfg = TrainConfig::defaults(2);
        cfg.batch_size = 2;
        let (d1, l1) = train_dual(&manifest, &net, &cfg).unwrap();
        let (d2, l2) = train_dual(&manifest, &net, &cfg).unwrap();
        assert_eq!(d1.odd_predictor.params.data(), d2.odd_predictor.params.data());
        assert_eq!(d1.even_predictor.params.data(), d2.even_predictor.params.data());
        assert_eq!(d1.odd_predictor.stats.data(), d2.odd_predictor.stats.data());
        assert_eq!(l1, l2);
        // one odd and one even row per epoch, in order
        assert_eq!(l1.len(), 4);
        assert_eq!((l1[0].epoch, l1[0].model.as_str()), (0, "odd"));
        assert_eq!((l1[1].epoch, l1[1].model.as_str()), (0, "even"));
        assert_eq!((l1[3].epoch, l1[3].model.as_str()), (1, "even"));
        assert!(l1.iter().all(|r| r.mean_loss.is_finite() && r.lr > 0.0));
    }

    #[test]
    fn train_dual_rejects_empty_and_mismatched_input() {
        let dir = tempfile::tempdir().unwrap();
        let empty = DatasetManifest::new(vec![], dir.path()).unwrap();
        let net = tiny_net();
        let cfg = TrainConfig::defaults(1);
        assert!(train_dual(&empty, &net, &cfg).is_err());

        // 16x16 phantoms against a 32x32 network config
        let manifest = write_manifest(dir.path(), &tiny_batch(1));
        let mut wrong = tiny_net();
        wrong.input_size = (32, 32);
        assert!(train_dual(&manifest, &wrong, &cfg).is_err());
    }

    #[test]
    fn denoise_fuses_parities_in_unit_range() {
        let net = tiny_net();
        let dual = DualModel {
            odd_predictor: Model::init(&net, 10).unwrap(),
            even_predictor: Model::init(&net, 11).unwrap(),
        };
        let (img, _) = tiny_batch(1).into_iter().next().unwrap();
        let out = denoise(&dual, &img).unwrap();
        assert_eq!(out.shape(), img.shape());
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let again = denoise(&dual, &img).unwrap();
        assert_eq!(out, again);

        // routing: odd pixels must come from the odd predictor alone
        let odd_pred = dual
            .odd_predictor
            .forward_eval(&make_blind(&img, Parity::Odd).image)
            .unwrap()
            .denoised;
        for i in 0..16 {
            for j in 0..16 {
                if Parity::of(i, j) == Parity::Odd {
                    assert_eq!(out.get(i, j), odd_pred.get(i, j));
                }
            }
        }
    }

    #[test]
    fn classify_uses_the_requested_predictor() {
        let net = tiny_net();
        let dual = DualModel {
            odd_predictor: Model::init(&net, 20).unwrap(),
            even_predictor: Model::init(&net, 21).unwrap(),
        };
        let (img, _) = tiny_batch(1).into_iter().next().unwrap();
        let from_odd = classify(&dual, &img, Parity::Odd).unwrap();
        let from_even = classify(&dual, &img, Parity::Even).unwrap();
        assert_eq!(from_odd.len(), 3);
        assert_ne!(from_odd, from_even);
    }

    #[test]
    fn dual_checkpoint_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let net = tiny_net();
        let dual = DualModel {
            odd_predictor: Model::init(&net, 30).unwrap(),
            even_predictor: Model::init(&net, 31).unwrap(),
        };
        let index = save_dual(&dual, dir.path().join("ckpt")).unwrap();
        let loaded = load_dual(&index).unwrap();
        assert_eq!(loaded.odd_predictor.params.data(), dual.odd_predictor.params.data());
        assert_eq!(loaded.even_predictor.params.data(), dual.even_predictor.params.data());
        assert_eq!(loaded.odd_predictor.stats.data(), dual.odd_predictor.stats.data());
    }

    #[test]
    fn dual_index_rejects_mismatched_configs() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt");
        let net = tiny_net();
        let dual = DualModel {
            odd_predictor: Model::init(&net, 1).unwrap(),
            even_predictor: Model::init(&net, 2).unwrap(),
        };
        let index = save_dual(&dual, &ckpt).unwrap();
        // overwrite the even checkpoint with a different architecture
        let mut other = tiny_net();
        other.base_channels = 4;
        Model::init(&other, 3).unwrap().save(ckpt.join("even.ckpt")).unwrap();
        assert!(matches!(load_dual(&index), Err(CoreError::Checkpoint(_))));
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let rows = vec![
            LogRow {
                epoch: 0,
                model: "odd".into(),
                mean_loss: 0.5,
                lr: 1e-3,
            },
            LogRow {
                epoch: 0,
                model: "even".into(),
                mean_loss: 0.25,
                lr: 1e-3,
            },
        ];
        let csv = log_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,model,mean_loss,lr");
        assert_eq!(lines[1], "0,odd,0.5,0.001");
        assert_eq!(lines[2], "0,even,0.25,0.001");
    }

    #[test]
    fn shuffle_differs_between_epochs() {
        use rand::seq::SliceRandom;
        let mut orders = Vec::new();
        for epoch in 0..2u64 {
            let mut order: Vec<usize> = (0..64).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed2(9, STREAM_SHUFFLE, epoch));
            order.shuffle(&mut rng);
            orders.push(order);
        }
        assert_ne!(orders[0], orders[1]);
    }

    #[test]
    fn diverged_loss_reports_epoch_and_step() {
        // force divergence with params scaled into saturation
        let net = tiny_net();
        let mut model = Model::init(&net, 4).unwrap();
        for v in model.params.data_mut() {
            *v = f64::MAX.sqrt();
        }
        let mut opt = OptimizerState::new(model.params.data().len());
        let cfg = TrainConfig::defaults(4);
        let batch: Vec<(ImageTensor, u8)> = vec![(
            ImageTensor::new(Array2::from_elem((16, 16), 0.5)).unwrap(),
            0,
        )];
        let err = train_step(&mut model, &mut opt, &batch, Parity::Odd, &cfg, 3, 7);
        assert!(err.is_err());
    }
}
