//! Self-supervised speckle denoising with checkerboard blind-spot training.
//!
//! The crate trains two small convolutional encoder-decoder networks on
//! single noisy images: each network sees the image with one checkerboard
//! parity hidden and learns to predict the hidden pixels from their
//! opposite-parity neighbours. Inference fuses the two predictions, so no
//! pixel is ever denoised by a model that saw its own noisy value. A
//! linear classification head on the encoder bottleneck makes the learned
//! features class-aware.
//!
//! Modules:
//! - [`image`]: image tensors, ROIs, dataset manifests, file formats
//! - [`checkerboard`]: parity masks, blinding, prediction fusion
//! - [`nn`]: the network, its analytic gradients, checkpoints
//! - [`loss`]: composite reconstruction + classification objective
//! - [`train`]: dual-model training loop, Adam, LR schedule
//! - [`metrics`]: CNR, MSR, TP, EP quality indices
//! - [`phantom`]: synthetic layered speckle phantoms

pub mod checkerboard;
pub mod error;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod seed;
pub mod train;

pub use checkerboard::{blinded_positions, fuse, make_blind, BlindedImage, Parity};
pub use error::{CoreError, Result};
pub use image::{
    load_rois, save_rois, DatasetManifest, ImageTensor, ManifestRecord, Roi, RoiPurpose,
    NUM_CLASSES,
};
pub use loss::{composite_loss, cross_entropy, rms_loss, CompositeLoss, LossWeights};
pub use metrics::{
    cnr, ep, evaluate, format_table, msr, psnr, region_stats, tp, MetricReport, MetricSummary,
    RegionStats, RoiSet, RoiValue,
};
pub use nn::store::{Layout, LayoutEntry, TensorStore};
pub use nn::{EvalForward, Model, NetConfig, TrainForward};
pub use phantom::{generate, generate_manifest, standard_rois, PhantomConfig};
pub use seed::{derive_seed, derive_seed2};
pub use train::{
    adam_step, classify, denoise, load_dual, log_csv, lr_at, save_dual, train_dual, train_step,
    DualModel, LogRow, LossPositions, OptimizerState, TrainConfig,
};
