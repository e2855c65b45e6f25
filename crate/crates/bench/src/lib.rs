//! Shared fixtures for the pipeline benchmarks.

use checkerboard_core::{
    standard_rois, generate, ImageTensor, Model, NetConfig, PhantomConfig, RoiSet,
};

/// One 64x64 phantom pair (clean, noisy) at the desk-scale noise level.
pub fn phantom_pair(seed: u64) -> (ImageTensor, ImageTensor) {
    let config = PhantomConfig {
        class_label: (seed % 3) as u8,
        seed,
        ..PhantomConfig::default()
    };
    let (clean, noisy, _) = generate(&config).expect("valid phantom config");
    (clean, noisy)
}

/// The network shape used by the end-to-end experiment.
pub fn desk_net() -> NetConfig {
    NetConfig::default()
}

pub fn desk_model(seed: u64) -> Model {
    Model::init(&desk_net(), seed).expect("valid net config")
}

pub fn desk_rois() -> RoiSet {
    RoiSet::new(standard_rois(64, 64).expect("roi layout fits 64x64")).expect("roles complete")
}
