//! Synthetic layered speckle phantoms.
//!
//! Produces (clean, noisy, label) triples that look loosely like retinal
//! cross sections: horizontal bands with wavy boundaries, three image
//! classes (plain layers, bright blob lesions, a disrupted middle band),
//! and multiplicative gamma speckle. Everything is a pure function of the
//! config; the generator is ChaCha8 with SplitMix64-derived stream seeds,
//! so identical configs give identical bytes on every platform.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::{
    save_rois, DatasetManifest, ImageTensor, ManifestRecord, Roi, RoiPurpose, NUM_CLASSES,
};
use crate::seed::derive_seed2;

/// Base band intensities, cycled when there are more layers. Bright bands
/// stay near 0.55 so clipping the speckle at 1 costs only ~2% of the mean
/// even though the correlated grain fluctuates more per image than white
/// speckle would.
const PALETTE: [f64; 5] = [0.13, 0.56, 0.18, 0.53, 0.36];
const BLOB_GAIN: f64 = 0.35;
const CLEAN_MAX: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub num_layers: usize,
    pub class_label: u8,
    pub speckle_looks: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            height: 64,
            width: 64,
            num_layers: 5,
            class_label: 0,
            speckle_looks: 4.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(CoreError::InvalidConfig(format!(
                "phantom size {}x{} below 16x16 minimum",
                self.height, self.width
            )));
        }
        if self.num_layers < 2 {
            return Err(CoreError::InvalidConfig(format!(
                "need at least 2 layers, got {}",
                self.num_layers
            )));
        }
        if self.class_label as usize >= NUM_CLASSES {
            return Err(CoreError::InvalidConfig(format!(
                "class label {} out of range 0..{NUM_CLASSES}",
                self.class_label
            )));
        }
        if !(self.speckle_looks.is_finite() && self.speckle_looks > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "speckle looks must be positive, got {}",
                self.speckle_looks
            )));
        }
        Ok(())
    }
}

struct Boundary {
    nominal: f64,
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

impl Boundary {
    fn at(&self, col: usize, width: usize) -> f64 {
        self.nominal
            + self.amplitude
                * (std::f64::consts::TAU * self.frequency * col as f64 / width as f64 + self.phase)
                    .sin()
    }
}

/// Deterministic (clean, noisy, label) triple.
///
/// clean lies in [0.1, 0.9]; noisy = clip(clean * gamma(L, 1/L), 0, 1).
/// Draw order is fixed (band jitter, boundaries, band texture, class
/// features, speckle) so outputs never depend on evaluation order.
pub fn generate(config: &PhantomConfig) -> Result<(ImageTensor, ImageTensor, u8)> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let intensities: Vec<f64> = (0..config.num_layers)
        .map(|k| PALETTE[k % PALETTE.len()] + rng.random_range(-0.025..0.025))
        .collect();

    // Wobble stays under min(2, 0.031 H) px, a quarter of the band pitch,
    // so boundaries never cross and fixed fractional ROIs stay in-band.
    // The 0.5 px floor gives way on small images where the cap sits below it.
    let max_amp = (0.031 * h as f64).min(2.0);
    let min_amp = 0.5_f64.min(0.5 * max_amp);
    let boundaries: Vec<Boundary> = (1..config.num_layers)
        .map(|k| Boundary {
            nominal: h as f64 * k as f64 / config.num_layers as f64,
            amplitude: rng.random_range(min_amp..max_amp),
            frequency: rng.random_range(1.0..3.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();

    let mut layer_of = Array2::<usize>::zeros((h, w));
    for j in 0..w {
        let cuts: Vec<f64> = boundaries.iter().map(|b| b.at(j, w)).collect();
        for i in 0..h {
            layer_of[[i, j]] = cuts.iter().filter(|&&c| (i as f64) >= c).count();
        }
    }
    let mut clean = layer_of.mapv(|layer| intensities[layer]);

    // Even bands from the second onward carry a smooth separable sinusoid,
    // so texture ROIs hold real signal variance a denoiser should preserve
    // rather than bare constant plateaus. The amplitude cap keeps every
    // textured band inside [0.1, 0.9] after jitter; the integer column
    // frequency sums to zero over any full row, leaving the row-mean class
    // profiles untouched.
    let mut textures: Vec<Option<(f64, f64, f64, f64, f64)>> = vec![None; config.num_layers];
    for k in (2..config.num_layers).step_by(2) {
        let base = intensities[k];
        let amp = (0.65 * base).min(base - 0.1).min(0.9 - base);
        textures[k] = Some((
            amp.max(0.0),
            rng.random_range(2.0..4.0),
            rng.random_range(2..4) as f64,
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        ));
    }
    for i in 0..h {
        for j in 0..w {
            if let Some((amp, fr, fc, pr, pc)) = textures[layer_of[[i, j]]] {
                let tau = std::f64::consts::TAU;
                clean[[i, j]] += amp
                    * (tau * fr * i as f64 / h as f64 + pr).sin()
                    * (tau * fc * j as f64 / w as f64 + pc).cos();
            }
        }
    }

    match config.class_label {
        0 => {}
        1 => {
            // Bright round lesions confined to the middle band region.
            let n_blobs = rng.random_range(4..7);
            for _ in 0..n_blobs {
                let ci = rng.random_range(0.35 * h as f64..0.75 * h as f64);
                let cj = rng.random_range(0.1 * w as f64..0.9 * w as f64);
                let sigma = rng.random_range(0.04..0.055) * h.min(w) as f64;
                for i in 0..h {
                    for j in 0..w {
                        let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                        clean[[i, j]] += BLOB_GAIN * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
            clean.mapv_inplace(|v| v.min(CLEAN_MAX));
        }
        2 => {
            // Middle band broken up by strips at the intensity of the
            // band above it, covering roughly 40% of the width.
            // num_layers >= 2 guarantees band >= 1.
            let band = config.num_layers / 2;
            let fill = intensities[band - 1];
            for _ in 0..4 {
                let strip_w = (rng.random_range(0.08..0.14) * w as f64).round() as usize;
                let start = rng.random_range(0..w.saturating_sub(strip_w).max(1));
                for i in 0..h {
                    for j in start..(start + strip_w).min(w) {
                        if layer_of[[i, j]] == band {
                            clean[[i, j]] = fill;
                        }
                    }
                }
            }
        }
        _ => unreachable!("validated"),
    }

    let clean = ImageTensor::new(clean)?;
    // Speckle with the correlation length of a resolution cell wider than
    // one pixel: each multiplier sums four Gamma(0.21875 L, 1/L) sub-grains
    // from an overlapping 2x2 lattice plus an own Gamma(0.125 L, 1/L) term.
    // Gammas at a common scale add, so the per-pixel marginal is still
    // exactly Gamma(L, 1/L) with mean 1, while adjacent pixels share two
    // sub-grains (lag-1 correlation 0.4375) instead of being white.
    let sub = Gamma::new(0.21875 * config.speckle_looks, 1.0 / config.speckle_looks)
        .map_err(|e| CoreError::InvalidConfig(format!("speckle distribution: {e}")))?;
    let own = Gamma::new(0.125 * config.speckle_looks, 1.0 / config.speckle_looks)
        .map_err(|e| CoreError::InvalidConfig(format!("speckle distribution: {e}")))?;
    let mut grains = Array2::<f64>::zeros((h + 1, w + 1));
    for g in grains.iter_mut() {
        *g = sub.sample(&mut rng);
    }
    let mut noisy_data = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let m = grains[[i, j]]
                + grains[[i + 1, j]]
                + grains[[i, j + 1]]
                + grains[[i + 1, j + 1]]
                + own.sample(&mut rng);
            noisy_data[[i, j]] = (clean.data()[[i, j]] * m).clamp(0.0, 1.0);
        }
    }
    let noisy = ImageTensor::new(noisy_data)?;
    Ok((clean, noisy, config.class_label))
}

/// Fractional ROI layout matched to the 5-layer band plan: background in
/// the top dark band, foregrounds in the two bright bands, textures in
/// the mid and bottom bands. Uniform ROIs keep at least a wobble's margin
/// from every boundary; the edge ROIs instead hug one boundary each,
/// wide enough to contain it at full wobble and little more, so edge
/// statistics are not diluted by in-band rows.
pub fn standard_rois(height: usize, width: usize) -> Result<Vec<Roi>> {
    let row = |f: f64| (f * height as f64).round() as usize;
    let col = |f: f64| (f * width as f64).round() as usize;
    let (l, r) = (col(0.1), col(0.9));
    let spec: [(&str, RoiPurpose, f64, f64); 7] = [
        ("background_top", RoiPurpose::Background, 0.03, 0.16),
        ("foreground_upper", RoiPurpose::Foreground, 0.24, 0.36),
        ("foreground_lower", RoiPurpose::Foreground, 0.64, 0.76),
        ("texture_mid", RoiPurpose::Texture, 0.44, 0.56),
        ("texture_bottom", RoiPurpose::Texture, 0.84, 0.97),
        ("edge_lower", RoiPurpose::Edge, 0.56, 0.64),
        ("edge_upper", RoiPurpose::Edge, 0.16, 0.24),
    ];
    let rois = spec
        .iter()
        .map(|&(name, purpose, top, bottom)| {
            let roi = Roi::new(name.to_string(), purpose, row(top), l, row(bottom), r)?;
            roi.check_bounds(height, width)?;
            Ok(roi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rois)
}

/// Write a labelled dataset: `noisy/` and `clean/` image pairs sharing
/// filenames, `manifest.json` over the noisy files, and `rois.json`.
/// Image seeds derive from (base seed, class, index); the base config's
/// own class and seed fields are ignored.
pub fn generate_manifest(
    n_per_class: usize,
    base_config: &PhantomConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_per_class == 0 {
        return Err(CoreError::InvalidConfig(
            "need at least one phantom per class".into(),
        ));
    }
    let noisy_dir = out_dir.join("noisy");
    let clean_dir = out_dir.join("clean");
    fs::create_dir_all(&noisy_dir).map_err(|e| CoreError::io(&noisy_dir, e))?;
    fs::create_dir_all(&clean_dir).map_err(|e| CoreError::io(&clean_dir, e))?;

    let mut records = Vec::with_capacity(NUM_CLASSES * n_per_class);
    for class in 0..NUM_CLASSES as u8 {
        for index in 0..n_per_class {
            let config = PhantomConfig {
                class_label: class,
                seed: derive_seed2(base_config.seed, class as u64, index as u64),
                ..*base_config
            };
            let (clean, noisy, label) = generate(&config)?;
            let file = format!("class{class}_{index:04}.f32");
            noisy.save(&noisy_dir.join(&file))?;
            clean.save(&clean_dir.join(&file))?;
            records.push(ManifestRecord {
                path: format!("noisy/{file}"),
                label,
                subject: format!("c{class}_s{:03}", index / 3),
            });
        }
    }

    save_rois(
        &standard_rois(base_config.height, base_config.width)?,
        &out_dir.join("rois.json"),
    )?;
    let manifest = DatasetManifest::new(records, out_dir.to_path_buf())?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
