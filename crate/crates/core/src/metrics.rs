//! Denoising quality indices over named regions of interest.
//!
//! CNR and MSR look at one image; TP and EP compare a processed image
//! against the noisy original. Per-ROI values are kept alongside the
//! mean and population spread across ROIs so reports can show both.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::{ImageTensor, Roi, RoiPurpose};

/// Mean and population (divide-by-n) standard deviation of a region.
/// Population form keeps the self-identities exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStats {
    pub mean: f64,
    pub std: f64,
}

pub fn region_stats(img: &ImageTensor, roi: &Roi) -> Result<RegionStats> {
    roi.check_bounds(img.height(), img.width())?;
    let patch = img.crop(roi)?;
    let data = patch.data();
    let n = data.len() as f64;
    let mean = data.sum() / n;
    let var = data.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(RegionStats {
        mean,
        std: var.sqrt(),
    })
}

/// One metric value attributed to a named ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiValue {
    pub roi: String,
    pub value: f64,
}

/// Per-ROI values with their mean and population std across ROIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub per_roi: Vec<RoiValue>,
}

impl MetricSummary {
    fn from_values(values: Vec<RoiValue>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().map(|v| v.value).sum::<f64>() / n;
        let var = values
            .iter()
            .map(|v| (v.value - mean) * (v.value - mean))
            .sum::<f64>()
            / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
            per_roi: values,
        }
    }
}

/// `10 * log10(linear)` decibel conversion shared by CNR and PSNR.
pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

fn cnr_single(img: &ImageTensor, fg: &Roi, bg: &RegionStats) -> Result<f64> {
    let f = region_stats(img, fg)?;
    let denom = (0.5 * (f.std * f.std + bg.std * bg.std)).sqrt();
    if denom == 0.0 {
        return Err(CoreError::Metric(format!(
            "zero denominator for CNR in ROI '{}'",
            fg.name
        )));
    }
    if f.mean == bg.mean {
        return Err(CoreError::Metric(format!(
            "zero contrast between ROI '{}' and background",
            fg.name
        )));
    }
    Ok((f.mean - bg.mean).abs() / denom)
}

/// Contrast-to-noise ratio of each foreground ROI against one background
/// ROI, in linear form. Decibels are `to_db` of the linear value.
pub fn cnr(img: &ImageTensor, fg_rois: &[Roi], bg_roi: &Roi) -> Result<MetricSummary> {
    if fg_rois.is_empty() {
        return Err(CoreError::Metric("CNR needs at least one foreground ROI".into()));
    }
    let bg = region_stats(img, bg_roi)?;
    let values = fg_rois
        .iter()
        .map(|fg| {
            Ok(RoiValue {
                roi: fg.name.clone(),
                value: cnr_single(img, fg, &bg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSummary::from_values(values))
}

/// Mean-to-standard-deviation ratio of each foreground ROI.
pub fn msr(img: &ImageTensor, fg_rois: &[Roi]) -> Result<MetricSummary> {
    if fg_rois.is_empty() {
        return Err(CoreError::Metric("MSR needs at least one foreground ROI".into()));
    }
    let values = fg_rois
        .iter()
        .map(|fg| {
            let s = region_stats(img, fg)?;
            if s.std == 0.0 {
                return Err(CoreError::Metric(format!(
                    "zero standard deviation in ROI '{}'",
                    fg.name
                )));
            }
            Ok(RoiValue {
                roi: fg.name.clone(),
                value: s.mean / s.std,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSummary::from_values(values))
}

/// Texture preservation: `(var_den / var_noisy) * sqrt(mean_den / mean_noisy)`
/// per texture ROI. Equals 1 exactly when `denoised == noisy`.
pub fn tp(denoised: &ImageTensor, noisy: &ImageTensor, texture_rois: &[Roi]) -> Result<MetricSummary> {
    if denoised.shape() != noisy.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", noisy.shape()),
            actual: format!("{:?}", denoised.shape()),
        });
    }
    if texture_rois.is_empty() {
        return Err(CoreError::Metric("TP needs at least one texture ROI".into()));
    }
    let values = texture_rois
        .iter()
        .map(|roi| {
            let d = region_stats(denoised, roi)?;
            let n = region_stats(noisy, roi)?;
            if n.std == 0.0 {
                return Err(CoreError::Metric(format!(
                    "zero noisy variance in ROI '{}'",
                    roi.name
                )));
            }
            if n.mean <= 0.0 {
                return Err(CoreError::Metric(format!(
                    "non-positive noisy mean in ROI '{}'",
                    roi.name
                )));
            }
            let ratio = d.mean / n.mean;
            if ratio < 0.0 {
                return Err(CoreError::Metric(format!(
                    "negative mean ratio in ROI '{}'",
                    roi.name
                )));
            }
            Ok(RoiValue {
                roi: roi.name.clone(),
                value: (d.std * d.std) / (n.std * n.std) * ratio.sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSummary::from_values(values))
}

/// 5-point Laplacian over the ROI interior (the ROI shrunk by one pixel
/// on each side, so every stencil stays inside the ROI).
fn laplacian(img: &ImageTensor, roi: &Roi) -> Result<Array2<f64>> {
    if roi.rows() < 3 || roi.cols() < 3 {
        return Err(CoreError::Metric(format!(
            "edge ROI '{}' must span at least 3x3 pixels",
            roi.name
        )));
    }
    let patch = img.crop(roi)?;
    let p = patch.data();
    let (h, w) = (roi.rows(), roi.cols());
    let mut out = Array2::zeros((h - 2, w - 2));
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            out[[i - 1, j - 1]] = p[[i - 1, j]] + p[[i + 1, j]] + p[[i, j - 1]] + p[[i, j + 1]]
                - 4.0 * p[[i, j]];
        }
    }
    Ok(out)
}

/// Edge preservation: Pearson correlation of the mean-subtracted
/// Laplacians of the two images over each edge ROI. In [-1, 1], and 1
/// exactly when `denoised == noisy`.
pub fn ep(denoised: &ImageTensor, noisy: &ImageTensor, edge_rois: &[Roi]) -> Result<MetricSummary> {
    if denoised.shape() != noisy.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", noisy.shape()),
            actual: format!("{:?}", denoised.shape()),
        });
    }
    if edge_rois.is_empty() {
        return Err(CoreError::Metric("EP needs at least one edge ROI".into()));
    }
    let values = edge_rois
        .iter()
        .map(|roi| {
            let mut ld = laplacian(denoised, roi)?;
            let mut ln = laplacian(noisy, roi)?;
            let nd = ld.len() as f64;
            let md = ld.sum() / nd;
            let mn = ln.sum() / nd;
            ld.mapv_inplace(|v| v - md);
            ln.mapv_inplace(|v| v - mn);
            let cross = ld.iter().zip(ln.iter()).map(|(&a, &b)| a * b).sum::<f64>();
            let ss_d = ld.iter().map(|&a| a * a).sum::<f64>();
            let ss_n = ln.iter().map(|&b| b * b).sum::<f64>();
            if ss_d == 0.0 || ss_n == 0.0 {
                return Err(CoreError::Metric(format!(
                    "constant Laplacian in ROI '{}'",
                    roi.name
                )));
            }
            Ok(RoiValue {
                roi: roi.name.clone(),
                value: cross / (ss_d * ss_n).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSummary::from_values(values))
}

/// Peak signal-to-noise ratio in dB against a [0,1] reference; auxiliary
/// index used by the synthetic-data acceptance checks, not a headline metric.
pub fn psnr(img: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    if img.shape() != reference.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", reference.shape()),
            actual: format!("{:?}", img.shape()),
        });
    }
    let n = (img.height() * img.width()) as f64;
    let mse = img
        .data()
        .iter()
        .zip(reference.data().iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Err(CoreError::Metric("identical images have infinite PSNR".into()));
    }
    Ok(to_db(1.0 / mse))
}

/// The ROI collection a full evaluation needs: exactly one background,
/// at least one each of foreground, texture, and edge.
#[derive(Debug, Clone)]
pub struct RoiSet {
    rois: Vec<Roi>,
}

impl RoiSet {
    pub fn new(rois: Vec<Roi>) -> Result<Self> {
        let set = RoiSet { rois };
        if set.foreground().is_empty() {
            return Err(CoreError::Metric("ROI set has no foreground region".into()));
        }
        if set.by_purpose(RoiPurpose::Background).len() != 1 {
            return Err(CoreError::Metric(
                "ROI set must have exactly one background region".into(),
            ));
        }
        if set.texture().is_empty() {
            return Err(CoreError::Metric("ROI set has no texture region".into()));
        }
        if set.edge().is_empty() {
            return Err(CoreError::Metric("ROI set has no edge region".into()));
        }
        Ok(set)
    }

    pub fn rois(&self) -> &[Roi] {
        &self.rois
    }

    fn by_purpose(&self, purpose: RoiPurpose) -> Vec<Roi> {
        self.rois
            .iter()
            .filter(|r| r.purpose == purpose)
            .cloned()
            .collect()
    }

    pub fn foreground(&self) -> Vec<Roi> {
        self.by_purpose(RoiPurpose::Foreground)
    }

    pub fn background(&self) -> Roi {
        self.by_purpose(RoiPurpose::Background)
            .into_iter()
            .next()
            .expect("validated at construction")
    }

    pub fn texture(&self) -> Vec<Roi> {
        self.by_purpose(RoiPurpose::Texture)
    }

    pub fn edge(&self) -> Vec<Roi> {
        self.by_purpose(RoiPurpose::Edge)
    }
}

/// All four indices for one image. `cnr_db` converts the mean linear
/// ratio, so the dB column always equals 10*log10 of the linear column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cnr_linear: f64,
    pub cnr_db: f64,
    pub msr: f64,
    pub tp: f64,
    pub ep: f64,
    pub cnr: MetricSummary,
    pub msr_summary: MetricSummary,
    pub tp_summary: MetricSummary,
    pub ep_summary: MetricSummary,
}

/// Evaluate `image` against the noisy original. Passing the noisy image
/// as both arguments yields the reference row: TP = EP = 1 exactly.
pub fn evaluate(image: &ImageTensor, noisy: &ImageTensor, rois: &RoiSet) -> Result<MetricReport> {
    let cnr_summary = cnr(image, &rois.foreground(), &rois.background())?;
    let msr_summary = msr(image, &rois.foreground())?;
    let tp_summary = tp(image, noisy, &rois.texture())?;
    let ep_summary = ep(image, noisy, &rois.edge())?;
    Ok(MetricReport {
        cnr_linear: cnr_summary.mean,
        cnr_db: to_db(cnr_summary.mean),
        msr: msr_summary.mean,
        tp: tp_summary.mean,
        ep: ep_summary.mean,
        cnr: cnr_summary,
        msr_summary,
        tp_summary,
        ep_summary,
    })
}

/// Aligned text table with one row per labelled report.
pub fn format_table(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::new();
    let name_width = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap_or(6);
    out.push_str(&format!(
        "{:<name_width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "method", "CNR", "CNR(dB)", "MSR", "TP", "EP"
    ));
    for (name, report) in rows {
        out.push_str(&format!(
            "{:<name_width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}\n",
            name, report.cnr_linear, report.cnr_db, report.msr, report.tp, report.ep
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn roi(name: &str, purpose: RoiPurpose, top: usize, left: usize, bottom: usize, right: usize) -> Roi {
        Roi::new(name.to_string(), purpose, top, left, bottom, right).unwrap()
    }

    fn image_from(values: &[f64], h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_vec(h, w, values.to_vec()).unwrap()
    }

    #[test]
    fn stats_constant_region() {
        let img = ImageTensor::constant(4, 4, 0.3).unwrap();
        let r = roi("r", RoiPurpose::Foreground, 0, 0, 4, 4);
        let s = region_stats(&img, &r).unwrap();
        assert_eq!(s.mean, 0.3);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn stats_one_to_four() {
        let img = image_from(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let r = roi("r", RoiPurpose::Foreground, 0, 0, 2, 2);
        let s = region_stats(&img, &r).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_abs_diff_eq!(s.std, 1.118033988749895, epsilon = 1e-15);
    }

    #[test]
    fn stats_binary_region() {
        let img = image_from(&[0.0, 0.0, 1.0, 1.0], 2, 2);
        let r = roi("r", RoiPurpose::Foreground, 0, 0, 2, 2);
        let s = region_stats(&img, &r).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.std, 0.5);
    }

    #[test]
    fn cnr_hand_example() {
        // fg {1,2,3,4} over bg {0,0,1,1}: r = 2/sqrt(0.5*(1.25+0.25))
        let img = image_from(&[1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 1.0, 1.0], 2, 4);
        let fg = roi("fg", RoiPurpose::Foreground, 0, 0, 2, 2);
        let bg = roi("bg", RoiPurpose::Background, 0, 2, 2, 4);
        let out = cnr(&img, &[fg], &bg).unwrap();
        assert_abs_diff_eq!(out.mean, 2.3094010767585030, epsilon = 1e-14);
        assert_abs_diff_eq!(to_db(out.mean), 3.6349936396813117, epsilon = 1e-13);
    }

    #[test]
    fn cnr_zero_contrast_errors() {
        let img = image_from(&[0.0, 1.0, 1.0, 0.0], 1, 4);
        let fg = roi("fg", RoiPurpose::Foreground, 0, 0, 1, 2);
        let bg = roi("bg", RoiPurpose::Background, 0, 2, 1, 4);
        let err = cnr(&img, &[fg], &bg).unwrap_err();
        assert!(err.to_string().contains("zero contrast"));
    }

    #[test]
    fn cnr_zero_denominator_errors() {
        let img = image_from(&[0.2, 0.2, 0.8, 0.8], 1, 4);
        let fg = roi("fg", RoiPurpose::Foreground, 0, 0, 1, 2);
        let bg = roi("bg", RoiPurpose::Background, 0, 2, 1, 4);
        let err = cnr(&img, &[fg], &bg).unwrap_err();
        assert!(err.to_string().contains("zero denominator"));
    }

    #[test]
    fn cnr_shift_invariant() {
        let base = image_from(&[0.1, 0.3, 0.2, 0.05, 0.5, 0.6, 0.15, 0.1], 2, 4);
        let shifted =
            ImageTensor::new(base.data().mapv(|v| v + 0.1)).unwrap();
        let fg = roi("fg", RoiPurpose::Foreground, 0, 0, 2, 2);
        let bg = roi("bg", RoiPurpose::Background, 0, 2, 2, 4);
        let a = cnr(&base, &[fg.clone()], &bg).unwrap();
        let b = cnr(&shifted, &[fg], &bg).unwrap();
        assert_abs_diff_eq!(a.mean, b.mean, epsilon = 1e-12);
    }

    #[test]
    fn msr_hand_example() {
        let img = image_from(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let fg = roi("fg", RoiPurpose::Foreground, 0, 0, 2, 2);
        let out = msr(&img, &[fg]).unwrap();
        assert_abs_diff_eq!(out.mean, 2.23606797749979, epsilon = 1e-14);
    }

    #[test]
    fn msr_constant_errors() {
        let img = ImageTensor::constant(2, 2, 0.4).unwrap();
        let fg = roi("fg", RoiPurpose::Foreground, 0, 0, 2, 2);
        let err = msr(&img, &[fg]).unwrap_err();
        assert!(err.to_string().contains("zero standard deviation"));
    }

    #[test]
    fn msr_scale_invariant() {
        let img = image_from(&[0.1, 0.3, 0.2, 0.4], 2, 2);
        let scaled = ImageTensor::new(img.data().mapv(|v| v * 2.0)).unwrap();
        let fg = roi("fg", RoiPurpose::Foreground, 0, 0, 2, 2);
        let a = msr(&img, &[fg.clone()]).unwrap();
        let b = msr(&scaled, &[fg]).unwrap();
        assert_abs_diff_eq!(a.mean, b.mean, epsilon = 1e-12);
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
        let data: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        ImageTensor::from_vec(h, w, data).unwrap()
    }

    #[test]
    fn tp_self_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_image(&mut rng, 8, 8);
        let t = roi("t", RoiPurpose::Texture, 1, 1, 7, 7);
        let out = tp(&img, &img, &[t]).unwrap();
        assert_eq!(out.mean, 1.0);
        assert_eq!(out.std, 0.0);
    }

    #[test]
    fn tp_scaling_algebra() {
        // denoised = 4*noisy: variance ratio 16, mean ratio sqrt 2
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let noisy = random_image(&mut rng, 8, 8);
        let denoised = ImageTensor::new(noisy.data().mapv(|v| 4.0 * v)).unwrap();
        let t = roi("t", RoiPurpose::Texture, 0, 0, 8, 8);
        let out = tp(&denoised, &noisy, &[t]).unwrap();
        assert_abs_diff_eq!(out.mean, 32.0, epsilon = 1e-10);
    }

    #[test]
    fn tp_constant_denoised_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let noisy = random_image(&mut rng, 6, 6);
        let denoised = ImageTensor::constant(6, 6, 0.5).unwrap();
        let t = roi("t", RoiPurpose::Texture, 0, 0, 6, 6);
        let out = tp(&denoised, &noisy, &[t]).unwrap();
        assert_eq!(out.mean, 0.0);
    }

    #[test]
    fn tp_constant_noisy_errors() {
        let noisy = ImageTensor::constant(6, 6, 0.5).unwrap();
        let t = roi("t", RoiPurpose::Texture, 0, 0, 6, 6);
        assert!(tp(&noisy, &noisy, &[t]).is_err());
    }

    #[test]
    fn ep_self_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let img = random_image(&mut rng, 10, 10);
        let e = roi("e", RoiPurpose::Edge, 0, 0, 10, 10);
        let out = ep(&img, &img, &[e]).unwrap();
        assert_eq!(out.mean, 1.0);
    }

    #[test]
    fn ep_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let noisy = random_image(&mut rng, 10, 10);
        let denoised = ImageTensor::new(noisy.data().mapv(|v| 0.5 * v + 0.2)).unwrap();
        let e = roi("e", RoiPurpose::Edge, 1, 1, 9, 9);
        let out = ep(&denoised, &noisy, &[e]).unwrap();
        assert_abs_diff_eq!(out.mean, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ep_negation_flips_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let noisy = random_image(&mut rng, 10, 10);
        let denoised = ImageTensor::new(noisy.data().mapv(|v| -v)).unwrap();
        let e = roi("e", RoiPurpose::Edge, 0, 0, 10, 10);
        let out = ep(&denoised, &noisy, &[e]).unwrap();
        assert_abs_diff_eq!(out.mean, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn ep_small_roi_errors() {
        let img = ImageTensor::constant(8, 8, 0.5).unwrap();
        let e = roi("e", RoiPurpose::Edge, 0, 0, 2, 8);
        assert!(ep(&img, &img, &[e]).is_err());
    }

    #[test]
    fn ep_constant_laplacian_errors() {
        // linear ramp has identically zero Laplacian
        let data = Array2::from_shape_fn((6, 6), |(i, _)| i as f64 * 0.1);
        let img = ImageTensor::new(data).unwrap();
        let e = roi("e", RoiPurpose::Edge, 0, 0, 6, 6);
        let err = ep(&img, &img, &[e]).unwrap_err();
        assert!(err.to_string().contains("constant Laplacian"));
    }

    #[test]
    fn psnr_known_mse() {
        // uniform error 0.1: mse = 0.01, psnr = 20 dB
        let a = ImageTensor::constant(4, 4, 0.5).unwrap();
        let b = ImageTensor::constant(4, 4, 0.6).unwrap();
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn psnr_identical_errors() {
        let a = ImageTensor::constant(4, 4, 0.5).unwrap();
        assert!(psnr(&a, &a).is_err());
    }

    fn full_roi_set() -> RoiSet {
        RoiSet::new(vec![
            roi("fg1", RoiPurpose::Foreground, 0, 0, 6, 6),
            roi("fg2", RoiPurpose::Foreground, 6, 6, 12, 12),
            roi("bg", RoiPurpose::Background, 0, 6, 6, 12),
            roi("tex", RoiPurpose::Texture, 6, 0, 12, 6),
            roi("edge", RoiPurpose::Edge, 3, 3, 9, 9),
        ])
        .unwrap()
    }

    #[test]
    fn roi_set_requires_single_background() {
        let rois = vec![
            roi("fg", RoiPurpose::Foreground, 0, 0, 4, 4),
            roi("t", RoiPurpose::Texture, 0, 0, 4, 4),
            roi("e", RoiPurpose::Edge, 0, 0, 4, 4),
        ];
        assert!(RoiSet::new(rois).is_err());
    }

    #[test]
    fn report_db_column_matches_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noisy = random_image(&mut rng, 12, 12);
        let report = evaluate(&noisy, &noisy, &full_roi_set()).unwrap();
        assert_eq!(report.tp, 1.0);
        assert_eq!(report.ep, 1.0);
        assert_abs_diff_eq!(report.cnr_db, to_db(report.cnr_linear), epsilon = 1e-14);
        assert_eq!(report.cnr.per_roi.len(), 2);
    }

    #[test]
    fn table_has_header_and_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let noisy = random_image(&mut rng, 12, 12);
        let report = evaluate(&noisy, &noisy, &full_roi_set()).unwrap();
        let table = format_table(&[("noisy".to_string(), report)]);
        let mut lines = table.lines();
        assert!(lines.next().unwrap().starts_with("method"));
        assert!(lines.next().unwrap().starts_with("noisy"));
        assert!(table.contains("CNR(dB)"));
    }

    // Brute-force oracles written independently of the implementations above.
    mod oracle {
        use super::super::*;

        pub fn stats(img: &ImageTensor, r: &Roi) -> (f64, f64) {
            let mut vals = Vec::new();
            for i in r.top..r.bottom {
                for j in r.left..r.right {
                    vals.push(img.get(i, j));
                }
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        }

        pub fn cnr(img: &ImageTensor, fg: &Roi, bg: &Roi) -> f64 {
            let (mf, sf) = stats(img, fg);
            let (mb, sb) = stats(img, bg);
            (mf - mb).abs() / (0.5 * (sf * sf + sb * sb)).sqrt()
        }

        pub fn msr(img: &ImageTensor, fg: &Roi) -> f64 {
            let (m, s) = stats(img, fg);
            m / s
        }

        pub fn tp(den: &ImageTensor, noisy: &ImageTensor, r: &Roi) -> f64 {
            let (md, sd) = stats(den, r);
            let (mn, sn) = stats(noisy, r);
            (sd * sd) / (sn * sn) * (md / mn).sqrt()
        }

        pub fn ep(den: &ImageTensor, noisy: &ImageTensor, r: &Roi) -> f64 {
            let lap = |img: &ImageTensor| {
                let mut vals = Vec::new();
                for i in r.top + 1..r.bottom - 1 {
                    for j in r.left + 1..r.right - 1 {
                        vals.push(
                            img.get(i - 1, j) + img.get(i + 1, j) + img.get(i, j - 1)
                                + img.get(i, j + 1)
                                - 4.0 * img.get(i, j),
                        );
                    }
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.into_iter().map(|v| v - mean).collect::<Vec<_>>()
            };
            let a = lap(den);
            let b = lap(noisy);
            let cross: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let sa: f64 = a.iter().map(|x| x * x).sum();
            let sb: f64 = b.iter().map(|x| x * x).sum();
            cross / (sa * sb).sqrt()
        }
    }

    proptest! {
        #[test]
        fn metrics_match_bruteforce_oracle(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let den = random_image(&mut rng, 16, 16);
            let noisy = random_image(&mut rng, 16, 16);
            let fg = roi("fg", RoiPurpose::Foreground, 1, 2, 9, 10);
            let bg = roi("bg", RoiPurpose::Background, 9, 2, 15, 10);
            let tex = roi("t", RoiPurpose::Texture, 2, 10, 10, 16);
            let edge = roi("e", RoiPurpose::Edge, 4, 4, 12, 12);

            let c = cnr(&den, std::slice::from_ref(&fg), &bg).unwrap().mean;
            prop_assert!((c - oracle::cnr(&den, &fg, &bg)).abs() < 1e-12);

            let m = msr(&den, std::slice::from_ref(&fg)).unwrap().mean;
            prop_assert!((m - oracle::msr(&den, &fg)).abs() < 1e-12);

            let t = tp(&den, &noisy, std::slice::from_ref(&tex)).unwrap().mean;
            prop_assert!((t - oracle::tp(&den, &noisy, &tex)).abs() < 1e-12);

            let e = ep(&den, &noisy, std::slice::from_ref(&edge)).unwrap().mean;
            prop_assert!((e - oracle::ep(&den, &noisy, &edge)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&e));
        }
    }
}
