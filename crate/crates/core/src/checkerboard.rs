//! Checkerboard blind-spot construction and dual-prediction fusion.
//!
//! The pixel grid is 2-colored by `(row + col) mod 2`. Blinding one color
//! class hides every pixel of that parity while leaving the full set of
//! opposite-parity neighbors intact, so a network can predict each hidden
//! pixel from context all around it without ever seeing its own value.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::image::ImageTensor;

/// Checkerboard color class: pixel `(i,j)` is `Even` iff `(i+j) mod 2 == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    /// Parity of the pixel at `(row, col)`.
    pub fn of(row: usize, col: usize) -> Parity {
        if (row + col) % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn opposite(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
        }
    }
}

/// An image with one parity class hidden behind neighbor-mean fill.
#[derive(Debug, Clone)]
pub struct BlindedImage {
    pub image: ImageTensor,
    /// Which parity class was removed and refilled.
    pub blinded: Parity,
}

/// All coordinates of the given parity in an `height`×`width` grid,
/// row-major order.
///
/// The two parity sets partition the grid; `|Even| = ceil(H*W / 2)`.
pub fn blinded_positions(height: usize, width: usize, parity: Parity) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(height * width / 2 + 1);
    for i in 0..height {
        for j in 0..width {
            if Parity::of(i, j) == parity {
                out.push((i, j));
            }
        }
    }
    out
}

/// Replace every pixel of `parity` with the arithmetic mean of its valid
/// 4-neighbors; pixels of the opposite parity are copied unchanged.
///
/// All 4-neighbors of a blinded pixel have the opposite parity, so the fill
/// never reads another hidden value. A pixel with no neighbors (1×1 image)
/// keeps its value.
pub fn make_blind(img: &ImageTensor, parity: Parity) -> BlindedImage {
    let (h, w) = img.shape();
    let src = img.data();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] = if Parity::of(i, j) == parity {
                neighbor_mean(src, i, j).unwrap_or(src[[i, j]])
            } else {
                src[[i, j]]
            };
        }
    }
    BlindedImage {
        image: ImageTensor::new(out).expect("blind fill of finite image is finite"),
        blinded: parity,
    }
}

fn neighbor_mean(src: &Array2<f64>, i: usize, j: usize) -> Option<f64> {
    let (h, w) = (src.nrows(), src.ncols());
    let mut sum = 0.0;
    let mut count = 0usize;
    if i > 0 {
        sum += src[[i - 1, j]];
        count += 1;
    }
    if i + 1 < h {
        sum += src[[i + 1, j]];
        count += 1;
    }
    if j > 0 {
        sum += src[[i, j - 1]];
        count += 1;
    }
    if j + 1 < w {
        sum += src[[i, j + 1]];
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Assemble the final image by routing each pixel from the predictor that
/// was blinded there: odd pixels from `pred_for_odd`, even pixels from
/// `pred_for_even`.
pub fn fuse(pred_for_odd: &ImageTensor, pred_for_even: &ImageTensor) -> Result<ImageTensor> {
    if pred_for_odd.shape() != pred_for_even.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", pred_for_odd.shape()),
            actual: format!("{:?}", pred_for_even.shape()),
        });
    }
    let (h, w) = pred_for_odd.shape();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] = match Parity::of(i, j) {
                Parity::Odd => pred_for_odd.get(i, j),
                Parity::Even => pred_for_even.get(i, j),
            };
        }
    }
    ImageTensor::new(out)
}
