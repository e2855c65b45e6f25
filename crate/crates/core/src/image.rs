//! Image and dataset representation with deterministic file I/O.
//!
//! Two on-disk formats are supported:
//! - binary PGM (`P5`, 8-bit, maxval 255), intensities mapped to `[0,1]` by `v/255`
//! - raw little-endian `f32` (`.f32`) with a JSON sidecar `{"height":H,"width":W}`
//!   at `<path>.json`
//!
//! Dataset manifests are JSON arrays of `{"path", "label", "subject"}` records;
//! relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// H×W grayscale raster with real-valued intensities, row-major.
///
/// Values are always finite; file loads and network outputs additionally
/// keep them in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array2<f64>,
}

impl ImageTensor {
    /// Wrap a 2-D array, checking that every value is finite.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(CoreError::InvalidConfig(
                "image dimensions must be positive".into(),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFiniteIntensity { index });
        }
        Ok(Self { data })
    }

    /// Build from a row-major vector of length `height * width`.
    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((height, width), values).map_err(|_| {
            CoreError::ShapeMismatch {
                expected: format!("{height}x{width} values"),
                actual: "vector of different length".into(),
            }
        })?;
        Self::new(data)
    }

    /// Constant-valued image.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[[row, col]]
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// True when every intensity lies in `[0,1]`.
    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    fn ensure_unit_range(&self) -> Result<()> {
        for (index, &value) in self.data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(CoreError::IntensityOutOfRange { index, value });
            }
        }
        Ok(())
    }

    /// Load an image, dispatching on the file extension (`.pgm` or `.f32`).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match extension(path) {
            Some("pgm") => load_pgm(path),
            Some("f32") => load_raw_f32(path),
            _ => Err(CoreError::UnsupportedFormat(path.to_path_buf())),
        }
    }

    /// Save an image, dispatching on the file extension.
    ///
    /// PGM output quantizes by `round(v * 255)`; `.f32` output writes raw
    /// little-endian f32 plus the JSON sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.ensure_unit_range()?;
        match extension(path) {
            Some("pgm") => save_pgm(self, path),
            Some("f32") => save_raw_f32(self, path),
            _ => Err(CoreError::UnsupportedFormat(path.to_path_buf())),
        }
    }

    /// Copy out the sub-image covered by `roi`.
    pub fn crop(&self, roi: &Roi) -> Result<ImageTensor> {
        roi.check_bounds(self.height(), self.width())?;
        let view = self
            .data
            .slice(ndarray::s![roi.top..roi.bottom, roi.left..roi.right]);
        ImageTensor::new(view.to_owned())
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

/// Purpose tag for a region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiPurpose {
    Foreground,
    Background,
    Texture,
    Edge,
}

/// Named rectangular region with half-open row/col intervals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub name: String,
    pub purpose: RoiPurpose,
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Roi {
    pub fn new(
        name: impl Into<String>,
        purpose: RoiPurpose,
        top: usize,
        left: usize,
        bottom: usize,
        right: usize,
    ) -> Result<Self> {
        let roi = Roi {
            name: name.into(),
            purpose,
            top,
            left,
            bottom,
            right,
        };
        roi.validate()?;
        Ok(roi)
    }

    fn validate(&self) -> Result<()> {
        if self.top >= self.bottom || self.left >= self.right {
            return Err(CoreError::InvalidRoi {
                name: self.name.clone(),
                detail: "rectangle is empty or inverted".into(),
            });
        }
        if self.area() < 2 {
            return Err(CoreError::InvalidRoi {
                name: self.name.clone(),
                detail: "area must be at least 2 pixels".into(),
            });
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.bottom - self.top
    }

    pub fn cols(&self) -> usize {
        self.right - self.left
    }

    pub fn area(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Check that the rectangle fits inside an `height`×`width` image.
    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if self.bottom > height || self.right > width {
            return Err(CoreError::RoiOutOfBounds {
                name: self.name.clone(),
                height,
                width,
            });
        }
        Ok(())
    }
}

/// Load a JSON array of ROIs from a file.
pub fn load_rois(path: impl AsRef<Path>) -> Result<Vec<Roi>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let rois: Vec<Roi> = serde_json::from_str(&text)?;
    for roi in &rois {
        roi.validate()?;
    }
    Ok(rois)
}

/// Save a JSON array of ROIs.
pub fn save_rois(rois: &[Roi], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(rois)?;
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

/// One dataset record: an image path with its class label and subject id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub path: String,
    pub label: u8,
    pub subject: String,
}

/// List of (image path, class label, subject) records.
///
/// Labels are restricted to `{0,1,2}` and paths must be unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
    /// Directory relative paths resolve against (the manifest's directory).
    base_dir: PathBuf,
}

pub const NUM_CLASSES: usize = 3;

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for rec in &records {
            if rec.label as usize >= NUM_CLASSES {
                return Err(CoreError::InvalidManifest(format!(
                    "label {} outside {{0,1,2}} for path {}",
                    rec.label, rec.path
                )));
            }
            if !seen.insert(rec.path.as_str()) {
                return Err(CoreError::InvalidManifest(format!(
                    "duplicate path {}",
                    rec.path
                )));
            }
        }
        Ok(Self {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let records: Vec<ManifestRecord> = serde_json::from_str(&text)?;
        let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Self::new(records, base_dir)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.records)?;
        fs::write(path, text).map_err(|e| CoreError::io(path, e))
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Absolute path of one record's image.
    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Load every referenced image into memory, in record order.
    pub fn load_images(&self) -> Result<Vec<(ImageTensor, u8, String)>> {
        self.records
            .iter()
            .map(|rec| {
                let img = ImageTensor::load(self.resolve(rec))?;
                Ok((img, rec.label, rec.subject.clone()))
            })
            .collect()
    }
}

// --- PGM (P5, 8-bit) ---

fn load_pgm(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let (header, consumed) = parse_pgm_header(&bytes)
        .map_err(|detail| CoreError::malformed(format!("PGM {}", path.display()), detail))?;
    let (width, height, maxval) = header;
    if maxval > 255 {
        return Err(CoreError::malformed(
            format!("PGM {}", path.display()),
            format!("maxval {maxval} exceeds 8-bit range"),
        ));
    }
    let expected = width * height;
    let pixels = &bytes[consumed..];
    if pixels.len() < expected {
        return Err(CoreError::malformed(
            format!("PGM {}", path.display()),
            format!("expected {expected} pixel bytes, found {}", pixels.len()),
        ));
    }
    let values = pixels[..expected]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    ImageTensor::from_vec(height, width, values)
}

/// Returns ((width, height, maxval), bytes consumed including the single
/// whitespace byte that terminates the header).
fn parse_pgm_header(bytes: &[u8]) -> std::result::Result<((usize, usize, usize), usize), String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    // magic + three numeric fields, separated by whitespace, '#' starts a comment
    while fields.len() < 4 {
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| "non-ascii header".to_string())?
                .to_string(),
        );
        if fields.len() == 4 {
            // exactly one whitespace byte separates the header from pixel data
            if pos >= bytes.len() {
                return Err("missing pixel data".into());
            }
            pos += 1;
        }
    }
    if fields[0] != "P5" {
        return Err(format!("magic '{}' is not P5", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad integer '{s}'"));
    let width = parse(&fields[1])?;
    let height = parse(&fields[2])?;
    let maxval = parse(&fields[3])?;
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    Ok(((width, height, maxval), pos))
}

fn save_pgm(img: &ImageTensor, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(32 + img.height() * img.width());
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height()).expect("vec write");
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

// --- raw little-endian f32 with JSON sidecar ---

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSidecar {
    height: usize,
    width: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn load_raw_f32(path: &Path) -> Result<ImageTensor> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| CoreError::io(&sidecar, e))?;
    let meta: RawSidecar = serde_json::from_str(&text)?;
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let expected = meta
        .height
        .checked_mul(meta.width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CoreError::malformed("raw float sidecar", "dimension overflow"))?;
    if bytes.len() != expected {
        return Err(CoreError::malformed(
            format!("raw float {}", path.display()),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(meta.height * meta.width);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        if !v.is_finite() {
            return Err(CoreError::NonFiniteIntensity { index });
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(CoreError::IntensityOutOfRange { index, value: v });
        }
        values.push(v);
    }
    ImageTensor::from_vec(meta.height, meta.width, values)
}

fn save_raw_f32(img: &ImageTensor, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.height() * img.width() * 4);
    for &v in img.data().iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))?;
    let meta = RawSidecar {
        height: img.height(),
        width: img.width(),
    };
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, serde_json::to_string(&meta)?).map_err(|e| CoreError::io(&sidecar, e))
}
