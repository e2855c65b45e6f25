//! Flat parameter storage with a named layout.
//!
//! All tensors of a model live in one contiguous `Vec<f64>` described by
//! an ordered (name, offset, shape) table. Optimizer math, finite
//! difference probing, and checkpoint serialization all operate on the
//! flat buffer; layers view slices of it through the layout. Layout
//! order is construction order and is part of the checkpoint format.

use std::collections::HashMap;

use ndarray::{ArrayView1, ArrayView2, ArrayView4, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered name table over one flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    index: HashMap<String, usize>,
    total: usize,
}

impl Layout {
    pub fn build(shapes: Vec<(String, Vec<usize>)>) -> Result<Self> {
        let mut entries = Vec::with_capacity(shapes.len());
        let mut index = HashMap::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, shape) in shapes {
            if shape.iter().product::<usize>() == 0 {
                return Err(CoreError::InvalidConfig(format!(
                    "tensor '{name}' has an empty shape {shape:?}"
                )));
            }
            if index.insert(name.clone(), entries.len()).is_some() {
                return Err(CoreError::InvalidConfig(format!(
                    "duplicate tensor name '{name}'"
                )));
            }
            let len: usize = shape.iter().product();
            entries.push(LayoutEntry {
                name,
                offset,
                shape,
            });
            offset += len;
        }
        Ok(Layout {
            entries,
            index,
            total: offset,
        })
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Result<&LayoutEntry> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| CoreError::InvalidConfig(format!("unknown tensor '{name}'")))
    }
}

/// A flat buffer paired with its layout. Used for parameters, gradients,
/// optimizer moments, and BN running statistics alike.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStore {
    layout: Layout,
    data: Vec<f64>,
}

impl TensorStore {
    pub fn zeros(layout: Layout) -> Self {
        let data = vec![0.0; layout.total_len()];
        TensorStore { layout, data }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_data(layout: Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total_len() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} values", layout.total_len()),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(TensorStore { layout, data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn slice(&self, name: &str) -> &[f64] {
        let e = self.layout.entry(name).expect("layout mismatch");
        &self.data[e.offset..e.offset + e.len()]
    }

    fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let e = self.layout.entry(name).expect("layout mismatch").clone();
        &mut self.data[e.offset..e.offset + e.len()]
    }

    /// 1-D view; panics if the named tensor is not rank 1.
    pub fn v1(&self, name: &str) -> ArrayView1<'_, f64> {
        let e = self.layout.entry(name).expect("layout mismatch");
        assert_eq!(e.shape.len(), 1, "{name} is not rank 1");
        ArrayView1::from_shape(e.shape[0], self.slice(name)).expect("layout shape")
    }

    pub fn v1_mut(&mut self, name: &str) -> ArrayViewMut1<'_, f64> {
        let e = self.layout.entry(name).expect("layout mismatch").clone();
        assert_eq!(e.shape.len(), 1, "{name} is not rank 1");
        ArrayViewMut1::from_shape(e.shape[0], self.slice_mut(name)).expect("layout shape")
    }

    /// 2-D view; panics if the named tensor is not rank 2.
    pub fn v2(&self, name: &str) -> ArrayView2<'_, f64> {
        let e = self.layout.entry(name).expect("layout mismatch");
        assert_eq!(e.shape.len(), 2, "{name} is not rank 2");
        ArrayView2::from_shape((e.shape[0], e.shape[1]), self.slice(name)).expect("layout shape")
    }

    /// 4-D view; panics if the named tensor is not rank 4.
    pub fn v4(&self, name: &str) -> ArrayView4<'_, f64> {
        let e = self.layout.entry(name).expect("layout mismatch");
        assert_eq!(e.shape.len(), 4, "{name} is not rank 4");
        ArrayView4::from_shape(
            (e.shape[0], e.shape[1], e.shape[2], e.shape[3]),
            self.slice(name),
        )
        .expect("layout shape")
    }

    /// Accumulate `values` (row-major) into the named tensor.
    pub fn add(&mut self, name: &str, values: &[f64]) {
        let dst = self.slice_mut(name);
        assert_eq!(dst.len(), values.len(), "{name} accumulation length");
        for (d, v) in dst.iter_mut().zip(values) {
            *d += v;
        }
    }

    /// Overwrite the named tensor with `values` (row-major).
    pub fn set(&mut self, name: &str, values: &[f64]) {
        let dst = self.slice_mut(name);
        assert_eq!(dst.len(), values.len(), "{name} assignment length");
        dst.copy_from_slice(values);
    }

    /// Elementwise in-place `self += rhs` over stores sharing one layout.
    pub fn add_store(&mut self, rhs: &TensorStore) {
        assert_eq!(self.data.len(), rhs.data.len(), "store length mismatch");
        for (d, v) in self.data.iter_mut().zip(&rhs.data) {
            *d += v;
        }
    }

    /// Elementwise in-place scale.
    pub fn scale(&mut self, factor: f64) {
        for d in &mut self.data {
            *d *= factor;
        }
    }
}
