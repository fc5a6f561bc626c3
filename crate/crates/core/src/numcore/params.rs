use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentInfo {
    pub name: String,
    pub shape: Vec<usize>,
    offset: usize,
    len: usize,
}

impl SegmentInfo {
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Names and shapes of the segments of a [`ParamVector`], in storage order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<SegmentInfo>,
    total_len: usize,
}

impl Layout {
    pub fn new<S: Into<String>>(segments: impl IntoIterator<Item = (S, Vec<usize>)>) -> Result<Self> {
        let mut infos: Vec<SegmentInfo> = Vec::new();
        let mut offset = 0;
        for (name, shape) in segments {
            let name = name.into();
            contract!(
                infos.iter().all(|s| s.name != name),
                "duplicate parameter segment name {name:?}"
            );
            let len = shape.iter().product();
            infos.push(SegmentInfo {
                name,
                shape,
                offset,
                len,
            });
            offset += len;
        }
        Ok(Layout {
            segments: infos,
            total_len: offset,
        })
    }

    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn find(&self, name: &str) -> Option<&SegmentInfo> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Borrowed view of one named segment.
#[derive(Clone, Copy, Debug)]
pub struct SegmentRef<'a> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub values: &'a [f64],
}

/// Flat parameter buffer with named, shaped segments.
///
/// This is the unit that federated averaging operates on. Two vectors are
/// layout-compatible when their segment names and shapes agree pairwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradient = ParamVector;

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.total_len];
        ParamVector { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        contract!(
            values.len() == layout.total_len,
            "parameter buffer has {} values, layout expects {}",
            values.len(),
            layout.total_len
        );
        Ok(ParamVector { layout, values })
    }

    /// Convenience constructor from `(name, shape, values)` triples.
    pub fn from_segments<S: Into<String>>(segments: Vec<(S, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(segments.len());
        let mut values = Vec::new();
        for (name, shape, vals) in segments {
            let name = name.into();
            contract!(
                vals.len() == shape.iter().product::<usize>(),
                "segment {name:?} has {} values for shape {shape:?}",
                vals.len()
            );
            values.extend(vals);
            shapes.push((name, shape));
        }
        Self::from_values(Arc::new(Layout::new(shapes)?), values)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn total_len(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_compatible(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn segment(&self, name: &str) -> Result<SegmentRef<'_>> {
        let info = self
            .layout
            .find(name)
            .ok_or_else(|| Error::Contract(format!("no parameter segment named {name:?}")))?;
        Ok(SegmentRef {
            name: &info.name,
            shape: &info.shape,
            values: &self.values[info.offset..info.offset + info.len],
        })
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let info = self
            .layout
            .find(name)
            .ok_or_else(|| Error::Contract(format!("no parameter segment named {name:?}")))?;
        let range = info.offset..info.offset + info.len;
        Ok(&mut self.values[range])
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        contract!(self.is_compatible(other), "parameter layouts are not compatible");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// SHA-256 over the layout and the little-endian bytes of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in self.layout.segments() {
            h.update(s.name.as_bytes());
            for d in &s.shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Plain SGD: returns `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &Gradient, lr: f64) -> Result<ParamVector> {
    let mut out = params.clone();
    out.axpy(-lr, grad)?;
    Ok(out)
}
