use rand::seq::SliceRandom;

use crate::error::{contract, Result};
use crate::models::ImageShape;
use crate::numcore::{Matrix, RngStream};

/// Images (one flattened image per row) with class labels in `[0, classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    images: Matrix,
    labels: Vec<usize>,
    classes: usize,
    shape: ImageShape,
}

impl LabeledSet {
    pub fn new(images: Matrix, labels: Vec<usize>, classes: usize, shape: ImageShape) -> Result<Self> {
        contract!(
            images.rows() == labels.len(),
            "{} images but {} labels",
            images.rows(),
            labels.len()
        );
        contract!(
            images.cols() == shape.len(),
            "image rows have {} values, shape {:?} needs {}",
            images.cols(),
            shape,
            shape.len()
        );
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(crate::Error::Contract(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(LabeledSet {
            images,
            labels,
            classes,
            shape,
        })
    }

    pub fn empty(classes: usize, shape: ImageShape) -> Self {
        LabeledSet {
            images: Matrix::zeros(0, shape.len()),
            labels: Vec::new(),
            classes,
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            shape: self.shape,
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Splits off a seed-determined, per-label stratified validation fraction.
    pub fn holdout(&self, fraction: f64, rng: &mut RngStream) -> Result<(LabeledSet, LabeledSet)> {
        contract!(
            (0.0..1.0).contains(&fraction),
            "validation fraction {fraction} must lie in [0, 1)"
        );
        let mut train = Vec::new();
        let mut val = Vec::new();
        for c in 0..self.classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            idx.shuffle(rng);
            let n_val = (idx.len() as f64 * fraction).round() as usize;
            val.extend_from_slice(&idx[..n_val]);
            train.extend_from_slice(&idx[n_val..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train), self.subset(&val)))
    }

    /// Fills every pixel with NaN. Used to make reads of released data detectable.
    pub(crate) fn poison(&mut self) {
        self.images.data_mut().fill(f64::NAN);
    }
}
