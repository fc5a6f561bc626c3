use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numcore::{
    dense_backward, dense_forward, softmax_cross_entropy, Activation, DenseCache, Gradient, Layout, Matrix,
    ParamVector, RngStream,
};

/// `layers` counts weight layers: `layers - 1` hidden ReLU layers of width
/// `hidden`, then a linear output layer with `classes` units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
}

impl ClassifierSpec {
    pub fn reference(input_dim: usize, classes: usize) -> Self {
        ClassifierSpec {
            input_dim,
            hidden: 1000,
            layers: 2,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.layers >= 1, "classifier needs at least one layer");
        contract!(self.classes >= 2, "classifier needs at least two classes");
        contract!(self.input_dim > 0, "classifier input dimension must be positive");
        contract!(
            self.layers == 1 || self.hidden > 0,
            "classifier hidden width must be positive"
        );
        Ok(())
    }

    pub fn layout(&self) -> Result<Layout> {
        self.validate()?;
        let mut segs = Vec::with_capacity(2 * self.layers);
        let mut fan_in = self.input_dim;
        for l in 0..self.layers {
            let out = if l + 1 == self.layers { self.classes } else { self.hidden };
            segs.push((format!("l{l}.w"), vec![fan_in, out]));
            segs.push((format!("l{l}.b"), vec![out]));
            fan_in = out;
        }
        Layout::new(segs)
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierCache {
    layers: Vec<DenseCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    spec: ClassifierSpec,
    params: ParamVector,
}

impl Classifier {
    pub fn init(spec: ClassifierSpec, rng: &mut RngStream) -> Result<Self> {
        let layout = Arc::new(spec.layout()?);
        let mut params = ParamVector::zeros(layout.clone());
        for seg in layout.segments() {
            if seg.name.ends_with(".b") {
                continue;
            }
            let last = seg.name == format!("l{}.w", spec.layers - 1);
            let scale = if last { 1.0 } else { 2.0 };
            let std = (scale / seg.shape[0] as f64).sqrt();
            for v in &mut params.values_mut()[seg.offset()..seg.offset() + seg.len()] {
                *v = std * rng.standard_normal();
            }
        }
        Ok(Classifier { spec, params })
    }

    pub fn zeros(spec: ClassifierSpec) -> Result<Self> {
        Ok(Classifier {
            spec,
            params: ParamVector::zeros(Arc::new(spec.layout()?)),
        })
    }

    pub fn from_params(spec: ClassifierSpec, params: ParamVector) -> Result<Self> {
        contract!(
            **params.layout() == spec.layout()?,
            "classifier parameters do not match the architecture"
        );
        Ok(Classifier { spec, params })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn forward(&self, z: &Matrix) -> Result<(Matrix, ClassifierCache)> {
        contract!(
            z.cols() == self.spec.input_dim,
            "classifier input has {} features, expected {}",
            z.cols(),
            self.spec.input_dim
        );
        let mut h = z.clone();
        let mut caches = Vec::with_capacity(self.spec.layers);
        for l in 0..self.spec.layers {
            let act = if l + 1 == self.spec.layers {
                Activation::Identity
            } else {
                Activation::Relu
            };
            let (out, c) = dense_forward(
                &h,
                self.params.segment(&format!("l{l}.w"))?,
                self.params.segment(&format!("l{l}.b"))?,
                act,
            )?;
            caches.push(c);
            h = out;
        }
        Ok((h, ClassifierCache { layers: caches }))
    }

    /// Returns the parameter gradient and the gradient w.r.t. the input embeddings.
    pub fn backward(&self, cache: &ClassifierCache, grad_logits: &Matrix) -> Result<(Gradient, Matrix)> {
        let mut grad = ParamVector::zeros(self.params.layout().clone());
        let mut g = grad_logits.clone();
        for l in (0..self.spec.layers).rev() {
            let w = format!("l{l}.w");
            let d = dense_backward(&cache.layers[l], self.params.segment(&w)?.values, &g);
            grad.segment_mut(&w)?.copy_from_slice(&d.weights);
            grad.segment_mut(&format!("l{l}.b"))?.copy_from_slice(&d.bias);
            g = d.input;
        }
        Ok((grad, g))
    }

    pub fn classify(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, z.len(), z.to_vec())?;
        Ok(self.forward(&m)?.0.into_vec())
    }

    pub fn predict(&self, z: &Matrix) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(z)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }

    /// Mean cross-entropy on `(z, labels)` and its parameter gradient.
    pub fn loss_and_grad(&self, z: &Matrix, labels: &[usize]) -> Result<(f64, Gradient)> {
        let (logits, cache) = self.forward(z)?;
        let (loss, g) = softmax_cross_entropy(&logits, labels)?;
        let (grad, _) = self.backward(&cache, &g)?;
        Ok((loss, grad))
    }

    /// Accuracy and mean cross-entropy on a labelled embedding set.
    pub fn evaluate(&self, z: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
        if labels.is_empty() {
            return Ok((0.0, 0.0));
        }
        let (logits, _) = self.forward(z)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        let correct = (0..logits.rows())
            .filter(|&r| {
                let row = logits.row(r);
                let arg = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
                arg == labels[r]
            })
            .count();
        Ok((correct as f64 / labels.len() as f64, loss))
    }
}
