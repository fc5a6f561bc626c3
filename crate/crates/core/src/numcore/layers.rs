//! Layer primitives with explicit backward passes.
//!
//! Each forward returns its output together with a cache holding whatever the
//! matching backward needs. Caches are plain values; nothing is recorded on a
//! global tape.

use super::matrix::{accumulate_at_b, matmul_bt_raw, Matrix};
use super::params::SegmentRef;
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn grad_mask(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Matrix,
    pre: Matrix,
    activation: Activation,
    out_dim: usize,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Matrix,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `activation(x · W + b)` with `W` shaped `[in, out]`.
pub fn dense_forward(
    x: &Matrix,
    weights: SegmentRef<'_>,
    bias: SegmentRef<'_>,
    activation: Activation,
) -> Result<(Matrix, DenseCache)> {
    contract!(
        weights.shape.len() == 2,
        "dense weights {:?} must be 2-D",
        weights.name
    );
    let (in_dim, out_dim) = (weights.shape[0], weights.shape[1]);
    contract!(
        x.cols() == in_dim,
        "dense input has {} columns, weights {:?} expect {in_dim}",
        x.cols(),
        weights.name
    );
    contract!(
        bias.values.len() == out_dim,
        "dense bias {:?} has {} entries, expected {out_dim}",
        bias.name,
        bias.values.len()
    );
    let mut pre = x.matmul_raw(weights.values, out_dim);
    for r in 0..pre.rows() {
        for (v, b) in pre.row_mut(r).iter_mut().zip(bias.values) {
            *v += b;
        }
    }
    let mut out = pre.clone();
    out.data_mut().iter_mut().for_each(|v| *v = activation.apply(*v));
    Ok((
        out,
        DenseCache {
            input: x.clone(),
            pre,
            activation,
            out_dim,
        },
    ))
}

pub fn dense_backward(cache: &DenseCache, weights: &[f64], grad_out: &Matrix) -> DenseGrads {
    let mut g = grad_out.clone();
    for (gv, &p) in g.data_mut().iter_mut().zip(cache.pre.data()) {
        *gv *= cache.activation.grad_mask(p);
    }
    let mut gw = vec![0.0; cache.input.cols() * cache.out_dim];
    accumulate_at_b(&cache.input, &g, &mut gw);
    let mut gb = vec![0.0; cache.out_dim];
    for r in 0..g.rows() {
        for (b, v) in gb.iter_mut().zip(g.row(r)) {
            *b += v;
        }
    }
    let gx = matmul_bt_raw(&g, weights, cache.input.cols());
    DenseGrads {
        input: gx,
        weights: gw,
        bias: gb,
    }
}

// ---------------------------------------------------------------------------
// Feature maps, convolution, pooling
// ---------------------------------------------------------------------------

/// Batch of multi-channel images in NCHW order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMaps {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        contract!(
            data.len() == batch * channels * height * width,
            "feature map buffer has {} values, expected {batch}x{channels}x{height}x{width}",
            data.len()
        );
        Ok(FeatureMaps {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        FeatureMaps {
            batch,
            channels,
            height,
            width,
            data: vec![0.0; batch * channels * height * width],
        }
    }

    /// Reinterprets each matrix row as one `channels × height × width` image.
    pub fn from_rows(x: &Matrix, channels: usize, height: usize, width: usize) -> Result<Self> {
        contract!(
            x.cols() == channels * height * width,
            "row length {} does not match image shape {channels}x{height}x{width}",
            x.cols()
        );
        Self::new(x.rows(), channels, height, width, x.data().to_vec())
    }

    pub fn into_matrix(self) -> Matrix {
        let cols = self.channels * self.height * self.width;
        Matrix::from_vec(self.batch, cols, self.data).expect("shape checked at construction")
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn sample(&self, n: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.channels + c) * self.height + y) * self.width + x]
    }
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    /// Per-sample im2col matrices, each `(C·k·k) × (OH·OW)`.
    columns: Vec<Matrix>,
    pre: FeatureMaps,
    in_channels: usize,
    in_height: usize,
    in_width: usize,
    kernel: usize,
    activation: Activation,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: FeatureMaps,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

fn im2col(img: &[f64], c: usize, h: usize, w: usize, k: usize) -> Matrix {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut m = Matrix::zeros(c * k * k, oh * ow);
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = m.row_mut(row);
                for oy in 0..oh {
                    let src = &img[(ch * h + oy + ky) * w + kx..];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(&src[..ow]);
                }
            }
        }
    }
    m
}

fn col2im(cols: &Matrix, c: usize, h: usize, w: usize, k: usize, out: &mut [f64]) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let src = cols.row((ch * k + ky) * k + kx);
                for oy in 0..oh {
                    let dst = &mut out[(ch * h + oy + ky) * w + kx..];
                    for ox in 0..ow {
                        dst[ox] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Valid 2-D cross-correlation followed by `activation`.
///
/// `kernels` has shape `[filters, channels, k, k]` and `bias` shape `[filters]`.
pub fn conv2d_forward(
    x: &FeatureMaps,
    kernels: SegmentRef<'_>,
    bias: SegmentRef<'_>,
    activation: Activation,
) -> Result<(FeatureMaps, ConvCache)> {
    contract!(
        kernels.shape.len() == 4 && kernels.shape[2] == kernels.shape[3],
        "conv kernels {:?} must be [filters, channels, k, k], got {:?}",
        kernels.name,
        kernels.shape
    );
    let (filters, ch, k) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
    contract!(
        x.channels == ch,
        "conv input has {} channels, kernels expect {ch}",
        x.channels
    );
    contract!(
        x.height >= k && x.width >= k,
        "conv input {}x{} is smaller than the {k}x{k} kernel",
        x.height,
        x.width
    );
    contract!(bias.values.len() == filters, "conv bias length mismatch");
    let (oh, ow) = (x.height - k + 1, x.width - k + 1);
    let kmat = Matrix::from_vec(filters, ch * k * k, kernels.values.to_vec())?;
    let mut pre = FeatureMaps::zeros(x.batch, filters, oh, ow);
    let mut columns = Vec::with_capacity(x.batch);
    let plane = oh * ow;
    for n in 0..x.batch {
        let cols = im2col(x.sample(n), ch, x.height, x.width, k);
        let y = kmat.matmul_raw(cols.data(), plane);
        let dst = &mut pre.data[n * filters * plane..(n + 1) * filters * plane];
        for f in 0..filters {
            for (d, v) in dst[f * plane..(f + 1) * plane].iter_mut().zip(y.row(f)) {
                *d = v + bias.values[f];
            }
        }
        columns.push(cols);
    }
    let mut out = pre.clone();
    out.data.iter_mut().for_each(|v| *v = activation.apply(*v));
    Ok((
        out,
        ConvCache {
            columns,
            pre,
            in_channels: ch,
            in_height: x.height,
            in_width: x.width,
            kernel: k,
            activation,
        },
    ))
}

pub fn conv2d_backward(cache: &ConvCache, kernels: &[f64], grad_out: &FeatureMaps) -> ConvGrads {
    let filters = cache.pre.channels;
    let (c, h, w, k) = (cache.in_channels, cache.in_height, cache.in_width, cache.kernel);
    let plane = cache.pre.height * cache.pre.width;
    let ckk = c * k * k;
    let kmat_t = Matrix::from_vec(filters, ckk, kernels.to_vec())
        .expect("kernel shape validated in forward")
        .transpose();
    let mut gk = vec![0.0; filters * ckk];
    let mut gb = vec![0.0; filters];
    let mut gin = FeatureMaps::zeros(cache.columns.len(), c, h, w);
    for (n, cols) in cache.columns.iter().enumerate() {
        let off = n * filters * plane;
        let mut g = Vec::with_capacity(filters * plane);
        for i in 0..filters * plane {
            g.push(grad_out.data[off + i] * cache.activation.grad_mask(cache.pre.data[off + i]));
        }
        let gmat = Matrix::from_vec(filters, plane, g).expect("plane size");
        for f in 0..filters {
            gb[f] += gmat.row(f).iter().sum::<f64>();
            let gkf = &mut gk[f * ckk..(f + 1) * ckk];
            let gr = gmat.row(f);
            for (r, gkv) in gkf.iter_mut().enumerate() {
                *gkv += cols.row(r).iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let dcols = kmat_t.matmul_raw(gmat.data(), plane);
        let l = c * h * w;
        col2im(&dcols, c, h, w, k, &mut gin.data[n * l..(n + 1) * l]);
    }
    ConvGrads {
        input: gin,
        kernels: gk,
        bias: gb,
    }
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize, usize),
}

/// 2×2 max pooling with stride 2. A trailing odd row or column is dropped.
pub fn maxpool2x2(x: &FeatureMaps) -> (FeatureMaps, PoolCache) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = FeatureMaps::zeros(x.batch, x.channels, oh, ow);
    let mut argmax = Vec::with_capacity(out.data.len());
    for n in 0..x.batch {
        for c in 0..x.channels {
            let base = (n * x.channels + c) * x.height * x.width;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * x.width + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * x.width + 2 * ox + dx;
                        if x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                    out.data[((n * x.channels + c) * oh + oy) * ow + ox] = x.data[best];
                    argmax.push(best);
                }
            }
        }
    }
    (
        out,
        PoolCache {
            argmax,
            in_shape: (x.batch, x.channels, x.height, x.width),
        },
    )
}

pub fn maxpool2x2_backward(cache: &PoolCache, grad_out: &FeatureMaps) -> FeatureMaps {
    let (b, c, h, w) = cache.in_shape;
    let mut g = FeatureMaps::zeros(b, c, h, w);
    for (&i, &v) in cache.argmax.iter().zip(&grad_out.data) {
        g.data[i] += v;
    }
    g
}
