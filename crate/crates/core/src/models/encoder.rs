use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numcore::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2, maxpool2x2_backward,
    reparam_sample, Activation, ConvCache, DenseCache, FeatureMaps, Gradient, Layout, Matrix, ParamVector,
    PoolCache, RngStream,
};

/// Bounds applied to the `log σ` head output.
pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Randomly initialised and never trained.
    RandomProjection,
    /// Deterministic embedding encoder trained with cross-entropy.
    Ebr,
    /// Variational encoder with `mu` and `log σ` heads.
    Vee,
}

impl EncoderKind {
    pub fn code(self) -> u8 {
        match self {
            EncoderKind::RandomProjection => 0,
            EncoderKind::Ebr => 1,
            EncoderKind::Vee => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(EncoderKind::RandomProjection),
            1 => Some(EncoderKind::Ebr),
            2 => Some(EncoderKind::Vee),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    /// A flat `n`-vector, viewed as a `1 × 1 × n` image.
    pub fn flat(n: usize) -> Self {
        ImageShape::new(1, 1, n)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum EncoderArch {
    /// Two `kernel × kernel` conv + ReLU + 2×2 max-pool stages, then two dense ReLU layers.
    Conv {
        channels: [usize; 2],
        kernel: usize,
        hidden: usize,
    },
    /// Two dense ReLU layers.
    Mlp { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input: ImageShape,
    pub embed_dim: usize,
    pub arch: EncoderArch,
}

impl EncoderSpec {
    /// 28×28 grayscale input, two 5×5 conv stages, two 1000-unit dense layers, d = 256.
    /// Conv channel counts (32, 64) are not fixed by the reference architecture and are our choice.
    pub fn reference(kind: EncoderKind) -> Self {
        EncoderSpec {
            kind,
            input: ImageShape::new(1, 28, 28),
            embed_dim: 256,
            arch: EncoderArch::Conv {
                channels: [32, 64],
                kernel: 5,
                hidden: 1000,
            },
        }
    }

    fn hidden(&self) -> usize {
        match self.arch {
            EncoderArch::Conv { hidden, .. } | EncoderArch::Mlp { hidden } => hidden,
        }
    }

    /// Flattened size of the conv trunk output (or the raw input for the MLP arch).
    fn trunk_len(&self) -> Result<usize> {
        match self.arch {
            EncoderArch::Mlp { .. } => Ok(self.input.len()),
            EncoderArch::Conv { channels, kernel, .. } => {
                let (mut h, mut w) = (self.input.height, self.input.width);
                for stage in 0..2 {
                    contract!(
                        h >= kernel && w >= kernel,
                        "conv stage {} input {h}x{w} is smaller than kernel {kernel}",
                        stage + 1
                    );
                    // valid conv, then a flooring 2x2 pool
                    let (ch, cw) = (h - kernel + 1, w - kernel + 1);
                    h = ch / 2;
                    w = cw / 2;
                }
                contract!(h > 0 && w > 0, "conv trunk collapses the {:?} input to nothing", self.input);
                Ok(channels[1] * h * w)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.embed_dim > 0, "embedding dimension must be positive");
        contract!(self.hidden() > 0, "encoder hidden width must be positive");
        contract!(!self.input.is_empty(), "encoder input shape is empty");
        self.trunk_len().map(|_| ())
    }

    pub fn layout(&self) -> Result<Layout> {
        self.validate()?;
        let mut segs: Vec<(&str, Vec<usize>)> = Vec::new();
        if let EncoderArch::Conv { channels, kernel, .. } = self.arch {
            segs.push(("conv1.k", vec![channels[0], self.input.channels, kernel, kernel]));
            segs.push(("conv1.b", vec![channels[0]]));
            segs.push(("conv2.k", vec![channels[1], channels[0], kernel, kernel]));
            segs.push(("conv2.b", vec![channels[1]]));
        }
        let (t, h, d) = (self.trunk_len()?, self.hidden(), self.embed_dim);
        segs.push(("fc1.w", vec![t, h]));
        segs.push(("fc1.b", vec![h]));
        segs.push(("fc2.w", vec![h, h]));
        segs.push(("fc2.b", vec![h]));
        match self.kind {
            EncoderKind::Vee => {
                segs.push(("mu.w", vec![h, d]));
                segs.push(("mu.b", vec![d]));
                segs.push(("log_sigma.w", vec![h, d]));
                segs.push(("log_sigma.b", vec![d]));
            }
            EncoderKind::Ebr | EncoderKind::RandomProjection => {
                segs.push(("z.w", vec![h, d]));
                segs.push(("z.b", vec![d]));
            }
        }
        Layout::new(segs)
    }
}

/// Per-example Gaussian in embedding space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl GaussianStats {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        contract!(mu.len() == log_sigma.len(), "mu and log_sigma lengths differ");
        Ok(GaussianStats { mu, log_sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        reparam_sample(&self.mu, &self.log_sigma, rng).0
    }
}

/// Output of an encoder head for a batch.
#[derive(Clone, Debug)]
pub enum EncoderHead {
    Point(Matrix),
    Gaussian { mu: Matrix, log_sigma: Matrix },
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    conv: Option<ConvTrunkCache>,
    fc1: DenseCache,
    fc2: DenseCache,
    heads: Vec<DenseCache>,
    /// Unclamped `log σ` head output (variational encoders only).
    raw_log_sigma: Option<Matrix>,
}

#[derive(Clone, Debug)]
struct ConvTrunkCache {
    conv1: ConvCache,
    pool1: PoolCache,
    conv2: ConvCache,
    pool2: PoolCache,
    pooled_shape: (usize, usize, usize),
}

/// Encoder parameters together with the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    spec: EncoderSpec,
    params: ParamVector,
}

const ENCODE_CHUNK: usize = 256;

impl Encoder {
    /// He-normal initialisation for ReLU layers, `1/fan_in` scaling for the heads, zero biases.
    pub fn init(spec: EncoderSpec, rng: &mut RngStream) -> Result<Self> {
        let layout = Arc::new(spec.layout()?);
        let mut params = ParamVector::zeros(layout.clone());
        for seg in layout.segments() {
            if seg.name.ends_with(".b") {
                continue;
            }
            let fan_in: usize = if seg.shape.len() == 4 {
                seg.shape[1] * seg.shape[2] * seg.shape[3]
            } else {
                seg.shape[0]
            };
            let head = seg.name.starts_with("mu.") || seg.name.starts_with("z.");
            let std = if seg.name.starts_with("log_sigma.") {
                0.1 / (fan_in as f64).sqrt()
            } else if head {
                (1.0 / fan_in as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let vals = &mut params.values_mut()[seg.offset()..seg.offset() + seg.len()];
            for v in vals {
                *v = std * rng.standard_normal();
            }
        }
        Ok(Encoder { spec, params })
    }

    pub fn from_params(spec: EncoderSpec, params: ParamVector) -> Result<Self> {
        let layout = spec.layout()?;
        contract!(
            **params.layout() == layout,
            "encoder parameters do not match the {:?} architecture",
            spec.kind
        );
        Ok(Encoder { spec, params })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn kind(&self) -> EncoderKind {
        self.spec.kind
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Forward pass over a batch whose rows are flattened images.
    pub fn forward(&self, x: &Matrix) -> Result<(EncoderHead, EncoderCache)> {
        contract!(
            x.cols() == self.spec.input.len(),
            "encoder input rows have {} values, expected {}",
            x.cols(),
            self.spec.input.len()
        );
        let p = &self.params;
        let (flat, conv) = match self.spec.arch {
            EncoderArch::Mlp { .. } => (x.clone(), None),
            EncoderArch::Conv { .. } => {
                let s = self.spec.input;
                let img = FeatureMaps::from_rows(x, s.channels, s.height, s.width)?;
                let (c1, conv1) = conv2d_forward(&img, p.segment("conv1.k")?, p.segment("conv1.b")?, Activation::Relu)?;
                let (p1, pool1) = maxpool2x2(&c1);
                let (c2, conv2) = conv2d_forward(&p1, p.segment("conv2.k")?, p.segment("conv2.b")?, Activation::Relu)?;
                let (p2, pool2) = maxpool2x2(&c2);
                let pooled_shape = (p2.channels, p2.height, p2.width);
                (
                    p2.into_matrix(),
                    Some(ConvTrunkCache {
                        conv1,
                        pool1,
                        conv2,
                        pool2,
                        pooled_shape,
                    }),
                )
            }
        };
        let (h1, fc1) = dense_forward(&flat, p.segment("fc1.w")?, p.segment("fc1.b")?, Activation::Relu)?;
        let (h2, fc2) = dense_forward(&h1, p.segment("fc2.w")?, p.segment("fc2.b")?, Activation::Relu)?;
        match self.spec.kind {
            EncoderKind::Vee => {
                let (mu, c_mu) = dense_forward(&h2, p.segment("mu.w")?, p.segment("mu.b")?, Activation::Identity)?;
                let (raw, c_ls) =
                    dense_forward(&h2, p.segment("log_sigma.w")?, p.segment("log_sigma.b")?, Activation::Identity)?;
                let mut log_sigma = raw.clone();
                log_sigma
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX));
                Ok((
                    EncoderHead::Gaussian { mu, log_sigma },
                    EncoderCache {
                        conv,
                        fc1,
                        fc2,
                        heads: vec![c_mu, c_ls],
                        raw_log_sigma: Some(raw),
                    },
                ))
            }
            EncoderKind::Ebr | EncoderKind::RandomProjection => {
                let (z, c_z) = dense_forward(&h2, p.segment("z.w")?, p.segment("z.b")?, Activation::Identity)?;
                Ok((
                    EncoderHead::Point(z),
                    EncoderCache {
                        conv,
                        fc1,
                        fc2,
                        heads: vec![c_z],
                        raw_log_sigma: None,
                    },
                ))
            }
        }
    }

    /// Backpropagates head gradients to the encoder parameters.
    ///
    /// `grad_heads` holds `[dz]` for point encoders or `[dmu, dlog_sigma]` for
    /// variational ones; the `log σ` gradient is taken w.r.t. the clamped value.
    pub fn backward(&self, cache: &EncoderCache, grad_heads: &[&Matrix]) -> Result<Gradient> {
        let p = &self.params;
        let mut grad = ParamVector::zeros(p.layout().clone());
        let head_names: &[&str] = match self.spec.kind {
            EncoderKind::Vee => &["mu", "log_sigma"],
            _ => &["z"],
        };
        contract!(
            grad_heads.len() == head_names.len(),
            "expected {} head gradients, got {}",
            head_names.len(),
            grad_heads.len()
        );
        let mut g_h2: Option<Matrix> = None;
        for (i, name) in head_names.iter().enumerate() {
            let mut g = grad_heads[i].clone();
            if *name == "log_sigma" {
                let raw = cache.raw_log_sigma.as_ref().expect("variational cache");
                for (gv, &r) in g.data_mut().iter_mut().zip(raw.data()) {
                    if !(LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&r) {
                        *gv = 0.0;
                    }
                }
            }
            let w = format!("{name}.w");
            let b = format!("{name}.b");
            let dg = dense_backward(&cache.heads[i], p.segment(&w)?.values, &g);
            grad.segment_mut(&w)?.copy_from_slice(&dg.weights);
            grad.segment_mut(&b)?.copy_from_slice(&dg.bias);
            g_h2 = Some(match g_h2 {
                None => dg.input,
                Some(mut acc) => {
                    acc.data_mut().iter_mut().zip(dg.input.data()).for_each(|(a, b)| *a += b);
                    acc
                }
            });
        }
        let g_h2 = g_h2.expect("at least one head");
        let d2 = dense_backward(&cache.fc2, p.segment("fc2.w")?.values, &g_h2);
        grad.segment_mut("fc2.w")?.copy_from_slice(&d2.weights);
        grad.segment_mut("fc2.b")?.copy_from_slice(&d2.bias);
        let d1 = dense_backward(&cache.fc1, p.segment("fc1.w")?.values, &d2.input);
        grad.segment_mut("fc1.w")?.copy_from_slice(&d1.weights);
        grad.segment_mut("fc1.b")?.copy_from_slice(&d1.bias);
        if let Some(cc) = &cache.conv {
            let (c, h, w) = cc.pooled_shape;
            let g_p2 = FeatureMaps::new(d1.input.rows(), c, h, w, d1.input.into_vec())?;
            let g_c2 = maxpool2x2_backward(&cc.pool2, &g_p2);
            let dc2 = conv2d_backward(&cc.conv2, p.segment("conv2.k")?.values, &g_c2);
            grad.segment_mut("conv2.k")?.copy_from_slice(&dc2.kernels);
            grad.segment_mut("conv2.b")?.copy_from_slice(&dc2.bias);
            let g_c1 = maxpool2x2_backward(&cc.pool1, &dc2.input);
            let dc1 = conv2d_backward(&cc.conv1, p.segment("conv1.k")?.values, &g_c1);
            grad.segment_mut("conv1.k")?.copy_from_slice(&dc1.kernels);
            grad.segment_mut("conv1.b")?.copy_from_slice(&dc1.bias);
        }
        Ok(grad)
    }

    /// Deterministic embeddings for every row of `x`.
    pub fn encode_points(&self, x: &Matrix) -> Result<Matrix> {
        contract!(
            self.spec.kind != EncoderKind::Vee,
            "variational encoder has no deterministic embedding; use encode_variational"
        );
        let mut out = Vec::with_capacity(x.rows() * self.spec.embed_dim);
        for start in (0..x.rows()).step_by(ENCODE_CHUNK) {
            let idx: Vec<usize> = (start..(start + ENCODE_CHUNK).min(x.rows())).collect();
            match self.forward(&x.select_rows(&idx))?.0 {
                EncoderHead::Point(z) => out.extend_from_slice(z.data()),
                EncoderHead::Gaussian { .. } => unreachable!("kind checked above"),
            }
        }
        Matrix::from_vec(x.rows(), self.spec.embed_dim, out)
    }

    pub fn encode_deterministic(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.encode_points(&m)?.into_vec())
    }

    /// Per-example `(mu, log σ)` for every row of `x`.
    pub fn encode_stats(&self, x: &Matrix) -> Result<Vec<GaussianStats>> {
        contract!(
            self.spec.kind == EncoderKind::Vee,
            "{:?} encoder produces no Gaussian statistics",
            self.spec.kind
        );
        let mut out = Vec::with_capacity(x.rows());
        for start in (0..x.rows()).step_by(ENCODE_CHUNK) {
            let idx: Vec<usize> = (start..(start + ENCODE_CHUNK).min(x.rows())).collect();
            if let EncoderHead::Gaussian { mu, log_sigma } = self.forward(&x.select_rows(&idx))?.0 {
                for r in 0..mu.rows() {
                    out.push(GaussianStats {
                        mu: mu.row(r).to_vec(),
                        log_sigma: log_sigma.row(r).to_vec(),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Statistics for one input plus one reparameterised sample.
    pub fn encode_variational(&self, x: &[f64], rng: &mut RngStream) -> Result<(GaussianStats, Vec<f64>)> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let stats = self.encode_stats(&m)?.pop().expect("one row in, one row out");
        let z = stats.sample(rng);
        Ok((stats, z))
    }

    /// The embedding used for evaluation: the point embedding, or `mu` for variational encoders.
    pub fn encode_for_eval(&self, x: &Matrix) -> Result<Matrix> {
        match self.spec.kind {
            EncoderKind::Vee => {
                let stats = self.encode_stats(x)?;
                let data = stats.into_iter().flat_map(|s| s.mu).collect();
                Matrix::from_vec(x.rows(), self.spec.embed_dim, data)
            }
            _ => self.encode_points(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: EncoderKind, arch: EncoderArch) -> EncoderSpec {
        EncoderSpec {
            kind,
            input: ImageShape::new(1, 16, 16),
            embed_dim: 6,
            arch,
        }
    }

    const CONV: EncoderArch = EncoderArch::Conv {
        channels: [2, 3],
        kernel: 5,
        hidden: 8,
    };

    fn input(rows: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed, 0);
        Matrix::from_vec(rows, 256, (0..rows * 256).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn conv_layout_shapes() {
        let l = small(EncoderKind::Vee, CONV).layout().unwrap();
        // 16 -> 12 -> 6 -> 2 -> 1
        assert_eq!(l.find("fc1.w").unwrap().shape, vec![3, 8]);
        assert!(l.find("log_sigma.w").is_some());
        assert!(small(EncoderKind::Ebr, CONV).layout().unwrap().find("mu.w").is_none());
    }

    #[test]
    fn reference_architecture_shapes() {
        let l = EncoderSpec::reference(EncoderKind::Vee).layout().unwrap();
        // 28 -> 24 -> 12 -> 8 -> 4
        assert_eq!(l.find("fc1.w").unwrap().shape, vec![64 * 16, 1000]);
        assert_eq!(l.find("mu.w").unwrap().shape, vec![1000, 256]);
    }

    #[test]
    fn undersized_input_rejected() {
        let mut s = small(EncoderKind::Ebr, CONV);
        s.input = ImageShape::new(1, 8, 8);
        assert!(s.validate().is_err());
    }

    #[test]
    fn deterministic_encoder_is_repeatable() {
        let mut rng = RngStream::new(3, 0);
        let enc = Encoder::init(small(EncoderKind::RandomProjection, CONV), &mut rng).unwrap();
        let x = input(1, 9);
        let a = enc.encode_deterministic(x.row(0)).unwrap();
        let b = enc.encode_deterministic(x.row(0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_input_bias_free_gives_zero_embedding() {
        let mut rng = RngStream::new(3, 0);
        let enc = Encoder::init(small(EncoderKind::Ebr, CONV), &mut rng).unwrap();
        let mut params = enc.params().clone();
        for s in params.layout().clone().segments() {
            if s.name.ends_with(".b") {
                params.segment_mut(&s.name).unwrap().fill(0.0);
            }
        }
        let enc = Encoder::from_params(*enc.spec(), params).unwrap();
        let z = enc.encode_deterministic(&[0.0; 256]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_call_on_vee_is_rejected() {
        let mut rng = RngStream::new(3, 0);
        let enc = Encoder::init(small(EncoderKind::Vee, CONV), &mut rng).unwrap();
        assert!(enc.encode_deterministic(&[0.0; 256]).is_err());
        let ebr = Encoder::init(small(EncoderKind::Ebr, CONV), &mut rng).unwrap();
        assert!(ebr.encode_stats(&input(1, 1)).is_err());
    }

    #[test]
    fn variational_noise_lives_in_epsilon() {
        let mut rng = RngStream::new(3, 0);
        let enc = Encoder::init(small(EncoderKind::Vee, EncoderArch::Mlp { hidden: 8 }), &mut rng).unwrap();
        let x = input(1, 4);
        let mut r1 = RngStream::new(10, 1);
        let mut r2 = RngStream::new(10, 2);
        let (s1, z1) = enc.encode_variational(x.row(0), &mut r1).unwrap();
        let (s2, z2) = enc.encode_variational(x.row(0), &mut r2).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(z1, z2);
    }

    #[test]
    fn batch_and_single_encoding_agree() {
        let mut rng = RngStream::new(8, 0);
        let enc = Encoder::init(small(EncoderKind::Ebr, CONV), &mut rng).unwrap();
        let x = input(3, 2);
        let batch = enc.encode_points(&x).unwrap();
        for r in 0..3 {
            let single = enc.encode_deterministic(x.row(r)).unwrap();
            for (a, b) in single.iter().zip(batch.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
