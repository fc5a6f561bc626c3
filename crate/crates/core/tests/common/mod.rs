//! Independent reference computations shared by the integration tests and the
//! acceptance harness. Nothing here calls the code path it is checking.

#![allow(dead_code)]

use filver::datasets::{build_split_tasks, make_synthetic_glyphs, BaseData, TaskSequence};
use filver::federation::{FLConfig, SimSetup};
use filver::models::{
    ver_loss, Classifier, ClassifierSpec, Encoder, EncoderArch, EncoderHead, EncoderKind, EncoderSpec, ImageShape,
    PretrainConfig, VerBatch, VerLossConfig,
};
use filver::numcore::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, gaussian_kl, gaussian_kl_grad, maxpool2x2,
    maxpool2x2_backward, reparam_sample, softmax_cross_entropy, Activation, FeatureMaps, Matrix, ParamVector,
    RngStream,
};
use filver::rehearsal::{StrategyConfig, StrategyKind};

pub const FD_STEP: f64 = 1e-6;

fn randn(n: usize, scale: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..n).map(|_| scale * rng.standard_normal()).collect()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with a floor so exactly-zero gradients compare absolutely.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    assert_eq!(a.len(), n.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-8)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pv(segs: Vec<(&str, Vec<usize>, Vec<f64>)>) -> ParamVector {
    ParamVector::from_segments(segs).unwrap()
}

/// Worst relative error of each gradient, over `instances` random draws.
#[derive(Debug)]
pub struct GradReport {
    pub rows: Vec<(&'static str, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.1).fold(0.0, f64::max)
    }
}

fn dense_case(act: Activation, rng: &mut RngStream) -> f64 {
    let (n, i, o) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(5));
    let x = randn(n * i, 1.0, rng);
    let w = randn(i * o, 0.7, rng);
    let b = randn(o, 0.3, rng);
    let g = randn(n * o, 1.0, rng);
    // scalar probe: sum(g ⊙ dense(x))
    let f = |x: &[f64], w: &[f64], b: &[f64]| {
        let p = pv(vec![("w", vec![i, o], w.to_vec()), ("b", vec![o], b.to_vec())]);
        let (out, _) = dense_forward(
            &Matrix::from_vec(n, i, x.to_vec()).unwrap(),
            p.segment("w").unwrap(),
            p.segment("b").unwrap(),
            act,
        )
        .unwrap();
        dot(out.data(), &g)
    };
    let p = pv(vec![("w", vec![i, o], w.clone()), ("b", vec![o], b.clone())]);
    let (_, cache) = dense_forward(
        &Matrix::from_vec(n, i, x.clone()).unwrap(),
        p.segment("w").unwrap(),
        p.segment("b").unwrap(),
        act,
    )
    .unwrap();
    let grads = dense_backward(&cache, &w, &Matrix::from_vec(n, o, g.clone()).unwrap());
    let ex = rel_err(grads.input.data(), &numeric_grad(|v| f(v, &w, &b), &x));
    let ew = rel_err(&grads.weights, &numeric_grad(|v| f(&x, v, &b), &w));
    let eb = rel_err(&grads.bias, &numeric_grad(|v| f(&x, &w, v), &b));
    ex.max(ew).max(eb)
}

fn conv_case(act: Activation, rng: &mut RngStream) -> f64 {
    let (n, c, f_out, k) = (1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(2));
    let (h, w) = (k + 1 + rng.below(3), k + 1 + rng.below(3));
    let (oh, ow) = (h - k + 1, w - k + 1);
    let x = randn(n * c * h * w, 1.0, rng);
    let kern = randn(f_out * c * k * k, 0.5, rng);
    let b = randn(f_out, 0.2, rng);
    let g = randn(n * f_out * oh * ow, 1.0, rng);
    let f = |x: &[f64], kern: &[f64], b: &[f64]| {
        let p = pv(vec![("k", vec![f_out, c, k, k], kern.to_vec()), ("b", vec![f_out], b.to_vec())]);
        let fm = FeatureMaps::new(n, c, h, w, x.to_vec()).unwrap();
        let (out, _) = conv2d_forward(&fm, p.segment("k").unwrap(), p.segment("b").unwrap(), act).unwrap();
        dot(&out.data, &g)
    };
    let p = pv(vec![("k", vec![f_out, c, k, k], kern.clone()), ("b", vec![f_out], b.clone())]);
    let fm = FeatureMaps::new(n, c, h, w, x.clone()).unwrap();
    let (_, cache) = conv2d_forward(&fm, p.segment("k").unwrap(), p.segment("b").unwrap(), act).unwrap();
    let grads = conv2d_backward(&cache, &kern, &FeatureMaps::new(n, f_out, oh, ow, g.clone()).unwrap());
    let ex = rel_err(&grads.input.data, &numeric_grad(|v| f(v, &kern, &b), &x));
    let ek = rel_err(&grads.kernels, &numeric_grad(|v| f(&x, v, &b), &kern));
    let eb = rel_err(&grads.bias, &numeric_grad(|v| f(&x, &kern, v), &b));
    ex.max(ek).max(eb)
}

fn pool_case(rng: &mut RngStream) -> f64 {
    let (n, c, h, w) = (1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(5), 2 + rng.below(5));
    let x = randn(n * c * h * w, 1.0, rng);
    let g = randn(n * c * (h / 2) * (w / 2), 1.0, rng);
    let f = |x: &[f64]| dot(&maxpool2x2(&FeatureMaps::new(n, c, h, w, x.to_vec()).unwrap()).0.data, &g);
    let (_, cache) = maxpool2x2(&FeatureMaps::new(n, c, h, w, x.clone()).unwrap());
    let gin = maxpool2x2_backward(&cache, &FeatureMaps::new(n, c, h / 2, w / 2, g.clone()).unwrap());
    rel_err(&gin.data, &numeric_grad(f, &x))
}

fn ce_case(rng: &mut RngStream) -> f64 {
    let (n, k) = (1 + rng.below(5), 2 + rng.below(6));
    let logits = randn(n * k, 2.0, rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let f = |l: &[f64]| softmax_cross_entropy(&Matrix::from_vec(n, k, l.to_vec()).unwrap(), &labels).unwrap().0;
    let (_, g) = softmax_cross_entropy(&Matrix::from_vec(n, k, logits.clone()).unwrap(), &labels).unwrap();
    rel_err(g.data(), &numeric_grad(f, &logits))
}

fn kl_case(rng: &mut RngStream) -> f64 {
    let d = 1 + rng.below(8);
    let mu = randn(d, 1.5, rng);
    let ls = randn(d, 0.8, rng);
    let (gm, gs) = gaussian_kl_grad(&mu, &ls);
    let em = rel_err(&gm, &numeric_grad(|m| gaussian_kl(m, &ls), &mu));
    let es = rel_err(&gs, &numeric_grad(|s| gaussian_kl(&mu, s), &ls));
    em.max(es)
}

/// Zero-initialised biases put hidden pre-activations exactly on the ReLU kink
/// whenever a whole upstream row is dead, so move every parameter off init.
fn jitter(p: &ParamVector, rng: &mut RngStream) -> ParamVector {
    let v = p.values().iter().map(|x| x + 0.1 * rng.standard_normal()).collect();
    ParamVector::from_values(p.layout().clone(), v).unwrap()
}

fn small_classifier(rng: &mut RngStream) -> (ClassifierSpec, usize) {
    let spec = ClassifierSpec {
        input_dim: 2 + rng.below(5),
        hidden: 2 + rng.below(6),
        layers: 1 + rng.below(3),
        classes: 2 + rng.below(4),
    };
    (spec, 1 + rng.below(5))
}

fn classifier_case(rng: &mut RngStream) -> f64 {
    let (spec, n) = small_classifier(rng);
    let clf = Classifier::init(spec, &mut rng.fork(1)).unwrap();
    let clf = Classifier::from_params(spec, jitter(clf.params(), rng)).unwrap();
    let z = Matrix::from_vec(n, spec.input_dim, randn(n * spec.input_dim, 1.0, rng)).unwrap();
    let y: Vec<usize> = (0..n).map(|_| rng.below(spec.classes)).collect();
    let (_, grad) = clf.loss_and_grad(&z, &y).unwrap();
    let theta = clf.params().values().to_vec();
    let f = |t: &[f64]| {
        let p = ParamVector::from_values(clf.params().layout().clone(), t.to_vec()).unwrap();
        Classifier::from_params(spec, p).unwrap().loss_and_grad(&z, &y).unwrap().0
    };
    rel_err(grad.values(), &numeric_grad(f, &theta))
}

fn tiny_encoder_spec(kind: EncoderKind, rng: &mut RngStream) -> EncoderSpec {
    let arch = if rng.below(2) == 0 {
        EncoderArch::Conv {
            channels: [1 + rng.below(2), 1 + rng.below(2)],
            kernel: 3,
            hidden: 3 + rng.below(4),
        }
    } else {
        EncoderArch::Mlp { hidden: 3 + rng.below(5) }
    };
    EncoderSpec {
        kind,
        input: ImageShape::new(1, 10, 10),
        embed_dim: 2 + rng.below(3),
        arch,
    }
}

fn encoder_case(rng: &mut RngStream) -> f64 {
    let spec = tiny_encoder_spec(EncoderKind::Ebr, rng);
    let enc = Encoder::init(spec, &mut rng.fork(2)).unwrap();
    let enc = Encoder::from_params(spec, jitter(enc.params(), rng)).unwrap();
    let n = 1 + rng.below(3);
    let x = Matrix::from_vec(n, 100, (0..n * 100).map(|_| rng.uniform()).collect()).unwrap();
    let g = randn(n * spec.embed_dim, 1.0, rng);
    let (head, cache) = enc.forward(&x).unwrap();
    assert!(matches!(head, EncoderHead::Point(_)));
    let grad = enc
        .backward(&cache, &[&Matrix::from_vec(n, spec.embed_dim, g.clone()).unwrap()])
        .unwrap();
    let theta = enc.params().values().to_vec();
    let f = |t: &[f64]| {
        let p = ParamVector::from_values(enc.params().layout().clone(), t.to_vec()).unwrap();
        match Encoder::from_params(spec, p).unwrap().forward(&x).unwrap().0 {
            EncoderHead::Point(z) => dot(z.data(), &g),
            _ => unreachable!(),
        }
    };
    rel_err(grad.values(), &numeric_grad(f, &theta))
}

/// The full variational objective through encoder and classifier, with the
/// sampling noise held fixed.
fn ver_composite_case(rng: &mut RngStream) -> f64 {
    let spec = tiny_encoder_spec(EncoderKind::Vee, rng);
    let enc = Encoder::init(spec, &mut rng.fork(3)).unwrap();
    let enc = Encoder::from_params(spec, jitter(enc.params(), rng)).unwrap();
    let cspec = ClassifierSpec {
        input_dim: spec.embed_dim,
        hidden: 3 + rng.below(4),
        layers: 1 + rng.below(2),
        classes: 2 + rng.below(3),
    };
    let clf = Classifier::init(cspec, &mut rng.fork(4)).unwrap();
    let clf = Classifier::from_params(cspec, jitter(clf.params(), rng)).unwrap();
    let n = 1 + rng.below(3);
    let x = Matrix::from_vec(n, 100, (0..n * 100).map(|_| rng.uniform()).collect()).unwrap();
    let eps = Matrix::from_vec(n, spec.embed_dim, randn(n * spec.embed_dim, 1.0, rng)).unwrap();
    let y: Vec<usize> = (0..n).map(|_| rng.below(cspec.classes)).collect();
    let cfg = VerLossConfig { beta: 0.05 + rng.uniform() };
    let loss_at = |te: &[f64], tc: &[f64]| {
        let e = Encoder::from_params(spec, ParamVector::from_values(enc.params().layout().clone(), te.to_vec()).unwrap()).unwrap();
        let c = Classifier::from_params(cspec, ParamVector::from_values(clf.params().layout().clone(), tc.to_vec()).unwrap()).unwrap();
        let EncoderHead::Gaussian { mu, log_sigma } = e.forward(&x).unwrap().0 else { unreachable!() };
        ver_loss(&VerBatch { mu, log_sigma, eps: eps.clone() }, &y, &c, &cfg).unwrap().loss
    };
    let (head, cache) = enc.forward(&x).unwrap();
    let EncoderHead::Gaussian { mu, log_sigma } = head else { unreachable!() };
    let out = ver_loss(&VerBatch { mu, log_sigma, eps: eps.clone() }, &y, &clf, &cfg).unwrap();
    let genc = enc.backward(&cache, &[&out.grad_mu, &out.grad_log_sigma]).unwrap();
    let te = enc.params().values().to_vec();
    let tc = clf.params().values().to_vec();
    let ee = rel_err(genc.values(), &numeric_grad(|t| loss_at(t, &tc), &te));
    let ec = rel_err(out.classifier_grad.values(), &numeric_grad(|t| loss_at(&te, t), &tc));
    ee.max(ec)
}

pub fn gradient_checks(instances: usize, seed: u64) -> GradReport {
    let mut rng = RngStream::new(seed, 0xC0FFEE);
    type Case = fn(&mut RngStream) -> f64;
    let cases: [(&'static str, Case); 10] = [
        ("dense relu", |r| dense_case(Activation::Relu, r)),
        ("dense identity", |r| dense_case(Activation::Identity, r)),
        ("conv2d relu", |r| conv_case(Activation::Relu, r)),
        ("conv2d identity", |r| conv_case(Activation::Identity, r)),
        ("maxpool 2x2", pool_case),
        ("softmax cross-entropy", ce_case),
        ("gaussian kl", kl_case),
        ("classifier", classifier_case),
        ("ebr encoder", encoder_case),
        ("ver composite", ver_composite_case),
    ];
    GradReport {
        rows: cases
            .iter()
            .map(|(name, case)| (*name, (0..instances).map(|_| case(&mut rng)).fold(0.0, f64::max)))
            .collect(),
    }
}

/// Max absolute deviation of the aggregate from `Σ n_j w_j / Σ n_j`, and of
/// shuffled and count-scaled aggregates from the original.
#[derive(Debug)]
pub struct FedAvgReport {
    pub vs_oracle: f64,
    pub permutation: f64,
    pub scale: f64,
}

pub fn fedavg_checks(instances: usize, seed: u64) -> FedAvgReport {
    use filver::federation::fedavg_aggregate;
    use rand::seq::SliceRandom;
    let mut rng = RngStream::new(seed, 0xFEDA);
    let mut rep = FedAvgReport {
        vs_oracle: 0.0,
        permutation: 0.0,
        scale: 0.0,
    };
    let maxdiff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    for _ in 0..instances {
        let k = 1 + rng.below(8);
        let (r, c) = (1 + rng.below(4), 1 + rng.below(4));
        let updates: Vec<(ParamVector, usize)> = (0..k)
            .map(|_| {
                let w = randn(r * c, 2.0, &mut rng);
                let b = randn(c, 2.0, &mut rng);
                (pv(vec![("w", vec![r, c], w), ("b", vec![c], b)]), 1 + rng.below(1000))
            })
            .collect();
        let len = updates[0].0.total_len();
        let total: f64 = updates.iter().map(|u| u.1 as f64).sum();
        let oracle: Vec<f64> = (0..len)
            .map(|i| updates.iter().map(|(p, n)| *n as f64 * p.values()[i]).sum::<f64>() / total)
            .collect();
        let agg = fedavg_aggregate(&updates).unwrap();
        rep.vs_oracle = rep.vs_oracle.max(maxdiff(agg.values(), &oracle));

        let mut shuffled = updates.clone();
        shuffled.shuffle(&mut rng);
        rep.permutation = rep.permutation.max(maxdiff(fedavg_aggregate(&shuffled).unwrap().values(), agg.values()));

        let factor = 1 + rng.below(50);
        let scaled: Vec<(ParamVector, usize)> = updates.iter().map(|(p, n)| (p.clone(), n * factor)).collect();
        rep.scale = rep.scale.max(maxdiff(fedavg_aggregate(&scaled).unwrap().values(), agg.values()));
    }
    rep
}

/// KL of one 1-D Gaussian from N(0, 1) by composite Simpson quadrature of
/// `∫ p(x) log(p(x) / q(x)) dx` over `μ ± 14σ`.
pub fn kl_quadrature_1d(mu: f64, sigma: f64) -> f64 {
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI).ln();
    let log_p = |x: f64| ln_norm - sigma.ln() - 0.5 * ((x - mu) / sigma).powi(2);
    let log_q = |x: f64| ln_norm - 0.5 * x * x;
    let integrand = |x: f64| {
        let lp = log_p(x);
        lp.exp() * (lp - log_q(x))
    };
    let (a, b) = (mu - 14.0 * sigma, mu + 14.0 * sigma);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let mut s = integrand(a) + integrand(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * integrand(a + i as f64 * h);
    }
    s * h / 3.0
}

#[derive(Debug)]
pub struct KlReport {
    pub max_abs_err: f64,
    pub zero_at_standard: bool,
    pub positive_elsewhere: bool,
}

pub fn kl_checks(pairs: usize, seed: u64) -> KlReport {
    let mut rng = RngStream::new(seed, 0x4B4C);
    let mut max_abs_err: f64 = 0.0;
    let mut positive_elsewhere = true;
    for _ in 0..pairs {
        let d = 1 + rng.below(4);
        let mu: Vec<f64> = (0..d).map(|_| 4.0 * rng.uniform() - 2.0).collect();
        let ls: Vec<f64> = (0..d).map(|_| 3.0 * rng.uniform() - 2.0).collect();
        let quad: f64 = mu.iter().zip(&ls).map(|(&m, &l)| kl_quadrature_1d(m, l.exp())).sum();
        let closed = gaussian_kl(&mu, &ls);
        max_abs_err = max_abs_err.max((closed - quad).abs());
        positive_elsewhere &= closed > 0.0;
    }
    for &(m, l) in &[(1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3), (-0.5, 0.2)] {
        positive_elsewhere &= gaussian_kl(&[m, 0.0], &[l, 0.0]) > 0.0;
    }
    KlReport {
        max_abs_err,
        zero_at_standard: gaussian_kl(&[0.0; 5], &[0.0; 5]) == 0.0,
        positive_elsewhere,
    }
}

/// Largest deviation of sample mean and variance from `(μ, σ²)`, in units of
/// their Monte-Carlo standard errors.
pub fn reparam_z_scores(samples: usize, seed: u64) -> (f64, f64) {
    let mu = [0.7, -1.3, 0.0, 2.5];
    let ls = [0.0_f64, -0.8, 0.6, -2.0];
    let mut rng = RngStream::new(seed, 0x5A5A);
    let d = mu.len();
    let (mut s1, mut s2) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..samples {
        let (z, _) = reparam_sample(&mu, &ls, &mut rng);
        for j in 0..d {
            s1[j] += z[j];
            s2[j] += z[j] * z[j];
        }
    }
    let n = samples as f64;
    let (mut zm, mut zv): (f64, f64) = (0.0, 0.0);
    for j in 0..d {
        let var = (2.0 * ls[j]).exp();
        let mean = s1[j] / n;
        let sample_var = (s2[j] - n * mean * mean) / (n - 1.0);
        zm = zm.max((mean - mu[j]).abs() / (var / n).sqrt());
        zv = zv.max((sample_var - var).abs() / (var * (2.0 / (n - 1.0)).sqrt()));
    }
    (zm, zv)
}

/// A small split benchmark that trains in well under a second.
pub fn tiny_tasks(seed: u64) -> TaskSequence {
    let full = make_synthetic_glyphs(8, 8, 24, 0.1, &mut RngStream::new(seed, 1)).unwrap();
    let base = BaseData::holdout(&full, 0.25, &mut RngStream::new(seed, 2)).unwrap();
    build_split_tasks(&base, 2, 4).unwrap()
}

pub fn tiny_setup(kind: StrategyKind, seed: u64) -> SimSetup {
    let tasks = tiny_tasks(seed);
    let encoder = EncoderSpec {
        kind: kind.default_encoder(),
        input: ImageShape::new(1, 8, 8),
        embed_dim: 6,
        arch: EncoderArch::Mlp { hidden: 16 },
    };
    let mut fl = FLConfig::with_clients(4);
    fl.rounds_per_task = 4;
    fl.local_iters = 3;
    fl.sst_iters = 3;
    fl.batch_size = 8;
    SimSetup {
        classifier: ClassifierSpec {
            input_dim: 6,
            hidden: 12,
            layers: 2,
            classes: tasks.classes(),
        },
        tasks,
        encoder,
        pretrain: PretrainConfig {
            epochs: 1,
            ..PretrainConfig::default()
        },
        strategy: StrategyConfig {
            kind,
            rho: 0.5,
            capacity: 40,
            client_capacity: 12,
            ..StrategyConfig::default()
        },
        fl,
        schedule: None,
        seed,
    }
}

/// Counts of `(embedding, stats, raw)` payloads sent to the server over a whole run.
pub fn transmitted_kinds(setup: SimSetup) -> (usize, usize, usize) {
    use filver::federation::Simulation;
    use filver::rehearsal::Payload;
    let mut sim = Simulation::new(setup).unwrap();
    sim.capture_transmissions();
    sim.run_to_end().unwrap();
    let mut counts = (0, 0, 0);
    for (_, rec) in sim.transmissions() {
        match rec.payload {
            Payload::Embedding(_) => counts.0 += 1,
            Payload::Stats(_) => counts.1 += 1,
            Payload::Raw(_) => counts.2 += 1,
        }
    }
    counts
}
