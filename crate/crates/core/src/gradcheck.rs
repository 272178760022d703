//! Finite-difference gradient checking.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    domain_loss_batch, prediction_consistency_loss, segmentation_ce_loss, tfct_loss, DEFAULT_KL_EPSILON, DEFAULT_TAU,
};
use crate::model::{Architecture, ClassifierParams, ModelParams, Padding};
use crate::tensor::{Tensor, IGNORE_INDEX};

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every entry.
pub fn central_differences(x: &Tensor, h: f64, f: impl Fn(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `‖a − b‖₂ / (‖a‖₂ + ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let na: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb == 0.0 {
        0.0
    } else {
        diff.sqrt() / (na + nb)
    }
}

const STEP: f64 = 1e-6;
/// Instances whose ReLU inputs come closer to zero than this are redrawn.
const KINK_MARGIN: f64 = 1e-5;

/// Worst relative errors found by [`run_suite`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub instances: usize,
    pub losses: f64,
    pub model: f64,
    pub classifier: f64,
}

/// Checks every analytic gradient against central differences on
/// `instances` random problems per family, drawn from `seed`.
pub fn run_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport { instances, ..Default::default() };
    for _ in 0..instances {
        report.losses = report.losses.max(loss_instance(&mut rng)?);
        report.model = report.model.max(model_instance(&mut rng)?);
        report.classifier = report.classifier.max(classifier_instance(&mut rng)?);
    }
    Ok(report)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn loss_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;

    let shape = [rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..6)];
    let p = uniform(rng, &shape, -3.0, 3.0);
    let q = uniform(rng, &shape, -3.0, 3.0);
    let pc = prediction_consistency_loss(&p, &q, DEFAULT_KL_EPSILON)?;
    let num = central_differences(&p, STEP, |x| prediction_consistency_loss(x, &q, DEFAULT_KL_EPSILON).map_or(f64::NAN, |l| l.loss));
    worst = worst.max(relative_error(&num, &pc.grad_first));
    let num = central_differences(&q, STEP, |x| prediction_consistency_loss(&p, x, DEFAULT_KL_EPSILON).map_or(f64::NAN, |l| l.loss));
    worst = worst.max(relative_error(&num, &pc.grad_second));

    let dims = [rng.random_range(2..7), rng.random_range(2..9)];
    let a = uniform(rng, &dims, -1.0, 1.0);
    let b = uniform(rng, &dims, -1.0, 1.0);
    let fc = tfct_loss(&a, &b, DEFAULT_TAU)?;
    let num = central_differences(&a, STEP, |x| tfct_loss(x, &b, DEFAULT_TAU).map_or(f64::NAN, |l| l.loss));
    worst = worst.max(relative_error(&num, &fc.grad_first));
    let num = central_differences(&b, STEP, |x| tfct_loss(&a, x, DEFAULT_TAU).map_or(f64::NAN, |l| l.loss));
    worst = worst.max(relative_error(&num, &fc.grad_second));

    let n = rng.random_range(1..5);
    let dt = uniform(rng, &[n], 0.05, 0.95);
    let ds = uniform(rng, &[n], 0.05, 0.95);
    for adversarial in [false, true] {
        let d = domain_loss_batch(dt.data(), ds.data(), adversarial);
        let num = central_differences(&dt, STEP, |x| domain_loss_batch(x.data(), ds.data(), adversarial).loss);
        worst = worst.max(relative_error(&num, &Tensor::new(vec![n], d.grad_target)?));
        let num = central_differences(&ds, STEP, |x| domain_loss_batch(dt.data(), x.data(), adversarial).loss);
        worst = worst.max(relative_error(&num, &Tensor::new(vec![n], d.grad_source)?));
    }

    let (pixels, classes) = (rng.random_range(1..20), rng.random_range(2..6));
    let logits = uniform(rng, &[pixels, classes], -3.0, 3.0);
    let mut labels: Vec<u16> = (0..pixels)
        .map(|_| if rng.random_bool(0.1) { IGNORE_INDEX } else { rng.random_range(0..classes as u16) })
        .collect();
    labels[0] = 0;
    let ce = segmentation_ce_loss(&logits, &labels, IGNORE_INDEX)?;
    let num = central_differences(&logits, STEP, |x| segmentation_ce_loss(x, &labels, IGNORE_INDEX).map_or(f64::NAN, |l| l.loss));
    worst = worst.max(relative_error(&num, &ce.grad));
    Ok(worst)
}

fn model_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    loop {
        let strides: Vec<usize> = (0..3).map(|_| rng.random_range(1..3)).collect();
        let arch = Architecture {
            in_channels: rng.random_range(1..4),
            channels: (0..3).map(|_| rng.random_range(2..5)).collect(),
            strides,
            num_classes: rng.random_range(2..5),
        };
        let s = arch.feature_stride();
        let padding = if rng.random_bool(0.5) { Padding::Zero } else { Padding::WrapWidth };
        let params = ModelParams::init(&arch, rng.random())?;
        let shape = [s * rng.random_range(1..3), s * rng.random_range(1..4), arch.in_channels];
        let image = uniform(rng, &shape, 0.0, 1.0);
        let (out, cache) = params.forward(&image, padding)?;
        if cache.min_abs_preactivation() < KINK_MARGIN {
            continue;
        }
        let gl = uniform(rng, out.logits.shape(), -1.0, 1.0);
        let gf = uniform(rng, out.features.shape(), -1.0, 1.0);
        let f = |p: &ModelParams, x: &Tensor| {
            p.forward(x, padding).map_or(f64::NAN, |(o, _)| dot(&o.logits, &gl) + dot(&o.features, &gf))
        };
        let grads = params.backward(&cache, Some(&gl), Some(&gf), true)?;
        let input = grads.input.expect("input gradient requested");
        let mut worst = relative_error(&central_differences(&image, STEP, |x| f(&params, x)), &input);
        for (t, analytic) in grads.params.0.iter().enumerate() {
            let base = params.tensors()[t].clone();
            let numeric = central_differences(&base, STEP, |x| {
                let mut p = params.clone();
                *p.tensors_mut()[t] = x.clone();
                f(&p, &image)
            });
            worst = worst.max(relative_error(&numeric, analytic));
        }
        return Ok(worst);
    }
}

fn classifier_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    loop {
        let f = rng.random_range(2..6);
        let cls = ClassifierParams::init(f, rng.random());
        let n = rng.random_range(1..4);
        let shape = [n, 2 * rng.random_range(1..4), 2 * rng.random_range(1..4), f];
        let feats = uniform(rng, &shape, -1.0, 1.0);
        let padding = if rng.random_bool(0.5) { Padding::Zero } else { Padding::WrapWidth };
        let (_, cache) = cls.forward(&feats, padding)?;
        if cache.min_abs_preactivation() < KINK_MARGIN {
            continue;
        }
        let mix: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |c: &ClassifierParams, x: &Tensor| {
            c.forward(x, padding).map_or(f64::NAN, |(p, _)| p.iter().zip(&mix).map(|(a, b)| a * b).sum())
        };
        let (grads, d_feats) = cls.backward(&cache, &mix)?;
        let mut worst = relative_error(&central_differences(&feats, STEP, |x| loss(&cls, x)), &d_feats);
        for (t, analytic) in grads.0.iter().enumerate() {
            let base = cls.tensors()[t].clone();
            let numeric = central_differences(&base, STEP, |x| {
                let mut c = cls.clone();
                *c.tensors_mut()[t] = x.clone();
                loss(&c, &feats)
            });
            worst = worst.max(relative_error(&numeric, analytic));
        }
        return Ok(worst);
    }
}
