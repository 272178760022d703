//! Loss terms of the dual-path objective, each with its analytic gradient.

use crate::error::{Error, Result};
use crate::tensor::{Labels, Tensor, IGNORE_INDEX};

pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_ALPHA: f64 = 0.02;
pub const DEFAULT_BETA: f64 = 50.0;
pub const DEFAULT_KL_EPSILON: f64 = 1e-8;

/// Probabilities fed to the BCE terms are clamped into `[P_MIN, 1 − P_MIN]`.
pub const P_MIN: f64 = 1e-7;

const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// InfoNCE temperature.
    pub tau: f64,
    /// Weight of the adversarial term.
    pub alpha: f64,
    /// Weight of the prediction-consistency term.
    pub beta: f64,
    /// Weight of the contrastive term (1 in the standard objective).
    pub fc_weight: f64,
    pub num_classes: usize,
    pub kl_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            fc_weight: 1.0,
            num_classes: 5,
            kl_epsilon: DEFAULT_KL_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.fc_weight >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.num_classes < 2 {
            return bad("at least two classes are required");
        }
        if !(self.kl_epsilon > 0.0 && self.kl_epsilon <= 1e-3) {
            return bad("kl_epsilon must lie in (0, 1e-3]");
        }
        Ok(())
    }
}

/// Domain label of panorama (target) features.
pub const DOMAIN_TARGET: f64 = 1.0;
/// Domain label of pinhole (source) features.
pub const DOMAIN_SOURCE: f64 = 0.0;

/// A loss value together with gradients for a pair of inputs.
#[derive(Clone, Debug)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_first: Tensor,
    pub grad_second: Tensor,
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise softmax over the trailing axis.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.channels();
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in logits
        .data()
        .chunks_exact(c)
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        softmax_into(src, dst);
    }
    out
}

/// Tangent-wise feature contrastive loss (InfoNCE without a memory bank).
///
/// `erp_feats` and `tp_feats` are `N×D` matrices of pooled per-patch features;
/// row `i` of one is the positive of row `i` of the other. All `2N` rows act
/// as anchors and every other row in the batch is a candidate, so each anchor
/// sees one positive and `2N − 2` negatives. Similarity is the cosine of the
/// two vectors.
pub fn tfct_loss(erp_feats: &Tensor, tp_feats: &Tensor, tau: f64) -> Result<PairLoss> {
    if erp_feats.rank() != 2 || erp_feats.shape() != tp_feats.shape() {
        return Err(Error::ShapeMismatch {
            left: erp_feats.shape().to_vec(),
            right: tp_feats.shape().to_vec(),
        });
    }
    let (n, d) = (erp_feats.shape()[0], erp_feats.shape()[1]);
    if n < 2 {
        return Err(Error::dim("contrastive loss needs at least two patch pairs"));
    }
    let m = 2 * n;
    let rows: Vec<&[f64]> = erp_feats
        .data()
        .chunks_exact(d)
        .chain(tp_feats.data().chunks_exact(d))
        .collect();
    let mut norms = Vec::with_capacity(m);
    let mut z = vec![0.0; m * d];
    for (i, row) in rows.iter().enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < ZERO_NORM || !norm.is_finite() {
            return Err(Error::ZeroVector { index: i });
        }
        norms.push(norm);
        for (zk, x) in z[i * d..(i + 1) * d].iter_mut().zip(row.iter()) {
            *zk = x / norm;
        }
    }
    let zrow = |i: usize| &z[i * d..(i + 1) * d];
    let positive = |i: usize| if i < n { i + n } else { i - n };

    let mut sim = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let s: f64 = zrow(i).iter().zip(zrow(j)).map(|(a, b)| a * b).sum();
            sim[i * m + j] = s;
            sim[j * m + i] = s;
        }
    }

    // g[i][j] = dL/ds_ij, accumulated over anchors
    let mut g = vec![0.0; m * m];
    let mut loss = 0.0;
    let mut prob = vec![0.0; m];
    for i in 0..m {
        let p = positive(i);
        let max = (0..m)
            .filter(|&j| j != i)
            .map(|j| sim[i * m + j] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in (0..m).filter(|&j| j != i) {
            prob[j] = (sim[i * m + j] / tau - max).exp();
            denom += prob[j];
        }
        loss += -(sim[i * m + p] / tau - max) + denom.ln();
        for j in (0..m).filter(|&j| j != i) {
            let target = if j == p { 1.0 } else { 0.0 };
            g[i * m + j] = (prob[j] / denom - target) / (tau * m as f64);
        }
    }
    loss /= m as f64;

    // dL/dz_k = Σ_j (g_kj + g_jk) z_j, then project through the normalization
    let mut grads = vec![0.0; m * d];
    for k in 0..m {
        let mut dz = vec![0.0; d];
        for j in (0..m).filter(|&j| j != k) {
            let w = g[k * m + j] + g[j * m + k];
            for (acc, zj) in dz.iter_mut().zip(zrow(j)) {
                *acc += w * zj;
            }
        }
        let zk = zrow(k);
        let dot: f64 = dz.iter().zip(zk).map(|(a, b)| a * b).sum();
        for ((out, dzv), zv) in grads[k * d..(k + 1) * d].iter_mut().zip(&dz).zip(zk) {
            *out = (dzv - dot * zv) / norms[k];
        }
    }
    let tp_grads = grads.split_off(n * d);
    Ok(PairLoss {
        loss,
        grad_first: Tensor::new(vec![n, d], grads)?,
        grad_second: Tensor::new(vec![n, d], tp_grads)?,
    })
}

/// Floors a distribution at `eps` and renormalizes.
fn floor_renorm(p: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(p) {
        *o = x.max(eps);
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    sum
}

/// Backpropagates `g = dL/dr` through `r = floor_renorm(softmax(a))` to `dL/da`.
fn back_floor_softmax(p: &[f64], r: &[f64], sum: f64, eps: f64, g: &[f64], out: &mut [f64]) {
    let gr: f64 = g.iter().zip(r).map(|(a, b)| a * b).sum();
    // dL/dp_c, zero where the floor is active
    let mut gp_dot = 0.0;
    let gp: Vec<f64> = p
        .iter()
        .zip(g)
        .map(|(&pc, &gc)| {
            let v = if pc > eps { (gc - gr) / sum } else { 0.0 };
            gp_dot += v * pc;
            v
        })
        .collect();
    for ((o, &pc), &gpc) in out.iter_mut().zip(p).zip(&gp) {
        *o = pc * (gpc - gp_dot);
    }
}

/// Prediction consistency `Σ_patches mean_pixels KL(P ‖ Q)`.
///
/// `erp_pred_tangent` holds tangent-projected ERP-path logits (the `P` side)
/// and `tp_pred` the TP-path logits (`Q`), both `P×h×w×C`. Probabilities are
/// floored at `kl_epsilon` and renormalized before the divergence is taken.
/// Gradients are returned for both inputs.
pub fn prediction_consistency_loss(
    erp_pred_tangent: &Tensor,
    tp_pred: &Tensor,
    kl_epsilon: f64,
) -> Result<PairLoss> {
    if erp_pred_tangent.shape() != tp_pred.shape() || erp_pred_tangent.rank() < 2 {
        return Err(Error::ShapeMismatch {
            left: erp_pred_tangent.shape().to_vec(),
            right: tp_pred.shape().to_vec(),
        });
    }
    let c = erp_pred_tangent.channels();
    let patches = if erp_pred_tangent.rank() == 4 {
        erp_pred_tangent.shape()[0]
    } else {
        1
    };
    let pixels_per_patch = erp_pred_tangent.len() / c / patches;
    let scale = 1.0 / pixels_per_patch as f64;

    let mut grad_p = Tensor::zeros(erp_pred_tangent.shape());
    let mut grad_q = Tensor::zeros(tp_pred.shape());
    let mut loss = 0.0;
    let mut buf = vec![0.0; 6 * c];
    let (sp, rest) = buf.split_at_mut(c);
    let (sq, rest) = rest.split_at_mut(c);
    let (rp, rest) = rest.split_at_mut(c);
    let (rq, rest) = rest.split_at_mut(c);
    let (gp, gq) = rest.split_at_mut(c);
    for (((a, b), da), db) in erp_pred_tangent
        .data()
        .chunks_exact(c)
        .zip(tp_pred.data().chunks_exact(c))
        .zip(grad_p.data_mut().chunks_exact_mut(c))
        .zip(grad_q.data_mut().chunks_exact_mut(c))
    {
        softmax_into(a, sp);
        softmax_into(b, sq);
        let sum_p = floor_renorm(sp, kl_epsilon, rp);
        let sum_q = floor_renorm(sq, kl_epsilon, rq);
        let mut kl = 0.0;
        for k in 0..c {
            let log_ratio = rp[k].ln() - rq[k].ln();
            kl += rp[k] * log_ratio;
            gp[k] = (log_ratio + 1.0) * scale;
            gq[k] = -rp[k] / rq[k] * scale;
        }
        loss += kl * scale;
        back_floor_softmax(sp, rp, sum_p, kl_epsilon, gp, da);
        back_floor_softmax(sq, rq, sum_q, kl_epsilon, gq, db);
    }
    Ok(PairLoss {
        loss,
        grad_first: grad_p,
        grad_second: grad_q,
    })
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(P_MIN, 1.0 - P_MIN)
}

fn bce(label: f64, p: f64) -> f64 {
    let p = clamp_prob(p);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// d bce / dp, zero where the clamp is active.
fn bce_grad(label: f64, p: f64) -> f64 {
    if p <= P_MIN || p >= 1.0 - P_MIN {
        return 0.0;
    }
    -(label / p) + (1.0 - label) / (1.0 - p)
}

/// Classifier objective: target features labelled 1, source features 0.
pub fn domain_classifier_loss(d_t: f64, d_s: f64) -> f64 {
    bce(DOMAIN_TARGET, d_t) + bce(DOMAIN_SOURCE, d_s)
}

/// Encoder objective: the classifier's labels swapped.
pub fn domain_adversarial_loss(d_t: f64, d_s: f64) -> f64 {
    bce(DOMAIN_TARGET, d_s) + bce(DOMAIN_SOURCE, d_t)
}

/// Batched domain loss and its gradients with respect to every probability.
///
/// Each side is averaged over its samples. With `adversarial` the labels are
/// swapped so that the encoder is rewarded for fooling the classifier.
#[derive(Clone, Debug)]
pub struct DomainLoss {
    pub loss: f64,
    pub grad_target: Vec<f64>,
    pub grad_source: Vec<f64>,
}

pub fn domain_loss_batch(d_target: &[f64], d_source: &[f64], adversarial: bool) -> DomainLoss {
    let (lt, ls) = if adversarial {
        (DOMAIN_SOURCE, DOMAIN_TARGET)
    } else {
        (DOMAIN_TARGET, DOMAIN_SOURCE)
    };
    let nt = d_target.len().max(1) as f64;
    let ns = d_source.len().max(1) as f64;
    let loss = d_target.iter().map(|&p| bce(lt, p)).sum::<f64>() / nt
        + d_source.iter().map(|&p| bce(ls, p)).sum::<f64>() / ns;
    DomainLoss {
        loss,
        grad_target: d_target.iter().map(|&p| bce_grad(lt, p) / nt).collect(),
        grad_source: d_source.iter().map(|&p| bce_grad(ls, p) / ns).collect(),
    }
}

#[derive(Clone, Debug)]
pub struct CeLoss {
    pub loss: f64,
    pub grad: Tensor,
    pub valid_pixels: usize,
}

/// Mean per-pixel softmax cross-entropy over non-ignored pixels.
///
/// `logits` is `…×C` with one row per label entry, in the same order.
pub fn segmentation_ce_loss(logits: &Tensor, labels: &[u16], ignore_index: u16) -> Result<CeLoss> {
    let c = logits.channels();
    if logits.len() != labels.len() * c {
        return Err(Error::dim(format!(
            "{} labels for logits {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut valid = 0usize;
    let mut loss = 0.0;
    let mut prob = vec![0.0; c];
    for ((row, g), &label) in logits
        .data()
        .chunks_exact(c)
        .zip(grad.data_mut().chunks_exact_mut(c))
        .zip(labels)
    {
        if label == ignore_index {
            continue;
        }
        if label as usize >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        softmax_into(row, &mut prob);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[label as usize];
        g.copy_from_slice(&prob);
        g[label as usize] -= 1.0;
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::AllIgnored);
    }
    let inv = 1.0 / valid as f64;
    grad.scale(inv);
    Ok(CeLoss {
        loss: loss * inv,
        grad,
        valid_pixels: valid,
    })
}

/// Convenience wrapper for a single `H×W×C` map and its label image.
pub fn segmentation_ce_loss_map(logits: &Tensor, labels: &Labels) -> Result<CeLoss> {
    match *logits.shape() {
        [h, w, _] if h == labels.height() && w == labels.width() => {}
        _ => {
            return Err(Error::dim(format!(
                "logits {:?} vs labels {}×{}",
                logits.shape(),
                labels.height(),
                labels.width()
            )))
        }
    }
    segmentation_ce_loss(logits, labels.data(), IGNORE_INDEX)
}

/// `L_s + α·L_d + β·L_pc + L_fc`.
pub fn total_loss(l_s: f64, l_d: f64, l_pc: f64, l_fc: f64, alpha: f64, beta: f64) -> Result<f64> {
    for (name, value) in [("L_s", l_s), ("L_d", l_d), ("L_pc", l_pc), ("L_fc", l_fc)] {
        if !value.is_finite() {
            return Err(Error::NonFiniteTerm { name, value });
        }
    }
    Ok(l_s + alpha * l_d + beta * l_pc + l_fc)
}
