//! Small convolutional segmentation network and domain classifier with
//! hand-written reverse-mode gradients.
//!
//! The segmentation network is a stack of 3×3 ReLU convolutions whose last
//! activation map is the "feature" output, followed by a 1×1 class head and
//! bilinear upsampling back to the input size. The head is applied before
//! upsampling; both are linear per pixel so this equals the usual
//! upsample-then-classify order while touching `C` instead of `F` channels.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm, im2col, upsample, upsample_adjoint, ConvGeometry, Op};
pub use crate::kernels::Padding;
use crate::tensor::Tensor;

static STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Layer widths and strides of the segmentation network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    /// Output channels of each 3×3 convolution; the last entry is the feature width.
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub num_classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: 3,
            channels: vec![16, 32, 32],
            strides: vec![1, 2, 2],
            num_classes: 5,
        }
    }
}

impl Architecture {
    pub fn feature_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn feature_channels(&self) -> usize {
        *self.channels.last().expect("at least one layer")
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::Config("channels and strides must be non-empty and equal in length".into()));
        }
        if self.in_channels == 0 || self.num_classes < 2 || self.channels.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::Config("strides must be 1 or 2".into()));
        }
        Ok(())
    }

    /// `(feature_h, feature_w)` for an `h×w` input.
    pub fn feature_dims(&self, h: usize, w: usize) -> (usize, usize) {
        self.strides
            .iter()
            .fold((h, w), |(h, w), &s| ((h - 1) / s + 1, (w - 1) / s + 1))
    }
}

/// One 3×3 convolution: weights `[9·c_in, c_out]`, bias `[c_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl ConvLayer {
    fn he(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let std = (2.0 / (9 * in_ch) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Self {
            weight: Tensor::from_fn(&[9 * in_ch, out_ch], |_| normal.sample(rng)),
            bias: Tensor::zeros(&[out_ch]),
            stride,
        }
    }

    fn zeros(in_ch: usize, out_ch: usize, stride: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[9 * in_ch, out_ch]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0] / 9
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }
}

struct ConvCache {
    geometry: ConvGeometry,
    cols: Vec<f64>,
    pre: Vec<f64>,
}

fn conv_forward(layer: &ConvLayer, input: &[f64], geometry: ConvGeometry) -> ConvCache {
    let cols = im2col(input, &geometry);
    let (rows, k, out_ch) = (geometry.out_pixels(), geometry.patch_len(), layer.out_channels());
    let mut pre = Vec::with_capacity(rows * out_ch);
    for _ in 0..rows {
        pre.extend_from_slice(layer.bias.data());
    }
    gemm(rows, k, out_ch, &cols, Op::N, layer.weight.data(), Op::N, 1.0, &mut pre);
    ConvCache { geometry, cols, pre }
}

fn relu(pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// Backpropagates `grad_out` (w.r.t. the post-ReLU output) through one layer.
fn conv_backward(
    layer: &ConvLayer,
    cache: &ConvCache,
    mut grad_out: Vec<f64>,
    want_input: bool,
) -> (Tensor, Tensor, Option<Vec<f64>>) {
    for (g, &p) in grad_out.iter_mut().zip(&cache.pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    let g = &cache.geometry;
    let (rows, k, out_ch) = (g.out_pixels(), g.patch_len(), layer.out_channels());
    let mut dw = Tensor::zeros(&[k, out_ch]);
    gemm(k, rows, out_ch, &cache.cols, Op::T, &grad_out, Op::N, 0.0, dw.data_mut());
    let mut db = Tensor::zeros(&[out_ch]);
    for row in grad_out.chunks_exact(out_ch) {
        for (d, v) in db.data_mut().iter_mut().zip(row) {
            *d += v;
        }
    }
    let dx = want_input.then(|| {
        let mut dcols = vec![0.0; rows * k];
        gemm(rows, out_ch, k, &grad_out, Op::N, layer.weight.data(), Op::T, 0.0, &mut dcols);
        col2im(&dcols, g)
    });
    (dw, db, dx)
}

/// Parameters of one segmentation network.
#[derive(Debug)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<ConvLayer>,
    /// 1×1 class head `[F, C]`.
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    pub init_seed: u64,
    stamp: u64,
}

impl Clone for ModelParams {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layers: self.layers.clone(),
            head_weight: self.head_weight.clone(),
            head_bias: self.head_bias.clone(),
            init_seed: self.init_seed,
            stamp: fresh_stamp(),
        }
    }
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.layers == other.layers
            && self.head_weight == other.head_weight
            && self.head_bias == other.head_bias
    }
}

/// Outputs of a segmentation forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    /// `[N,] H×W×C` class logits.
    pub logits: Tensor,
    /// `[N,] (H/s)×(W/s)×F` pre-head activations.
    pub features: Tensor,
}

/// State recorded by [`ModelParams::forward`] for the matching backward pass.
pub struct ForwardCache {
    stamp: u64,
    batched: bool,
    input_dims: (usize, usize, usize, usize),
    padding: Padding,
    layers: Vec<ConvCache>,
    features: Vec<f64>,
    feature_dims: (usize, usize, usize, usize),
}

impl ForwardCache {
    /// Smallest `|pre-activation|` over all ReLU layers; finite-difference
    /// checks are unreliable when this is near the perturbation size.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.pre).fold(f64::INFINITY, |m, x| m.min(x.abs()))
    }
}

/// Gradients for every parameter tensor, in [`ModelParams::tensors`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn add_scaled(&mut self, other: &Gradients, k: f64) -> Result<()> {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_scaled(b, k)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|t| t.scale(k));
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(Tensor::max_abs).fold(0.0, f64::max)
    }

    pub fn zeros_like(tensors: &[&Tensor]) -> Self {
        Gradients(tensors.iter().map(|t| Tensor::zeros(t.shape())).collect())
    }
}

#[derive(Clone, Debug)]
pub struct BackwardOutputs {
    pub params: Gradients,
    /// Gradient w.r.t. the input image, if requested.
    pub input: Option<Tensor>,
}

impl ModelParams {
    /// He-normal initialization keyed by `seed`; biases start at zero.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = arch.in_channels;
        let mut layers = Vec::with_capacity(arch.channels.len());
        for (&out_ch, &stride) in arch.channels.iter().zip(&arch.strides) {
            layers.push(ConvLayer::he(&mut rng, in_ch, out_ch, stride));
            in_ch = out_ch;
        }
        let std = (2.0 / in_ch as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Ok(Self {
            arch: arch.clone(),
            layers,
            head_weight: Tensor::from_fn(&[in_ch, arch.num_classes], |_| normal.sample(&mut rng)),
            head_bias: Tensor::zeros(&[arch.num_classes]),
            init_seed: seed,
            stamp: fresh_stamp(),
        })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let mut in_ch = arch.in_channels;
        let mut layers = Vec::new();
        for (&out_ch, &stride) in arch.channels.iter().zip(&arch.strides) {
            layers.push(ConvLayer::zeros(in_ch, out_ch, stride));
            in_ch = out_ch;
        }
        Ok(Self {
            arch: arch.clone(),
            layers,
            head_weight: Tensor::zeros(&[in_ch, arch.num_classes]),
            head_bias: Tensor::zeros(&[arch.num_classes]),
            init_seed: 0,
            stamp: fresh_stamp(),
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    /// Mutable access invalidates outstanding forward caches.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp = fresh_stamp();
        let mut out: Vec<&mut Tensor> = self
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.layers.len())
            .flat_map(|i| [format!("conv{i}.weight"), format!("conv{i}.bias")])
            .collect();
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_like(&self.tensors())
    }

    /// Rebuilds a network from tensors in [`ModelParams::tensors`] order.
    pub fn from_tensors(arch: &Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        let mut reference = Self::zeros(arch)?;
        if tensors.len() != reference.tensors().len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                reference.tensors().len(),
                tensors.len()
            )));
        }
        for (dst, src) in reference.tensors_mut().into_iter().zip(tensors) {
            dst.ensure_shape(src.shape())?;
            *dst = src;
        }
        Ok(reference)
    }

    /// Runs the network on an `H×W×C` image or an `N×H×W×C` batch.
    ///
    /// `H` and `W` must be multiples of the feature stride.
    pub fn forward(&self, input: &Tensor, padding: Padding) -> Result<(ForwardOutputs, ForwardCache)> {
        let (n, h, w, c) = input.batch_dims()?;
        let stride = self.arch.feature_stride();
        if c != self.arch.in_channels || h % stride != 0 || w % stride != 0 {
            return Err(Error::dim(format!(
                "input {:?} needs {} channels and spatial dims divisible by {stride}",
                input.shape(),
                self.arch.in_channels
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let (mut hh, mut ww) = (h, w);
        let mut x_owned: Option<Vec<f64>> = None;
        for layer in &self.layers {
            let geometry = ConvGeometry {
                batch: n,
                height: hh,
                width: ww,
                in_ch: layer.in_channels(),
                stride: layer.stride,
                padding,
            };
            let src = x_owned.as_deref().unwrap_or(input.data());
            let cache = conv_forward(layer, src, geometry);
            x_owned = Some(relu(&cache.pre));
            hh = geometry.out_height();
            ww = geometry.out_width();
            caches.push(cache);
        }
        let features = x_owned.expect("at least one layer");
        let f = self.arch.feature_channels();
        let classes = self.arch.num_classes;
        let rows = n * hh * ww;
        let mut head = Vec::with_capacity(rows * classes);
        for _ in 0..rows {
            head.extend_from_slice(self.head_bias.data());
        }
        gemm(rows, f, classes, &features, Op::N, self.head_weight.data(), Op::N, 1.0, &mut head);
        let logits = upsample(&head, (n, hh, ww, classes), stride, padding == Padding::WrapWidth);

        let batched = input.rank() == 4;
        let shape = |hh: usize, ww: usize, ch: usize| {
            if batched {
                vec![n, hh, ww, ch]
            } else {
                vec![hh, ww, ch]
            }
        };
        let outputs = ForwardOutputs {
            logits: Tensor::new(shape(h, w, classes), logits)?,
            features: Tensor::new(shape(hh, ww, f), features.clone())?,
        };
        let cache = ForwardCache {
            stamp: self.stamp,
            batched,
            input_dims: (n, h, w, c),
            padding,
            layers: caches,
            features,
            feature_dims: (n, hh, ww, f),
        };
        Ok((outputs, cache))
    }

    /// Reverse-mode pass for the outputs of [`ModelParams::forward`].
    ///
    /// Either output gradient may be omitted; omitted gradients count as zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: Option<&Tensor>,
        grad_features: Option<&Tensor>,
        want_input: bool,
    ) -> Result<BackwardOutputs> {
        if cache.stamp != self.stamp {
            return Err(Error::StaleCache);
        }
        let (n, h, w, _) = cache.input_dims;
        let (_, fh, fw, f) = cache.feature_dims;
        let classes = self.arch.num_classes;
        let stride = self.arch.feature_stride();
        let wrap = cache.padding == Padding::WrapWidth;

        let mut d_features = match grad_features {
            Some(g) => {
                if g.len() != n * fh * fw * f {
                    return Err(Error::dim("feature gradient has the wrong size"));
                }
                g.data().to_vec()
            }
            None => vec![0.0; n * fh * fw * f],
        };
        let mut d_head_w = Tensor::zeros(&[f, classes]);
        let mut d_head_b = Tensor::zeros(&[classes]);
        if let Some(g) = grad_logits {
            if g.len() != n * h * w * classes {
                return Err(Error::dim("logit gradient has the wrong size"));
            }
            let d_head = upsample_adjoint(g.data(), (n, fh, fw, classes), stride, wrap);
            let rows = n * fh * fw;
            gemm(f, rows, classes, &cache.features, Op::T, &d_head, Op::N, 0.0, d_head_w.data_mut());
            for row in d_head.chunks_exact(classes) {
                for (d, v) in d_head_b.data_mut().iter_mut().zip(row) {
                    *d += v;
                }
            }
            gemm(rows, classes, f, &d_head, Op::N, self.head_weight.data(), Op::T, 1.0, &mut d_features);
        }

        let mut grads = Vec::with_capacity(2 * self.layers.len() + 2);
        let mut upstream = d_features;
        let mut input_grad = None;
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need_dx = i > 0 || want_input;
            let (dw, db, dx) = conv_backward(layer, lc, upstream, need_dx);
            grads.push(db);
            grads.push(dw);
            match dx {
                Some(dx) if i > 0 => upstream = dx,
                Some(dx) => {
                    input_grad = Some(dx);
                    upstream = Vec::new();
                }
                None => upstream = Vec::new(),
            }
        }
        grads.reverse();
        grads.push(d_head_w);
        grads.push(d_head_b);
        let input = match input_grad {
            Some(dx) => {
                let c = cache.input_dims.3;
                let shape = if cache.batched { vec![n, h, w, c] } else { vec![h, w, c] };
                Some(Tensor::new(shape, dx)?)
            }
            None => None,
        };
        Ok(BackwardOutputs {
            params: Gradients(grads),
            input,
        })
    }
}

/// Domain classifier applied to feature maps: 3×3 stride-2 ReLU convolution,
/// global average pooling, a linear unit and a sigmoid.
#[derive(Debug)]
pub struct ClassifierParams {
    pub conv: ConvLayer,
    pub linear_weight: Tensor,
    pub linear_bias: Tensor,
    stamp: u64,
}

impl Clone for ClassifierParams {
    fn clone(&self) -> Self {
        Self {
            conv: self.conv.clone(),
            linear_weight: self.linear_weight.clone(),
            linear_bias: self.linear_bias.clone(),
            stamp: fresh_stamp(),
        }
    }
}

impl PartialEq for ClassifierParams {
    fn eq(&self, other: &Self) -> bool {
        self.conv == other.conv
            && self.linear_weight == other.linear_weight
            && self.linear_bias == other.linear_bias
    }
}

pub const CLASSIFIER_WIDTH: usize = 8;

pub struct ClassifierCache {
    stamp: u64,
    conv: ConvCache,
    pooled: Vec<f64>,
    probs: Vec<f64>,
    input_shape: Vec<usize>,
    out_pixels_per_item: usize,
}

impl ClassifierCache {
    pub fn min_abs_preactivation(&self) -> f64 {
        self.conv.pre.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
    }
}

impl ClassifierParams {
    pub fn init(feature_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = ConvLayer::he(&mut rng, feature_channels, CLASSIFIER_WIDTH, 2);
        let std = (2.0 / CLASSIFIER_WIDTH as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Self {
            conv,
            linear_weight: Tensor::from_fn(&[CLASSIFIER_WIDTH], |_| normal.sample(&mut rng)),
            linear_bias: Tensor::zeros(&[1]),
            stamp: fresh_stamp(),
        }
    }

    pub fn zeros(feature_channels: usize) -> Self {
        Self {
            conv: ConvLayer::zeros(feature_channels, CLASSIFIER_WIDTH, 2),
            linear_weight: Tensor::zeros(&[CLASSIFIER_WIDTH]),
            linear_bias: Tensor::zeros(&[1]),
            stamp: fresh_stamp(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.conv.weight, &self.conv.bias, &self.linear_weight, &self.linear_bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp = fresh_stamp();
        vec![
            &mut self.conv.weight,
            &mut self.conv.bias,
            &mut self.linear_weight,
            &mut self.linear_bias,
        ]
    }

    pub fn tensor_names(&self) -> Vec<String> {
        ["conv.weight", "conv.bias", "linear.weight", "linear.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_like(&self.tensors())
    }

    pub fn from_tensors(feature_channels: usize, tensors: Vec<Tensor>) -> Result<Self> {
        let mut reference = Self::zeros(feature_channels);
        if tensors.len() != 4 {
            return Err(Error::Format("classifier needs 4 tensors".into()));
        }
        for (dst, src) in reference.tensors_mut().into_iter().zip(tensors) {
            dst.ensure_shape(src.shape())?;
            *dst = src;
        }
        Ok(reference)
    }

    /// Domain probability for every item of an `[N,] h×w×F` feature batch.
    pub fn forward(&self, features: &Tensor, padding: Padding) -> Result<(Vec<f64>, ClassifierCache)> {
        let (n, h, w, c) = features.batch_dims()?;
        if c != self.conv.in_channels() {
            return Err(Error::dim(format!(
                "classifier expects {} feature channels, got {c}",
                self.conv.in_channels()
            )));
        }
        let geometry = ConvGeometry {
            batch: n,
            height: h,
            width: w,
            in_ch: c,
            stride: self.conv.stride,
            padding,
        };
        let conv = conv_forward(&self.conv, features.data(), geometry);
        let per_item = geometry.out_height() * geometry.out_width();
        let mut pooled = vec![0.0; n * CLASSIFIER_WIDTH];
        for (item, chunk) in conv.pre.chunks_exact(per_item * CLASSIFIER_WIDTH).enumerate() {
            let dst = &mut pooled[item * CLASSIFIER_WIDTH..(item + 1) * CLASSIFIER_WIDTH];
            for px in chunk.chunks_exact(CLASSIFIER_WIDTH) {
                for (d, &v) in dst.iter_mut().zip(px) {
                    *d += v.max(0.0);
                }
            }
            dst.iter_mut().for_each(|d| *d /= per_item as f64);
        }
        let probs: Vec<f64> = pooled
            .chunks_exact(CLASSIFIER_WIDTH)
            .map(|p| {
                let z: f64 = p.iter().zip(self.linear_weight.data()).map(|(a, b)| a * b).sum::<f64>()
                    + self.linear_bias.data()[0];
                sigmoid(z)
            })
            .collect();
        let cache = ClassifierCache {
            stamp: self.stamp,
            conv,
            pooled,
            probs: probs.clone(),
            input_shape: features.shape().to_vec(),
            out_pixels_per_item: per_item,
        };
        Ok((probs, cache))
    }

    /// Backpropagates `dL/dD` for every item to parameters and features.
    pub fn backward(&self, cache: &ClassifierCache, grad_probs: &[f64]) -> Result<(Gradients, Tensor)> {
        if cache.stamp != self.stamp {
            return Err(Error::StaleCache);
        }
        if grad_probs.len() != cache.probs.len() {
            return Err(Error::dim("one gradient per classified item is required"));
        }
        let mut d_lw = Tensor::zeros(&[CLASSIFIER_WIDTH]);
        let mut d_lb = Tensor::zeros(&[1]);
        let per_item = cache.out_pixels_per_item;
        let mut d_conv_out = vec![0.0; cache.conv.pre.len()];
        for (item, (&g, &p)) in grad_probs.iter().zip(&cache.probs).enumerate() {
            let dz = g * p * (1.0 - p);
            d_lb.data_mut()[0] += dz;
            let pooled = &cache.pooled[item * CLASSIFIER_WIDTH..(item + 1) * CLASSIFIER_WIDTH];
            for (d, v) in d_lw.data_mut().iter_mut().zip(pooled) {
                *d += dz * v;
            }
            let per_px: Vec<f64> = self
                .linear_weight
                .data()
                .iter()
                .map(|wv| dz * wv / per_item as f64)
                .collect();
            let chunk = &mut d_conv_out[item * per_item * CLASSIFIER_WIDTH..(item + 1) * per_item * CLASSIFIER_WIDTH];
            for px in chunk.chunks_exact_mut(CLASSIFIER_WIDTH) {
                px.copy_from_slice(&per_px);
            }
        }
        let (dw, db, dx) = conv_backward(&self.conv, &cache.conv, d_conv_out, true);
        let features = Tensor::new(cache.input_shape.clone(), dx.expect("requested"))?;
        Ok((Gradients(vec![dw, db, d_lw, d_lb]), features))
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
