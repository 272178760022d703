//! Dual-path training: an ERP-path network and a tangent-path network trained
//! on source supervision, cross-path prediction consistency, tangent-wise
//! feature contrast and per-path adversarial alignment.

use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{
    domain_loss_batch, prediction_consistency_loss, segmentation_ce_loss, softmax, tfct_loss,
    total_loss, LossConfig,
};
use crate::metrics::{argmax_labels, ConfusionMatrix, MiouReport};
use crate::model::{
    Architecture, ClassifierParams, ForwardCache, ForwardOutputs, Gradients, ModelParams, Padding,
};
use crate::optim::{sgd_step, Adam};
use crate::resample::{assemble_t2e, build_grid, sample_erp, sample_erp_adjoint, ProjectionGrid};
use crate::sphere::{default_layout_18, DEFAULT_FOV_DEG};
use crate::synthdata::{image_seed, Dataset, Sample};
use crate::tensor::{crop_image, Labels, Tensor, IGNORE_INDEX};

/// Which auxiliary terms are switched on next to `L_s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct LossMask {
    pub d: bool,
    pub pc: bool,
    pub fc: bool,
}

impl LossMask {
    pub const NONE: LossMask = LossMask { d: false, pc: false, fc: false };
    pub const ALL: LossMask = LossMask { d: true, pc: true, fc: true };

    /// Baseline, the three single terms, and the full objective.
    pub fn standard_set() -> Vec<LossMask> {
        vec![
            Self::NONE,
            LossMask { d: true, ..Self::NONE },
            LossMask { pc: true, ..Self::NONE },
            LossMask { fc: true, ..Self::NONE },
            Self::ALL,
        ]
    }

    pub fn all_subsets() -> Vec<LossMask> {
        (0..8)
            .map(|b| LossMask { d: b & 1 != 0, pc: b & 2 != 0, fc: b & 4 != 0 })
            .collect()
    }
}

impl fmt::Display for LossMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.d {
            parts.push("d");
        }
        if self.pc {
            parts.push("pc");
        }
        if self.fc {
            parts.push("fc");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl std::str::FromStr for LossMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" | "" => return Ok(Self::NONE),
            "all" => return Ok(Self::ALL),
            _ => {}
        }
        let mut mask = Self::NONE;
        for part in s.split('+') {
            match part.trim() {
                "d" => mask.d = true,
                "pc" => mask.pc = true,
                "fc" => mask.fc = true,
                other => return Err(Error::Config(format!("unknown loss term '{other}' in mask '{s}'"))),
            }
        }
        Ok(mask)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    ErpOnly,
    DualAverage,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erp_only" => Ok(Self::ErpOnly),
            "dual_average" => Ok(Self::DualAverage),
            _ => Err(Error::Config(format!("unknown eval mode '{s}'"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ErpOnly => "erp_only",
            Self::DualAverage => "dual_average",
        })
    }
}

/// Tangent layout parameters; angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayoutConfig {
    pub fov: f64,
    pub patch_size: usize,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            fov: DEFAULT_FOV_DEG.to_radians(),
            patch_size: 64,
        }
    }
}

impl LayoutConfig {
    pub fn grid(&self, erp_height: usize, erp_width: usize) -> Result<ProjectionGrid> {
        build_grid(&default_layout_18(self.fov, self.patch_size)?, erp_height, erp_width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub mask: LossMask,
    pub layout: LayoutConfig,
    pub arch: Architecture,
    pub erp_size: (usize, usize),
    pub batch_source: usize,
    pub batch_target: usize,
    /// Random crops per source image for the tangent path.
    pub crops_per_source: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub steps: u64,
    /// Leading steps trained on `L_s` alone before the masked terms switch on.
    pub warmup_steps: u64,
    pub seed: u64,
    pub stop_gradient_erp: bool,
    pub supervise_tp: bool,
    /// Evaluate every this many steps during [`train`]; 0 disables.
    pub eval_every: u64,
    pub eval_mode: EvalMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            mask: LossMask::ALL,
            layout: LayoutConfig::default(),
            arch: Architecture::default(),
            erp_size: (128, 256),
            batch_source: 1,
            batch_target: 1,
            crops_per_source: 18,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            steps: 1000,
            warmup_steps: 0,
            seed: 0,
            stop_gradient_erp: false,
            supervise_tp: true,
            eval_every: 0,
            eval_mode: EvalMode::ErpOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.arch.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        let (h, w) = self.erp_size;
        let s = self.arch.feature_stride();
        let n = self.layout.patch_size;
        if !(16..=512).contains(&n) || n % s != 0 {
            return bad(format!("patch size must lie in 16..=512 and be a multiple of {s}, got {n}"));
        }
        if h % s != 0 || w % s != 0 || h < n || w < n {
            return bad(format!("ERP size {h}×{w} must be divisible by {s} and at least the patch size"));
        }
        if self.batch_source == 0 || self.batch_target == 0 || self.crops_per_source == 0 {
            return bad("batch sizes and crop count must be positive".into());
        }
        if self.arch.num_classes != self.loss.num_classes {
            return bad("model and loss disagree on the class count".into());
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer hyper-parameters are out of range".into());
        }
        Ok(())
    }

    fn term_active(&self) -> (bool, bool, bool) {
        (
            self.mask.d && self.loss.alpha != 0.0,
            self.mask.pc && self.loss.beta != 0.0,
            self.mask.fc && self.loss.fc_weight != 0.0,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub l_s: f64,
    /// Adversarial (encoder-side) domain loss summed over both paths.
    pub l_d: f64,
    /// Classifier-side domain loss summed over both paths.
    pub l_d_classifier: f64,
    pub l_pc: f64,
    pub l_fc: f64,
    pub total: f64,
}

impl LossReport {
    pub fn log_line(&self) -> String {
        format!(
            "step={} L_s={:.6} L_d={:.6} L_pc={:.6} L_fc={:.6} total={:.6}",
            self.step, self.l_s, self.l_d, self.l_pc, self.l_fc, self.total
        )
    }
}

enum Optimizer {
    Adam(Adam),
    Sgd(f64),
}

impl Optimizer {
    fn new(config: &TrainConfig, params: &[&Tensor]) -> Self {
        match config.optimizer {
            OptimizerKind::Adam => {
                let mut adam = Adam::new(config.lr, params);
                adam.beta1 = config.beta1;
                adam.beta2 = config.beta2;
                Optimizer::Adam(adam)
            }
            OptimizerKind::Sgd => Optimizer::Sgd(config.lr),
        }
    }

    fn step(&mut self, params: Vec<&mut Tensor>, grads: &Gradients) -> Result<()> {
        match self {
            Optimizer::Adam(adam) => adam.step(params, grads),
            Optimizer::Sgd(lr) => sgd_step(*lr, params, grads),
        }
    }
}

/// The two segmentation networks; the tangent one is optional so that a
/// pruned checkpoint can still be evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub erp: ModelParams,
    pub tp: Option<ModelParams>,
    pub erp_classifier: Option<ClassifierParams>,
    pub tp_classifier: Option<ClassifierParams>,
}

pub struct TrainState {
    pub erp_model: ModelParams,
    pub tp_model: ModelParams,
    pub erp_classifier: ClassifierParams,
    pub tp_classifier: ClassifierParams,
    opt_erp: Optimizer,
    opt_tp: Optimizer,
    opt_erp_cls: Optimizer,
    opt_tp_cls: Optimizer,
    pub step: u64,
    rng: ChaCha8Rng,
    grid: ProjectionGrid,
    feature_grid: ProjectionGrid,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let derive = |k: u64| image_seed(config.seed, k as usize);
        let erp_model = ModelParams::init(&config.arch, derive(1))?;
        let tp_model = ModelParams::init(&config.arch, derive(2))?;
        let f = config.arch.feature_channels();
        let erp_classifier = ClassifierParams::init(f, derive(3));
        let tp_classifier = ClassifierParams::init(f, derive(4));
        let grid = config.layout.grid(config.erp_size.0, config.erp_size.1)?;
        let feature_grid = grid.with_stride(config.arch.feature_stride())?;
        Ok(Self {
            opt_erp: Optimizer::new(config, &erp_model.tensors()),
            opt_tp: Optimizer::new(config, &tp_model.tensors()),
            opt_erp_cls: Optimizer::new(config, &erp_classifier.tensors()),
            opt_tp_cls: Optimizer::new(config, &tp_classifier.tensors()),
            erp_model,
            tp_model,
            erp_classifier,
            tp_classifier,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(derive(5)),
            grid,
            feature_grid,
        })
    }

    pub fn grid(&self) -> &ProjectionGrid {
        &self.grid
    }

    pub fn models(&self) -> Models {
        Models {
            erp: self.erp_model.clone(),
            tp: Some(self.tp_model.clone()),
            erp_classifier: Some(self.erp_classifier.clone()),
            tp_classifier: Some(self.tp_classifier.clone()),
        }
    }

    /// Draws the source and target image indices for the next step.
    pub fn draw_batch(&mut self, config: &TrainConfig, data: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
        if data.source.is_empty() || data.target.is_empty() {
            return Err(Error::Config("training needs source and target images".into()));
        }
        let s = (0..config.batch_source)
            .map(|_| self.rng.random_range(0..data.source.len()))
            .collect();
        let t = (0..config.batch_target)
            .map(|_| self.rng.random_range(0..data.target.len()))
            .collect();
        Ok((s, t))
    }
}

fn pool_patches(features: &Tensor) -> Result<Tensor> {
    let (p, h, w, c) = features.batch_dims()?;
    let mut out = vec![0.0; p * c];
    let per = (h * w) as f64;
    for (i, patch) in features.data().chunks_exact(h * w * c).enumerate() {
        let dst = &mut out[i * c..(i + 1) * c];
        for px in patch.chunks_exact(c) {
            for (d, v) in dst.iter_mut().zip(px) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d /= per);
    }
    Tensor::new(vec![p, c], out)
}

fn unpool_patches(grad: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let (p, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let per = (h * w) as f64;
    let mut out = Vec::with_capacity(p * h * w * c);
    for i in 0..p {
        let g = &grad.data()[i * c..(i + 1) * c];
        for _ in 0..h * w {
            out.extend(g.iter().map(|x| x / per));
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// One classifier descent step on the domain objective (target → 1,
/// source → 0) for fixed features. Returns the loss before the step.
pub fn classifier_update(
    classifier: &mut ClassifierParams,
    optimizer_step: &mut dyn FnMut(Vec<&mut Tensor>, &Gradients) -> Result<()>,
    target_features: &Tensor,
    source_features: &Tensor,
    padding: Padding,
) -> Result<f64> {
    let (dt, ct) = classifier.forward(target_features, padding)?;
    let (ds, cs) = classifier.forward(source_features, padding)?;
    let loss = domain_loss_batch(&dt, &ds, false);
    let (mut grads, _) = classifier.backward(&ct, &loss.grad_target)?;
    let (gs, _) = classifier.backward(&cs, &loss.grad_source)?;
    grads.add_scaled(&gs, 1.0)?;
    optimizer_step(classifier.tensors_mut(), &grads)?;
    Ok(loss.loss)
}

/// Adversarial loss (labels swapped) and its gradients w.r.t. both feature sets.
pub fn adversarial_feature_gradients(
    classifier: &ClassifierParams,
    target_features: &Tensor,
    source_features: &Tensor,
    padding: Padding,
) -> Result<(f64, Tensor, Tensor)> {
    let (dt, ct) = classifier.forward(target_features, padding)?;
    let (ds, cs) = classifier.forward(source_features, padding)?;
    let loss = domain_loss_batch(&dt, &ds, true);
    let (_, gt) = classifier.backward(&ct, &loss.grad_target)?;
    let (_, gs) = classifier.backward(&cs, &loss.grad_source)?;
    Ok((loss.loss, gt, gs))
}

fn check_finite(step: u64, term: &'static str, value: f64, detail: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss {
            step,
            term,
            value,
            detail: detail(),
        })
    }
}

fn describe(name: &str, t: &Tensor) -> String {
    let (lo, hi) = t.min_max();
    format!("{name} shape {:?} range [{lo}, {hi}] finite={}", t.shape(), t.all_finite())
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor, k: f64) -> Result<()> {
    match slot {
        Some(acc) => acc.add_scaled(&g, k),
        None => {
            let mut g = g;
            if k != 1.0 {
                g.scale(k);
            }
            *slot = Some(g);
            Ok(())
        }
    }
}

fn apply_weight_decay(grads: &mut Gradients, params: &[&Tensor], wd: f64) -> Result<()> {
    if wd == 0.0 {
        return Ok(());
    }
    for (g, p) in grads.0.iter_mut().zip(params) {
        g.add_scaled(p, wd)?;
    }
    Ok(())
}

/// One iteration of the dual-path objective.
///
/// `source` are labelled source panoramas, `target` unlabelled target
/// panoramas. Crop positions are drawn from the state's generator, and the
/// same number of draws is made whatever terms are enabled.
pub fn train_step(
    state: &mut TrainState,
    source: &[&Sample],
    target: &[&Tensor],
    config: &TrainConfig,
) -> Result<LossReport> {
    let (h, w) = config.erp_size;
    let n = config.layout.patch_size;
    let step = state.step + 1;
    let (use_d, use_pc, use_fc) = if step > config.warmup_steps {
        config.term_active()
    } else {
        (false, false, false)
    };
    let need_target = use_d || use_pc || use_fc;

    // 1. projections and crops
    let mut crops = Vec::with_capacity(source.len() * config.crops_per_source);
    let mut crop_labels: Vec<u16> = Vec::with_capacity(crops.capacity() * n * n);
    for s in source {
        s.image.ensure_shape(&[h, w, 3])?;
        s.labels.validate(config.loss.num_classes)?;
        for _ in 0..config.crops_per_source {
            let row = state.rng.random_range(0..=h - n);
            let col = state.rng.random_range(0..=w - n);
            crops.push(crop_image(&s.image, row, col, n)?);
            crop_labels.extend_from_slice(s.labels.crop(row, col, n)?.data());
        }
    }
    let source_erp = Tensor::stack(&source.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
    let source_labels: Vec<u16> = source.iter().flat_map(|s| s.labels.data().iter().copied()).collect();
    let crops = Tensor::stack(&crops)?;
    let (target_erp, target_tangent) = if need_target {
        let mut tangents = Vec::with_capacity(target.len() * state.grid.planes());
        for t in target {
            t.ensure_shape(&[h, w, 3])?;
            let patches = sample_erp(t, &state.grid)?;
            tangents.extend_from_slice(patches.data());
        }
        let shape = vec![target.len() * state.grid.planes(), n, n, 3];
        let erp = Tensor::stack(&target.iter().map(|t| (*t).clone()).collect::<Vec<_>>())?;
        (Some(erp), Some(Tensor::new(shape, tangents)?))
    } else {
        (None, None)
    };

    // 2. forwards; the paths share nothing so they may run side by side
    type Fwd = Result<(ForwardOutputs, ForwardCache)>;
    let erp_model = &state.erp_model;
    let tp_model = &state.tp_model;
    let ((erp_s, erp_t), (tp_s, tp_t)): ((Fwd, Option<Fwd>), (Fwd, Option<Fwd>)) = rayon::join(
        || {
            (
                erp_model.forward(&source_erp, Padding::WrapWidth),
                target_erp.as_ref().map(|t| erp_model.forward(t, Padding::WrapWidth)),
            )
        },
        || {
            (
                tp_model.forward(&crops, Padding::Zero),
                target_tangent.as_ref().map(|t| tp_model.forward(t, Padding::Zero)),
            )
        },
    );
    let (erp_s, erp_s_cache) = erp_s?;
    let (tp_s, tp_s_cache) = tp_s?;
    let erp_t = erp_t.transpose()?;
    let tp_t = tp_t.transpose()?;

    // output gradients per forward: (logits, features)
    let mut g_erp_s: (Option<Tensor>, Option<Tensor>) = (None, None);
    let mut g_erp_t: (Option<Tensor>, Option<Tensor>) = (None, None);
    let mut g_tp_s: (Option<Tensor>, Option<Tensor>) = (None, None);
    let mut g_tp_t: (Option<Tensor>, Option<Tensor>) = (None, None);

    // 3. source supervision
    let ce_erp = segmentation_ce_loss(&erp_s.logits, &source_labels, IGNORE_INDEX)?;
    let mut l_s = ce_erp.loss;
    add_into(&mut g_erp_s.0, ce_erp.grad, 1.0)?;
    if config.supervise_tp {
        let ce_tp = segmentation_ce_loss(&tp_s.logits, &crop_labels, IGNORE_INDEX)?;
        l_s += ce_tp.loss;
        add_into(&mut g_tp_s.0, ce_tp.grad, 1.0)?;
    }
    check_finite(step, "L_s", l_s, || describe("erp source logits", &erp_s.logits))?;

    let planes = state.grid.planes();
    let bt = target.len() as f64;

    // 4. prediction consistency
    let mut l_pc = 0.0;
    if use_pc {
        let (erp_t, _) = erp_t.as_ref().expect("target forward");
        let (tp_t, _) = tp_t.as_ref().expect("target forward");
        let c = config.loss.num_classes;
        let mut grad_erp = Vec::with_capacity(erp_t.logits.len());
        let mut grad_tp = Vec::with_capacity(tp_t.logits.len());
        for i in 0..target.len() {
            let projected = sample_erp(&erp_t.logits.batch_item(i)?, &state.grid)?;
            let tp_i = Tensor::new(
                vec![planes, n, n, c],
                tp_t.logits.data()[i * planes * n * n * c..(i + 1) * planes * n * n * c].to_vec(),
            )?;
            let pc = prediction_consistency_loss(&projected, &tp_i, config.loss.kl_epsilon)?;
            l_pc += pc.loss / bt;
            let mut ge = sample_erp_adjoint(&pc.grad_first, &state.grid)?;
            if config.stop_gradient_erp {
                ge.fill(0.0);
            }
            grad_erp.extend_from_slice(ge.data());
            grad_tp.extend_from_slice(pc.grad_second.data());
        }
        check_finite(step, "L_pc", l_pc, || describe("erp target logits", &erp_t.logits))?;
        let k = config.loss.beta / bt;
        add_into(&mut g_erp_t.0, Tensor::new(erp_t.logits.shape().to_vec(), grad_erp)?, k)?;
        add_into(&mut g_tp_t.0, Tensor::new(tp_t.logits.shape().to_vec(), grad_tp)?, k)?;
    }

    // 5. tangent-wise feature contrast
    let mut l_fc = 0.0;
    if use_fc {
        let (erp_t, _) = erp_t.as_ref().expect("target forward");
        let (tp_t, _) = tp_t.as_ref().expect("target forward");
        let fshape = tp_t.features.shape();
        let (fn_, f) = (fshape[1], fshape[3]);
        let mut grad_erp = Vec::with_capacity(erp_t.features.len());
        let mut grad_tp = Vec::with_capacity(tp_t.features.len());
        for i in 0..target.len() {
            let sampled = sample_erp(&erp_t.features.batch_item(i)?, &state.feature_grid)?;
            let tp_i = Tensor::new(
                vec![planes, fn_, fn_, f],
                tp_t.features.data()[i * planes * fn_ * fn_ * f..(i + 1) * planes * fn_ * fn_ * f]
                    .to_vec(),
            )?;
            let fc = tfct_loss(&pool_patches(&sampled)?, &pool_patches(&tp_i)?, config.loss.tau)?;
            l_fc += fc.loss / bt;
            let ge = unpool_patches(&fc.grad_first, sampled.shape())?;
            grad_erp.extend_from_slice(sample_erp_adjoint(&ge, &state.feature_grid)?.data());
            grad_tp.extend_from_slice(unpool_patches(&fc.grad_second, tp_i.shape())?.data());
        }
        check_finite(step, "L_fc", l_fc, || describe("erp target features", &erp_t.features))?;
        let k = config.loss.fc_weight / bt;
        add_into(&mut g_erp_t.1, Tensor::new(erp_t.features.shape().to_vec(), grad_erp)?, k)?;
        add_into(&mut g_tp_t.1, Tensor::new(tp_t.features.shape().to_vec(), grad_tp)?, k)?;
    }

    // 6. adversarial alternation, per path
    let mut l_d = 0.0;
    let mut l_d_classifier = 0.0;
    if use_d {
        let (erp_t, _) = erp_t.as_ref().expect("target forward");
        let (tp_t, _) = tp_t.as_ref().expect("target forward");
        let paths = [
            (&mut state.erp_classifier, &mut state.opt_erp_cls, &erp_t.features, &erp_s.features, Padding::WrapWidth),
            (&mut state.tp_classifier, &mut state.opt_tp_cls, &tp_t.features, &tp_s.features, Padding::Zero),
        ];
        let mut feature_grads = Vec::with_capacity(2);
        for (cls, opt, ft, fs, padding) in paths {
            l_d_classifier += classifier_update(cls, &mut |p, g| opt.step(p, g), ft, fs, padding)?;
            let (loss, gt, gs) = adversarial_feature_gradients(cls, ft, fs, padding)?;
            l_d += loss;
            feature_grads.push((gt, gs));
        }
        check_finite(step, "L_d", l_d, || describe("erp target features", &erp_t.features))?;
        let alpha = config.loss.alpha;
        let mut it = feature_grads.into_iter();
        let (gt, gs) = it.next().expect("erp path");
        add_into(&mut g_erp_t.1, gt, alpha)?;
        add_into(&mut g_erp_s.1, gs, alpha)?;
        let (gt, gs) = it.next().expect("tp path");
        add_into(&mut g_tp_t.1, gt, alpha)?;
        add_into(&mut g_tp_s.1, gs, alpha)?;
    }

    let total = total_loss(l_s, l_d, l_pc, config.loss.fc_weight * l_fc, config.loss.alpha, config.loss.beta)?;
    let total = check_finite(step, "total", total, String::new)?;

    // 7. combined update
    let erp_model = &state.erp_model;
    let tp_model = &state.tp_model;
    let backward = |m: &ModelParams, cache: &ForwardCache, g: &(Option<Tensor>, Option<Tensor>)| {
        m.backward(cache, g.0.as_ref(), g.1.as_ref(), false).map(|b| b.params)
    };
    let (erp_grads, tp_grads) = rayon::join(
        || -> Result<Gradients> {
            let mut g = backward(erp_model, &erp_s_cache, &g_erp_s)?;
            if let Some((_, cache)) = &erp_t {
                if g_erp_t.0.is_some() || g_erp_t.1.is_some() {
                    g.add_scaled(&backward(erp_model, cache, &g_erp_t)?, 1.0)?;
                }
            }
            Ok(g)
        },
        || -> Result<Gradients> {
            let mut g = backward(tp_model, &tp_s_cache, &g_tp_s)?;
            if let Some((_, cache)) = &tp_t {
                if g_tp_t.0.is_some() || g_tp_t.1.is_some() {
                    g.add_scaled(&backward(tp_model, cache, &g_tp_t)?, 1.0)?;
                }
            }
            Ok(g)
        },
    );
    let (mut erp_grads, mut tp_grads) = (erp_grads?, tp_grads?);
    apply_weight_decay(&mut erp_grads, &state.erp_model.tensors(), config.weight_decay)?;
    apply_weight_decay(&mut tp_grads, &state.tp_model.tensors(), config.weight_decay)?;
    state.opt_erp.step(state.erp_model.tensors_mut(), &erp_grads)?;
    state.opt_tp.step(state.tp_model.tensors_mut(), &tp_grads)?;
    state.step = step;
    Ok(LossReport {
        step,
        l_s,
        l_d,
        l_d_classifier,
        l_pc,
        l_fc,
        total,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub miou: MiouReport,
    pub confusion: ConfusionMatrix,
}

/// Scores `H×W×C` class scores against labels.
pub fn score_predictions(scores: &[Tensor], labels: &[&Labels], num_classes: usize) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (s, l) in scores.iter().zip(labels) {
        cm.accumulate(l, &argmax_labels(s)?)?;
    }
    Ok(EvalReport {
        miou: cm.miou()?,
        confusion: cm,
    })
}

/// Class scores for one ERP image.
pub fn predict(models: &Models, image: &Tensor, mode: EvalMode, grid: Option<&ProjectionGrid>) -> Result<Tensor> {
    let (erp, _) = models.erp.forward(image, Padding::WrapWidth)?;
    match mode {
        EvalMode::ErpOnly => Ok(erp.logits),
        EvalMode::DualAverage => {
            let tp = models
                .tp
                .as_ref()
                .ok_or_else(|| Error::Config("dual_average needs the tangent-path weights".into()))?;
            let grid = grid.ok_or_else(|| Error::Config("dual_average needs a projection grid".into()))?;
            let patches = sample_erp(image, grid)?;
            let (out, _) = tp.forward(&patches, Padding::Zero)?;
            let (tp_prob, coverage) = assemble_t2e(&softmax(&out.logits), grid)?;
            let mut prob = softmax(&erp.logits);
            let c = prob.channels();
            for ((px, tp_px), &w) in prob
                .data_mut()
                .chunks_exact_mut(c)
                .zip(tp_prob.data().chunks_exact(c))
                .zip(coverage.data())
            {
                if w > 0.0 {
                    for (a, b) in px.iter_mut().zip(tp_px) {
                        *a = 0.5 * (*a + b);
                    }
                }
            }
            Ok(prob)
        }
    }
}

/// mIoU of `models` on `eval`. `erp_only` runs the ERP network alone and
/// never touches the resampler.
pub fn evaluate(models: &Models, eval: &[Sample], mode: EvalMode, layout: &LayoutConfig) -> Result<EvalReport> {
    let first = eval.first().ok_or(Error::EmptyEvalSet)?;
    let grid = match mode {
        EvalMode::ErpOnly => None,
        EvalMode::DualAverage => Some(layout.grid(first.labels.height(), first.labels.width())?),
    };
    let scores = eval
        .iter()
        .map(|s| predict(models, &s.image, mode, grid.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<&Labels> = eval.iter().map(|s| &s.labels).collect();
    score_predictions(&scores, &labels, models.erp.arch.num_classes)
}

/// Runs `config.steps` iterations, calling `on_step` after each.
pub fn train(
    config: &TrainConfig,
    data: &Dataset,
    mut on_step: impl FnMut(&LossReport, Option<&EvalReport>),
) -> Result<TrainState> {
    let mut state = TrainState::new(config)?;
    for _ in 0..config.steps {
        let (si, ti) = state.draw_batch(config, data)?;
        let source: Vec<&Sample> = si.iter().map(|&i| &data.source[i]).collect();
        let target: Vec<&Tensor> = ti.iter().map(|&i| &data.target[i].image).collect();
        let report = train_step(&mut state, &source, &target, config)?;
        let eval = if config.eval_every > 0 && report.step % config.eval_every == 0 && !data.eval.is_empty() {
            Some(evaluate(&state.models(), &data.eval, config.eval_mode, &config.layout)?)
        } else {
            None
        };
        on_step(&report, eval.as_ref());
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mask: LossMask,
    pub seed: u64,
    pub report: EvalReport,
}

/// Trains one model per `(mask, seed)` pair and evaluates it with `config.eval_mode`.
pub fn run_ablation(
    config: &TrainConfig,
    data: &Dataset,
    masks: &[LossMask],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(masks.len() * seeds.len());
    for &seed in seeds {
        for &mask in masks {
            let cfg = TrainConfig { mask, seed, ..config.clone() };
            let state = train(&cfg, data, |_, _| {})?;
            let report = evaluate(&state.models(), &data.eval, cfg.eval_mode, &cfg.layout)?;
            let row = AblationRow { mask, seed, report };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// `mask,seed,miou,<class>...` header followed by one row per run; IoU values
/// in percent, empty for classes absent from the evaluation set.
pub fn ablation_csv(rows: &[AblationRow], class_names: &[&str]) -> String {
    let mut out = String::from("mask,seed,miou");
    for name in class_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{},{:.4}", row.mask, row.seed, row.report.miou.mean));
        for iou in &row.report.miou.per_class {
            out.push(',');
            if let Some(v) = iou {
                out.push_str(&format!("{v:.4}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Mean mIoU over seeds for each mask, in first-seen order.
pub fn mean_by_mask(rows: &[AblationRow]) -> Vec<(LossMask, f64)> {
    let mut out: Vec<(LossMask, f64, usize)> = Vec::new();
    for row in rows {
        match out.iter_mut().find(|(m, _, _)| *m == row.mask) {
            Some(entry) => {
                entry.1 += row.report.miou.mean;
                entry.2 += 1;
            }
            None => out.push((row.mask, row.report.miou.mean, 1)),
        }
    }
    out.into_iter().map(|(m, s, k)| (m, s / k as f64)).collect()
}
