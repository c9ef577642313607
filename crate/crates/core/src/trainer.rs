//! Mini-batch Adam training for every supported loss.
//!
//! Randomness comes from independent ChaCha streams derived from one seed
//! (initialization, shuffling, target noise, dropout), so adding a head or
//! enabling noise never perturbs the other streams.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grid::{BinGrid, PaddingSpec};
use crate::loss::{self, hl_grad_logits, hl_loss, l2_softmax_loss};
use crate::net::{primary_prediction, ForwardTrace, HeadKind, HeadOutput, MlpModel, MlpSpec, ParameterGradients};
use crate::optim::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
use crate::targets::{SupportPolicy, TargetSpec, WeightVector};

/// Denominators of normalized gradient norms at or below this are omitted.
pub const MIN_LOSS_GAP: f64 = 1e-12;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Independent random stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Histogram Loss on a softmax head.
    Hl,
    L2,
    L1,
    /// Squared error of the mean of a softmax histogram.
    L2Softmax,
    /// Scalar l2 head plus `lambda` times HL on an auxiliary histogram head.
    Multitask { lambda: f64 },
    /// l2 on `count` scalar heads predicting powers 1..=count of the target.
    Moments { count: usize },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Hl => "hl",
            LossKind::L2 => "l2",
            LossKind::L1 => "l1",
            LossKind::L2Softmax => "l2_softmax",
            LossKind::Multitask { .. } => "multitask",
            LossKind::Moments { .. } => "moments",
        }
    }

    /// Heads the network needs for this loss; the first is the primary head.
    pub fn heads(&self, k: usize) -> Vec<HeadKind> {
        match *self {
            LossKind::Hl | LossKind::L2Softmax => vec![HeadKind::Softmax { bins: k }],
            LossKind::L2 | LossKind::L1 => vec![HeadKind::Scalar],
            LossKind::Multitask { .. } => vec![HeadKind::Scalar, HeadKind::Softmax { bins: k }],
            LossKind::Moments { count } => vec![HeadKind::Scalar; count],
        }
    }

    pub fn uses_grid(&self) -> bool {
        matches!(self, LossKind::Hl | LossKind::L2Softmax | LossKind::Multitask { .. })
    }

    fn uses_histogram_targets(&self) -> bool {
        matches!(self, LossKind::Hl | LossKind::Multitask { .. })
    }

    fn scalar_targets(&self) -> bool {
        matches!(self, LossKind::L2 | LossKind::L1 | LossKind::Multitask { .. } | LossKind::Moments { .. })
    }
}

/// Target distribution for the histogram losses. Gaussian sigma may be given
/// in target units (`sigma`) or bin widths (`sigma_w`); otherwise the grid's
/// implied sigma is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_w: Option<f64>,
    },
    Onebin,
    UniformMix { epsilon: f64 },
    Projected,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig::Gaussian {
            sigma: None,
            sigma_w: None,
        }
    }
}

impl TargetConfig {
    pub fn resolve(&self, grid: &BinGrid) -> TargetSpec {
        match *self {
            TargetConfig::Gaussian { sigma, sigma_w } => TargetSpec::Gaussian {
                sigma: sigma
                    .or(sigma_w.map(|s| s * grid.width()))
                    .unwrap_or(grid.sigma()),
            },
            TargetConfig::Onebin => TargetSpec::Onebin,
            TargetConfig::UniformMix { epsilon } => TargetSpec::UniformMix { epsilon },
            TargetConfig::Projected => TargetSpec::Projected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub k: usize,
    pub sigma_w: f64,
    pub psi_sigma: f64,
    /// Fixed padding in bins per side; replaces `psi_sigma` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_bins: Option<f64>,
    /// Support overrides; the training-split target range is used otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            k: 100,
            sigma_w: 2.0,
            psi_sigma: 3.0,
            pad_bins: None,
            y_min: None,
            y_max: None,
        }
    }
}

impl GridConfig {
    pub fn padding(&self) -> PaddingSpec {
        match self.pad_bins {
            Some(bins) => PaddingSpec::from_pad_bins(bins, self.sigma_w),
            None => PaddingSpec::new(self.sigma_w, self.psi_sigma),
        }
    }

    pub fn build(&self, train_range: (f64, f64)) -> Result<BinGrid> {
        let lo = self.y_min.unwrap_or(train_range.0);
        let hi = self.y_max.unwrap_or(train_range.1);
        BinGrid::build(lo, hi, self.k, self.padding())
    }
}

/// Geometric sigma decay from `sigma_start_w` bin widths to `sigma_final_w`
/// (default: the target's sigma) over the first `fraction` of epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    pub sigma_start_w: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_final_w: Option<f64>,
    pub fraction: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            sigma_start_w: 8.0,
            sigma_final_w: None,
            fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub target: TargetConfig,
    pub grid: GridConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub head_bias: bool,
    /// Std of Gaussian noise added to scalar targets each epoch.
    pub target_noise_std: f64,
    /// Global gradient-norm clipping threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anneal: Option<AnnealConfig>,
    /// Scale scalar-head targets to [0, 1] using the training range.
    pub normalize_targets: bool,
    pub support: SupportPolicy,
    pub freeze_trunk: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Hl,
            target: TargetConfig::default(),
            grid: GridConfig::default(),
            epochs: 100,
            batch_size: 256,
            optimizer: AdamConfig::default(),
            hidden: vec![32, 32],
            dropout: 0.0,
            head_bias: true,
            target_noise_std: 0.0,
            clip_threshold: None,
            anneal: None,
            normalize_targets: true,
            support: SupportPolicy::Strict,
            freeze_trunk: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.eps > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.target_noise_std >= 0.0 && self.target_noise_std.is_finite()) {
            return bad(format!("target_noise_std must be >= 0, got {}", self.target_noise_std));
        }
        if let Some(c) = self.clip_threshold {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip_threshold must be positive, got {c}"));
            }
        }
        match self.loss {
            LossKind::Multitask { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return bad(format!("multitask lambda must be >= 0, got {lambda}"));
            }
            LossKind::Moments { count: 0 } => return bad("moments count must be at least 1".into()),
            _ => {}
        }
        if self.grid.k == 0 {
            return bad("grid.k must be positive".into());
        }
        if let TargetConfig::UniformMix { epsilon } = self.target {
            if !(0.0..=1.0 / self.grid.k as f64).contains(&epsilon) {
                return bad(format!("epsilon must lie in [0, 1/k], got {epsilon}"));
            }
        }
        if let Some(a) = &self.anneal {
            if !matches!(self.target, TargetConfig::Gaussian { .. }) || !self.loss.uses_histogram_targets() {
                return bad("annealing requires a histogram loss with gaussian targets".into());
            }
            if !(a.fraction > 0.0 && a.fraction <= 1.0) || !(a.sigma_start_w > 0.0) {
                return bad(format!("invalid annealing schedule {a:?}"));
            }
            if let Some(f) = a.sigma_final_w {
                if !(f > 0.0 && f <= a.sigma_start_w) {
                    return bad(format!("sigma_final_w must lie in (0, sigma_start_w], got {f}"));
                }
            }
        }
        Ok(())
    }

    pub fn mlp_spec(&self, input_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden: self.hidden.clone(),
            heads: self.loss.heads(self.grid.k),
            head_bias: self.head_bias,
            input_dropout: self.dropout,
        }
    }

    /// Fresh model for this configuration, drawn from the seed's
    /// initialization stream.
    pub fn build_model(&self, input_dim: usize) -> Result<MlpModel> {
        MlpModel::new(self.mlp_spec(input_dim), &mut stream_rng(self.seed, STREAM_INIT))
    }
}

/// Per-epoch summary. Test metrics are absent when the test split is empty;
/// the normalized gradient norm is absent when the loss is within
/// [`MIN_LOSS_GAP`] of its floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub train_rmse: f64,
    pub test_mae: Option<f64>,
    pub test_rmse: Option<f64>,
    pub loss: f64,
    pub grad_norm_normalized: Option<f64>,
    pub sigma: Option<f64>,
}

/// Affine map between raw targets and what scalar heads are trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub offset: f64,
    pub scale: f64,
}

impl TargetScaler {
    pub fn identity() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }

    /// Maps `[lo, hi]` onto `[0, 1]`.
    pub fn unit_range(lo: f64, hi: f64) -> Self {
        let span = hi - lo;
        Self {
            offset: lo,
            scale: if span > 0.0 { span } else { 1.0 },
        }
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn denormalize(&self, p: f64) -> f64 {
        p * self.scale + self.offset
    }
}

/// What a per-sample loss sees: the (scaled, possibly noisy) scalar target,
/// the raw label, and the histogram target when the loss has one.
#[derive(Debug, Clone, Copy)]
pub struct SampleTarget<'a> {
    pub scalar: f64,
    pub raw: f64,
    pub q: Option<&'a WeightVector>,
}

fn head_scalar(trace: &ForwardTrace, i: usize) -> Result<f64> {
    trace
        .outputs()
        .get(i)
        .and_then(HeadOutput::scalar)
        .ok_or_else(|| Error::Shape(format!("head {i} is not a scalar head")))
}

fn head_hist(trace: &ForwardTrace, i: usize) -> Result<&loss::PredictionHistogram> {
    trace
        .outputs()
        .get(i)
        .and_then(HeadOutput::histogram)
        .ok_or_else(|| Error::Shape(format!("head {i} is not a softmax head")))
}

fn need_q<'a>(t: &SampleTarget<'a>) -> Result<&'a WeightVector> {
    t.q.ok_or_else(|| Error::InvalidParameter("histogram loss needs a target weight vector".into()))
}

/// Loss of one sample and its gradient with respect to every head output.
pub fn composite_loss_grads(
    trace: &ForwardTrace,
    target: &SampleTarget<'_>,
    kind: &LossKind,
    grid: Option<&BinGrid>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let expected = trace.outputs().len();
    let wanted = match kind {
        LossKind::Multitask { .. } => 2,
        LossKind::Moments { count } => *count,
        _ => 1,
    };
    if expected != wanted {
        return Err(Error::Shape(format!(
            "{} loss needs {wanted} heads, model has {expected}",
            kind.name()
        )));
    }
    match *kind {
        LossKind::Hl => {
            let h = head_hist(trace, 0)?;
            let q = need_q(target)?;
            Ok((hl_loss(q, h), vec![hl_grad_logits(q, h)]))
        }
        LossKind::L2 => {
            let p = head_scalar(trace, 0)?;
            Ok((loss::l2_loss(p, target.scalar), vec![vec![loss::l2_grad(p, target.scalar)]]))
        }
        LossKind::L1 => {
            let p = head_scalar(trace, 0)?;
            Ok((loss::l1_loss(p, target.scalar), vec![vec![loss::l1_grad(p, target.scalar)]]))
        }
        LossKind::L2Softmax => {
            let h = head_hist(trace, 0)?;
            let grid = grid.ok_or_else(|| Error::InvalidParameter("l2_softmax needs a bin grid".into()))?;
            let (l, g) = l2_softmax_loss(grid, h, target.raw);
            Ok((l, vec![g]))
        }
        LossKind::Multitask { lambda } => {
            let p = head_scalar(trace, 0)?;
            let h = head_hist(trace, 1)?;
            let q = need_q(target)?;
            let l = loss::l2_loss(p, target.scalar) + lambda * hl_loss(q, h);
            let g_hist = hl_grad_logits(q, h).into_iter().map(|g| lambda * g).collect();
            Ok((l, vec![vec![loss::l2_grad(p, target.scalar)], g_hist]))
        }
        LossKind::Moments { count } => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(count);
            for m in 0..count {
                let p = head_scalar(trace, m)?;
                let t = target.scalar.powi(m as i32 + 1);
                total += loss::l2_loss(p, t);
                grads.push(vec![loss::l2_grad(p, t)]);
            }
            Ok((total, grads))
        }
    }
}

/// Sigma for `epoch` (0-based): geometric decay by
/// `tau = (final / start)^(1 / n)` per epoch over the first
/// `n = ceil(fraction * total)` epochs, then constant at `sigma_final`.
pub fn anneal_sigma(epoch: usize, total_epochs: usize, sigma_start: f64, sigma_final: f64, fraction: f64) -> f64 {
    let n = (fraction * total_epochs as f64).ceil() as usize;
    if epoch >= n || sigma_start == sigma_final {
        return sigma_final;
    }
    let tau = (sigma_final / sigma_start).powf(1.0 / n as f64);
    (sigma_start * tau.powi(epoch as i32)).max(sigma_final)
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: MlpModel,
    pub grid: Option<BinGrid>,
    pub scaler: TargetScaler,
    pub metrics: Vec<MetricsRecord>,
    /// Number of optimizer steps taken.
    pub steps: usize,
    /// Largest gradient norm after clipping, when clipping is enabled.
    pub max_post_clip_norm: Option<f64>,
}

impl FitOutput {
    /// Primary prediction in target units.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let trace = self.model.forward(x)?;
        self.prediction(&trace)
    }

    fn prediction(&self, trace: &ForwardTrace) -> Result<f64> {
        match trace.head(0) {
            HeadOutput::Scalar(p) => Ok(self.scaler.denormalize(*p)),
            HeadOutput::Histogram(_) => primary_prediction(trace, self.grid.as_ref()),
        }
    }

    /// Jacobian norm of the prediction in target units.
    pub fn input_jacobian_norm(&self, x: &[f64]) -> Result<f64> {
        let j = self.model.input_jacobian_norm(x, self.grid.as_ref())?;
        Ok(match self.model.head_kinds()[0] {
            HeadKind::Scalar => j * self.scaler.scale,
            HeadKind::Softmax { .. } => j,
        })
    }
}

struct EpochEval {
    loss: f64,
    grad_norm: f64,
    train_mae: f64,
    train_rmse: f64,
    test: Option<(f64, f64)>,
}

fn mae_rmse(errors: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for e in errors {
        abs += e.abs();
        sq += e * e;
        n += 1;
    }
    let n = n.max(1) as f64;
    (abs / n, (sq / n).sqrt())
}

/// Trains `model` on the dataset's training split.
///
/// Scalar-head targets are scaled to [0, 1] when `normalize_targets` is set;
/// histogram heads always work in target units on a grid built from the
/// training targets. Metrics are computed after every epoch on the full
/// splits, with predictions mapped back to target units.
pub fn fit(mut model: MlpModel, data: &Dataset, config: &TrainConfig) -> Result<FitOutput> {
    config.validate()?;
    if model.input_dim() != data.dim() {
        return Err(Error::Shape(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    if model.head_kinds() != config.loss.heads(config.grid.k).as_slice() {
        return Err(Error::Shape(format!(
            "model heads {:?} do not match {} loss",
            model.head_kinds(),
            config.loss.name()
        )));
    }
    let train = data.train_indices();
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if config.freeze_trunk {
        model.freeze_trunk();
    }
    let train_range = data.train_target_range();
    let grid = if config.loss.uses_grid() {
        let g = config.grid.build(train_range)?;
        if config.support == SupportPolicy::Strict {
            if let Some(&i) = train.iter().find(|&&i| !g.contains(data.target(i))) {
                return Err(Error::OutOfSupport {
                    y: data.target(i),
                    lo: g.a(),
                    hi: g.b(),
                });
            }
        }
        Some(g)
    } else {
        None
    };
    let scaler = if config.normalize_targets && config.loss.scalar_targets() {
        TargetScaler::unit_range(train_range.0, train_range.1)
    } else {
        TargetScaler::identity()
    };
    let base_spec = grid.as_ref().map(|g| config.target.resolve(g));
    let anneal = match (config.anneal, base_spec, grid.as_ref()) {
        (Some(a), Some(TargetSpec::Gaussian { sigma }), Some(g)) => Some((
            a.sigma_start_w * g.width(),
            a.sigma_final_w.map_or(sigma, |f| f * g.width()),
            a.fraction,
        )),
        _ => None,
    };

    let mut out = FitOutput {
        model,
        grid,
        scaler,
        metrics: Vec::with_capacity(config.epochs),
        steps: 0,
        max_post_clip_norm: None,
    };
    if config.epochs == 0 {
        return Ok(out);
    }

    let clean: Vec<f64> = (0..data.len()).map(|i| scaler.normalize(data.target(i))).collect();
    let mut noisy = clean.clone();
    let mut weights: Vec<Option<WeightVector>> = vec![None; data.len()];
    let mut current_sigma: Option<f64> = None;
    let mut state = AdamState::new(out.model.num_params());
    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut noise_rng = stream_rng(config.seed, STREAM_NOISE);
    let mut dropout_rng = stream_rng(config.seed, STREAM_DROPOUT);
    let noise = (config.target_noise_std > 0.0)
        .then(|| Normal::new(0.0, config.target_noise_std).expect("validated noise std"));
    let mut order: Vec<usize> = train.to_vec();

    for epoch in 0..config.epochs {
        if config.loss.uses_histogram_targets() {
            let (spec, grid) = (base_spec.expect("histogram losses have a grid"), out.grid.as_ref().expect("grid"));
            let spec = match (spec, anneal) {
                (TargetSpec::Gaussian { .. }, Some((start, fin, frac))) => TargetSpec::Gaussian {
                    sigma: anneal_sigma(epoch, config.epochs, start, fin, frac),
                },
                (s, _) => s,
            };
            let sigma = match spec {
                TargetSpec::Gaussian { sigma } => Some(sigma),
                _ => None,
            };
            if epoch == 0 || sigma != current_sigma {
                for &i in train {
                    weights[i] = Some(spec.weights(grid, data.target(i), config.support)?);
                }
                current_sigma = sigma;
            }
        }
        if let Some(dist) = &noise {
            for &i in train {
                noisy[i] = clean[i] + dist.sample(&mut noise_rng);
            }
        }
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = ParameterGradients::zeros(out.model.num_params());
            for &i in batch {
                let trace = out.model.forward_train(data.row(i), &mut dropout_rng)?;
                let target = SampleTarget {
                    scalar: noisy[i],
                    raw: data.target(i),
                    q: weights[i].as_ref(),
                };
                let (l, head_grads) = composite_loss_grads(&trace, &target, &config.loss, out.grid.as_ref())?;
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("loss {l} at epoch {}", epoch + 1)));
                }
                out.model.backward_into(&trace, &head_grads, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(threshold) = config.clip_threshold {
                let (_, after) = clip_global_norm(grads.as_mut_slice(), threshold);
                out.max_post_clip_norm = Some(out.max_post_clip_norm.map_or(after, |m: f64| m.max(after)));
            }
            let range = out.model.trainable_range();
            adam_step(out.model.params_mut(), grads.as_slice(), &mut state, &config.optimizer, range)?;
            out.steps += 1;
        }

        let eval = evaluate(&out, data, &clean, &weights, config)?;
        let floor = loss_floor(&config.loss, train, &weights);
        let gap = eval.loss - floor;
        out.metrics.push(MetricsRecord {
            epoch: epoch + 1,
            train_mae: eval.train_mae,
            train_rmse: eval.train_rmse,
            test_mae: eval.test.map(|t| t.0),
            test_rmse: eval.test.map(|t| t.1),
            loss: eval.loss,
            grad_norm_normalized: (gap > MIN_LOSS_GAP).then(|| eval.grad_norm / gap),
            sigma: current_sigma,
        });
    }
    Ok(out)
}

/// Smallest achievable mean training loss: the mean target entropy (scaled by
/// lambda for the multitask head) for histogram losses, zero otherwise.
fn loss_floor(kind: &LossKind, train: &[usize], weights: &[Option<WeightVector>]) -> f64 {
    let scale = match *kind {
        LossKind::Hl => 1.0,
        LossKind::Multitask { lambda } => lambda,
        _ => return 0.0,
    };
    let total: f64 = train
        .iter()
        .filter_map(|&i| weights[i].as_ref())
        .map(loss::entropy_floor)
        .sum();
    scale * total / train.len() as f64
}

fn evaluate(
    out: &FitOutput,
    data: &Dataset,
    clean: &[f64],
    weights: &[Option<WeightVector>],
    config: &TrainConfig,
) -> Result<EpochEval> {
    let train = data.train_indices();
    let mut grads = ParameterGradients::zeros(out.model.num_params());
    let mut loss_sum = 0.0;
    let mut errors = Vec::with_capacity(train.len());
    for &i in train {
        let trace = out.model.forward(data.row(i))?;
        let target = SampleTarget {
            scalar: clean[i],
            raw: data.target(i),
            q: weights[i].as_ref(),
        };
        let (l, head_grads) = composite_loss_grads(&trace, &target, &config.loss, out.grid.as_ref())?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("training loss {l}")));
        }
        loss_sum += l;
        out.model.backward_into(&trace, &head_grads, &mut grads)?;
        errors.push(out.prediction(&trace)? - data.target(i));
    }
    let n = train.len() as f64;
    grads.scale(1.0 / n);
    let (train_mae, train_rmse) = mae_rmse(errors.into_iter());
    let test = data.test_indices();
    let test = if test.is_empty() {
        None
    } else {
        let errs = test
            .iter()
            .map(|&i| out.predict(data.row(i)).map(|p| p - data.target(i)))
            .collect::<Result<Vec<_>>>()?;
        Some(mae_rmse(errs.into_iter()))
    };
    Ok(EpochEval {
        loss: loss_sum / n,
        grad_norm: global_norm(grads.as_slice()),
        train_mae,
        train_rmse,
        test,
    })
}

/// Normalized full-batch gradient norms per epoch for HL or l2 training;
/// `None` marks epochs where the loss had reached its floor.
pub fn grad_norm_trace(model: MlpModel, data: &Dataset, config: &TrainConfig) -> Result<Vec<Option<f64>>> {
    if !matches!(config.loss, LossKind::Hl | LossKind::L2) {
        return Err(Error::Config(format!(
            "gradient-norm traces are defined for hl and l2, not {}",
            config.loss.name()
        )));
    }
    Ok(fit(model, data, config)?
        .metrics
        .into_iter()
        .map(|m| m.grad_norm_normalized)
        .collect())
}
