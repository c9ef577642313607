//! Dense ReLU network with scalar and softmax heads, manual backprop.
//!
//! All parameters live in one flat buffer: hidden layers first (the trunk),
//! then heads in order. Each layer stores a row-major `outputs x inputs`
//! weight matrix followed by an optional bias vector.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinGrid;
use crate::loss::PredictionHistogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Scalar,
    Softmax { bins: usize },
}

impl HeadKind {
    pub fn width(&self) -> usize {
        match *self {
            HeadKind::Scalar => 1,
            HeadKind::Softmax { bins } => bins,
        }
    }
}

/// Architecture description used to build a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<HeadKind>,
    pub head_bias: bool,
    pub input_dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    w_off: usize,
    b_off: Option<usize>,
}

impl Dense {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.b_off.map_or(0, |_| self.outputs)
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.w_off..self.w_off + self.inputs * self.outputs];
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                dot + self.b_off.map_or(0.0, |b| params[b + o])
            })
            .collect()
    }

    /// Accumulates parameter gradients (when `grads` is given) and returns the
    /// gradient with respect to the layer input.
    fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        g_out: &[f64],
        grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        if let Some(grads) = grads {
            for (o, &g) in g_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &mut grads[self.w_off + o * self.inputs..self.w_off + (o + 1) * self.inputs];
                for (r, &xi) in row.iter_mut().zip(x) {
                    *r += g * xi;
                }
                if let Some(b) = self.b_off {
                    grads[b + o] += g;
                }
            }
        }
        let w = &params[self.w_off..self.w_off + self.inputs * self.outputs];
        let mut g_in = vec![0.0; self.inputs];
        for (o, &g) in g_out.iter().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            for (gi, &wi) in g_in.iter_mut().zip(row) {
                *gi += wi * g;
            }
        }
        g_in
    }
}

/// Output of one head for one input.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput {
    Scalar(f64),
    Histogram(PredictionHistogram),
}

impl HeadOutput {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            HeadOutput::Scalar(v) => Some(*v),
            HeadOutput::Histogram(_) => None,
        }
    }

    pub fn histogram(&self) -> Option<&PredictionHistogram> {
        match self {
            HeadOutput::Histogram(h) => Some(h),
            HeadOutput::Scalar(_) => None,
        }
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    version: u64,
    input: Vec<f64>,
    pre_activations: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
    outputs: Vec<HeadOutput>,
}

impl ForwardTrace {
    pub fn outputs(&self) -> &[HeadOutput] {
        &self.outputs
    }

    pub fn head(&self, i: usize) -> &HeadOutput {
        &self.outputs[i]
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre_activations
    }

    /// Last hidden activations (the input itself when there are no hidden
    /// layers).
    pub fn features(&self) -> &[f64] {
        self.activations.last().unwrap_or(&self.input)
    }
}

/// Gradients laid out like the model's flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients {
    values: Vec<f64>,
}

impl ParameterGradients {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    hidden: Vec<Dense>,
    heads: Vec<Dense>,
    params: Vec<f64>,
    trunk_len: usize,
    trunk_frozen: bool,
    version: u64,
}

impl MlpModel {
    /// Builds a model with fan-in scaled Gaussian weights (variance
    /// `1 / fan_in`) and zero biases. Hidden layers are drawn first, then
    /// heads in order, so appending a head leaves earlier draws unchanged.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        model.init_range(0, model.hidden.len() + model.heads.len(), rng);
        Ok(model)
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        if spec.input_dim == 0 {
            return Err(Error::Shape("input dimension must be positive".into()));
        }
        if spec.hidden.contains(&0) {
            return Err(Error::Shape("hidden layers must be non-empty".into()));
        }
        if spec.heads.is_empty() {
            return Err(Error::Shape("at least one head is required".into()));
        }
        if spec.heads.iter().any(|h| h.width() == 0) {
            return Err(Error::Shape("softmax heads need at least one bin".into()));
        }
        if !(0.0..1.0).contains(&spec.input_dropout) {
            return Err(Error::InvalidParameter(format!(
                "input dropout must lie in [0, 1), got {}",
                spec.input_dropout
            )));
        }
        let mut offset = 0;
        let mut fan_in = spec.input_dim;
        let mut hidden = Vec::with_capacity(spec.hidden.len());
        for &units in &spec.hidden {
            let layer = Dense {
                inputs: fan_in,
                outputs: units,
                w_off: offset,
                b_off: Some(offset + fan_in * units),
            };
            offset += layer.len();
            fan_in = units;
            hidden.push(layer);
        }
        let trunk_len = offset;
        let mut heads = Vec::with_capacity(spec.heads.len());
        for kind in &spec.heads {
            let outputs = kind.width();
            let layer = Dense {
                inputs: fan_in,
                outputs,
                w_off: offset,
                b_off: spec.head_bias.then_some(offset + fan_in * outputs),
            };
            offset += layer.len();
            heads.push(layer);
        }
        Ok(Self {
            spec,
            hidden,
            heads,
            params: vec![0.0; offset],
            trunk_len,
            trunk_frozen: false,
            version: 0,
        })
    }

    fn layer(&self, idx: usize) -> &Dense {
        if idx < self.hidden.len() {
            &self.hidden[idx]
        } else {
            &self.heads[idx - self.hidden.len()]
        }
    }

    fn init_range<R: Rng + ?Sized>(&mut self, from: usize, to: usize, rng: &mut R) {
        for idx in from..to {
            let layer = self.layer(idx).clone();
            let normal = Normal::new(0.0, (1.0 / layer.inputs as f64).sqrt())
                .expect("positive fan-in");
            for p in &mut self.params[layer.w_off..layer.w_off + layer.inputs * layer.outputs] {
                *p = normal.sample(rng);
            }
            if let Some(b) = layer.b_off {
                self.params[b..b + layer.outputs].fill(0.0);
            }
        }
        self.version += 1;
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn head_kinds(&self) -> &[HeadKind] {
        &self.spec.heads
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to all parameters. Invalidates outstanding traces.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn trunk_params(&self) -> &[f64] {
        &self.params[..self.trunk_len]
    }

    pub fn head_params(&self) -> &[f64] {
        &self.params[self.trunk_len..]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Parameter indices an optimizer may update.
    pub fn trainable_range(&self) -> std::ops::Range<usize> {
        if self.trunk_frozen {
            self.trunk_len..self.params.len()
        } else {
            0..self.params.len()
        }
    }

    pub fn freeze_trunk(&mut self) {
        self.trunk_frozen = true;
    }

    pub fn unfreeze_trunk(&mut self) {
        self.trunk_frozen = false;
    }

    pub fn is_trunk_frozen(&self) -> bool {
        self.trunk_frozen
    }

    /// Copies the hidden-layer parameters of `source`, which must have the same
    /// input size and hidden widths.
    pub fn load_trunk(&mut self, source: &MlpModel) -> Result<()> {
        if source.spec.input_dim != self.spec.input_dim || source.spec.hidden != self.spec.hidden {
            return Err(Error::Shape(format!(
                "trunk {}->{:?} cannot be loaded into {}->{:?}",
                source.spec.input_dim, source.spec.hidden, self.spec.input_dim, self.spec.hidden
            )));
        }
        self.params[..self.trunk_len].copy_from_slice(&source.params[..source.trunk_len]);
        self.version += 1;
        Ok(())
    }

    /// Redraws every head from the initializer.
    pub fn reinitialize_heads<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let first = self.hidden.len();
        self.init_range(first, first + self.heads.len(), rng);
    }

    /// Redraws the hidden layers from the initializer.
    pub fn reinitialize_trunk<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.init_range(0, self.hidden.len(), rng);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass (no dropout).
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        Ok(self.run(x.to_vec()))
    }

    /// Training-mode forward pass with inverted input dropout.
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let p = self.spec.input_dropout;
        if p == 0.0 {
            return Ok(self.run(x.to_vec()));
        }
        let keep = 1.0 / (1.0 - p);
        let input = x
            .iter()
            .map(|&v| if rng.random::<f64>() < p { 0.0 } else { v * keep })
            .collect();
        Ok(self.run(input))
    }

    fn run(&self, input: Vec<f64>) -> ForwardTrace {
        let mut pre_activations = Vec::with_capacity(self.hidden.len());
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let x = activations.last().unwrap_or(&input);
            let pre = layer.forward(&self.params, x);
            activations.push(pre.iter().map(|&v| v.max(0.0)).collect());
            pre_activations.push(pre);
        }
        let features = activations.last().unwrap_or(&input);
        let outputs = self
            .heads
            .iter()
            .zip(&self.spec.heads)
            .map(|(layer, kind)| {
                let out = layer.forward(&self.params, features);
                match kind {
                    HeadKind::Scalar => HeadOutput::Scalar(out[0]),
                    HeadKind::Softmax { .. } => {
                        HeadOutput::Histogram(PredictionHistogram::from_logits(out))
                    }
                }
            })
            .collect();
        ForwardTrace {
            version: self.version,
            input,
            pre_activations,
            activations,
            outputs,
        }
    }

    /// Gradients of the loss with respect to every parameter, given the loss
    /// gradient with respect to each head's output (logits for softmax heads).
    pub fn backward(&self, trace: &ForwardTrace, head_grads: &[Vec<f64>]) -> Result<ParameterGradients> {
        let mut grads = ParameterGradients::zeros(self.params.len());
        self.backward_into(trace, head_grads, &mut grads)?;
        Ok(grads)
    }

    /// Adds this sample's parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        head_grads: &[Vec<f64>],
        grads: &mut ParameterGradients,
    ) -> Result<()> {
        self.check_backward(trace, head_grads)?;
        if grads.values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, model has {}",
                grads.values.len(),
                self.params.len()
            )));
        }
        self.backprop(trace, head_grads, Some(&mut grads.values));
        Ok(())
    }

    /// Gradient of the loss with respect to the (post-dropout) input.
    pub fn input_gradient(&self, trace: &ForwardTrace, head_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_backward(trace, head_grads)?;
        Ok(self.backprop(trace, head_grads, None))
    }

    fn check_backward(&self, trace: &ForwardTrace, head_grads: &[Vec<f64>]) -> Result<()> {
        if trace.version != self.version {
            return Err(Error::StaleTrace {
                trace: trace.version,
                model: self.version,
            });
        }
        if head_grads.len() != self.heads.len() {
            return Err(Error::Shape(format!(
                "{} head gradients for {} heads",
                head_grads.len(),
                self.heads.len()
            )));
        }
        for (i, (g, layer)) in head_grads.iter().zip(&self.heads).enumerate() {
            if g.len() != layer.outputs {
                return Err(Error::Shape(format!(
                    "head {i} gradient has {} entries, head has {} outputs",
                    g.len(),
                    layer.outputs
                )));
            }
        }
        Ok(())
    }

    fn backprop(&self, trace: &ForwardTrace, head_grads: &[Vec<f64>], mut grads: Option<&mut [f64]>) -> Vec<f64> {
        let features = trace.features();
        let mut g = vec![0.0; features.len()];
        for (layer, hg) in self.heads.iter().zip(head_grads) {
            let gi = layer.backward(&self.params, features, hg, grads.as_deref_mut());
            for (a, b) in g.iter_mut().zip(gi) {
                *a += b;
            }
        }
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            for (gv, &pre) in g.iter_mut().zip(&trace.pre_activations[l]) {
                if pre <= 0.0 {
                    *gv = 0.0;
                }
            }
            let x = if l == 0 {
                &trace.input
            } else {
                &trace.activations[l - 1]
            };
            g = layer.backward(&self.params, x, &g, grads.as_deref_mut());
        }
        g
    }

    /// Primary prediction: the first head's scalar, or the mean of its
    /// histogram over `grid`.
    pub fn predict(&self, x: &[f64], grid: Option<&BinGrid>) -> Result<f64> {
        let trace = self.forward(x)?;
        primary_prediction(&trace, grid)
    }

    /// Frobenius norm of the Jacobian of the primary prediction with respect
    /// to the input.
    pub fn input_jacobian_norm(&self, x: &[f64], grid: Option<&BinGrid>) -> Result<f64> {
        let trace = self.forward(x)?;
        let mut head_grads: Vec<Vec<f64>> = self.heads.iter().map(|l| vec![0.0; l.outputs]).collect();
        head_grads[0] = match &trace.outputs[0] {
            HeadOutput::Scalar(_) => vec![1.0],
            HeadOutput::Histogram(h) => {
                let grid = grid.ok_or_else(|| {
                    Error::InvalidParameter("softmax head prediction needs a bin grid".into())
                })?;
                let m = h.mean(grid);
                h.probs()
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| p * (grid.center(j) - m))
                    .collect()
            }
        };
        let g = self.backprop(&trace, &head_grads, None);
        Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            trunk_frozen: self.trunk_frozen,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = Self::zeros(ckpt.spec)?;
        if ckpt.params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} parameters, architecture needs {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        if ckpt.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        model.params = ckpt.params;
        model.trunk_frozen = ckpt.trunk_frozen;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_checkpoint(serde_json::from_reader(file)?)
    }
}

pub fn primary_prediction(trace: &ForwardTrace, grid: Option<&BinGrid>) -> Result<f64> {
    match &trace.outputs[0] {
        HeadOutput::Scalar(v) => Ok(*v),
        HeadOutput::Histogram(h) => grid
            .map(|g| h.mean(g))
            .ok_or_else(|| Error::InvalidParameter("softmax head prediction needs a bin grid".into())),
    }
}

pub const CHECKPOINT_FORMAT: &str = "histloss-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: architecture plus the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: MlpSpec,
    pub trunk_frozen: bool,
    pub params: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::hl_grad_logits;
    use crate::targets::WeightVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(input: usize, hidden: &[usize], heads: &[HeadKind]) -> MlpSpec {
        MlpSpec {
            input_dim: input,
            hidden: hidden.to_vec(),
            heads: heads.to_vec(),
            head_bias: true,
            input_dropout: 0.0,
        }
    }

    #[test]
    fn zero_model_gives_uniform_histogram() {
        let m = MlpModel::zeros(spec(3, &[4], &[HeadKind::Softmax { bins: 7 }])).unwrap();
        let t = m.forward(&[1.0, -2.0, 0.5]).unwrap();
        let h = t.head(0).histogram().unwrap();
        assert!(h.probs().iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn identity_scalar_head() {
        let mut m = MlpModel::zeros(spec(1, &[], &[HeadKind::Scalar])).unwrap();
        m.params_mut()[0] = 1.0;
        assert_eq!(m.predict(&[3.0], None).unwrap(), 3.0);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MlpModel::new(spec(5, &[8, 8], &[HeadKind::Softmax { bins: 6 }, HeadKind::Scalar]), &mut rng).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 0.7];
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a.outputs(), b.outputs());
    }

    #[test]
    fn shape_errors() {
        let m = MlpModel::zeros(spec(2, &[3], &[HeadKind::Scalar])).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(Error::Shape(_))));
        let t = m.forward(&[1.0, 2.0]).unwrap();
        assert!(m.backward(&t, &[vec![1.0, 2.0]]).is_err());
        assert!(m.backward(&t, &[]).is_err());
        assert!(MlpModel::zeros(spec(0, &[3], &[HeadKind::Scalar])).is_err());
        assert!(MlpModel::zeros(spec(2, &[3], &[])).is_err());
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MlpModel::new(spec(2, &[3], &[HeadKind::Scalar]), &mut rng).unwrap();
        let t = m.forward(&[1.0, 2.0]).unwrap();
        m.params_mut()[0] += 1.0;
        assert!(matches!(m.backward(&t, &[vec![1.0]]), Err(Error::StaleTrace { .. })));
    }

    #[test]
    fn zero_head_grads_give_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MlpModel::new(spec(3, &[5, 4], &[HeadKind::Softmax { bins: 4 }]), &mut rng).unwrap();
        let t = m.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = m.backward(&t, &[vec![0.0; 4]]).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_softmax_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = spec(3, &[], &[HeadKind::Softmax { bins: 4 }]);
        s.head_bias = false;
        let m = MlpModel::new(s, &mut rng).unwrap();
        let x = [0.5, -1.5, 2.0];
        let t = m.forward(&x).unwrap();
        let q = WeightVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let hmq = hl_grad_logits(&q, t.head(0).histogram().unwrap());
        let g = m.backward(&t, &[hmq.clone()]).unwrap();
        for o in 0..4 {
            for i in 0..3 {
                assert!((g.as_slice()[o * 3 + i] - hmq[o] * x[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = spec(200, &[], &[HeadKind::Scalar]);
        s.input_dropout = 0.5;
        let m = MlpModel::new(s, &mut rng).unwrap();
        let x = vec![1.0; 200];
        let t = m.forward_train(&x, &mut rng).unwrap();
        let zeros = t.input.iter().filter(|v| **v == 0.0).count();
        assert!(zeros > 50 && zeros < 150, "{zeros}");
        assert!(t.input.iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(m.forward(&x).unwrap().input, x);
    }

    #[test]
    fn trunk_swaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = spec(3, &[4, 4], &[HeadKind::Scalar]);
        let mut a = MlpModel::new(s.clone(), &mut rng).unwrap();
        let b = MlpModel::new(s, &mut rng).unwrap();
        let before = a.clone();
        let same = a.clone();
        a.load_trunk(&same).unwrap();
        assert_eq!(a.params(), before.params());
        a.load_trunk(&b).unwrap();
        assert_eq!(a.trunk_params(), b.trunk_params());
        assert_eq!(a.head_params(), before.head_params());
        let other = MlpModel::new(spec(3, &[5, 4], &[HeadKind::Scalar]), &mut rng).unwrap();
        assert!(a.load_trunk(&other).is_err());
        a.reinitialize_heads(&mut rng);
        assert_ne!(a.head_params(), before.head_params());
        assert_eq!(a.trunk_params(), b.trunk_params());
    }

    #[test]
    fn frozen_trunk_excluded_from_trainable_range() {
        let mut m = MlpModel::zeros(spec(2, &[3], &[HeadKind::Scalar])).unwrap();
        assert_eq!(m.trainable_range(), 0..m.num_params());
        m.freeze_trunk();
        assert_eq!(m.trainable_range(), 9..m.num_params());
    }

    #[test]
    fn linear_jacobian() {
        let mut m = MlpModel::zeros(spec(3, &[], &[HeadKind::Scalar])).unwrap();
        m.params_mut()[..3].copy_from_slice(&[1.0, -2.0, 2.0]);
        assert!((m.input_jacobian_norm(&[0.3, 0.1, 9.0], None).unwrap() - 3.0).abs() < 1e-15);
        let c = MlpModel::zeros(spec(3, &[4], &[HeadKind::Scalar])).unwrap();
        assert_eq!(c.input_jacobian_norm(&[1.0, 1.0, 1.0], None).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = MlpModel::new(spec(4, &[6], &[HeadKind::Softmax { bins: 9 }, HeadKind::Scalar]), &mut rng).unwrap();
        m.freeze_trunk();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = MlpModel::load(&path).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.spec(), m.spec());
        assert!(back.is_trunk_frozen());
    }
}
