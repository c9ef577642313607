//! Loss values and their gradients with respect to head outputs.
//!
//! Histogram-head gradients are taken with respect to the logits, so the
//! softmax Jacobian is already folded in. Everything uses natural logarithms.

use crate::grid::BinGrid;
use crate::targets::WeightVector;

/// Softmax output of a histogram head together with its logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHistogram {
    logits: Vec<f64>,
    h: Vec<f64>,
    log_norm: f64,
}

impl PredictionHistogram {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let h = exps.iter().map(|e| e / total).collect();
        Self {
            log_norm: max + total.ln(),
            logits,
            h,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.h
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// `logsumexp(logits)`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub fn log_prob(&self, i: usize) -> f64 {
        self.logits[i] - self.log_norm
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Mean of the predicted histogram, `sum_i h_i c_i`.
    pub fn mean(&self, grid: &BinGrid) -> f64 {
        self.h
            .iter()
            .enumerate()
            .map(|(i, &p)| p * grid.center(i))
            .sum()
    }
}

/// Cross-entropy `-sum_i q_i ln h_i`.
pub fn hl_loss(q: &WeightVector, pred: &PredictionHistogram) -> f64 {
    debug_assert_eq!(q.len(), pred.len());
    -q.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(i, &p)| p * pred.log_prob(i))
        .sum::<f64>()
}

/// Gradient of [`hl_loss`] with respect to the logits: `h - q`.
pub fn hl_grad_logits(q: &WeightVector, pred: &PredictionHistogram) -> Vec<f64> {
    pred.probs()
        .iter()
        .zip(q.as_slice())
        .map(|(h, q)| h - q)
        .collect()
}

/// Entropy of `q`, the smallest value [`hl_loss`] can take for this target.
pub fn entropy_floor(q: &WeightVector) -> f64 {
    -q.as_slice()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `D(q || h)` with `0 ln 0 = 0`; infinite when `h` misses mass of `q`.
pub fn kl_divergence(q: &[f64], h: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&p, &r) in q.iter().zip(h) {
        if p > 0.0 {
            if r <= 0.0 {
                return f64::INFINITY;
            }
            total += p * (p / r).ln();
        }
    }
    total.max(0.0)
}

pub fn l2_loss(pred: f64, y: f64) -> f64 {
    (pred - y) * (pred - y)
}

pub fn l2_grad(pred: f64, y: f64) -> f64 {
    2.0 * (pred - y)
}

pub fn l1_loss(pred: f64, y: f64) -> f64 {
    (pred - y).abs()
}

/// Subgradient of [`l1_loss`]; zero at the kink.
pub fn l1_grad(pred: f64, y: f64) -> f64 {
    let d = pred - y;
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Squared error between the histogram mean and `y`, with the gradient with
/// respect to the logits.
pub fn l2_softmax_loss(grid: &BinGrid, pred: &PredictionHistogram, y: f64) -> (f64, Vec<f64>) {
    let m = pred.mean(grid);
    let r = m - y;
    let grad = pred
        .probs()
        .iter()
        .enumerate()
        .map(|(j, &h)| 2.0 * r * h * (grid.center(j) - m))
        .collect();
    (r * r, grad)
}

/// Compares the norm of the HL gradient with respect to the stacked last-layer
/// weights, `(h - q) features^T`, against `||features|| * sum_i |q_i - h_i|`.
/// Returns `(lhs, rhs)`; the bound holds when `lhs <= rhs`.
pub fn last_layer_grad_bound_check(
    q: &WeightVector,
    pred: &PredictionHistogram,
    features: &[f64],
) -> (f64, f64) {
    let g = hl_grad_logits(q, pred);
    let mut sq = 0.0;
    for gi in &g {
        for f in features {
            let v = gi * f;
            sq += v * v;
        }
    }
    let feat_norm = features.iter().map(|f| f * f).sum::<f64>().sqrt();
    let l1: f64 = g.iter().map(|v| v.abs()).sum();
    (sq.sqrt(), feat_norm * l1)
}
