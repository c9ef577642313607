#![allow(dead_code)]

use histloss::grid::BinGrid;
use histloss::loss::{hl_loss, PredictionHistogram};
use histloss::net::{HeadKind, HeadOutput, MlpModel, MlpSpec};
use histloss::targets::WeightVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central differences with step `1e-6 * max(1, |x_i|)`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    n(&d) / n(a).max(n(b)).max(1e-12)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Truncated-Gaussian bin masses by per-bin quadrature of the density.
pub fn gaussian_weights_quadrature(grid: &BinGrid, y: f64, sigma: f64) -> Vec<f64> {
    let pdf = |t: f64| (-0.5 * ((t - y) / sigma).powi(2)).exp();
    let raw: Vec<f64> = (0..grid.k())
        .map(|i| simpson(pdf, grid.left_edge(i), grid.left_edge(i + 1), 4000))
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|m| m / z).collect()
}

pub fn random_logits(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(-3.0..3.0)).collect()
}

pub fn random_distribution(k: usize, rng: &mut impl Rng) -> WeightVector {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    WeightVector::new(raw.into_iter().map(|v| v / s).collect()).unwrap()
}

pub fn random_model(input_dim: usize, hidden: Vec<usize>, heads: Vec<HeadKind>, seed: u64) -> MlpModel {
    let spec = MlpSpec {
        input_dim,
        hidden,
        heads,
        head_bias: true,
        input_dropout: 0.0,
    };
    let mut m = MlpModel::new(spec, &mut rng(seed)).unwrap();
    // Nonzero biases so every parameter has a generic gradient.
    let mut r = rng(seed ^ 0xb1a5);
    for p in m.params_mut() {
        *p += r.random_range(-0.1..0.1);
    }
    m
}

/// `c * scalar + HL(q, softmax)` summed over the heads of `trace`.
pub fn probe_loss(outputs: &[HeadOutput], coeffs: &[f64], qs: &[Option<WeightVector>]) -> f64 {
    outputs
        .iter()
        .enumerate()
        .map(|(i, o)| match o {
            HeadOutput::Scalar(s) => coeffs[i] * s,
            HeadOutput::Histogram(h) => hl_loss(qs[i].as_ref().unwrap(), h),
        })
        .sum()
}

/// Kolmogorov-Smirnov statistic of `sample` against U[lo, hi].
pub fn ks_uniform(sample: &[f64], lo: f64, hi: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn hist(logits: Vec<f64>) -> PredictionHistogram {
    PredictionHistogram::from_logits(logits)
}
