//! Numerical checks of the histogram-loss bias and error bounds, plus the
//! corruption and sensitivity measurements used by the studies.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::grid::{BinGrid, PaddingSpec};
use crate::loss::{kl_divergence, PredictionHistogram};
use crate::net::MlpModel;
use crate::targets::{std_normal_mass, WeightVector, MIN_TRUNCATION_MASS};

/// Default padding, in bin widths per side, of the sigma sweep.
pub const DEFAULT_SWEEP_PADDING_BINS: usize = 100;

/// Mean of the discretized truncated Gaussian centred at `y`:
/// `sum_i c_i * P(c_i - w/2 < Y < c_i + w/2) / P(a < Y < b)`.
pub fn truncated_discrete_mean(grid: &BinGrid, y: f64, sigma: f64) -> Result<f64> {
    Ok(y + discrete_bias(grid, y, sigma)?)
}

/// `ŷ - y` for the discretized truncated Gaussian, accumulated as
/// `sum_i q_i (c_i - y)` to avoid cancellation against `y`.
pub fn discrete_bias(grid: &BinGrid, y: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite() && y.is_finite()) {
        return Err(Error::InvalidParameter(format!("need finite y and sigma > 0 (y = {y}, sigma = {sigma})")));
    }
    let k = grid.k();
    let z = std_normal_mass((grid.left_edge(0) - y) / sigma, (grid.left_edge(k) - y) / sigma);
    if !(z > MIN_TRUNCATION_MASS) {
        return Err(Error::Truncation { y, sigma, mass: z });
    }
    // Bin i spans [c_i - w/2, c_i + w/2]; the edges are taken from the grid so
    // neighbouring bins meet exactly.
    let mut total = 0.0;
    let mut lo = (grid.left_edge(0) - y) / sigma;
    for i in 0..k {
        let hi = (grid.left_edge(i + 1) - y) / sigma;
        let mass = std_normal_mass(lo, hi);
        if mass != 0.0 {
            total += mass * (grid.center(i) - y);
        }
        lo = hi;
    }
    Ok(total / z)
}

/// One axis of a bias sweep. Biases are in bin widths.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSweepResult {
    pub axis: Vec<f64>,
    pub mean_abs_bias: Vec<f64>,
    /// `(offset / w, bias / w)` per target, for each axis value.
    pub samples: Vec<Vec<(f64, f64)>>,
}

impl BiasSweepResult {
    pub fn write_csv(&self, path: &Path, axis_name: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{axis_name},mean_abs_bias")?;
        for (x, b) in self.axis.iter().zip(&self.mean_abs_bias) {
            writeln!(f, "{x},{b:e}")?;
        }
        Ok(())
    }

    /// Per-target `(offset, bias)` rows for axis entry `idx`.
    pub fn write_samples_csv(&self, path: &Path, idx: usize) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "offset,bias")?;
        for (o, b) in &self.samples[idx] {
            writeln!(f, "{o},{b:e}")?;
        }
        Ok(())
    }
}

fn equispaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect(),
    }
}

fn sweep_grid(grid: &BinGrid, sigma: f64, ys: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
    let w = grid.width();
    let mut total = 0.0;
    let mut samples = Vec::with_capacity(ys.len());
    for &y in ys {
        let bias = discrete_bias(grid, y, sigma)? / w;
        let offset = (y - grid.center(grid.bin_index_clamped(y))) / w;
        total += bias.abs();
        samples.push((offset, bias));
    }
    Ok((total / ys.len().max(1) as f64, samples))
}

/// Discretization bias against `sigma_w` on `[0, 1]` split into `k` bins of
/// width `1/k`, padded by `pad_bins` extra bins on each side so truncation is
/// negligible.
pub fn bias_sweep_sigma(k: usize, n_points: usize, sigma_ws: &[f64], pad_bins: usize) -> Result<BiasSweepResult> {
    if k == 0 || n_points == 0 {
        return Err(Error::InvalidParameter("sweep needs k > 0 and n_points > 0".into()));
    }
    let w = 1.0 / k as f64;
    let grid = BinGrid::from_edges(-(pad_bins as f64) * w, w, k + 2 * pad_bins)?;
    let ys = equispaced(n_points, 0.0, 1.0);
    let mut out = BiasSweepResult {
        axis: sigma_ws.to_vec(),
        mean_abs_bias: Vec::new(),
        samples: Vec::new(),
    };
    for &sw in sigma_ws {
        let (mean, samples) = sweep_grid(&grid, sw * w, &ys)?;
        out.mean_abs_bias.push(mean);
        out.samples.push(samples);
    }
    Ok(out)
}

/// Total (discretization plus truncation) bias against `psi_sigma`, with the
/// grid over `[0, 1]` built from the padding spec at each value.
pub fn bias_sweep_padding(k: usize, n_points: usize, sigma_w: f64, psi_sigmas: &[f64]) -> Result<BiasSweepResult> {
    if n_points == 0 {
        return Err(Error::InvalidParameter("sweep needs n_points > 0".into()));
    }
    let ys = equispaced(n_points, 0.0, 1.0);
    let mut out = BiasSweepResult {
        axis: psi_sigmas.to_vec(),
        mean_abs_bias: Vec::new(),
        samples: Vec::new(),
    };
    for &psi in psi_sigmas {
        let grid = BinGrid::build(0.0, 1.0, k, PaddingSpec::new(sigma_w, psi))?;
        let (mean, samples) = sweep_grid(&grid, grid.sigma(), &ys)?;
        out.mean_abs_bias.push(mean);
        out.samples.push(samples);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfWidthReport {
    pub width: f64,
    pub sigma_ws: Vec<f64>,
    pub offsets: Vec<f64>,
    /// `bias[s][o]`, in target units, for `sigma_ws[s]` and `offsets[o]`.
    pub bias: Vec<Vec<f64>>,
    pub max_abs_bias: f64,
}

impl HalfWidthReport {
    pub fn within_bound(&self) -> bool {
        self.max_abs_bias <= 0.5 * self.width + 1e-9
    }
}

/// Bias of the discretized Gaussian for labels at `offset * w` from the
/// center of a middle bin of a `k`-bin unit grid, over a `sigma_w` by
/// `offset` grid. Each sigma gets `psi_sigma * sigma_w` bins of padding per
/// side so truncation does not contribute.
pub fn half_width_bias_bound_check(k: usize, sigma_ws: &[f64], offsets: &[f64], psi_sigma: f64) -> Result<HalfWidthReport> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let w = 1.0 / k as f64;
    let mut bias = Vec::with_capacity(sigma_ws.len());
    let mut max_abs: f64 = 0.0;
    for &sw in sigma_ws {
        let pad = (psi_sigma * sw).ceil() as usize + 1;
        let grid = BinGrid::from_edges(-(pad as f64) * w, w, k + 2 * pad)?;
        let center = grid.center(pad + k / 2);
        let row = offsets
            .iter()
            .map(|&o| discrete_bias(&grid, center + o * w, sw * w))
            .collect::<Result<Vec<_>>>()?;
        max_abs = row.iter().fold(max_abs, |m, b| m.max(b.abs()));
        bias.push(row);
    }
    Ok(HalfWidthReport {
        width: w,
        sigma_ws: sigma_ws.to_vec(),
        offsets: offsets.to_vec(),
        bias,
        max_abs_bias: max_abs,
    })
}

/// Both sides of the mean-difference bound
/// `(E_q - E_h)^2 <= 4 max(|a|,|b|)^2 min(KL/2, 1 - exp(-KL))`.
pub fn prediction_bound_sides(grid: &BinGrid, q: &WeightVector, h: &[f64]) -> (f64, f64) {
    let diff: f64 = q
        .as_slice()
        .iter()
        .zip(h)
        .enumerate()
        .map(|(i, (p, r))| (p - r) * grid.center(i))
        .sum();
    let kl = kl_divergence(q.as_slice(), h);
    let m = grid.a().abs().max(grid.b().abs());
    let factor = if kl.is_infinite() {
        1.0
    } else {
        (0.5 * kl).min(-(-kl).exp_m1())
    };
    (diff * diff, 4.0 * m * m * factor)
}

/// Number of pairs violating the mean-difference bound, allowing a relative
/// rounding slack of 1e-12.
pub fn prediction_bound_check(grid: &BinGrid, pairs: &[(WeightVector, PredictionHistogram)]) -> usize {
    pairs
        .iter()
        .filter(|(q, h)| {
            let (lhs, rhs) = prediction_bound_sides(grid, q, h.probs());
            lhs > rhs * (1.0 + 1e-12) + 1e-300
        })
        .count()
}

/// Replaces `round(ratio * n)` targets, chosen without replacement, by
/// uniform draws from `[min, max]` of the original targets. Returns the new
/// targets and the replaced indices in ascending order.
pub fn corrupt_targets<R: Rng + ?Sized>(targets: &[f64], ratio: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidParameter(format!("corruption ratio must lie in [0, 1], got {ratio}")));
    }
    let n = targets.len();
    let count = ((ratio * n as f64).round() as usize).min(n);
    if count == 0 {
        return Ok((targets.to_vec(), Vec::new()));
    }
    let (lo, hi) = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
    let mut idx = sample(rng, n, count).into_vec();
    idx.sort_unstable();
    let mut out = targets.to_vec();
    if lo == hi {
        return Ok((out, idx));
    }
    let dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    for &i in &idx {
        out[i] = dist.sample(rng);
    }
    Ok((out, idx))
}

/// Mean input-Jacobian norm of the model's primary prediction over `inputs`,
/// multiplied by `output_scale` (e.g. to undo target normalization).
pub fn sensitivity_report<'a>(
    model: &MlpModel,
    inputs: impl IntoIterator<Item = &'a [f64]>,
    grid: Option<&BinGrid>,
    output_scale: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for x in inputs {
        total += model.input_jacobian_norm(x, grid)?;
        n += 1;
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(output_scale * total / n as f64)
}
