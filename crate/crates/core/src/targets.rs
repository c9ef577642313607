//! Target distributions: turning a scalar label into bin probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinGrid;

/// Normalizers at or below this are treated as a truncation failure.
pub const MIN_TRUNCATION_MASS: f64 = 1e-300;

/// Probability mass per bin. Entries are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    q: Vec<f64>,
    clamped: bool,
}

impl WeightVector {
    /// Validates a user-supplied probability vector.
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidParameter("empty weight vector".into()));
        }
        if q.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { q, clamped: false })
    }

    fn raw(q: Vec<f64>) -> Self {
        Self { q, clamped: false }
    }

    pub fn one_hot(k: usize, i: usize) -> Self {
        let mut q = vec![0.0; k];
        q[i] = 1.0;
        Self::raw(q)
    }

    pub fn uniform(k: usize) -> Self {
        Self::raw(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// True when the label was outside the support and got clamped to an edge
    /// bin under the lenient policy. Mean preservation does not hold then.
    pub fn was_clamped(&self) -> bool {
        self.clamped
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.q
    }
}

/// How labels outside the grid support are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportPolicy {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian { sigma: f64 },
    Onebin,
    UniformMix { epsilon: f64 },
    Projected,
}

impl TargetSpec {
    pub fn weights(&self, grid: &BinGrid, y: f64, policy: SupportPolicy) -> Result<WeightVector> {
        match *self {
            TargetSpec::Gaussian { sigma } => gaussian_weights(grid, y, sigma),
            TargetSpec::Onebin => onebin_weights(grid, y, policy),
            TargetSpec::UniformMix { epsilon } => uniform_mix_weights(grid, y, epsilon, policy),
            TargetSpec::Projected => projected_weights(grid, y, policy),
        }
    }
}

/// `P(lo < Z < hi)` for a standard normal `Z`, using `erfc` on whichever side
/// keeps both terms away from cancellation.
pub(crate) fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if lo >= 0.0 {
        0.5 * (libm::erfc(lo * s) - libm::erfc(hi * s))
    } else if hi <= 0.0 {
        0.5 * (libm::erfc(-hi * s) - libm::erfc(-lo * s))
    } else {
        0.5 * (libm::erf(hi * s) - libm::erf(lo * s))
    }
}

/// Bin masses of a Gaussian centred at `y`, truncated to the grid support.
pub fn gaussian_weights(grid: &BinGrid, y: f64, sigma: f64) -> Result<WeightVector> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite(format!("target {y}")));
    }
    // Adjacent bins share one computed edge value so the masses telescope.
    let k = grid.k();
    let z = std_normal_mass((grid.left_edge(0) - y) / sigma, (grid.left_edge(k) - y) / sigma);
    if !(z > MIN_TRUNCATION_MASS) {
        return Err(Error::Truncation { y, sigma, mass: z });
    }
    let q = (0..k)
        .map(|i| std_normal_mass((grid.left_edge(i) - y) / sigma, (grid.left_edge(i + 1) - y) / sigma) / z)
        .collect();
    Ok(WeightVector::raw(q))
}

fn bin_for(grid: &BinGrid, y: f64, policy: SupportPolicy) -> Result<(usize, bool)> {
    match grid.bin_index(y) {
        Ok(i) => Ok((i, false)),
        Err(e) => match policy {
            SupportPolicy::Strict => Err(e),
            SupportPolicy::Lenient if y.is_finite() => Ok((grid.bin_index_clamped(y), true)),
            SupportPolicy::Lenient => Err(Error::NonFinite(format!("target {y}"))),
        },
    }
}

pub fn onebin_weights(grid: &BinGrid, y: f64, policy: SupportPolicy) -> Result<WeightVector> {
    let (i, clamped) = bin_for(grid, y, policy)?;
    let mut q = WeightVector::one_hot(grid.k(), i);
    q.clamped = clamped;
    Ok(q)
}

/// One-hot target mixed with `epsilon` on every bin; the true bin keeps
/// `1 - (k - 1) * epsilon`.
pub fn uniform_mix_weights(
    grid: &BinGrid,
    y: f64,
    epsilon: f64,
    policy: SupportPolicy,
) -> Result<WeightVector> {
    let k = grid.k();
    if !(0.0..=1.0 / k as f64).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in [0, 1/k] = [0, {}], got {epsilon}",
            1.0 / k as f64
        )));
    }
    let (i, clamped) = bin_for(grid, y, policy)?;
    let mut q = vec![epsilon; k];
    q[i] = 1.0 - (k - 1) as f64 * epsilon;
    Ok(WeightVector { q, clamped })
}

/// Two-bin target between the neighbouring centers of `y` whose mean is `y`.
pub fn projected_weights(grid: &BinGrid, y: f64, policy: SupportPolicy) -> Result<WeightVector> {
    let k = grid.k();
    let first = grid.center(0);
    let last = grid.center(k - 1);
    if !(first..=last).contains(&y) {
        return match policy {
            SupportPolicy::Strict => Err(Error::OutOfSupport {
                y,
                lo: first,
                hi: last,
            }),
            SupportPolicy::Lenient if y.is_finite() => {
                let i = if y < first { 0 } else { k - 1 };
                let mut q = WeightVector::one_hot(k, i);
                q.clamped = true;
                Ok(q)
            }
            SupportPolicy::Lenient => Err(Error::NonFinite(format!("target {y}"))),
        };
    }
    let w = grid.width();
    let mut i = (((y - first) / w).floor() as usize).min(k - 1);
    if grid.center(i) > y {
        i -= 1;
    } else if i + 1 < k && grid.center(i + 1) <= y {
        i += 1;
    }
    let mut q = vec![0.0; k];
    if i + 1 == k {
        q[i] = 1.0;
        return Ok(WeightVector::raw(q));
    }
    let upper = (y - grid.center(i)) / w;
    q[i] = 1.0 - upper;
    q[i + 1] = upper;
    Ok(WeightVector::raw(q))
}

/// Mean of the histogram with masses `q` placed at the bin centers.
pub fn target_mean(grid: &BinGrid, q: &WeightVector) -> f64 {
    q.as_slice()
        .iter()
        .enumerate()
        .map(|(i, &p)| p * grid.center(i))
        .sum()
}

/// Mean absolute difference between each label and the mean of its target
/// distribution.
pub fn target_mean_bias(
    targets: &[f64],
    grid: &BinGrid,
    spec: &TargetSpec,
    policy: SupportPolicy,
) -> Result<f64> {
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &y in targets {
        let q = spec.weights(grid, y, policy)?;
        total += (target_mean(grid, &q) - y).abs();
    }
    Ok(total / targets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PaddingSpec;

    fn unit_grid(k: usize) -> BinGrid {
        BinGrid::build(0.0, 1.0, k, PaddingSpec::new(1.0, 0.0)).unwrap()
    }

    fn sum(q: &WeightVector) -> f64 {
        q.as_slice().iter().sum()
    }

    #[test]
    fn gaussian_central_bins() {
        let g = unit_grid(10);
        let q = gaussian_weights(&g, 0.5, 0.1).unwrap();
        let z = 0.5 * (libm::erf(5.0 / 2f64.sqrt()) * 2.0);
        let expected = libm::erf(std::f64::consts::FRAC_1_SQRT_2) / (2.0 * z);
        assert!((q.as_slice()[4] - expected).abs() < 1e-14);
        assert!((q.as_slice()[5] - 0.341_344_7).abs() < 1e-5);
        for i in 0..10 {
            assert!((q.as_slice()[i] - q.as_slice()[9 - i]).abs() < 1e-15);
        }
        assert!((sum(&q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_delta_limit() {
        let g = unit_grid(10);
        let q = gaussian_weights(&g, 0.55, g.width() / 1000.0).unwrap();
        let hot = WeightVector::one_hot(10, 5);
        let sup = q
            .as_slice()
            .iter()
            .zip(hot.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-12, "{sup}");
    }

    #[test]
    fn gaussian_truncation_error() {
        let g = unit_grid(10);
        let err = gaussian_weights(&g, 100.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }));
        assert!(err.to_string().contains("padding"));
        assert!(gaussian_weights(&g, 0.5, 0.0).is_err());
    }

    #[test]
    fn onebin_cases() {
        let g = unit_grid(10);
        assert_eq!(onebin_weights(&g, 0.05, SupportPolicy::Strict).unwrap(), WeightVector::one_hot(10, 0));
        assert_eq!(onebin_weights(&g, 1.0, SupportPolicy::Strict).unwrap(), WeightVector::one_hot(10, 9));
        assert!(onebin_weights(&g, 1.2, SupportPolicy::Strict).is_err());
        let q = onebin_weights(&g, 1.2, SupportPolicy::Lenient).unwrap();
        assert!(q.was_clamped());
        assert_eq!(q.as_slice()[9], 1.0);
    }

    #[test]
    fn uniform_mix_cases() {
        let g = unit_grid(10);
        let s = SupportPolicy::Strict;
        assert_eq!(
            uniform_mix_weights(&g, 0.37, 0.0, s).unwrap(),
            onebin_weights(&g, 0.37, s).unwrap()
        );
        let u = uniform_mix_weights(&g, 0.37, 0.1, s).unwrap();
        for &v in u.as_slice() {
            assert!((v - 0.1).abs() < 1e-15);
        }
        let q = uniform_mix_weights(&g, 0.05, 0.01, s).unwrap();
        assert!((q.as_slice()[0] - 0.91).abs() < 1e-15);
        assert!((target_mean(&g, &q) - 0.095).abs() < 1e-12);
        assert!(uniform_mix_weights(&g, 0.05, 0.2, s).is_err());
        assert!(uniform_mix_weights(&g, 0.05, -0.01, s).is_err());
    }

    #[test]
    fn projected_cases() {
        let g = unit_grid(10);
        let s = SupportPolicy::Strict;
        for i in 0..10 {
            let q = projected_weights(&g, g.center(i), s).unwrap();
            assert_eq!(q, WeightVector::one_hot(10, i));
        }
        let q = projected_weights(&g, 0.125, s).unwrap();
        assert!((q.as_slice()[0] - 0.25).abs() < 1e-12);
        assert!((q.as_slice()[1] - 0.75).abs() < 1e-12);
        assert!((target_mean(&g, &q) - 0.125).abs() < 1e-15);
        let mid = projected_weights(&g, 0.5, s).unwrap();
        assert!((mid.as_slice()[4] - 0.5).abs() < 1e-12);
        assert!((mid.as_slice()[5] - 0.5).abs() < 1e-12);
        assert!(projected_weights(&g, 0.01, s).is_err());
        let edge = projected_weights(&g, 0.01, SupportPolicy::Lenient).unwrap();
        assert!(edge.was_clamped());
        assert_eq!(edge.as_slice()[0], 1.0);
    }

    #[test]
    fn mean_of_simple_histograms() {
        let g = BinGrid::build(-2.0, 5.0, 13, PaddingSpec::new(2.0, 1.0)).unwrap();
        assert!((target_mean(&g, &WeightVector::one_hot(13, 4)) - g.center(4)).abs() < 1e-15);
        let mid = 0.5 * (g.a() + g.b());
        assert!((target_mean(&g, &WeightVector::uniform(13)) - mid).abs() < 1e-12);
    }

    #[test]
    fn bias_of_exact_constructions() {
        let g = unit_grid(10);
        let s = SupportPolicy::Strict;
        let ys: Vec<f64> = (0..1000).map(|j| 0.05 + 0.9 * j as f64 / 999.0).collect();
        assert!(target_mean_bias(&ys, &g, &TargetSpec::Projected, s).unwrap() < 1e-12);
        let centers = g.centers();
        assert!(target_mean_bias(&centers, &g, &TargetSpec::Onebin, s).unwrap() < 1e-15);
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
    }

    #[test]
    fn spec_serde_shape() {
        let s: TargetSpec = serde_json::from_str(r#"{"kind":"gaussian","sigma":0.5}"#).unwrap();
        assert_eq!(s, TargetSpec::Gaussian { sigma: 0.5 });
        let s: TargetSpec = serde_json::from_str(r#"{"kind":"uniform_mix","epsilon":0.01}"#).unwrap();
        assert_eq!(s, TargetSpec::UniformMix { epsilon: 0.01 });
        assert!(serde_json::from_str::<TargetSpec>(r#"{"kind":"gaussian","sigma":1,"x":2}"#).is_err());
    }
}
