//! Uniform bin grids over a padded target support.
//!
//! A grid covers `[a, b]` with `k` bins of width `w`. Bins are half-open,
//! `[l_i, l_i + w)`, except the last one which also contains `b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Padding expressed relative to the target Gaussian: `sigma_w` is the
/// standard deviation in bin widths and `psi_sigma` the padding added to each
/// side in multiples of that standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddingSpec {
    pub sigma_w: f64,
    pub psi_sigma: f64,
}

impl PaddingSpec {
    pub fn new(sigma_w: f64, psi_sigma: f64) -> Self {
        Self { sigma_w, psi_sigma }
    }

    /// Padding of a fixed number of bins on each side, expressed as the
    /// equivalent `psi_sigma` for the given `sigma_w`.
    pub fn from_pad_bins(pad_bins: f64, sigma_w: f64) -> Self {
        Self {
            sigma_w,
            psi_sigma: pad_bins / sigma_w,
        }
    }

    /// Bins of padding on each side.
    pub fn pad_bins(&self) -> f64 {
        self.sigma_w * self.psi_sigma
    }
}

impl Default for PaddingSpec {
    fn default() -> Self {
        Self {
            sigma_w: 2.0,
            psi_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    a: f64,
    b: f64,
    k: usize,
    w: f64,
    sigma: f64,
}

impl BinGrid {
    /// Builds a grid whose interior `[y_min, y_max]` is padded on each side by
    /// `sigma_w * psi_sigma` bins, with the bin width shrunk so that exactly
    /// `k` bins span the padded support.
    pub fn build(y_min: f64, y_max: f64, k: usize, pad: PaddingSpec) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite()) {
            return Err(Error::Grid(format!(
                "non-finite target range [{y_min}, {y_max}]"
            )));
        }
        if !(pad.sigma_w.is_finite() && pad.psi_sigma.is_finite()) {
            return Err(Error::Grid(format!(
                "non-finite padding (sigma_w = {}, psi_sigma = {})",
                pad.sigma_w, pad.psi_sigma
            )));
        }
        if y_max <= y_min {
            return Err(Error::Grid(format!(
                "empty target range: y_max = {y_max} must exceed y_min = {y_min}"
            )));
        }
        if k == 0 {
            return Err(Error::Grid("bin count k must be positive".into()));
        }
        if pad.sigma_w <= 0.0 || pad.psi_sigma < 0.0 {
            return Err(Error::Grid(format!(
                "need sigma_w > 0 and psi_sigma >= 0 (got {}, {})",
                pad.sigma_w, pad.psi_sigma
            )));
        }
        let denom = k as f64 - 2.0 * pad.pad_bins();
        if denom < 1.0 {
            return Err(Error::Grid(format!(
                "k - 2*sigma_w*psi_sigma = {k} - 2*{}*{} = {denom} must be at least 1",
                pad.sigma_w, pad.psi_sigma
            )));
        }
        let w = (y_max - y_min) / denom;
        let sigma = pad.sigma_w * w;
        let margin = pad.psi_sigma * sigma;
        Ok(Self {
            a: y_min - margin,
            b: y_max + margin,
            k,
            w,
            sigma,
        })
    }

    /// Grid with an explicit left edge, bin width and bin count. The implied
    /// sigma is one bin width.
    pub fn from_edges(a: f64, w: f64, k: usize) -> Result<Self> {
        if !(a.is_finite() && w.is_finite()) || w <= 0.0 || k == 0 {
            return Err(Error::Grid(format!(
                "need finite a, w > 0 and k > 0 (got a = {a}, w = {w}, k = {k})"
            )));
        }
        Ok(Self {
            a,
            b: a + k as f64 * w,
            k,
            w,
            sigma: w,
        })
    }

    /// Overrides the implied target standard deviation.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    /// Target standard deviation implied by the padding spec, in target units.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn left_edge(&self, i: usize) -> f64 {
        self.a + i as f64 * self.w
    }

    pub fn center(&self, i: usize) -> f64 {
        self.left_edge(i) + 0.5 * self.w
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.center(i)).collect()
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.a && y <= self.b
    }

    /// Index of the bin containing `y`.
    pub fn bin_index(&self, y: f64) -> Result<usize> {
        if !self.contains(y) {
            return Err(Error::OutOfSupport {
                y,
                lo: self.a,
                hi: self.b,
            });
        }
        Ok(self.bin_index_clamped(y))
    }

    /// Like [`bin_index`](Self::bin_index) but maps out-of-support values to
    /// the nearest edge bin.
    pub fn bin_index_clamped(&self, y: f64) -> usize {
        let raw = ((y - self.a) / self.w).floor();
        if raw.is_nan() || raw < 0.0 {
            return 0;
        }
        let mut i = (raw as usize).min(self.k - 1);
        // Floor of the quotient can land one bin off when y sits on an edge.
        if i + 1 < self.k && y >= self.left_edge(i + 1) {
            i += 1;
        } else if i > 0 && y < self.left_edge(i) {
            i -= 1;
        }
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padded_grid_from_hand_evaluation() {
        let g = BinGrid::build(0.0, 88.0, 100, PaddingSpec::new(2.0, 3.0)).unwrap();
        assert!((g.width() - 1.0).abs() < 1e-12);
        assert!((g.a() + 6.0).abs() < 1e-12);
        assert!((g.b() - 94.0).abs() < 1e-12);
        assert!((g.sigma() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_padding_is_plain_partition() {
        let g = BinGrid::build(0.0, 1.0, 100, PaddingSpec::new(2.0, 0.0)).unwrap();
        assert!((g.width() - 0.01).abs() < 1e-15);
        assert_eq!(g.a(), 0.0);
        assert_eq!(g.b(), 1.0);
    }

    #[test]
    fn negative_denominator_is_rejected() {
        let err = BinGrid::build(0.0, 1.0, 10, PaddingSpec::new(2.0, 3.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sigma_w") && msg.contains("-2"), "{msg}");
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(BinGrid::build(1.0, 1.0, 10, PaddingSpec::new(2.0, 0.0)).is_err());
        assert!(BinGrid::build(f64::NAN, 1.0, 10, PaddingSpec::new(2.0, 0.0)).is_err());
        assert!(BinGrid::build(0.0, 1.0, 0, PaddingSpec::new(2.0, 0.0)).is_err());
        assert!(BinGrid::build(0.0, 1.0, 10, PaddingSpec::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn bin_index_half_open() {
        let g = BinGrid::build(0.0, 1.0, 10, PaddingSpec::new(1.0, 0.0)).unwrap();
        assert_eq!(g.bin_index(0.05).unwrap(), 0);
        assert_eq!(g.bin_index(0.1).unwrap(), 1);
        assert_eq!(g.bin_index(0.0).unwrap(), 0);
        assert_eq!(g.bin_index(1.0).unwrap(), 9);
        assert!(matches!(
            g.bin_index(1.2),
            Err(Error::OutOfSupport { .. })
        ));
        assert!(g.bin_index(-1e-9).is_err());
    }

    #[test]
    fn edges_map_to_their_own_bin() {
        let g = BinGrid::build(-3.0, 7.0, 37, PaddingSpec::new(2.0, 3.0)).unwrap();
        for i in 0..g.k() {
            assert_eq!(g.bin_index(g.left_edge(i)).unwrap(), i);
            assert_eq!(g.bin_index(g.center(i)).unwrap(), i);
        }
    }

    #[test]
    fn fixed_bin_padding_equivalent() {
        let pad = PaddingSpec::from_pad_bins(10.0, 2.0);
        let g = BinGrid::build(0.0, 80.0, 100, pad).unwrap();
        assert!((g.width() - 1.0).abs() < 1e-12);
        assert!((g.a() + 10.0).abs() < 1e-12);
    }
}
