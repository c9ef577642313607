//! Datasets: CSV ingestion, train/test splitting, standardization and
//! synthetic regression tasks.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset magnitude of the bimodal-noise task.
pub const BIMODAL_OFFSET: f64 = 1.0;

/// Features with a training-split standard deviation below this are dropped.
pub const MIN_FEATURE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n: usize,
    d: usize,
    targets: Vec<f64>,
    feature_means: Vec<f64>,
    feature_stds: Vec<f64>,
    dropped_features: Vec<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
    coefficients: Option<Vec<f64>>,
}

/// Which CSV column holds the target. Serialized as `"last"` or an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "ColumnRepr", into = "ColumnRepr")]
pub enum TargetColumn {
    #[default]
    Last,
    Index(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ColumnRepr {
    Name(String),
    Index(usize),
}

impl TryFrom<ColumnRepr> for TargetColumn {
    type Error = String;

    fn try_from(r: ColumnRepr) -> std::result::Result<Self, String> {
        match r {
            ColumnRepr::Index(i) => Ok(TargetColumn::Index(i)),
            ColumnRepr::Name(s) if s == "last" => Ok(TargetColumn::Last),
            ColumnRepr::Name(s) => Err(format!("expected \"last\" or a column index, got {s:?}")),
        }
    }
}

impl From<TargetColumn> for ColumnRepr {
    fn from(c: TargetColumn) -> Self {
        match c {
            TargetColumn::Last => ColumnRepr::Name("last".into()),
            TargetColumn::Index(i) => ColumnRepr::Index(i),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Linear,
    Sine,
    BimodalNoise,
}

impl Dataset {
    /// Builds a dataset from row-major features. Every row starts in the
    /// training split.
    pub fn from_rows(features: Vec<f64>, d: usize, targets: Vec<f64>) -> Result<Self> {
        let n = targets.len();
        if n == 0 || d == 0 {
            return Err(Error::Dataset("dataset needs at least one row and one feature".into()));
        }
        if features.len() != n * d {
            return Err(Error::Dataset(format!(
                "{} feature values for {n} rows of {d} features",
                features.len()
            )));
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Dataset("features and targets must be finite".into()));
        }
        Ok(Self {
            features,
            n,
            d,
            targets,
            feature_means: vec![0.0; d],
            feature_stds: vec![1.0; d],
            dropped_features: Vec::new(),
            train: (0..n).collect(),
            test: Vec::new(),
            coefficients: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn feature_means(&self) -> &[f64] {
        &self.feature_means
    }

    pub fn feature_stds(&self) -> &[f64] {
        &self.feature_stds
    }

    /// Original column indices removed by [`standardize`](Self::standardize)
    /// for having zero variance.
    pub fn dropped_features(&self) -> &[usize] {
        &self.dropped_features
    }

    /// Coefficients used to generate a synthetic task.
    pub fn coefficients(&self) -> Option<&[f64]> {
        self.coefficients.as_deref()
    }

    pub fn train_targets(&self) -> Vec<f64> {
        self.train.iter().map(|&i| self.targets[i]).collect()
    }

    /// `(min, max)` of the training-split targets.
    pub fn train_target_range(&self) -> (f64, f64) {
        self.train.iter().map(|&i| self.targets[i]).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), y| (lo.min(y), hi.max(y)),
        )
    }

    /// Replaces the targets of the given rows.
    pub fn with_targets(mut self, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != self.n || targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("replacement targets must be finite, one per row".into()));
        }
        self.targets = targets;
        Ok(self)
    }

    /// Uses explicit split indices. They must be disjoint and cover every row.
    pub fn with_split(mut self, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; self.n];
        for &i in train.iter().chain(&test) {
            if i >= self.n || seen[i] {
                return Err(Error::Dataset(format!("split index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Dataset("split does not cover every row".into()));
        }
        self.train = train;
        self.test = test;
        Ok(self)
    }

    /// Seeded uniform split with `round(test_fraction * n)` test rows.
    pub fn split(self, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidParameter(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let n_test = (test_fraction * self.n as f64).round() as usize;
        if n_test >= self.n {
            return Err(Error::Dataset("split leaves no training rows".into()));
        }
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        self.with_split(train, test)
    }

    /// Standardizes features to zero mean and unit variance using statistics
    /// of the training split only. Zero-variance features are dropped.
    pub fn standardize(mut self) -> Result<Self> {
        if self.train.is_empty() {
            return Err(Error::Dataset("cannot standardize with an empty training split".into()));
        }
        let m = self.train.len() as f64;
        let mut means = vec![0.0; self.d];
        for &i in &self.train {
            for (mu, x) in means.iter_mut().zip(self.row(i)) {
                *mu += x;
            }
        }
        means.iter_mut().for_each(|mu| *mu /= m);
        let mut vars = vec![0.0; self.d];
        for &i in &self.train {
            for ((v, x), mu) in vars.iter_mut().zip(self.row(i)).zip(&means) {
                *v += (x - mu) * (x - mu);
            }
        }
        let stds: Vec<f64> = vars.iter().map(|v| (v / m).sqrt()).collect();
        let keep: Vec<usize> = (0..self.d).filter(|&j| stds[j] > MIN_FEATURE_STD).collect();
        if keep.is_empty() {
            return Err(Error::Dataset("every feature has zero variance on the training split".into()));
        }
        let dropped: Vec<usize> = (0..self.d).filter(|j| !keep.contains(j)).collect();
        let mut features = Vec::with_capacity(self.n * keep.len());
        for i in 0..self.n {
            let row = self.row(i);
            features.extend(keep.iter().map(|&j| (row[j] - means[j]) / stds[j]));
        }
        // Indices of previously dropped columns refer to the original layout.
        let original: Vec<usize> = {
            let mut cols: Vec<usize> = (0..self.d + self.dropped_features.len()).collect();
            cols.retain(|c| !self.dropped_features.contains(c));
            cols
        };
        self.dropped_features
            .extend(dropped.iter().map(|&j| original[j]));
        self.dropped_features.sort_unstable();
        // Stored statistics map raw values to the current layout.
        self.feature_means = keep
            .iter()
            .map(|&j| self.feature_means[j] + self.feature_stds[j] * means[j])
            .collect();
        self.feature_stds = keep.iter().map(|&j| self.feature_stds[j] * stds[j]).collect();
        self.features = features;
        self.d = keep.len();
        Ok(self)
    }

    /// Applies the stored standardization to a raw row in the original column
    /// layout.
    pub fn transform_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let total = self.d + self.dropped_features.len();
        if raw.len() != total {
            return Err(Error::Shape(format!("row has {} values, expected {total}", raw.len())));
        }
        Ok(raw
            .iter()
            .enumerate()
            .filter(|(j, _)| !self.dropped_features.contains(j))
            .zip(self.feature_means.iter().zip(&self.feature_stds))
            .map(|((_, x), (mu, sd))| (x - mu) / sd)
            .collect())
    }
}

/// Reads a comma-separated numeric file. Row and column numbers in errors are
/// 1-based positions in the file.
pub fn load_csv(path: &Path, has_header: bool, target: TargetColumn) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Dataset(format!("cannot open {}: {e}", path.display())))?;
    let mut width = None;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let row = line + 1;
        let record = record?;
        if has_header && line == 0 {
            continue;
        }
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let cols = record.len();
        match width {
            None => {
                if cols < 2 {
                    return Err(Error::Parse {
                        row,
                        column: cols,
                        message: "need at least one feature and one target column".into(),
                    });
                }
                width = Some(cols);
            }
            Some(w) if w != cols => {
                return Err(Error::Parse {
                    row,
                    column: cols.min(w) + 1,
                    message: format!("ragged row: {cols} columns, expected {w}"),
                });
            }
            Some(_) => {}
        }
        let t = match target {
            TargetColumn::Last => cols - 1,
            TargetColumn::Index(j) if j < cols => j,
            TargetColumn::Index(j) => {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("target column {j} out of range for {cols} columns"),
                })
            }
        };
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            if j == t {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let Some(width) = width else {
        return Err(Error::Dataset(format!("{} contains no data rows", path.display())));
    };
    Dataset::from_rows(features, width - 1, targets)
}

/// Reproducible synthetic regression task.
///
/// * `Linear`: `x ~ N(0, I)`, `y = x . beta + noise` with `beta ~ N(0, I)`.
/// * `Sine`: `x ~ U[-pi, pi]^d`, `y = sin(sum_j x_j / sqrt(d)) + noise`.
/// * `BimodalNoise`: linear signal plus `+-BIMODAL_OFFSET` with equal
///   probability, plus Gaussian noise.
pub fn make_synthetic(kind: SyntheticKind, n: usize, d: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("synthetic task needs n > 0 and d > 0".into()));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = |rng: &mut ChaCha8Rng| {
        if noise_std > 0.0 {
            noise_std * std_normal.sample(rng)
        } else {
            0.0
        }
    };
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    let coefficients = match kind {
        SyntheticKind::Linear | SyntheticKind::BimodalNoise => {
            let beta: Vec<f64> = (0..d).map(|_| std_normal.sample(&mut rng)).collect();
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| std_normal.sample(&mut rng)).collect();
                let mut y: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
                if kind == SyntheticKind::BimodalNoise {
                    y += if rng.random::<bool>() { BIMODAL_OFFSET } else { -BIMODAL_OFFSET };
                }
                y += noise(&mut rng);
                features.extend(x);
                targets.push(y);
            }
            beta
        }
        SyntheticKind::Sine => {
            let beta = vec![1.0 / (d as f64).sqrt(); d];
            let u = Uniform::new_inclusive(-std::f64::consts::PI, std::f64::consts::PI)
                .expect("valid range");
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| u.sample(&mut rng)).collect();
                let arg: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
                targets.push(arg.sin() + noise(&mut rng));
                features.extend(x);
            }
            beta
        }
    };
    let mut ds = Dataset::from_rows(features, d, targets)?;
    ds.coefficients = Some(coefficients);
    Ok(ds)
}
