//! Config-driven experiments: repeated training runs, bias simulations and
//! the comparison studies. Every output is a fresh file under the chosen
//! output directory, and the echoed config is enough to rerun bit-identically.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::data::{self, Dataset, SyntheticKind, TargetColumn};
use crate::error::{Error, Result};
use crate::grid::BinGrid;
use crate::loss::PredictionHistogram;
use crate::targets::WeightVector;
use crate::trainer::{self, stream_rng, FitOutput, LossKind, MetricsRecord, TargetConfig, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HISTLOSS_OUT";

const STREAM_CORRUPT: u64 = 16;
const STREAM_REPRESENTATION: u64 = 17;
const STREAM_BOUNDS: u64 = 18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
        #[serde(default)]
        target_column: TargetColumn,
    },
    Synthetic {
        kind: SyntheticKind,
        n: usize,
        #[serde(default = "one")]
        d: usize,
        #[serde(default)]
        noise_std: f64,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Seed for synthetic generation; the experiment seed when absent. Splits
    /// always use the per-run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::Synthetic {
                kind: SyntheticKind::Sine,
                n: 2000,
                d: 1,
                noise_std: 0.05,
            },
            test_fraction: default_test_fraction(),
            seed: None,
        }
    }
}

/// Baselines and histogram-loss variants the studies can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    L2,
    L1,
    L2Noise,
    L2Clip,
    L2Softmax,
    HlGaussian,
    HlOnebin,
    HlUniform,
    HlProjected,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::L2 => "l2",
            Method::L1 => "l1",
            Method::L2Noise => "l2_noise",
            Method::L2Clip => "l2_clip",
            Method::L2Softmax => "l2_softmax",
            Method::HlGaussian => "hl_gaussian",
            Method::HlOnebin => "hl_onebin",
            Method::HlUniform => "hl_uniform",
            Method::HlProjected => "hl_projected",
        }
    }

    /// `base` with the loss, target and augmentation of this method.
    pub fn configure(&self, base: &TrainConfig, study: &StudyConfig) -> TrainConfig {
        let mut c = base.clone();
        c.target_noise_std = 0.0;
        c.clip_threshold = None;
        c.anneal = None;
        let hl = |c: &mut TrainConfig, t: TargetConfig| {
            c.loss = LossKind::Hl;
            c.target = t;
        };
        match self {
            Method::L2 => c.loss = LossKind::L2,
            Method::L1 => c.loss = LossKind::L1,
            Method::L2Noise => {
                c.loss = LossKind::L2;
                c.target_noise_std = study.noise_std;
            }
            Method::L2Clip => {
                c.loss = LossKind::L2;
                c.clip_threshold = Some(study.clip_threshold);
            }
            Method::L2Softmax => c.loss = LossKind::L2Softmax,
            Method::HlGaussian => hl(&mut c, TargetConfig::default()),
            Method::HlOnebin => hl(&mut c, TargetConfig::Onebin),
            Method::HlUniform => hl(&mut c, TargetConfig::UniformMix { epsilon: study.epsilon }),
            Method::HlProjected => hl(&mut c, TargetConfig::Projected),
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub methods: Vec<Method>,
    pub ratios: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub moments: Vec<usize>,
    /// Target-noise std for `l2_noise`, in the units the scalar head sees.
    pub noise_std: f64,
    pub clip_threshold: f64,
    pub epsilon: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::L2, Method::L1, Method::HlOnebin, Method::HlGaussian],
            ratios: vec![0.0, 0.1, 0.2],
            lambdas: vec![0.0, 0.5, 1.0],
            moments: vec![1, 2, 3],
            noise_std: 0.02,
            clip_threshold: 1.0,
            epsilon: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub runs: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub study: StudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            runs: 1,
            seed: 0,
            out: None,
            study: StudyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dataset.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.dataset.test_fraction
            )));
        }
        if let DatasetSource::Synthetic { n, d, noise_std, .. } = self.dataset.source {
            if n < 2 || d == 0 || !(noise_std >= 0.0) {
                return Err(Error::Config("synthetic dataset needs n >= 2, d >= 1, noise_std >= 0".into()));
            }
        }
        let s = &self.study;
        if s.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("corruption ratios must lie in [0, 1]".into()));
        }
        if s.lambdas.iter().any(|l| !(*l >= 0.0)) || s.moments.contains(&0) {
            return Err(Error::Config("lambdas must be >= 0 and moment counts >= 1".into()));
        }
        self.train.validate()
    }

    /// Training config for run `run`: the run seed is `seed + run`.
    pub fn run_config(&self, run: usize) -> TrainConfig {
        TrainConfig {
            seed: self.seed + run as u64,
            ..self.train.clone()
        }
    }

    /// Loads or generates the data, splits it with the run seed and
    /// standardizes it on the training split.
    pub fn prepare_data(&self, run: usize) -> Result<Dataset> {
        let raw = match &self.dataset.source {
            DatasetSource::Csv {
                path,
                has_header,
                target_column,
            } => data::load_csv(path, *has_header, *target_column)?,
            DatasetSource::Synthetic { kind, n, d, noise_std } => {
                data::make_synthetic(*kind, *n, *d, *noise_std, self.dataset.seed.unwrap_or(self.seed))?
            }
        };
        raw.split(self.dataset.test_fraction, self.seed + run as u64)?
            .standardize()
    }

    fn echo(&self, dir: &Path) -> Result<()> {
        let mut f = std::fs::File::create(dir.join("config.json"))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Mean and standard error over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub loss: String,
    pub runs: usize,
    pub epochs: usize,
    pub train_mae: MeanStderr,
    pub train_rmse: MeanStderr,
    pub test_mae: MeanStderr,
    pub test_rmse: MeanStderr,
    pub final_metrics: Vec<MetricsRecord>,
}

impl TrainSummary {
    fn from_finals(cfg: &ExperimentConfig, finals: Vec<MetricsRecord>) -> Self {
        let col = |f: &dyn Fn(&MetricsRecord) -> f64| -> MeanStderr {
            MeanStderr::of(&finals.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            schema_version: SCHEMA_VERSION,
            loss: cfg.train.loss.name().into(),
            runs: finals.len(),
            epochs: cfg.train.epochs,
            train_mae: col(&|m| m.train_mae),
            train_rmse: col(&|m| m.train_rmse),
            test_mae: col(&|m| m.test_mae.unwrap_or(f64::NAN)),
            test_rmse: col(&|m| m.test_rmse.unwrap_or(f64::NAN)),
            final_metrics: finals,
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_metrics_jsonl(path: &Path, metrics: &[MetricsRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for m in metrics {
        serde_json::to_writer(&mut f, m)?;
        writeln!(f)?;
    }
    Ok(())
}

/// Trains one run of `cfg` and returns the fit.
pub fn train_run(cfg: &ExperimentConfig, run: usize) -> Result<(Dataset, FitOutput)> {
    let data = cfg.prepare_data(run)?;
    let tc = cfg.run_config(run);
    let model = tc.build_model(data.dim())?;
    let out = trainer::fit(model, &data, &tc)?;
    Ok((data, out))
}

/// Runs every repetition, writing `config.json`, `summary.json` and per-run
/// `run_<r>/metrics.jsonl` and `run_<r>/model.json` under `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    create_dir(out)?;
    cfg.echo(out)?;
    let mut finals = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let (_, fit) = train_run(cfg, run)?;
        let dir = out.join(format!("run_{run}"));
        create_dir(&dir)?;
        write_metrics_jsonl(&dir.join("metrics.jsonl"), &fit.metrics)?;
        fit.model.save(&dir.join("model.json"))?;
        if let Some(m) = fit.metrics.last() {
            finals.push(m.clone());
        }
    }
    let summary = TrainSummary::from_finals(cfg, finals);
    let mut f = std::fs::File::create(out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSimArgs {
    pub k: usize,
    pub points: usize,
    pub sigma_ws: Vec<f64>,
    /// Padding of the sigma sweep, in bin widths per side.
    pub pad_bins: usize,
    pub psi_sigmas: Vec<f64>,
    pub padding_sigma_w: f64,
    /// `sigma_w` whose per-target `(offset, bias)` pairs are written.
    pub sample_sigma_w: f64,
    pub bound_grid: usize,
    pub bound_psi_sigma: f64,
    pub bound_pairs: usize,
    pub check_bounds: bool,
    pub seed: u64,
}

impl Default for BiasSimArgs {
    fn default() -> Self {
        Self {
            k: 100,
            points: 10_000,
            sigma_ws: vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.35, 1.5, 2.0, 3.0],
            pad_bins: analysis::DEFAULT_SWEEP_PADDING_BINS,
            psi_sigmas: (0..=20).map(|i| i as f64 * 0.5).collect(),
            padding_sigma_w: 2.0,
            sample_sigma_w: 0.5,
            bound_grid: 50,
            bound_psi_sigma: 12.0,
            bound_pairs: 1000,
            check_bounds: false,
            seed: 0,
        }
    }
}

impl BiasSimArgs {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasSimReport {
    pub sigma_sweep: analysis::BiasSweepResult,
    pub padding_sweep: analysis::BiasSweepResult,
    pub half_width: analysis::HalfWidthReport,
    /// Violations of the prediction-error bound; only counted with
    /// `check_bounds`.
    pub prediction_violations: Option<usize>,
}

impl BiasSimReport {
    /// Whether every checked bound held.
    pub fn passed(&self) -> bool {
        self.half_width.within_bound() && self.prediction_violations.unwrap_or(0) == 0
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Dirichlet(`alpha`, ..., `alpha`) draw of length `k`, via normalized gammas.
pub fn random_dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 {
            return g.into_iter().map(|v| v / s).collect();
        }
    }
}

/// Random `(q, h)` pairs on `grid`: Dirichlet draws with concentrations
/// cycling through 0.1, 1 and 10 so both peaked and flat histograms appear.
pub fn random_bound_pairs<R: Rng + ?Sized>(grid: &BinGrid, n: usize, rng: &mut R) -> Vec<(WeightVector, PredictionHistogram)> {
    let alphas = [0.1, 1.0, 10.0];
    (0..n)
        .map(|j| {
            let alpha = alphas[j % alphas.len()];
            let q = random_dirichlet(grid.k(), alpha, rng);
            let h = random_dirichlet(grid.k(), alpha, rng);
            let logits = h.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect();
            let total: f64 = q.iter().sum();
            let q = WeightVector::new(q.iter().map(|v| v / total).collect()).expect("dirichlet draw");
            (q, PredictionHistogram::from_logits(logits))
        })
        .collect()
}

/// Runs both bias sweeps and the half-width check, writing
/// `bias_sigma.csv`, `bias_padding.csv`, `bias_samples.csv` and
/// `half_width.csv` under `out`.
pub fn cmd_bias_sim(args: &BiasSimArgs, out: &Path) -> Result<BiasSimReport> {
    if args.k == 0 || args.points == 0 || args.sigma_ws.is_empty() || args.psi_sigmas.is_empty() {
        return Err(Error::Config("bias sweeps need k, points, sigma_ws and psi_sigmas".into()));
    }
    if args.sigma_ws.iter().chain([&args.sample_sigma_w, &args.padding_sigma_w]).any(|s| !(*s > 0.0)) {
        return Err(Error::Config("sigma_w values must be positive".into()));
    }
    if args.psi_sigmas.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Config("psi_sigma values must be nonnegative".into()));
    }
    create_dir(out)?;
    let sigma_sweep = analysis::bias_sweep_sigma(args.k, args.points, &args.sigma_ws, args.pad_bins)?;
    sigma_sweep.write_csv(&out.join("bias_sigma.csv"), "sigma_w")?;
    let padding_sweep = analysis::bias_sweep_padding(args.k, args.points, args.padding_sigma_w, &args.psi_sigmas)?;
    padding_sweep.write_csv(&out.join("bias_padding.csv"), "psi_sigma")?;
    let samples = analysis::bias_sweep_sigma(args.k, args.points, &[args.sample_sigma_w], args.pad_bins)?;
    samples.write_samples_csv(&out.join("bias_samples.csv"), 0)?;

    let n = args.bound_grid.max(2);
    let half_width = analysis::half_width_bias_bound_check(
        args.k,
        &linspace(0.01, 4.0, n),
        &linspace(-0.5, 0.5, n),
        args.bound_psi_sigma,
    )?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("half_width.csv"))?);
    writeln!(f, "sigma_w,offset,bias_over_width")?;
    for (s, row) in half_width.sigma_ws.iter().zip(&half_width.bias) {
        for (o, b) in half_width.offsets.iter().zip(row) {
            writeln!(f, "{s},{o},{:e}", b / half_width.width)?;
        }
    }
    drop(f);

    let prediction_violations = if args.check_bounds {
        let grid = BinGrid::from_edges(-1.0, 2.0 / 50.0, 50)?;
        let mut rng = stream_rng(args.seed, STREAM_BOUNDS);
        let pairs = random_bound_pairs(&grid, args.bound_pairs, &mut rng);
        Some(analysis::prediction_bound_check(&grid, &pairs))
    } else {
        None
    };
    Ok(BiasSimReport {
        sigma_sweep,
        padding_sweep,
        half_width,
        prediction_violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Corrupt,
    Sensitivity,
    Anneal,
    Representation,
    Multitask,
    Moments,
    Gradnorm,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Corrupt => "corrupt",
            StudyKind::Sensitivity => "sensitivity",
            StudyKind::Anneal => "anneal",
            StudyKind::Representation => "representation",
            StudyKind::Multitask => "multitask",
            StudyKind::Moments => "moments",
            StudyKind::Gradnorm => "gradnorm",
        }
    }
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown study {s:?}")))
    }
}

/// A CSV-shaped result.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new<'a>(header: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            header: header.into_iter().map(str::to_string).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Rows whose `name` column equals `value`.
    pub fn select<'a>(&'a self, name: &str, value: &'a str) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        let c = self.column(name);
        self.rows.iter().filter(move |r| c.is_some_and(|c| r[c] == value))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn final_cols(m: Option<&MetricsRecord>) -> [String; 4] {
    match m {
        Some(m) => [
            m.train_mae.to_string(),
            m.train_rmse.to_string(),
            opt(m.test_mae),
            opt(m.test_rmse),
        ],
        None => Default::default(),
    }
}

const FINAL_HEADER: [&str; 4] = ["train_mae", "train_rmse", "test_mae", "test_rmse"];

fn header_with<'a>(prefix: &[&'a str], suffix: &[&'a str]) -> Vec<&'a str> {
    prefix.iter().chain(suffix).copied().collect()
}

fn row(prefix: Vec<String>, m: Option<&MetricsRecord>, extra: Vec<String>) -> Vec<String> {
    prefix.into_iter().chain(final_cols(m)).chain(extra).collect()
}

fn fit_with(data: &Dataset, tc: &TrainConfig) -> Result<FitOutput> {
    trainer::fit(tc.build_model(data.dim())?, data, tc)
}

/// Runs the named study and writes `<kind>.csv` (plus `config.json`) under
/// `out`. The table is also returned.
pub fn cmd_study(kind: StudyKind, cfg: &ExperimentConfig, out: &Path) -> Result<Table> {
    cfg.validate()?;
    create_dir(out)?;
    cfg.echo(out)?;
    let table = match kind {
        StudyKind::Corrupt => study_corrupt(cfg)?,
        StudyKind::Sensitivity => study_sensitivity(cfg)?,
        StudyKind::Anneal => study_anneal(cfg)?,
        StudyKind::Representation => study_representation(cfg)?,
        StudyKind::Multitask => study_multitask(cfg)?,
        StudyKind::Moments => study_moments(cfg)?,
        StudyKind::Gradnorm => study_gradnorm(cfg)?,
    };
    table.write_csv(&out.join(format!("{}.csv", kind.name())))?;
    Ok(table)
}

fn study_corrupt(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(header_with(&["ratio", "method", "run", "replaced"], &FINAL_HEADER));
    for &ratio in &cfg.study.ratios {
        for method in &cfg.study.methods {
            for run in 0..cfg.runs {
                let data = cfg.prepare_data(run)?;
                let train = data.train_indices().to_vec();
                let ys: Vec<f64> = train.iter().map(|&i| data.target(i)).collect();
                let mut rng = stream_rng(cfg.seed + run as u64, STREAM_CORRUPT);
                let (corrupted, replaced) = analysis::corrupt_targets(&ys, ratio, &mut rng)?;
                let mut all = data.targets().to_vec();
                for (&i, y) in train.iter().zip(corrupted) {
                    all[i] = y;
                }
                let data = data.with_targets(all)?;
                let tc = method.configure(&cfg.run_config(run), &cfg.study);
                let fit = fit_with(&data, &tc)?;
                t.rows.push(row(
                    vec![ratio.to_string(), method.name().into(), run.to_string(), replaced.len().to_string()],
                    fit.metrics.last(),
                    vec![],
                ));
            }
        }
    }
    Ok(t)
}

fn study_sensitivity(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(header_with(&["method", "run"], &["train_mae", "train_rmse", "test_mae", "test_rmse", "mean_jacobian_norm"]));
    for method in &cfg.study.methods {
        for run in 0..cfg.runs {
            let data = cfg.prepare_data(run)?;
            let tc = method.configure(&cfg.run_config(run), &cfg.study);
            let fit = fit_with(&data, &tc)?;
            let points: Vec<usize> = if data.test_indices().is_empty() {
                data.train_indices().to_vec()
            } else {
                data.test_indices().to_vec()
            };
            let mut total = 0.0;
            for &i in &points {
                total += fit.input_jacobian_norm(data.row(i))?;
            }
            let mean = total / points.len() as f64;
            t.rows.push(row(
                vec![method.name().into(), run.to_string()],
                fit.metrics.last(),
                vec![mean.to_string()],
            ));
        }
    }
    Ok(t)
}

fn study_anneal(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(header_with(&["variant", "run", "epoch", "sigma"], &FINAL_HEADER));
    let mut base = cfg.train.clone();
    base.loss = LossKind::Hl;
    base.target = TargetConfig::default();
    base.anneal = None;
    let annealed = TrainConfig {
        anneal: Some(cfg.train.anneal.unwrap_or_default()),
        ..base.clone()
    };
    for (name, tc) in [("fixed", &base), ("annealed", &annealed)] {
        for run in 0..cfg.runs {
            let data = cfg.prepare_data(run)?;
            let tc = TrainConfig {
                seed: cfg.seed + run as u64,
                ..tc.clone()
            };
            let fit = fit_with(&data, &tc)?;
            for m in &fit.metrics {
                t.rows.push(row(
                    vec![name.into(), run.to_string(), m.epoch.to_string(), opt(m.sigma)],
                    Some(m),
                    vec![],
                ));
            }
        }
    }
    Ok(t)
}

/// Which representation a run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Protocol {
    /// Other loss's trained trunk, frozen; only the head is learned.
    Fixed,
    /// Other loss's trained trunk as initialization; everything is learned.
    Initialized,
    /// Shared random trunk, frozen; only the head is learned.
    Random,
}

fn study_representation(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(header_with(
        &["protocol", "method", "trunk_source", "run"],
        &["train_mae", "train_rmse", "test_mae", "test_rmse", "trunk_unchanged"],
    ));
    let pair = [Method::HlGaussian, Method::L2];
    for run in 0..cfg.runs {
        let data = cfg.prepare_data(run)?;
        let configs: Vec<TrainConfig> = pair.iter().map(|m| m.configure(&cfg.run_config(run), &cfg.study)).collect();
        let trained = configs
            .iter()
            .map(|tc| fit_with(&data, tc))
            .collect::<Result<Vec<_>>>()?;
        for (i, m) in pair.iter().enumerate() {
            t.rows.push(row(
                vec!["own".into(), m.name().into(), m.name().into(), run.to_string()],
                trained[i].metrics.last(),
                vec![String::new()],
            ));
        }
        let mut random_src = configs[0].build_model(data.dim())?;
        random_src.reinitialize_trunk(&mut stream_rng(cfg.seed + run as u64, STREAM_REPRESENTATION));
        for protocol in [Protocol::Fixed, Protocol::Initialized, Protocol::Random] {
            for (i, m) in pair.iter().enumerate() {
                let (src_model, src_name) = match protocol {
                    Protocol::Random => (&random_src, "random"),
                    _ => (&trained[1 - i].model, pair[1 - i].name()),
                };
                let tc = &configs[i];
                let mut model = tc.build_model(data.dim())?;
                model.load_trunk(src_model)?;
                if protocol != Protocol::Initialized {
                    model.freeze_trunk();
                }
                let before = model.trunk_params().to_vec();
                let fit = trainer::fit(model, &data, tc)?;
                let unchanged = fit.model.trunk_params() == before.as_slice();
                let name = match protocol {
                    Protocol::Fixed => "fixed",
                    Protocol::Initialized => "initialized",
                    Protocol::Random => "random",
                };
                t.rows.push(row(
                    vec![name.into(), m.name().into(), src_name.into(), run.to_string()],
                    fit.metrics.last(),
                    vec![unchanged.to_string()],
                ));
            }
        }
    }
    Ok(t)
}

fn study_multitask(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(header_with(&["variant", "lambda", "run"], &FINAL_HEADER));
    for run in 0..cfg.runs {
        let data = cfg.prepare_data(run)?;
        let l2 = Method::L2.configure(&cfg.run_config(run), &cfg.study);
        let fit = fit_with(&data, &l2)?;
        t.rows.push(row(vec!["l2".into(), String::new(), run.to_string()], fit.metrics.last(), vec![]));
        for &lambda in &cfg.study.lambdas {
            let tc = TrainConfig {
                loss: LossKind::Multitask { lambda },
                target: TargetConfig::default(),
                ..l2.clone()
            };
            let fit = fit_with(&data, &tc)?;
            t.rows.push(row(
                vec!["multitask".into(), lambda.to_string(), run.to_string()],
                fit.metrics.last(),
                vec![],
            ));
        }
    }
    Ok(t)
}

fn study_moments(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(header_with(&["variant", "moments", "run"], &FINAL_HEADER));
    for run in 0..cfg.runs {
        let data = cfg.prepare_data(run)?;
        let l2 = Method::L2.configure(&cfg.run_config(run), &cfg.study);
        let fit = fit_with(&data, &l2)?;
        t.rows.push(row(vec!["l2".into(), String::new(), run.to_string()], fit.metrics.last(), vec![]));
        for &count in &cfg.study.moments {
            let tc = TrainConfig {
                loss: LossKind::Moments { count },
                ..l2.clone()
            };
            let fit = fit_with(&data, &tc)?;
            t.rows.push(row(
                vec!["moments".into(), count.to_string(), run.to_string()],
                fit.metrics.last(),
                vec![],
            ));
        }
    }
    Ok(t)
}

fn study_gradnorm(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(["method", "run", "epoch", "loss", "train_mae", "grad_norm_normalized"]);
    for method in [Method::HlGaussian, Method::L2] {
        for run in 0..cfg.runs {
            let data = cfg.prepare_data(run)?;
            let tc = method.configure(&cfg.run_config(run), &cfg.study);
            let fit = fit_with(&data, &tc)?;
            for m in &fit.metrics {
                t.rows.push(vec![
                    method.name().into(),
                    run.to_string(),
                    m.epoch.to_string(),
                    m.loss.to_string(),
                    m.train_mae.to_string(),
                    opt(m.grad_norm_normalized),
                ]);
            }
        }
    }
    Ok(t)
}

/// Coefficient of variation of the recorded values.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

/// One-line human summary of a bias simulation.
pub fn describe_bias_sim(report: &BiasSimReport) -> String {
    let mut s = String::new();
    let w = report.half_width.width;
    let _ = writeln!(
        s,
        "max |bias| over sigma_w x offset grid: {:.6e} ({:.4} bin widths, bound 0.5): {}",
        report.half_width.max_abs_bias,
        report.half_width.max_abs_bias / w,
        if report.half_width.within_bound() { "ok" } else { "VIOLATED" }
    );
    if let Some(v) = report.prediction_violations {
        let _ = writeln!(s, "prediction-error bound violations: {v}");
    }
    s
}
