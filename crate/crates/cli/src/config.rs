//! JSON configuration for every subcommand.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use vsmargin::asymptotics::{GroupParams, TheoryProblem};
use vsmargin::losses::{PresetKind, VsParams};
use vsmargin::model_data::{
    sample_group_gmm, sample_label_gmm, sample_label_gmm_stratified, Dataset, GroupGmmSpec, LabelGmmSpec, MeanModel,
    SpecFile,
};
use vsmargin::numerics::logspace;
use vsmargin::optim::Schedule;

/// Norm used for the "zero" mean model; the Gramian of exactly zero means is degenerate.
pub const ZERO_MEAN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeansConfig {
    /// μ₊ = -μ₋ = norm·e₁.
    Antipodal { d: usize, norm: f64 },
    /// μ₊ = norm1·e₁, μ₋ = norm2·e₂ (group means for the group model).
    Orthogonal { d: usize, norm1: f64, norm2: f64 },
    /// Independent Gaussian directions rescaled to the given norms.
    Random { d: usize, norm1: f64, norm2: f64, seed: u64 },
    /// Numerically zero means.
    Zero { d: usize },
    Explicit { mu1: Vec<f64>, mu2: Vec<f64> },
}

impl MeansConfig {
    pub fn build(&self) -> Result<MeanModel> {
        Ok(match self {
            MeansConfig::Antipodal { d, norm } => MeanModel::antipodal(*d, *norm)?,
            MeansConfig::Orthogonal { d, norm1, norm2 } => MeanModel::orthogonal(*d, *norm1, *norm2)?,
            MeansConfig::Random { d, norm1, norm2, seed } => MeanModel::random_directions(*d, *norm1, *norm2, *seed)?,
            MeansConfig::Zero { d } => MeanModel::antipodal(*d, ZERO_MEAN_NORM)?,
            MeansConfig::Explicit { mu1, mu2 } => MeanModel::new(mu1.clone(), mu2.clone())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpecConfig {
    pub means: MeansConfig,
    pub pi: f64,
}

impl LabelSpecConfig {
    pub fn build(&self) -> Result<LabelGmmSpec> {
        Ok(LabelGmmSpec::isotropic(self.means.build()?, self.pi)?)
    }

    pub fn problem(&self, gamma: f64, delta: f64) -> Result<TheoryProblem> {
        Ok(TheoryProblem::label(self.means.build()?, self.pi, gamma, delta)?)
    }
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpecConfig {
    pub means: MeansConfig,
    #[serde(default = "half")]
    pub pi: f64,
    pub p: f64,
    #[serde(default = "one")]
    pub sigma1: f64,
    #[serde(default = "one")]
    pub sigma2: f64,
}

impl GroupSpecConfig {
    pub fn build(&self) -> Result<GroupGmmSpec> {
        Ok(GroupGmmSpec::new(self.means.build()?, self.pi, self.p, self.sigma1, self.sigma2)?)
    }

    pub fn problem(&self, gamma: f64, delta: f64) -> Result<TheoryProblem> {
        let g = GroupParams { p: self.p, sigma1: self.sigma1, sigma2: self.sigma2 };
        Ok(TheoryProblem::group(self.means.build()?, self.pi, g, gamma, delta)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SpecConfig {
    Label(LabelSpecConfig),
    Group(GroupSpecConfig),
}

/// A built data model of either kind.
#[derive(Debug, Clone)]
pub enum BuiltSpec {
    Label(LabelGmmSpec),
    Group(GroupGmmSpec),
}

impl SpecConfig {
    pub fn build(&self) -> Result<BuiltSpec> {
        Ok(match self {
            SpecConfig::Label(s) => BuiltSpec::Label(s.build()?),
            SpecConfig::Group(s) => BuiltSpec::Group(s.build()?),
        })
    }

    pub fn problem(&self, gamma: f64, delta: f64) -> Result<TheoryProblem> {
        match self {
            SpecConfig::Label(s) => s.problem(gamma, delta),
            SpecConfig::Group(s) => s.problem(gamma, delta),
        }
    }

    pub fn pi(&self) -> f64 {
        match self {
            SpecConfig::Label(s) => s.pi,
            SpecConfig::Group(s) => s.pi,
        }
    }
}

impl BuiltSpec {
    pub fn sample(&self, n: usize, seed: u64, stratified: bool) -> Result<Dataset> {
        Ok(match self {
            BuiltSpec::Label(s) if stratified => sample_label_gmm_stratified(s, n, seed)?,
            BuiltSpec::Label(s) => sample_label_gmm(s, n, seed)?,
            BuiltSpec::Group(_) if stratified => bail!("stratified sampling is only available for label models"),
            BuiltSpec::Group(s) => sample_group_gmm(s, n, seed)?,
        })
    }

    pub fn file(&self) -> SpecFile {
        match self {
            BuiltSpec::Label(s) => SpecFile::from_label(s),
            BuiltSpec::Group(s) => SpecFile::from_group(s),
        }
    }
}

/// Training data: a CSV file or a fresh draw from a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    File {
        path: PathBuf,
    },
    Sample {
        spec: SpecConfig,
        n: usize,
        seed: u64,
        #[serde(default)]
        stratified: bool,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::File { path } => {
                let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Ok(Dataset::read_csv(f)?)
            }
            DataSource::Sample { spec, n, seed, stratified } => spec.build()?.sample(*n, *seed, *stratified),
        }
    }

    pub fn spec(&self) -> Option<&SpecConfig> {
        match self {
            DataSource::File { .. } => None,
            DataSource::Sample { spec, .. } => Some(spec),
        }
    }
}

/// A list of values or a log/linear spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Logspace { logspace: (f64, f64, usize) },
    Linspace { linspace: (f64, f64, usize) },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Grid::Values(v) => v.clone(),
            Grid::Logspace { logspace: (lo, hi, n) } => {
                if !(*lo > 0.0 && hi >= lo) {
                    bail!("logspace needs 0 < lo <= hi");
                }
                logspace(*lo, *hi, *n)
            }
            Grid::Linspace { linspace: (lo, hi, n) } => match n {
                0 => Vec::new(),
                1 => vec![*lo],
                _ => (0..*n).map(|k| lo + (hi - lo) * k as f64 / (*n - 1) as f64).collect(),
            },
        };
        if v.is_empty() {
            bail!("grid is empty");
        }
        if v.iter().any(|x| !x.is_finite()) {
            bail!("grid values must be finite");
        }
        Ok(v)
    }
}

pub fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    let mut s = seeds.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        bail!("seeds must be distinct");
    }
    Ok(())
}

/// Binary losses by name, parameterized by the prior π and a margin ratio δ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedLoss {
    Ce,
    Wce,
    La,
    Ldam,
    Cdt,
    Vs,
}

impl NamedLoss {
    pub fn name(&self) -> &'static str {
        match self {
            NamedLoss::Ce => "ce",
            NamedLoss::Wce => "wce",
            NamedLoss::La => "la",
            NamedLoss::Ldam => "ldam",
            NamedLoss::Cdt => "cdt",
            NamedLoss::Vs => "vs",
        }
    }

    /// Binary-form parameters (index 0 is y = +1).
    pub fn params(&self, pi: f64, delta: f64) -> Result<VsParams> {
        let la = ((1.0 - pi) / pi).ln();
        let (omega, iota, d) = match self {
            NamedLoss::Ce => ([1.0, 1.0], [0.0, 0.0], [1.0, 1.0]),
            NamedLoss::Wce => ([1.0 / pi, 1.0 / (1.0 - pi)], [0.0, 0.0], [1.0, 1.0]),
            NamedLoss::La => ([1.0, 1.0], [la, -la], [1.0, 1.0]),
            NamedLoss::Ldam => ([1.0, 1.0], [pi.powf(-0.25), (1.0 - pi).powf(-0.25)], [1.0, 1.0]),
            NamedLoss::Cdt => ([1.0, 1.0], [0.0, 0.0], [1.0 / delta, 1.0]),
            NamedLoss::Vs => ([1.0, 1.0], [la, -la], [1.0 / delta, 1.0]),
        };
        Ok(VsParams::new(omega.to_vec(), iota.to_vec(), d.to_vec())?)
    }

    /// Margin ratio of the max-margin problem the loss converges to.
    pub fn limit_delta(&self, delta: f64) -> f64 {
        match self {
            NamedLoss::Cdt | NamedLoss::Vs => delta,
            _ => 1.0,
        }
    }
}

/// Loss for the `train` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossConfig {
    /// A named binary loss; `delta` is the CS-SVM margin ratio for cdt/vs.
    Named {
        name: NamedLoss,
        #[serde(default = "one")]
        delta: f64,
    },
    /// Preset from class counts (logit convention, converted to binary form).
    Preset {
        preset: PresetKind,
        #[serde(default = "one")]
        tau: f64,
        #[serde(default)]
        gamma_exp: f64,
    },
    /// Explicit binary-form parameters, index 0 for y = +1.
    Params { omega: [f64; 2], iota: [f64; 2], delta: [f64; 2] },
}

impl LossConfig {
    pub fn params(&self, data: &Dataset, pi: f64) -> Result<VsParams> {
        match self {
            LossConfig::Named { name, delta } => name.params(pi, *delta),
            LossConfig::Preset { preset, tau, gamma_exp } => {
                let (pos, neg) = data.binary_counts();
                Ok(vsmargin::losses::preset(*preset, &[pos, neg], *tau, *gamma_exp)?.to_binary_form()?)
            }
            LossConfig::Params { omega, iota, delta } => {
                Ok(VsParams::new(omega.to_vec(), iota.to_vec(), delta.to_vec())?)
            }
        }
    }
}

fn default_schedule() -> Schedule {
    Schedule::Normalized
}

fn default_record() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub spec: SpecConfig,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub stratified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data: DataSource,
    pub loss: LossConfig,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    pub max_iters: usize,
    #[serde(default)]
    pub grad_tol: f64,
    #[serde(default = "default_record")]
    pub record_every: usize,
    #[serde(default)]
    pub fit_intercept: bool,
    /// Population used for the balanced error column; defaults to the data's spec.
    #[serde(default)]
    pub test_spec: Option<SpecConfig>,
    /// Exponential instead of logistic tail.
    #[serde(default)]
    pub exponential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmKind {
    Svm,
    Cs,
    Gs,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub data: DataSource,
    pub kind: SvmKind,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub group_deltas: Option<[f64; 2]>,
    #[serde(default = "yes")]
    pub intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub spec: SpecConfig,
    pub gammas: Grid,
    pub deltas: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TuneConfig {
    Theory {
        spec: LabelSpecConfig,
        gamma: f64,
    },
    Heuristic {
        data: DataSource,
        /// Class means are taken from this set instead of the training data.
        #[serde(default)]
        validation: Option<DataSource>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeoZeroConfig {
    pub spec: GroupSpecConfig,
    pub gamma: f64,
    pub bracket: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1aConfig {
    pub spec: LabelSpecConfig,
    pub n: usize,
    pub p_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub losses: Vec<NamedLoss>,
    pub max_iters: usize,
    #[serde(default)]
    pub grad_tol: f64,
    #[serde(default)]
    pub fit_intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub spec: LabelSpecConfig,
    pub n: usize,
    pub seed: u64,
    pub losses: Vec<NamedLoss>,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    pub max_iters: usize,
    #[serde(default = "default_record")]
    pub record_every: usize,
    /// Margin ratio for cdt/vs; defaults to the theoretical δ⋆.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffLabelConfig {
    pub spec: LabelSpecConfig,
    pub gammas: Grid,
    pub deltas: Grid,
}

fn default_bracket() -> [f64; 2] {
    [1.0, 1e3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffGroupConfig {
    pub spec: GroupSpecConfig,
    pub gammas: Grid,
    pub deltas: Grid,
    #[serde(default = "default_bracket")]
    pub deo_bracket: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub spec: LabelSpecConfig,
    pub n: usize,
    pub gammas: Grid,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub intercept: bool,
}

fn default_val_n() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneDeltaConfig {
    pub spec: LabelSpecConfig,
    pub gammas: Grid,
    pub seeds: Vec<u64>,
    /// Estimate class means on an independent balanced draw.
    #[serde(default)]
    pub held_out_means: bool,
    #[serde(default = "default_val_n")]
    pub validation_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndersamplingConfig {
    pub spec: LabelSpecConfig,
    pub gammas: Grid,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistRfConfig {
    /// Local CSV files in the dataset format, labels ±1 with +1 the minority class.
    pub train_csv: PathBuf,
    pub test_csv: PathBuf,
    pub features: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Fig1aSweep(Fig1aConfig),
    Fig1bcDynamics(DynamicsConfig),
    TradeoffLabel(TradeoffLabelConfig),
    TradeoffGroup(TradeoffGroupConfig),
    PhaseTransition(PhaseConfig),
    TuneDelta(TuneDeltaConfig),
    Undersampling(UndersamplingConfig),
    MnistRf(MnistRfConfig),
}
