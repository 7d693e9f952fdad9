//! Classifiers, hyperparameter tuning and the serialized model format.

mod bundle;
mod forest;
mod knn;
mod mlp;
mod standardize;
mod svm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::Label;
use crate::rng::SeedTree;

pub use bundle::ParticipantModel;
pub use forest::{DecisionTree, ForestParams, MaxFeatures, RandomForest};
pub use knn::{Knn, KnnParams};
pub use mlp::{Mlp, MlpParams};
pub use standardize::Standardizer;
pub use svm::{LinearSvm, SvmParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Rf,
    Svm,
    Mlp,
    Knn,
    Baseline,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        ModelFamily::Rf,
        ModelFamily::Svm,
        ModelFamily::Mlp,
        ModelFamily::Knn,
        ModelFamily::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Rf => "rf",
            ModelFamily::Svm => "svm",
            ModelFamily::Mlp => "mlp",
            ModelFamily::Knn => "knn",
            ModelFamily::Baseline => "baseline",
        }
    }

    pub fn default_params(self) -> ModelParams {
        match self {
            ModelFamily::Rf => ModelParams::Rf(ForestParams::default()),
            ModelFamily::Svm => ModelParams::Svm(SvmParams::default()),
            ModelFamily::Mlp => ModelParams::Mlp(MlpParams::default()),
            ModelFamily::Knn => ModelParams::Knn(KnnParams::default()),
            ModelFamily::Baseline => ModelParams::Baseline,
        }
    }

    /// Candidate settings searched when tuning is enabled.
    pub fn default_grid(self) -> Vec<ModelParams> {
        match self {
            ModelFamily::Rf => {
                let mut grid = Vec::new();
                for n_trees in [100, 300] {
                    for max_depth in [None, Some(8)] {
                        for max_features in [MaxFeatures::Sqrt, MaxFeatures::All] {
                            grid.push(ModelParams::Rf(ForestParams {
                                n_trees,
                                max_depth,
                                max_features,
                                ..ForestParams::default()
                            }));
                        }
                    }
                }
                grid
            }
            ModelFamily::Knn => [3, 5, 11, 21]
                .into_iter()
                .map(|k| ModelParams::Knn(KnnParams { k }))
                .collect(),
            ModelFamily::Mlp => {
                let mut grid = Vec::new();
                for hidden in [16, 64] {
                    for learning_rate in [0.01, 0.001] {
                        grid.push(ModelParams::Mlp(MlpParams {
                            hidden,
                            learning_rate,
                            epochs: 200,
                        }));
                    }
                }
                grid
            }
            ModelFamily::Svm => [0.1, 1.0, 10.0]
                .into_iter()
                .map(|c| {
                    ModelParams::Svm(SvmParams {
                        c,
                        ..SvmParams::default()
                    })
                })
                .collect(),
            ModelFamily::Baseline => vec![ModelParams::Baseline],
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::ModelConfig(format!("unknown model family `{s}`")))
    }
}

/// Hyperparameters, tagged by family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Rf(ForestParams),
    Svm(SvmParams),
    Mlp(MlpParams),
    Knn(KnnParams),
    Baseline,
}

impl ModelParams {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelParams::Rf(_) => ModelFamily::Rf,
            ModelParams::Svm(_) => ModelFamily::Svm,
            ModelParams::Mlp(_) => ModelFamily::Mlp,
            ModelParams::Knn(_) => ModelFamily::Knn,
            ModelParams::Baseline => ModelFamily::Baseline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::ModelConfig(format!("{}: {msg}", self.family())));
        match self {
            ModelParams::Rf(p) => {
                if p.n_trees == 0 {
                    return bad("n_trees must be positive");
                }
                if p.max_depth == Some(0) {
                    return bad("max_depth must be positive");
                }
                if p.min_samples_leaf == 0 {
                    return bad("min_samples_leaf must be positive");
                }
            }
            ModelParams::Svm(p) => {
                if !(p.c.is_finite() && p.c > 0.0) {
                    return bad("c must be positive");
                }
                if p.iterations == 0 {
                    return bad("iterations must be positive");
                }
            }
            ModelParams::Mlp(p) => {
                if p.hidden == 0 || p.epochs == 0 {
                    return bad("hidden and epochs must be positive");
                }
                if !(p.learning_rate.is_finite() && p.learning_rate > 0.0) {
                    return bad("learning_rate must be positive");
                }
            }
            ModelParams::Knn(p) => {
                if p.k == 0 {
                    return bad("k must be positive");
                }
            }
            ModelParams::Baseline => {}
        }
        Ok(())
    }
}

fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}

/// What to train. A non-empty `grid` turns on tuning: each candidate is
/// scored on a held-out slice of the training rows and the winner is refit
/// on all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub params: ModelParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<ModelParams>,
    pub seed: u64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

impl ModelSpec {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        ModelSpec {
            params,
            grid: Vec::new(),
            seed,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }

    pub fn family_default(family: ModelFamily, seed: u64) -> Self {
        ModelSpec::new(family.default_params(), seed)
    }

    /// Default parameters plus the family's default search grid.
    pub fn tuned(family: ModelFamily, seed: u64) -> Self {
        ModelSpec {
            grid: family.default_grid(),
            ..ModelSpec::family_default(family, seed)
        }
    }

    pub fn family(&self) -> ModelFamily {
        self.params.family()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ModelSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        for p in &self.grid {
            if p.family() != self.family() {
                return Err(Error::ModelConfig(format!(
                    "grid entry of family {} in a {} spec",
                    p.family(),
                    self.family()
                )));
            }
            p.validate()?;
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::ModelConfig(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub params: ModelParams,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub train_rows: usize,
    pub validation_rows: usize,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Fitted {
    Rf(RandomForest),
    Svm(LinearSvm),
    Mlp(Mlp),
    Knn(Knn),
    Baseline { prevalence: f64 },
}

/// A fitted classifier together with the scaling it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    /// The parameters actually fitted (the tuning winner, if tuned).
    pub params: ModelParams,
    pub standardizer: Standardizer,
    pub fitted: Fitted,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningRecord>,
}

fn check_inputs(rows: &[Vec<f64>], labels: &[Label]) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    let high = labels.iter().filter(|l| l.is_high()).count();
    if high == 0 || high == labels.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

fn fit_params(params: &ModelParams, rows: &[Vec<f64>], labels: &[Label], seed: SeedTree) -> Fitted {
    match params {
        ModelParams::Rf(p) => Fitted::Rf(RandomForest::fit(rows, labels, p, seed)),
        ModelParams::Svm(p) => Fitted::Svm(LinearSvm::fit(rows, labels, p)),
        ModelParams::Mlp(p) => Fitted::Mlp(Mlp::fit(rows, labels, p, &mut seed.rng())),
        ModelParams::Knn(p) => Fitted::Knn(Knn::fit(rows, labels, p)),
        ModelParams::Baseline => Fitted::Baseline {
            prevalence: labels.iter().filter(|l| l.is_high()).count() as f64 / labels.len() as f64,
        },
    }
}

impl Fitted {
    fn proba(&self, z: &[f64]) -> f64 {
        match self {
            Fitted::Rf(m) => m.proba(z),
            Fitted::Svm(m) => m.proba(z),
            Fitted::Mlp(m) => m.proba(z),
            Fitted::Knn(m) => m.proba(z),
            Fitted::Baseline { prevalence } => *prevalence,
        }
    }
}

fn accuracy(fitted: &Fitted, rows: &[Vec<f64>], labels: &[Label]) -> f64 {
    let correct = rows
        .iter()
        .zip(labels)
        .filter(|(r, l)| Label::from_proba(fitted.proba(r)) == **l)
        .count();
    correct as f64 / rows.len() as f64
}

fn fit_standardized(
    params: &ModelParams,
    rows: &[Vec<f64>],
    labels: &[Label],
    seed: SeedTree,
) -> Result<(Standardizer, Fitted)> {
    let standardizer = Standardizer::fit(rows)?;
    let z = standardizer.transform(rows)?;
    Ok((standardizer, fit_params(params, &z, labels, seed)))
}

/// Picks the grid entry with the best validation accuracy; ties go to the
/// earlier entry.
fn tune(spec: &ModelSpec, rows: &[Vec<f64>], labels: &[Label], seeds: SeedTree) -> Result<(ModelParams, TuningRecord)> {
    let n = rows.len();
    let n_val = ((n as f64 * spec.validation_fraction).round() as usize).clamp(1, n.saturating_sub(2));
    let mut rng = seeds.named("validation-split").rng();
    let mut split = None;
    for _ in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (val, train) = order.split_at(n_val);
        let train_labels: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
        let high = train_labels.iter().filter(|l| l.is_high()).count();
        if high > 0 && high < train_labels.len() {
            split = Some((train.to_vec(), val.to_vec()));
            break;
        }
    }
    let (train, val) = split.ok_or(Error::SingleClass)?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<Label>) {
        (idx.iter().map(|&i| rows[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (tr_rows, tr_labels) = pick(&train);
    let (va_rows, va_labels) = pick(&val);

    let mut candidates = Vec::with_capacity(spec.grid.len());
    for (i, params) in spec.grid.iter().enumerate() {
        let (std, fitted) = fit_standardized(params, &tr_rows, &tr_labels, seeds.named("candidate").child(i as u64))?;
        let acc = accuracy(&fitted, &std.transform(&va_rows)?, &va_labels);
        candidates.push(CandidateScore {
            params: params.clone(),
            validation_accuracy: acc,
        });
    }
    let best = candidates
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| {
            if c.validation_accuracy > candidates[best].validation_accuracy {
                i
            } else {
                best
            }
        });
    Ok((
        candidates[best].params.clone(),
        TuningRecord {
            train_rows: train.len(),
            validation_rows: val.len(),
            candidates,
        },
    ))
}

impl TrainedModel {
    pub fn train(spec: &ModelSpec, rows: &[Vec<f64>], labels: &[Label]) -> Result<TrainedModel> {
        spec.validate()?;
        check_inputs(rows, labels)?;
        let seeds = SeedTree::new(spec.seed);
        let (params, tuning) = if spec.grid.is_empty() {
            (spec.params.clone(), None)
        } else {
            let (p, record) = tune(spec, rows, labels, seeds)?;
            (p, Some(record))
        };
        let (standardizer, fitted) = fit_standardized(&params, rows, labels, seeds.named("fit"))?;
        Ok(TrainedModel {
            format_version: MODEL_FORMAT_VERSION,
            spec: spec.clone(),
            params,
            standardizer,
            fitted,
            tuning,
        })
    }

    pub fn family(&self) -> ModelFamily {
        self.params.family()
    }

    pub fn n_features(&self) -> usize {
        self.standardizer.width()
    }

    /// Probability of `High`.
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        let z = self.standardizer.transform_row(row)?;
        Ok(self.fitted.proba(&z).clamp(0.0, 1.0))
    }

    pub fn predict(&self, row: &[f64]) -> Result<Label> {
        self.predict_proba(row).map(Label::from_proba)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<TrainedModel> {
        let m: TrainedModel = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelConfig(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainedModel::from_json(&text)
    }
}
