//! Config-driven end-to-end runs.
//!
//! A run executes its stages in order into a scratch directory next to the
//! output directory and only moves it into place once every stage and the
//! manifest are written, so a failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{feature_affect_correlations, monthly_tvalues, write_correlation_csv, write_tvalue_csv};
use crate::dataset::{build_dataset, build_paired_datasets, CohortDataset, DatasetOptions, ParticipantDataset};
use crate::domain::{
    filter_eligible_participants, load_timelines, valid_affect_day_count, AffectPolarity, FeatureSchema, Modality,
    ParticipantTimeline, DEFAULT_ELIGIBILITY_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::evaluation::{ablation_run, evaluate_cohort, write_accuracy_csv, write_roc_table, CvOptions, DEFAULT_FOLDS};
use crate::impute::impute_all;
use crate::ingest::ingest_cohort_dir;
use crate::labeling::{label_cohort, LabelDocument, LabelOptions, TargetSpec, DEFAULT_MIDDLE_BAND};
use crate::learners::{ModelFamily, ModelParams, ModelSpec, ParticipantModel, MODEL_FORMAT_VERSION};
use crate::synth::{self, CohortConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SEED: u64 = 20200101;

/// Process exit codes shared by `run` and the single-stage subcommands.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const UNKNOWN_STAGE: u8 = 3;
    pub const MISSING_INPUT: u8 = 4;
    pub const SCHEMA: u8 = 5;
    pub const FAILURE: u8 = 6;
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingInput(_) => exit::MISSING_INPUT,
        Error::Schema(_)
        | Error::SchemaMismatch { .. }
        | Error::ModalityMismatch { .. }
        | Error::UnknownFeature(_)
        | Error::Polarity(_) => exit::SCHEMA,
        Error::ModelConfig(_) | Error::CohortConfig(_) => exit::CONFIG,
        _ => exit::FAILURE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Ingest,
    Impute,
    Label,
    Evaluate,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Impute,
        Stage::Label,
        Stage::Evaluate,
        Stage::Analyze,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Impute => "impute",
            Stage::Label => "label",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| RunError::UnknownStage(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config {}: {source}", path.display())]
    Config {
        path: PathBuf,
        #[source]
        source: Error,
    },

    #[error("unknown stage `{0}` (expected synth, ingest, impute, label, evaluate or analyze)")]
    UnknownStage(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config {
                source: Error::MissingInput(_),
                ..
            } => exit::MISSING_INPUT,
            RunError::Config { .. } => exit::CONFIG,
            RunError::UnknownStage(_) => exit::UNKNOWN_STAGE,
            RunError::Stage { source, .. } => exit_code(source),
        }
    }
}

fn default_stages() -> Vec<String> {
    Stage::ALL.iter().map(|s| s.as_str().to_string()).collect()
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Files read by stages that have no upstream stage in the run. Relative
/// paths are taken from the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub cohort_dir: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub affect_items: Option<PathBuf>,
    pub timelines: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelStage {
    pub target: TargetSpec,
    pub middle_band: f64,
    pub pooled: bool,
    pub eligibility_threshold: usize,
}

impl Default for LabelStage {
    fn default() -> Self {
        LabelStage {
            target: TargetSpec::Pa,
            middle_band: DEFAULT_MIDDLE_BAND,
            pooled: false,
            eligibility_threshold: DEFAULT_ELIGIBILITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateStage {
    pub models: Vec<ModelParams>,
    /// Search each family's default grid instead of using `models` as given.
    pub tune: bool,
    pub folds: usize,
    pub stratified: bool,
    /// Modality subsets for the ablation; empty skips it.
    pub ablation: Vec<Vec<Modality>>,
    pub ablation_model: ModelParams,
}

impl Default for EvaluateStage {
    fn default() -> Self {
        EvaluateStage {
            models: ModelFamily::ALL.iter().map(|f| f.default_params()).collect(),
            tune: false,
            folds: DEFAULT_FOLDS,
            stratified: false,
            ablation: vec![
                vec![Modality::Ring],
                vec![Modality::Watch],
                vec![Modality::Phone],
                Modality::ALL.to_vec(),
            ],
            ablation_model: ModelFamily::Rf.default_params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeStage {
    /// Model trained on each participant's full dataset for month scoring.
    pub model: ModelParams,
    pub baseline_months: Option<Vec<String>>,
}

impl Default for AnalyzeStage {
    fn default() -> Self {
        AnalyzeStage {
            model: ModelFamily::Rf.default_params(),
            baseline_months: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: Vec<String>,
    /// Generator settings; its seed is replaced by the run seed.
    #[serde(default)]
    pub synth: Option<CohortConfig>,
    #[serde(default)]
    pub inputs: InputPaths,
    #[serde(default)]
    pub label: LabelStage,
    #[serde(default)]
    pub dataset: DatasetOptions,
    #[serde(default)]
    pub evaluate: EvaluateStage,
    #[serde(default)]
    pub analyze: AnalyzeStage,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Makes relative paths absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        let i = &mut self.inputs;
        for p in [&mut i.cohort_dir, &mut i.schema, &mut i.affect_items, &mut i.timelines, &mut i.labels]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Stages in run order; they must be listed in pipeline order.
    pub fn parsed_stages(&self) -> Result<Vec<Stage>, RunError> {
        let stages: Vec<Stage> = self.stages.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        if stages.is_empty() {
            return Err(config_error(Error::InvalidInput("no stages configured".into())));
        }
        if stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_error(Error::InvalidInput(
                "stages must be listed once each in order synth, ingest, impute, label, evaluate, analyze".into(),
            )));
        }
        Ok(stages)
    }

    /// Identity of the experiment: everything but where it is written.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

fn config_error(source: Error) -> RunError {
    RunError::Config {
        path: PathBuf::new(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A report tagged with the run that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub run_id: String,
    pub report: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EligibilityEntry {
    participant_id: String,
    valid_affect_days: usize,
    eligible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Eligibility {
    threshold: usize,
    participants: Vec<EligibilityEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkippedModel {
    participant_id: String,
    reason: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn sha256_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Every file below `dir`, sorted.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(list_files(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

/// Scratch output directory.
struct Outputs {
    root: PathBuf,
}

impl Outputs {
    fn path(&self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    fn bytes(&self, name: &str, data: &[u8]) -> Result<()> {
        let p = self.path(name)?;
        std::fs::write(&p, data).map_err(|e| Error::io(&p, e))
    }

    fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.bytes(name, &text)
    }

    fn csv(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.bytes(name, &buf)
    }
}

/// Data handed from stage to stage.
#[derive(Default)]
struct State {
    schema: Option<FeatureSchema>,
    timelines: Option<Vec<ParticipantTimeline>>,
    labels: Option<LabelDocument>,
    datasets: Option<Vec<ParticipantDataset>>,
    inputs: Vec<PathBuf>,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    run_id: String,
    out: Outputs,
    state: State,
}

impl Runner<'_> {
    fn stamp<T: Serialize>(&self, report: T) -> Stamped<T> {
        Stamped {
            run_id: self.run_id.clone(),
            report,
        }
    }

    fn read_input(&mut self, p: &Path) -> PathBuf {
        if !self.state.inputs.iter().any(|q| q == p) {
            self.state.inputs.push(p.to_path_buf());
        }
        p.to_path_buf()
    }

    fn schema(&mut self) -> Result<FeatureSchema> {
        if let Some(s) = &self.state.schema {
            return Ok(s.clone());
        }
        let s = match self.cfg.inputs.schema.clone() {
            Some(p) => FeatureSchema::load(self.read_input(&p))?,
            None => FeatureSchema::default_schema(),
        };
        self.state.schema = Some(s.clone());
        Ok(s)
    }

    fn timelines(&mut self) -> Result<Vec<ParticipantTimeline>> {
        if let Some(t) = &self.state.timelines {
            return Ok(t.clone());
        }
        let p = self
            .cfg
            .inputs
            .timelines
            .clone()
            .ok_or_else(|| Error::InvalidInput("no upstream stage and no inputs.timelines".into()))?;
        let t = load_timelines(self.read_input(&p))?;
        self.state.timelines = Some(t.clone());
        Ok(t)
    }

    fn labels(&mut self) -> Result<LabelDocument> {
        if let Some(l) = &self.state.labels {
            return Ok(l.clone());
        }
        let p = self
            .cfg
            .inputs
            .labels
            .clone()
            .ok_or_else(|| Error::InvalidInput("no label stage and no inputs.labels".into()))?;
        let l = LabelDocument::load(self.read_input(&p))?;
        self.state.labels = Some(l.clone());
        Ok(l)
    }

    /// Labeled participants' timelines, in label order.
    fn labeled_timelines(&mut self) -> Result<(LabelDocument, Vec<ParticipantTimeline>)> {
        let labels = self.labels()?;
        let timelines = self.timelines()?;
        let matched = labels
            .participants
            .iter()
            .map(|ls| {
                timelines
                    .iter()
                    .find(|t| t.participant_id() == ls.participant_id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("no timeline for labeled participant `{}`", ls.participant_id)))
            })
            .collect::<Result<_>>()?;
        Ok((labels, matched))
    }

    fn datasets(&mut self) -> Result<Vec<ParticipantDataset>> {
        if let Some(d) = &self.state.datasets {
            return Ok(d.clone());
        }
        let schema = self.schema()?;
        let (labels, timelines) = self.labeled_timelines()?;
        let opts = self.cfg.dataset.clone();
        let ds: Vec<ParticipantDataset> = timelines
            .iter()
            .zip(&labels.participants)
            .map(|(t, l)| build_dataset(t, l, &schema, &opts))
            .collect::<Result<_>>()?;
        self.out.json(
            "dataset.json",
            &CohortDataset {
                target: labels.target.clone(),
                options: opts,
                participants: ds.clone(),
            },
        )?;
        self.state.datasets = Some(ds.clone());
        Ok(ds)
    }

    fn spec(&self, params: &ModelParams) -> ModelSpec {
        if self.cfg.evaluate.tune {
            ModelSpec::tuned(params.family(), self.cfg.seed)
        } else {
            ModelSpec::new(params.clone(), self.cfg.seed)
        }
    }

    fn synth(&mut self) -> Result<()> {
        let mut c = self.cfg.synth.clone().unwrap_or_default();
        c.seed = self.cfg.seed;
        c.validate()?;
        let cohort = synth::generate(&c)?;
        cohort.write(self.out.root.join("cohort"))?;
        self.state.schema = Some(c.schema.clone());
        self.state.timelines = Some(cohort.timelines());
        Ok(())
    }

    fn ingest(&mut self) -> Result<()> {
        let synthesized = self.state.timelines.is_some();
        let (dir, polarity) = if synthesized {
            let dir = self.out.root.join("cohort");
            let polarity = AffectPolarity::load(dir.join(synth::ITEMS_FILE))?;
            (dir, polarity)
        } else {
            let dir = self
                .cfg
                .inputs
                .cohort_dir
                .clone()
                .ok_or_else(|| Error::InvalidInput("ingest needs inputs.cohort_dir".into()))?;
            let polarity = match self.cfg.inputs.affect_items.clone() {
                Some(p) => AffectPolarity::load(self.read_input(&p))?,
                None => AffectPolarity::default_items(),
            };
            (self.read_input(&dir), polarity)
        };
        let schema = self.schema()?;
        let timelines = ingest_cohort_dir(&dir, &schema, &polarity)?;
        if !synthesized {
            for f in list_files(&dir)? {
                self.read_input(&f);
            }
        }
        self.out.json("timelines.json", &timelines)?;
        self.state.timelines = Some(timelines);
        Ok(())
    }

    fn impute(&mut self) -> Result<()> {
        let schema = self.schema()?;
        let imputed: Vec<ParticipantTimeline> = self.timelines()?.iter().map(|t| impute_all(t, &schema)).collect();
        self.out.json("timelines_imputed.json", &imputed)?;
        self.state.timelines = Some(imputed);
        Ok(())
    }

    fn label(&mut self) -> Result<()> {
        let lc = &self.cfg.label;
        let timelines = self.timelines()?;
        let eligibility = Eligibility {
            threshold: lc.eligibility_threshold,
            participants: timelines
                .iter()
                .map(|t| {
                    let n = valid_affect_day_count(t);
                    EligibilityEntry {
                        participant_id: t.participant_id().to_string(),
                        valid_affect_days: n,
                        eligible: n > lc.eligibility_threshold,
                    }
                })
                .collect(),
        };
        self.out.json("eligibility.json", &eligibility)?;
        let eligible = filter_eligible_participants(&timelines, lc.eligibility_threshold);
        if eligible.is_empty() {
            return Err(Error::InsufficientLabels(format!(
                "no participant has more than {} valid affect days",
                lc.eligibility_threshold
            )));
        }
        let options = LabelOptions {
            middle_band: lc.middle_band,
            pooled: lc.pooled,
        };
        let doc = LabelDocument {
            target: lc.target.clone(),
            options,
            lag: self.cfg.dataset.lag,
            participants: label_cohort(&eligible, &lc.target, &options)?,
        };
        self.out.json("labels.json", &doc)?;
        self.state.labels = Some(doc);
        Ok(())
    }

    fn evaluate(&mut self) -> Result<()> {
        let datasets = self.datasets()?;
        let target = self.labels()?.target;
        let ec = &self.cfg.evaluate;
        let cv = CvOptions {
            folds: ec.folds,
            stratified: ec.stratified,
        };
        let reports = ec
            .models
            .iter()
            .map(|p| evaluate_cohort(&datasets, &target, &self.cfg.dataset.modalities, &self.spec(p), cv))
            .collect::<Result<Vec<_>>>()?;
        self.out.json("evaluation.json", &self.stamp(&reports))?;
        self.out.csv("accuracy.csv", |w| write_accuracy_csv(&reports, w))?;
        self.out.csv("roc.csv", |w| write_roc_table(&reports, w))?;

        if ec.ablation.is_empty() {
            return Ok(());
        }
        let schema = self.schema()?;
        let (labels, timelines) = self.labeled_timelines()?;
        let mut by_subset: Vec<Vec<ParticipantDataset>> = vec![Vec::new(); ec.ablation.len()];
        for (t, l) in timelines.iter().zip(&labels.participants) {
            let paired = build_paired_datasets(t, l, &schema, &ec.ablation, &self.cfg.dataset)?;
            for (slot, ds) in by_subset.iter_mut().zip(paired) {
                slot.push(ds);
            }
        }
        let report = ablation_run(&by_subset, &ec.ablation, &target, &self.spec(&ec.ablation_model), cv)?;
        self.out.json("ablation.json", &self.stamp(&report))?;
        self.out.csv("ablation.csv", |w| write_accuracy_csv(&report.subsets, w))?;
        Ok(())
    }

    fn analyze(&mut self) -> Result<()> {
        let schema = self.schema()?;
        let (labels, timelines) = self.labeled_timelines()?;
        let corr = feature_affect_correlations(&timelines, &schema, self.cfg.dataset.lag)?;
        self.out.json("correlations.json", &self.stamp(&corr))?;
        self.out.csv("correlations.csv", |w| write_correlation_csv(&corr, w))?;

        let datasets = self.datasets()?;
        let spec = ModelSpec::new(self.cfg.analyze.model.clone(), self.cfg.seed);
        let mut models = Vec::new();
        let mut skipped = Vec::new();
        for ds in &datasets {
            match ParticipantModel::train(ds, &labels.target, &self.cfg.dataset.modalities, self.cfg.dataset.lag, &spec) {
                Ok(m) => {
                    self.out.json(&format!("models/{}.json", m.participant_id), &m)?;
                    models.push(m);
                }
                Err(e @ (Error::SingleClass | Error::InsufficientLabels(_) | Error::InvalidInput(_))) => {
                    skipped.push(SkippedModel {
                        participant_id: ds.participant_id.clone(),
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let pairs: Vec<(&ParticipantModel, &ParticipantTimeline)> = models
            .iter()
            .filter_map(|m| timelines.iter().find(|t| t.participant_id() == m.participant_id).map(|t| (m, t)))
            .collect();
        let report = monthly_tvalues(&pairs, self.cfg.analyze.baseline_months.as_deref())?;
        #[derive(Serialize)]
        struct TValues<'a> {
            #[serde(flatten)]
            report: &'a crate::analysis::TValueReport,
            skipped_models: &'a [SkippedModel],
        }
        self.out.json(
            "tvalues.json",
            &self.stamp(TValues {
                report: &report,
                skipped_models: &skipped,
            }),
        )?;
        self.out.csv("tvalues.csv", |w| write_tvalue_csv(&report, w))?;
        Ok(())
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Synth => self.synth(),
            Stage::Ingest => self.ingest(),
            Stage::Impute => self.impute(),
            Stage::Label => self.label(),
            Stage::Evaluate => self.evaluate(),
            Stage::Analyze => self.analyze(),
        }
    }
}

/// Missing declared inputs, checked before any stage runs.
fn preflight(cfg: &RunConfig, stages: &[Stage]) -> Result<(), RunError> {
    let has = |s: Stage| stages.contains(&s);
    let first = stages[0];
    let mut needed: Vec<(Stage, &Path)> = Vec::new();
    let i = &cfg.inputs;
    if has(Stage::Ingest) && !has(Stage::Synth) {
        let dir = i.cohort_dir.as_deref().ok_or_else(|| RunError::Stage {
            stage: Stage::Ingest,
            source: Error::InvalidInput("ingest needs inputs.cohort_dir".into()),
        })?;
        needed.push((Stage::Ingest, dir));
        needed.extend(i.affect_items.as_deref().map(|p| (Stage::Ingest, p)));
    }
    if !has(Stage::Synth) {
        needed.extend(i.schema.as_deref().map(|p| (first, p)));
    }
    if first > Stage::Ingest {
        if let Some(p) = &i.timelines {
            needed.push((first, p));
        }
    }
    if first > Stage::Label {
        if let Some(p) = &i.labels {
            needed.push((first, p));
        }
    }
    for (stage, p) in needed {
        if !p.exists() {
            return Err(RunError::Stage {
                stage,
                source: Error::MissingInput(p.to_path_buf()),
            });
        }
    }
    Ok(())
}

/// Refuses to replace a directory that is not a previous run's output.
fn check_replaceable(target: &Path) -> Result<(), RunError> {
    let non_empty = target.is_dir()
        && std::fs::read_dir(target)
            .map(|mut d| d.next().is_some())
            .unwrap_or(true);
    if target.exists() && !target.is_dir() || non_empty && !target.join(MANIFEST_FILE).is_file() {
        return Err(config_error(Error::InvalidInput(format!(
            "output directory {} exists and holds no {MANIFEST_FILE}",
            target.display()
        ))));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Loads a run config, applies an optional seed override and runs it.
pub fn run_pipeline(config_path: &Path, seed: Option<u64>) -> Result<RunSummary, RunError> {
    let with_path = |source: Error| RunError::Config {
        path: config_path.to_path_buf(),
        source,
    };
    let raw = std::fs::read(config_path).map_err(|e| with_path(Error::io(config_path, e)))?;
    let text = String::from_utf8(raw.clone()).map_err(|e| with_path(Error::InvalidInput(e.to_string())))?;
    let mut cfg = RunConfig::from_json(&text).map_err(with_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    cfg.resolve_paths(&base);
    let config_sha = hex::encode(Sha256::digest(&raw));
    run_config(&cfg, &config_sha).map_err(|e| match e {
        RunError::Config { path, source } if path.as_os_str().is_empty() => with_path(source),
        other => other,
    })
}

/// Runs an already-resolved config. `config_sha256` is recorded as given.
pub fn run_config(cfg: &RunConfig, config_sha256: &str) -> Result<RunSummary, RunError> {
    let stages = cfg.parsed_stages()?;
    let target = cfg.output_dir.clone();
    check_replaceable(&target)?;
    preflight(cfg, &stages)?;

    let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| config_error(Error::io(parent, e)))?;
    let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let scratch = tempfile::Builder::new()
        .prefix(&format!(".{name}.partial-"))
        .tempdir_in(parent)
        .map_err(|e| config_error(Error::io(parent, e)))?;

    let started_at = now();
    let mut runner = Runner {
        cfg,
        run_id: cfg.run_id(),
        out: Outputs {
            root: scratch.path().to_path_buf(),
        },
        state: State::default(),
    };
    let mut records = Vec::new();
    for &stage in &stages {
        let t0 = now();
        runner.run_stage(stage).map_err(|source| RunError::Stage { stage, source })?;
        records.push(StageRecord {
            stage: stage.to_string(),
            started_at: t0,
            finished_at: now(),
        });
    }

    let last = *stages.last().expect("nonempty");
    let fail = |source: Error| RunError::Stage { stage: last, source };
    let root = runner.out.root.clone();
    let outputs = list_files(&root)
        .map_err(fail)?
        .iter()
        .map(|p| {
            let mut d = sha256_file(p)?;
            d.path = p.strip_prefix(&root).expect("below root").to_string_lossy().replace('\\', "/");
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(fail)?;
    let inputs = runner
        .state
        .inputs
        .iter()
        .filter(|p| p.is_file())
        .map(|p| sha256_file(p))
        .collect::<Result<Vec<_>>>()
        .map_err(fail)?;
    let versions = BTreeMap::from([
        ("affectpipe".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("model_format".to_string(), MODEL_FORMAT_VERSION.to_string()),
    ]);
    let manifest = RunManifest {
        run_id: runner.run_id.clone(),
        config_sha256: config_sha256.to_string(),
        seed: cfg.seed,
        versions,
        stages: records,
        inputs,
        outputs,
        started_at,
        finished_at: now(),
    };
    runner.out.json(MANIFEST_FILE, &manifest).map_err(fail)?;

    check_replaceable(&target)?;
    if target.exists() {
        std::fs::remove_dir_all(&target).map_err(|e| fail(Error::io(&target, e)))?;
    }
    let kept = scratch.keep();
    if let Err(e) = std::fs::rename(&kept, &target) {
        let _ = std::fs::remove_dir_all(&kept);
        return Err(fail(Error::io(&target, e)));
    }
    Ok(RunSummary {
        output_dir: target,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        let e = "train".parse::<Stage>().unwrap_err();
        assert_eq!(e.exit_code(), exit::UNKNOWN_STAGE);
    }

    #[test]
    fn stage_order_is_enforced() {
        let mut cfg = RunConfig::from_json(r#"{"output_dir": "out"}"#).unwrap();
        assert_eq!(cfg.parsed_stages().unwrap(), Stage::ALL.to_vec());
        cfg.stages = vec!["label".into(), "impute".into()];
        assert_eq!(cfg.parsed_stages().unwrap_err().exit_code(), exit::CONFIG);
        cfg.stages = vec!["impute".into(), "bogus".into()];
        assert_eq!(cfg.parsed_stages().unwrap_err().exit_code(), exit::UNKNOWN_STAGE);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"output_dir": "out", "sed": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"output_dir": "out", "label": {"band": 0.2}}"#).is_err());
    }

    #[test]
    fn run_id_ignores_output_dir_but_not_seed() {
        let a = RunConfig::from_json(r#"{"output_dir": "a"}"#).unwrap();
        let mut b = RunConfig::from_json(r#"{"output_dir": "b"}"#).unwrap();
        assert_eq!(a.run_id(), b.run_id());
        b.seed += 1;
        assert_ne!(a.run_id(), b.run_id());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut cfg =
            RunConfig::from_json(r#"{"output_dir": "out", "inputs": {"schema": "s.json", "labels": "/abs/l.json"}}"#)
                .unwrap();
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.output_dir, Path::new("/cfg/out"));
        assert_eq!(cfg.inputs.schema.as_deref(), Some(Path::new("/cfg/s.json")));
        assert_eq!(cfg.inputs.labels.as_deref(), Some(Path::new("/abs/l.json")));
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::MissingInput("x".into())), exit::MISSING_INPUT);
        assert_eq!(exit_code(&Error::SchemaMismatch { expected: 2, found: 3 }), exit::SCHEMA);
        assert_eq!(exit_code(&Error::UnknownFeature("f".into())), exit::SCHEMA);
        assert_eq!(exit_code(&Error::SingleClass), exit::FAILURE);
    }

    #[test]
    fn foreign_output_directory_is_not_replaced() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("keep.txt"), "mine").unwrap();
        assert_eq!(check_replaceable(dir.path()).unwrap_err().exit_code(), exit::CONFIG);
        std::fs::write(dir.path().join(MANIFEST_FILE), "{}").unwrap();
        assert!(check_replaceable(dir.path()).is_ok());
    }
}
