use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use affectpipe::analysis::{feature_affect_correlations, monthly_tvalues, write_correlation_csv, write_tvalue_csv};
use affectpipe::dataset::{build_dataset, CohortDataset, DatasetOptions, Lag};
use affectpipe::domain::{
    filter_eligible_participants, load_timelines, parse_modalities, AffectPolarity, FeatureSchema,
    ParticipantTimeline, DEFAULT_ELIGIBILITY_THRESHOLD,
};
use affectpipe::evaluation::{evaluate_cohort, write_accuracy_csv, write_roc_table, CvOptions, DEFAULT_FOLDS};
use affectpipe::impute::{apply_fallback, impute_all, FallbackPolicy};
use affectpipe::ingest::ingest_cohort_dir;
use affectpipe::labeling::{label_cohort, LabelDocument, LabelOptions, TargetSpec, DEFAULT_MIDDLE_BAND};
use affectpipe::learners::{ModelFamily, ModelSpec, ParticipantModel};
use affectpipe::pipeline::{exit, exit_code, run_pipeline, DEFAULT_SEED};
use affectpipe::synth::{self, CohortConfig};
use affectpipe::{Error, Result};

#[derive(Parser)]
#[command(name = "affectpipe", version, about = "Next-day affect prediction from wearable data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as ingestible CSV files.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Turn a cohort directory into daily timelines.
    Ingest {
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        items: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill feature gaps from nearby measured days.
    Impute {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value = "drop")]
        fallback: FallbackPolicy,
    },
    /// Binarize affect into High/Low labels.
    Label {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "pa")]
        target: TargetSpec,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIDDLE_BAND)]
        middle_band: f64,
        #[arg(long)]
        pooled: bool,
        /// Pair features with same-day labels instead of next-day ones.
        #[arg(long)]
        same_day: bool,
        #[arg(long, default_value_t = DEFAULT_ELIGIBILITY_THRESHOLD)]
        threshold: usize,
    },
    /// Join timelines and labels into training rows.
    Dataset {
        #[arg(long)]
        timelines: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        modalities: String,
        #[arg(long, default_value = "drop")]
        fallback: FallbackPolicy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model per participant on all of their rows.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "rf")]
        model: ModelFamily,
        #[arg(long)]
        tune: bool,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cross-validate models per participant and macro-average.
    Evaluate(EvaluateArgs),
    /// Correlations and month-over-month t-values.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Run a config-driven pipeline and write a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated families, or `all`.
    #[arg(long, default_value = "rf")]
    model: String,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long)]
    stratified: bool,
    #[arg(long)]
    tune: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    roc_csv: Option<PathBuf>,
    #[arg(long)]
    accuracy_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Analyze {
    /// Pearson r of every feature against PA and NA.
    Corr {
        #[arg(long)]
        timelines: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        same_day: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Welch t of each month's last-week scores against the other months.
    Tvalues {
        #[arg(long)]
        timelines: PathBuf,
        #[arg(long)]
        models_dir: PathBuf,
        /// Comma-separated YYYY-MM months to compare against.
        #[arg(long)]
        baseline_months: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn write_bytes(path: &Path, data: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, data).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_bytes(path, &text)
}

fn write_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_bytes(path, &buf)
}

fn schema_or_default(path: Option<&Path>) -> Result<FeatureSchema> {
    path.map_or_else(|| Ok(FeatureSchema::default_schema()), FeatureSchema::load)
}

fn lag(same_day: bool) -> Lag {
    if same_day {
        Lag::SameDay
    } else {
        Lag::NextDay
    }
}

fn families(s: &str) -> Result<Vec<ModelFamily>> {
    if s.trim() == "all" {
        return Ok(ModelFamily::ALL.to_vec());
    }
    s.split(',').map(str::parse).collect()
}

fn spec(family: ModelFamily, tune: bool, seed: u64) -> ModelSpec {
    if tune {
        ModelSpec::tuned(family, seed)
    } else {
        ModelSpec::family_default(family, seed)
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out_dir, seed } => {
            let mut cfg = match config {
                Some(p) => CohortConfig::load(p)?,
                None => CohortConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let cohort = synth::generate(&cfg)?;
            cohort.write(&out_dir)?;
            eprintln!(
                "wrote {} participants ({} eligible) to {}",
                cohort.participants.len(),
                cohort.ground_truth.eligible.len(),
                out_dir.display()
            );
        }
        Command::Ingest {
            input_dir,
            schema,
            items,
            out,
        } => {
            let schema = schema_or_default(schema.as_deref())?;
            let polarity = items.map_or_else(|| Ok(AffectPolarity::default_items()), AffectPolarity::load)?;
            let timelines = ingest_cohort_dir(&input_dir, &schema, &polarity)?;
            write_json(&out, &timelines)?;
        }
        Command::Impute {
            input,
            out,
            schema,
            fallback,
        } => {
            let schema = schema_or_default(schema.as_deref())?;
            let imputed: Vec<ParticipantTimeline> = load_timelines(&input)?
                .iter()
                .map(|t| apply_fallback(&impute_all(t, &schema), &schema, fallback))
                .collect();
            write_json(&out, &imputed)?;
        }
        Command::Label {
            input,
            target,
            out,
            middle_band,
            pooled,
            same_day,
            threshold,
        } => {
            let eligible = filter_eligible_participants(&load_timelines(&input)?, threshold);
            if eligible.is_empty() {
                return Err(Error::InsufficientLabels(format!(
                    "no participant has more than {threshold} valid affect days"
                )));
            }
            let options = LabelOptions { middle_band, pooled };
            let doc = LabelDocument {
                participants: label_cohort(&eligible, &target, &options)?,
                target,
                options,
                lag: lag(same_day),
            };
            write_json(&out, &doc)?;
        }
        Command::Dataset {
            timelines,
            labels,
            schema,
            modalities,
            fallback,
            out,
        } => {
            let schema = schema_or_default(schema.as_deref())?;
            let labels = LabelDocument::load(&labels)?;
            let timelines = load_timelines(&timelines)?;
            let options = DatasetOptions {
                modalities: parse_modalities(&modalities)?,
                lag: labels.lag,
                fallback,
            };
            let participants = labels
                .participants
                .iter()
                .map(|ls| {
                    let t = timelines
                        .iter()
                        .find(|t| t.participant_id() == ls.participant_id)
                        .ok_or_else(|| Error::InvalidInput(format!("no timeline for `{}`", ls.participant_id)))?;
                    build_dataset(t, ls, &schema, &options)
                })
                .collect::<Result<_>>()?;
            write_json(
                &out,
                &CohortDataset {
                    target: labels.target,
                    options,
                    participants,
                },
            )?;
        }
        Command::Train {
            data,
            model,
            tune,
            seed,
            out_dir,
        } => {
            let data = CohortDataset::load(&data)?;
            let spec = spec(model, tune, seed);
            for ds in &data.participants {
                match ParticipantModel::train(ds, &data.target, &data.options.modalities, data.options.lag, &spec) {
                    Ok(m) => write_json(&out_dir.join(format!("{}.json", m.participant_id)), &m)?,
                    Err(e @ (Error::SingleClass | Error::InsufficientLabels(_))) => {
                        eprintln!("skipping {}: {e}", ds.participant_id)
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Command::Evaluate(a) => {
            let data = CohortDataset::load(&a.data)?;
            let cv = CvOptions {
                folds: a.folds,
                stratified: a.stratified,
            };
            let reports = families(&a.model)?
                .into_iter()
                .map(|f| {
                    evaluate_cohort(
                        &data.participants,
                        &data.target,
                        &data.options.modalities,
                        &spec(f, a.tune, a.seed),
                        cv,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            for r in &reports {
                eprintln!(
                    "{}: macro accuracy {:.3}, AUC {:.3}, baseline {:.3} over {} participants",
                    r.family,
                    r.macro_accuracy,
                    r.macro_auc,
                    r.macro_baseline_accuracy,
                    r.participants.len()
                );
            }
            write_json(&a.out, &reports)?;
            if let Some(p) = &a.roc_csv {
                write_csv(p, |w| write_roc_table(&reports, w))?;
            }
            if let Some(p) = &a.accuracy_csv {
                write_csv(p, |w| write_accuracy_csv(&reports, w))?;
            }
        }
        Command::Analyze(Analyze::Corr {
            timelines,
            schema,
            same_day,
            out,
            csv,
        }) => {
            let schema = schema_or_default(schema.as_deref())?;
            let report = feature_affect_correlations(&load_timelines(&timelines)?, &schema, lag(same_day))?;
            write_json(&out, &report)?;
            if let Some(p) = &csv {
                write_csv(p, |w| write_correlation_csv(&report, w))?;
            }
        }
        Command::Analyze(Analyze::Tvalues {
            timelines,
            models_dir,
            baseline_months,
            out,
            csv,
        }) => {
            let timelines = load_timelines(&timelines)?;
            let mut models = Vec::new();
            for t in &timelines {
                let p = models_dir.join(format!("{}.json", t.participant_id()));
                if p.is_file() {
                    models.push(ParticipantModel::load(&p)?);
                }
            }
            if models.is_empty() {
                return Err(Error::MissingInput(models_dir));
            }
            let pairs: Vec<(&ParticipantModel, &ParticipantTimeline)> = models
                .iter()
                .filter_map(|m| timelines.iter().find(|t| t.participant_id() == m.participant_id).map(|t| (m, t)))
                .collect();
            let baseline: Option<Vec<String>> =
                baseline_months.map(|s| s.split(',').map(|m| m.trim().to_string()).collect());
            let report = monthly_tvalues(&pairs, baseline.as_deref())?;
            for w in &report.warnings {
                eprintln!("warning: {} {}: {}", w.participant_id.as_deref().unwrap_or("pooled"), w.month, w.reason);
            }
            write_json(&out, &report)?;
            if let Some(p) = &csv {
                write_csv(p, |w| write_tvalue_csv(&report, w))?;
            }
        }
        Command::Run { .. } => unreachable!("handled in main"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Run { config, seed } = &cli.command {
        return match run_pipeline(config, *seed) {
            Ok(summary) => {
                eprintln!(
                    "run {} complete: {} outputs in {}",
                    summary.manifest.run_id,
                    summary.manifest.outputs.len(),
                    summary.output_dir.display()
                );
                ExitCode::from(exit::OK)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code())
            }
        };
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
