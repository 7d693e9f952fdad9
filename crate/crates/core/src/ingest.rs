//! Raw CSV ingestion and duration-weighted daily aggregation.
//!
//! Modality files hold one row per intraday sample:
//!
//! ```text
//! date,feature_id,value,duration_min
//! 2020-03-01,heart_rate,62.0,5
//! ```
//!
//! Features reported once per day use a single row with `duration_min = 1440`.
//! Affect files hold one row per item rating: `date,item_id,rating`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AffectPolarity, AffectReport, DailyFeatureVector, DayRecord, FeatureKind, FeatureSchema,
    FeatureValue, Modality, ParticipantTimeline,
};
use crate::error::{Error, Result};

pub const MODALITY_HEADER: [&str; 4] = ["date", "feature_id", "value", "duration_min"];
pub const AFFECT_HEADER: [&str; 3] = ["date", "item_id", "rating"];
pub const MINUTES_PER_DAY: f64 = 1440.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntradaySample {
    pub feature_id: String,
    pub value: f64,
    pub duration_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub date: NaiveDate,
    #[serde(flatten)]
    pub sample: IntradaySample,
}

/// Every sample from one participant's file for one device.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSampleFile {
    pub participant_id: String,
    pub modality: Modality,
    pub rows: Vec<RawRow>,
}

/// Duration-weighted mean `Σ(value·duration) / Σ(duration)`.
///
/// Returns `None` for an empty slice; the caller records the day as missing.
pub fn aggregate_day(samples: &[IntradaySample]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let (weighted, total) = samples.iter().fold((0.0, 0.0), |(w, t), s| {
        (w + s.value * s.duration_min, t + s.duration_min)
    });
    // Clamp guards against rounding pushing the mean a hair outside the sample range.
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.value), hi.max(s.value))
    });
    Some((weighted / total).clamp(lo, hi))
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("bad date `{s}`: {e}"))
}

fn parse_number(s: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("bad {what} `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {what} `{s}`"))
    }
}

fn check_header(
    headers: &csv::StringRecord,
    expected: &[&str],
    path: &str,
) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

pub fn parse_modality_file(
    path: impl AsRef<Path>,
    participant_id: &str,
    modality: Modality,
    schema: &FeatureSchema,
) -> Result<RawSampleFile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_modality_reader(file, &path.display().to_string(), participant_id, modality, schema)
}

/// Parses and validates a modality CSV. `source` names the input in errors.
pub fn parse_modality_reader<R: Read>(
    reader: R,
    source: &str,
    participant_id: &str,
    modality: Modality,
    schema: &FeatureSchema,
) -> Result<RawSampleFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(rdr.headers()?, &MODALITY_HEADER, source)?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        if record.len() != MODALITY_HEADER.len() {
            return Err(fail(format!(
                "expected {} fields, found {}",
                MODALITY_HEADER.len(),
                record.len()
            )));
        }
        let date = parse_date(&record[0]).map_err(fail)?;
        let feature_id = record[1].trim().to_string();
        let value = parse_number(&record[2], "value").map_err(fail)?;
        let duration_min = parse_number(&record[3], "duration").map_err(fail)?;
        if duration_min <= 0.0 {
            return Err(fail(format!("duration must be positive, got {duration_min}")));
        }
        let def = schema
            .get(&feature_id)
            .ok_or_else(|| Error::UnknownFeature(feature_id.clone()))?;
        if def.modality != modality {
            return Err(Error::ModalityMismatch {
                feature: feature_id,
                expected: def.modality.to_string(),
                found: modality.to_string(),
            });
        }
        if def.kind == FeatureKind::Boolean && value != 0.0 && value != 1.0 {
            return Err(fail(format!("boolean feature `{feature_id}` has value {value}")));
        }
        rows.push(RawRow {
            date,
            sample: IntradaySample {
                feature_id,
                value,
                duration_min,
            },
        });
    }
    Ok(RawSampleFile {
        participant_id: participant_id.to_string(),
        modality,
        rows,
    })
}

pub fn parse_affect_file(
    path: impl AsRef<Path>,
    polarity: &AffectPolarity,
) -> Result<Vec<AffectReport>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_affect_reader(file, &path.display().to_string(), polarity)
}

/// Parses item ratings and groups them into one report per date.
pub fn parse_affect_reader<R: Read>(
    reader: R,
    source: &str,
    polarity: &AffectPolarity,
) -> Result<Vec<AffectReport>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(rdr.headers()?, &AFFECT_HEADER, source)?;

    let mut by_day: BTreeMap<NaiveDate, BTreeMap<String, f64>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        if record.len() != AFFECT_HEADER.len() {
            return Err(fail(format!(
                "expected {} fields, found {}",
                AFFECT_HEADER.len(),
                record.len()
            )));
        }
        let date = parse_date(&record[0]).map_err(fail)?;
        let item = record[1].trim().to_string();
        let rating = parse_number(&record[2], "rating").map_err(fail)?;
        if !polarity.contains(&item) {
            return Err(fail(format!("unknown affect item `{item}`")));
        }
        if by_day.entry(date).or_default().insert(item.clone(), rating).is_some() {
            return Err(fail(format!("duplicate rating for `{item}` on {date}")));
        }
    }
    by_day
        .into_iter()
        .map(|(day, ratings)| AffectReport::new(day, &ratings, polarity))
        .collect()
}

/// Merges raw device files and affect reports into one timeline.
///
/// Every date that appears in any input becomes a day; features without
/// samples on that date are `Missing`.
pub fn build_timeline(
    participant_id: &str,
    files: &[RawSampleFile],
    affect: &[AffectReport],
    schema: &FeatureSchema,
) -> Result<ParticipantTimeline> {
    // (date, feature) -> (modality, file index, samples)
    let mut cells: BTreeMap<(NaiveDate, &str), (Modality, usize, Vec<IntradaySample>)> =
        BTreeMap::new();
    let mut dates = BTreeSet::new();

    for (file_idx, file) in files.iter().enumerate() {
        if file.participant_id != participant_id {
            return Err(Error::InvalidInput(format!(
                "file for participant `{}` passed to timeline of `{participant_id}`",
                file.participant_id
            )));
        }
        for row in &file.rows {
            let def = schema
                .get(&row.sample.feature_id)
                .ok_or_else(|| Error::UnknownFeature(row.sample.feature_id.clone()))?;
            if def.modality != file.modality {
                return Err(Error::ModalityMismatch {
                    feature: def.id.clone(),
                    expected: def.modality.to_string(),
                    found: file.modality.to_string(),
                });
            }
            dates.insert(row.date);
            let entry = cells
                .entry((row.date, def.id.as_str()))
                .or_insert_with(|| (file.modality, file_idx, Vec::new()));
            if entry.1 != file_idx {
                return Err(Error::DuplicateSample {
                    feature: def.id.clone(),
                    date: row.date.to_string(),
                    modality: file.modality.to_string(),
                });
            }
            entry.2.push(row.sample.clone());
        }
    }

    let mut reports: BTreeMap<NaiveDate, &AffectReport> = BTreeMap::new();
    for r in affect {
        for (item, rating) in &r.items {
            if let Some(v) = rating {
                if !(0.0..=100.0).contains(v) {
                    return Err(Error::RatingOutOfRange {
                        item: item.clone(),
                        date: r.day.to_string(),
                        value: *v,
                    });
                }
            }
        }
        if reports.insert(r.day, r).is_some() {
            return Err(Error::InvalidInput(format!("two affect reports for {}", r.day)));
        }
        dates.insert(r.day);
    }

    let days = dates
        .into_iter()
        .map(|date| {
            let mut features = DailyFeatureVector::empty(date, schema.ids());
            for id in schema.ids() {
                if let Some((_, _, samples)) = cells.get(&(date, id)) {
                    if let Some(v) = aggregate_day(samples) {
                        features.values.insert(id.to_string(), FeatureValue::Measured(v));
                    }
                }
            }
            DayRecord {
                features,
                affect: reports.get(&date).map(|r| (*r).clone()),
            }
        })
        .collect();
    ParticipantTimeline::new(participant_id, days)
}

/// Writes rows in the modality CSV format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_modality_csv<W: Write>(writer: W, file: &RawSampleFile) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MODALITY_HEADER)?;
    for row in &file.rows {
        w.write_record([
            row.date.to_string(),
            row.sample.feature_id.clone(),
            row.sample.value.to_string(),
            row.sample.duration_min.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Writes answered items of each report in the affect CSV format.
pub fn write_affect_csv<W: Write>(writer: W, reports: &[AffectReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(AFFECT_HEADER)?;
    for r in reports {
        for (item, rating) in &r.items {
            if let Some(v) = rating {
                w.write_record([r.day.to_string(), item.clone(), v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub const AFFECT_FILE: &str = "affect.csv";

pub fn modality_file_name(m: Modality) -> String {
    format!("{}.csv", m.as_str())
}

/// Reads one participant directory holding `ring.csv`, `watch.csv`,
/// `phone.csv` and `affect.csv`. An absent modality file contributes no
/// samples; `affect.csv` is required.
pub fn ingest_participant_dir(
    dir: impl AsRef<Path>,
    participant_id: &str,
    schema: &FeatureSchema,
    polarity: &AffectPolarity,
) -> Result<ParticipantTimeline> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for m in Modality::ALL {
        let path = dir.join(modality_file_name(m));
        if path.exists() {
            files.push(parse_modality_file(&path, participant_id, m, schema)?);
        }
    }
    let reports = parse_affect_file(dir.join(AFFECT_FILE), polarity)?;
    build_timeline(participant_id, &files, &reports, schema)
}

/// Every subdirectory of `dir` is one participant, named by its directory,
/// read in name order.
pub fn ingest_cohort_dir(
    dir: impl AsRef<Path>,
    schema: &FeatureSchema,
    polarity: &AffectPolarity,
) -> Result<Vec<ParticipantTimeline>> {
    let dir = dir.as_ref();
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!("no participant directories in {}", dir.display())));
    }
    ids.iter()
        .map(|id| ingest_participant_dir(dir.join(id), id, schema, polarity))
        .collect()
}

/// Inverse of [`ingest_participant_dir`].
pub fn write_participant_dir(
    dir: impl AsRef<Path>,
    files: &[RawSampleFile],
    reports: &[AffectReport],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in files {
        let path = dir.join(modality_file_name(f.modality));
        let out = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_modality_csv(std::io::BufWriter::new(out), f)?;
    }
    let path = dir.join(AFFECT_FILE);
    let out = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_affect_csv(std::io::BufWriter::new(out), reports)
}
