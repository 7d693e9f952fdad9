//! Binary affect targets.
//!
//! Per-item and PA/NA targets are split at the median with the middle band
//! of the distribution (20% by default) dropped. The compiled mood target
//! picks, per day, whichever of PA and NA deviates more from its median.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::Lag;
use crate::domain::ParticipantTimeline;
use crate::error::{Error, Result};

pub const MIN_LABEL_VALUES: usize = 10;
pub const DEFAULT_MIDDLE_BAND: f64 = 0.20;

/// Binary class. For the compiled mood target `High` is happy, `Low` is sad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Low,
    High,
}

impl Label {
    pub fn is_high(self) -> bool {
        self == Label::High
    }

    /// Hard decision for a probability of `High`; exactly 0.5 is `High`.
    pub fn from_proba(p: f64) -> Label {
        if p >= 0.5 {
            Label::High
        } else {
            Label::Low
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::High => Label::Low,
            Label::Low => Label::High,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TargetSpec {
    SingleItem(String),
    Pa,
    Na,
    CompiledMood,
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::SingleItem(id) => write!(f, "item:{id}"),
            TargetSpec::Pa => f.write_str("pa"),
            TargetSpec::Na => f.write_str("na"),
            TargetSpec::CompiledMood => f.write_str("mood"),
        }
    }
}

impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pa" => Ok(TargetSpec::Pa),
            "na" => Ok(TargetSpec::Na),
            "mood" => Ok(TargetSpec::CompiledMood),
            other => match other.strip_prefix("item:") {
                Some(id) if !id.is_empty() => Ok(TargetSpec::SingleItem(id.to_string())),
                _ => Err(Error::InvalidInput(format!(
                    "unknown target `{other}` (expected pa, na, mood or item:<id>)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for TargetSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TargetSpec> for String {
    fn from(t: TargetSpec) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    MiddleBand,
    MissingAffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub participant_id: String,
    pub target: TargetSpec,
    pub entries: BTreeMap<NaiveDate, Label>,
    pub excluded: BTreeMap<NaiveDate, ExclusionReason>,
}

impl LabelSet {
    pub fn count(&self, label: Label) -> usize {
        self.entries.values().filter(|&&l| l == label).count()
    }
}

/// The `labels.json` document: every participant's labels plus how they were
/// made. `lag` is carried along for the dataset step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDocument {
    pub target: TargetSpec,
    pub options: LabelOptions,
    #[serde(default)]
    pub lag: Lag,
    pub participants: Vec<LabelSet>,
}

impl LabelDocument {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Labeled and middle-band dates from one split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitOutcome {
    pub entries: BTreeMap<NaiveDate, Label>,
    pub middle_band: Vec<NaiveDate>,
}

/// Percentile with linear interpolation between closest ranks
/// (`rank = q·(n−1)` on the sorted values). `q` is in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

fn sorted_values<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    percentile(&sorted_values(values), 0.5)
}

/// Lower and upper cut points of the middle band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitThresholds {
    pub lower: f64,
    pub upper: f64,
}

pub fn split_thresholds(values: &[f64], middle_band: f64) -> Result<SplitThresholds> {
    if values.len() < MIN_LABEL_VALUES {
        return Err(Error::InsufficientLabels(format!(
            "{} values, need at least {MIN_LABEL_VALUES}",
            values.len()
        )));
    }
    if !(0.0..1.0).contains(&middle_band) {
        return Err(Error::InvalidInput(format!(
            "middle band {middle_band} must be in [0, 1)"
        )));
    }
    let sorted = sorted_values(values);
    Ok(SplitThresholds {
        lower: percentile(&sorted, 0.5 - middle_band / 2.0),
        upper: percentile(&sorted, 0.5 + middle_band / 2.0),
    })
}

pub fn apply_split(values: &BTreeMap<NaiveDate, f64>, t: SplitThresholds) -> SplitOutcome {
    let mut out = SplitOutcome::default();
    for (&date, &v) in values {
        if v > t.upper {
            out.entries.insert(date, Label::High);
        } else if v < t.lower {
            out.entries.insert(date, Label::Low);
        } else {
            out.middle_band.push(date);
        }
    }
    out
}

/// Median split with the middle band removed, using the values' own percentiles.
pub fn median_split_labels(
    values: &BTreeMap<NaiveDate, f64>,
    middle_band: f64,
) -> Result<SplitOutcome> {
    let v: Vec<f64> = values.values().copied().collect();
    let t = split_thresholds(&v, middle_band)?;
    Ok(apply_split(values, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoodCenters {
    pub pa_median: f64,
    pub na_median: f64,
}

/// Dominant-mood label from a pair of deviations. `None` for a zero
/// dominant deviation. Equal magnitudes resolve to PA.
pub fn dominant_mood(dev_pa: f64, dev_na: f64) -> Option<Label> {
    if dev_pa.abs() >= dev_na.abs() {
        match dev_pa.partial_cmp(&0.0)? {
            std::cmp::Ordering::Greater => Some(Label::High),
            std::cmp::Ordering::Less => Some(Label::Low),
            std::cmp::Ordering::Equal => None,
        }
    } else if dev_na > 0.0 {
        Some(Label::Low)
    } else {
        Some(Label::High)
    }
}

pub fn apply_mood(
    pa: &BTreeMap<NaiveDate, f64>,
    na: &BTreeMap<NaiveDate, f64>,
    centers: MoodCenters,
) -> Result<SplitOutcome> {
    if pa.len() != na.len() || pa.keys().zip(na.keys()).any(|(a, b)| a != b) {
        return Err(Error::InvalidInput("PA and NA cover different dates".into()));
    }
    let mut out = SplitOutcome::default();
    for ((&date, &p), &n) in pa.iter().zip(na.values()) {
        match dominant_mood(p - centers.pa_median, n - centers.na_median) {
            Some(l) => {
                out.entries.insert(date, l);
            }
            None => out.middle_band.push(date),
        }
    }
    Ok(out)
}

pub fn compiled_mood_labels(
    pa: &BTreeMap<NaiveDate, f64>,
    na: &BTreeMap<NaiveDate, f64>,
) -> Result<SplitOutcome> {
    if pa.is_empty() {
        return Err(Error::InsufficientLabels("no PA/NA values".into()));
    }
    let pa_v: Vec<f64> = pa.values().copied().collect();
    let na_v: Vec<f64> = na.values().copied().collect();
    apply_mood(
        pa,
        na,
        MoodCenters {
            pa_median: median(&pa_v),
            na_median: median(&na_v),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelOptions {
    pub middle_band: f64,
    /// Thresholds from the pooled cohort instead of each participant.
    pub pooled: bool,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            middle_band: DEFAULT_MIDDLE_BAND,
            pooled: false,
        }
    }
}

/// Target values on valid affect days plus the dates whose report is incomplete.
struct TargetValues {
    primary: BTreeMap<NaiveDate, f64>,
    /// NA values, only for the compiled mood target.
    secondary: BTreeMap<NaiveDate, f64>,
    missing: Vec<NaiveDate>,
}

fn target_values(timeline: &ParticipantTimeline, target: &TargetSpec) -> TargetValues {
    let mut tv = TargetValues {
        primary: BTreeMap::new(),
        secondary: BTreeMap::new(),
        missing: Vec::new(),
    };
    for day in timeline.days() {
        let Some(report) = &day.affect else { continue };
        if !report.is_complete() {
            tv.missing.push(day.date());
            continue;
        }
        let date = day.date();
        match target {
            TargetSpec::Pa => {
                tv.primary.extend(report.pa.map(|v| (date, v)));
            }
            TargetSpec::Na => {
                tv.primary.extend(report.na.map(|v| (date, v)));
            }
            TargetSpec::SingleItem(id) => match report.item(id) {
                Some(v) => {
                    tv.primary.insert(date, v);
                }
                None => tv.missing.push(date),
            },
            TargetSpec::CompiledMood => {
                if let (Some(p), Some(n)) = (report.pa, report.na) {
                    tv.primary.insert(date, p);
                    tv.secondary.insert(date, n);
                }
            }
        }
    }
    tv
}

fn to_label_set(
    timeline: &ParticipantTimeline,
    target: &TargetSpec,
    split: SplitOutcome,
    missing: Vec<NaiveDate>,
) -> LabelSet {
    let mut excluded: BTreeMap<NaiveDate, ExclusionReason> = missing
        .into_iter()
        .map(|d| (d, ExclusionReason::MissingAffect))
        .collect();
    excluded.extend(split.middle_band.into_iter().map(|d| (d, ExclusionReason::MiddleBand)));
    LabelSet {
        participant_id: timeline.participant_id().to_string(),
        target: target.clone(),
        entries: split.entries,
        excluded,
    }
}

fn check_item_known(timeline: &ParticipantTimeline, target: &TargetSpec) -> Result<()> {
    if let TargetSpec::SingleItem(id) = target {
        let known = timeline
            .days()
            .iter()
            .filter_map(|d| d.affect.as_ref())
            .any(|r| r.items.contains_key(id));
        if !known {
            return Err(Error::InvalidInput(format!(
                "affect item `{id}` is not configured for participant `{}`",
                timeline.participant_id()
            )));
        }
    }
    Ok(())
}

/// Labels one participant against their own distribution.
pub fn label_participant(
    timeline: &ParticipantTimeline,
    target: &TargetSpec,
    options: &LabelOptions,
) -> Result<LabelSet> {
    check_item_known(timeline, target)?;
    let tv = target_values(timeline, target);
    let split = match target {
        TargetSpec::CompiledMood => compiled_mood_labels(&tv.primary, &tv.secondary)?,
        _ => median_split_labels(&tv.primary, options.middle_band)?,
    };
    Ok(to_label_set(timeline, target, split, tv.missing))
}

/// Labels every participant, per participant or with pooled cut points.
pub fn label_cohort(
    timelines: &[ParticipantTimeline],
    target: &TargetSpec,
    options: &LabelOptions,
) -> Result<Vec<LabelSet>> {
    if !options.pooled {
        return timelines
            .iter()
            .map(|t| label_participant(t, target, options))
            .collect();
    }
    for t in timelines {
        check_item_known(t, target)?;
    }
    let values: Vec<TargetValues> = timelines.iter().map(|t| target_values(t, target)).collect();
    let pooled_primary: Vec<f64> = values.iter().flat_map(|v| v.primary.values().copied()).collect();
    let out = match target {
        TargetSpec::CompiledMood => {
            if pooled_primary.is_empty() {
                return Err(Error::InsufficientLabels("no PA/NA values".into()));
            }
            let pooled_na: Vec<f64> =
                values.iter().flat_map(|v| v.secondary.values().copied()).collect();
            let centers = MoodCenters {
                pa_median: median(&pooled_primary),
                na_median: median(&pooled_na),
            };
            timelines
                .iter()
                .zip(values)
                .map(|(t, tv)| {
                    let split = apply_mood(&tv.primary, &tv.secondary, centers)?;
                    Ok(to_label_set(t, target, split, tv.missing))
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => {
            let thresholds = split_thresholds(&pooled_primary, options.middle_band)?;
            timelines
                .iter()
                .zip(values)
                .map(|(t, tv)| {
                    let split = apply_split(&tv.primary, thresholds);
                    to_label_set(t, target, split, tv.missing)
                })
                .collect()
        }
    };
    Ok(out)
}
