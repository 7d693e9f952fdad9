//! Feature-row / label assembly for model training.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureSchema, Modality, ParticipantTimeline};
use crate::error::{Error, Result};
use crate::impute::{apply_fallback, FallbackPolicy};
use crate::labeling::{Label, LabelSet, TargetSpec};

/// Day offset between features and the label they predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lag {
    /// Features of day `t` predict the label of day `t+1`.
    #[default]
    NextDay,
    SameDay,
}

impl Lag {
    /// Day whose features feed the label of `label_day`.
    pub fn feature_day(self, label_day: NaiveDate) -> Option<NaiveDate> {
        match self {
            Lag::NextDay => label_day.checked_sub_days(Days::new(1)),
            Lag::SameDay => Some(label_day),
        }
    }

    pub fn label_day(self, feature_day: NaiveDate) -> Option<NaiveDate> {
        match self {
            Lag::NextDay => feature_day.checked_add_days(Days::new(1)),
            Lag::SameDay => Some(feature_day),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub modalities: Vec<Modality>,
    #[serde(default)]
    pub lag: Lag,
    #[serde(default)]
    pub fallback: FallbackPolicy,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            modalities: Modality::ALL.to_vec(),
            lag: Lag::NextDay,
            fallback: FallbackPolicy::Drop,
        }
    }
}

/// Training rows for one participant. `dates[i]` is the label date of row `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantDataset {
    pub participant_id: String,
    pub feature_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl ParticipantDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Keeps the listed columns, in the given order.
    pub fn project(&self, feature_ids: &[String]) -> Result<ParticipantDataset> {
        let idx: Vec<usize> = feature_ids
            .iter()
            .map(|id| {
                self.feature_ids
                    .iter()
                    .position(|f| f == id)
                    .ok_or_else(|| Error::UnknownFeature(id.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(ParticipantDataset {
            participant_id: self.participant_id.clone(),
            feature_ids: feature_ids.to_vec(),
            dates: self.dates.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&i| r[i]).collect())
                .collect(),
            labels: self.labels.clone(),
        })
    }

    /// Subset of rows by index.
    pub fn select(&self, indices: &[usize]) -> ParticipantDataset {
        ParticipantDataset {
            participant_id: self.participant_id.clone(),
            feature_ids: self.feature_ids.clone(),
            dates: indices.iter().map(|&i| self.dates[i]).collect(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// The `dataset.json` document consumed by `evaluate` and `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDataset {
    pub target: TargetSpec,
    pub options: DatasetOptions,
    pub participants: Vec<ParticipantDataset>,
}

impl CohortDataset {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Feature ids of the chosen modalities, in schema order.
pub fn feature_ids_for(schema: &FeatureSchema, modalities: &[Modality]) -> Result<Vec<String>> {
    for m in modalities {
        if schema.features_for(&[*m]).is_empty() {
            return Err(Error::Schema(format!("no {m} features in schema")));
        }
    }
    Ok(schema
        .features_for(modalities)
        .into_iter()
        .map(|f| f.id.clone())
        .collect())
}

/// One row per labeled date whose feature day has every selected feature.
pub fn build_dataset(
    timeline: &ParticipantTimeline,
    labels: &LabelSet,
    schema: &FeatureSchema,
    options: &DatasetOptions,
) -> Result<ParticipantDataset> {
    if labels.participant_id != timeline.participant_id() {
        return Err(Error::InvalidInput(format!(
            "labels for `{}` applied to timeline of `{}`",
            labels.participant_id,
            timeline.participant_id()
        )));
    }
    let feature_ids = feature_ids_for(schema, &options.modalities)?;
    let filled;
    let source = match options.fallback {
        FallbackPolicy::Drop => timeline,
        FallbackPolicy::ParticipantMean => {
            filled = apply_fallback(timeline, schema, options.fallback);
            &filled
        }
    };

    let mut ds = ParticipantDataset {
        participant_id: timeline.participant_id().to_string(),
        feature_ids,
        dates: Vec::new(),
        rows: Vec::new(),
        labels: Vec::new(),
    };
    let mut any_feature_day = false;
    for (&label_day, &label) in &labels.entries {
        let Some(fday) = options.lag.feature_day(label_day) else { continue };
        let Some(record) = source.day(fday) else { continue };
        any_feature_day = true;
        let row: Option<Vec<f64>> = ds
            .feature_ids
            .iter()
            .map(|id| record.features.get(id).value())
            .collect();
        if let Some(row) = row {
            ds.dates.push(label_day);
            ds.rows.push(row);
            ds.labels.push(label);
        }
    }
    if !any_feature_day {
        return Err(Error::InvalidInput(format!(
            "participant `{}`: no labeled day has a matching feature day",
            timeline.participant_id()
        )));
    }
    Ok(ds)
}

/// Datasets for several modality subsets over one shared set of label dates,
/// so the subsets can be compared on identical rows.
pub fn build_paired_datasets(
    timeline: &ParticipantTimeline,
    labels: &LabelSet,
    schema: &FeatureSchema,
    subsets: &[Vec<Modality>],
    options: &DatasetOptions,
) -> Result<Vec<ParticipantDataset>> {
    let union: BTreeSet<Modality> = subsets.iter().flatten().copied().collect();
    let full = build_dataset(
        timeline,
        labels,
        schema,
        &DatasetOptions {
            modalities: union.into_iter().collect(),
            ..options.clone()
        },
    )?;
    subsets
        .iter()
        .map(|mods| full.project(&feature_ids_for(schema, mods)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DailyFeatureVector, DayRecord, FeatureDef, FeatureKind, FeatureValue};
    use std::collections::BTreeMap;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 2, day).unwrap()
    }

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureDef {
                id: "r".into(),
                modality: Modality::Ring,
                kind: FeatureKind::Continuous,
                units: "u".into(),
            },
            FeatureDef {
                id: "w".into(),
                modality: Modality::Watch,
                kind: FeatureKind::Continuous,
                units: "u".into(),
            },
        ])
        .unwrap()
    }

    fn timeline(cells: &[(u32, Option<f64>, Option<f64>)]) -> ParticipantTimeline {
        let days = cells
            .iter()
            .map(|&(day, r, w)| {
                let mut fv = DailyFeatureVector::empty(d(day), ["r", "w"]);
                if let Some(r) = r {
                    fv.values.insert("r".into(), FeatureValue::Measured(r));
                }
                if let Some(w) = w {
                    fv.values.insert("w".into(), FeatureValue::Measured(w));
                }
                DayRecord { features: fv, affect: None }
            })
            .collect();
        ParticipantTimeline::new("p", days).unwrap()
    }

    fn opts() -> DatasetOptions {
        DatasetOptions {
            modalities: vec![Modality::Ring, Modality::Watch],
            ..DatasetOptions::default()
        }
    }

    fn labels(entries: &[(u32, Label)]) -> LabelSet {
        LabelSet {
            participant_id: "p".into(),
            target: TargetSpec::Pa,
            entries: entries.iter().map(|&(day, l)| (d(day), l)).collect(),
            excluded: BTreeMap::new(),
        }
    }

    #[test]
    fn next_day_pairing() {
        let t = timeline(&[(1, Some(1.0), Some(10.0)), (2, Some(2.0), Some(20.0))]);
        let ds = build_dataset(&t, &labels(&[(2, Label::High)]), &schema(), &opts()).unwrap();
        assert_eq!(ds.rows, vec![vec![1.0, 10.0]]);
        assert_eq!(ds.dates, vec![d(2)]);
        assert_eq!(ds.labels, vec![Label::High]);

        let same = DatasetOptions {
            lag: Lag::SameDay,
            ..opts()
        };
        let ds = build_dataset(&t, &labels(&[(2, Label::High)]), &schema(), &same).unwrap();
        assert_eq!(ds.rows, vec![vec![2.0, 20.0]]);
    }

    #[test]
    fn missing_feature_day_drops_row() {
        let t = timeline(&[(1, None, None), (2, Some(2.0), Some(2.0)), (3, Some(3.0), Some(3.0))]);
        let ds = build_dataset(
            &t,
            &labels(&[(2, Label::High), (3, Label::Low)]),
            &schema(),
            &opts(),
        )
        .unwrap();
        assert_eq!(ds.dates, vec![d(3)]);
    }

    #[test]
    fn participant_mean_fallback_keeps_row() {
        let t = timeline(&[(1, None, Some(1.0)), (2, Some(4.0), Some(2.0)), (9, Some(6.0), Some(2.0))]);
        let opts = DatasetOptions {
            fallback: FallbackPolicy::ParticipantMean,
            ..opts()
        };
        let ds = build_dataset(&t, &labels(&[(2, Label::High)]), &schema(), &opts).unwrap();
        assert_eq!(ds.rows, vec![vec![5.0, 1.0]]);
    }

    #[test]
    fn modality_projection() {
        let t = timeline(&[(1, Some(1.0), None), (2, Some(2.0), Some(2.0))]);
        let opts = DatasetOptions {
            modalities: vec![Modality::Ring],
            ..opts()
        };
        let ds = build_dataset(&t, &labels(&[(2, Label::High)]), &schema(), &opts).unwrap();
        assert_eq!(ds.feature_ids, vec!["r".to_string()]);
        assert_eq!(ds.rows, vec![vec![1.0]]);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let t = timeline(&[(10, Some(1.0), Some(1.0))]);
        assert!(build_dataset(&t, &labels(&[(2, Label::High)]), &schema(), &opts()).is_err());
    }

    #[test]
    fn paired_subsets_share_rows() {
        let t = timeline(&[(1, Some(1.0), None), (2, Some(2.0), Some(2.0)), (3, Some(3.0), Some(3.0))]);
        let sets = build_paired_datasets(
            &t,
            &labels(&[(2, Label::High), (3, Label::Low), (4, Label::High)]),
            &schema(),
            &[vec![Modality::Ring], vec![Modality::Watch]],
            &opts(),
        )
        .unwrap();
        assert_eq!(sets[0].dates, sets[1].dates);
        assert_eq!(sets[0].dates, vec![d(3), d(4)]);
    }
}
