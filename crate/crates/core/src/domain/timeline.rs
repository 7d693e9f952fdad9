use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::affect::AffectReport;
use crate::error::{Error, Result};

/// A daily feature cell. The variant doubles as the value's provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provenance", content = "value", rename_all = "lowercase")]
pub enum FeatureValue {
    Measured(f64),
    Imputed(f64),
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Imputed,
    Missing,
}

impl FeatureValue {
    pub fn value(self) -> Option<f64> {
        match self {
            FeatureValue::Measured(v) | FeatureValue::Imputed(v) => Some(v),
            FeatureValue::Missing => None,
        }
    }

    pub fn measured(self) -> Option<f64> {
        match self {
            FeatureValue::Measured(v) => Some(v),
            _ => None,
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            FeatureValue::Measured(_) => Provenance::Measured,
            FeatureValue::Imputed(_) => Provenance::Imputed,
            FeatureValue::Missing => Provenance::Missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyFeatureVector {
    pub day: NaiveDate,
    pub values: BTreeMap<String, FeatureValue>,
}

impl DailyFeatureVector {
    /// A day with every listed feature missing.
    pub fn empty<'a>(day: NaiveDate, feature_ids: impl IntoIterator<Item = &'a str>) -> Self {
        DailyFeatureVector {
            day,
            values: feature_ids
                .into_iter()
                .map(|id| (id.to_string(), FeatureValue::Missing))
                .collect(),
        }
    }

    pub fn get(&self, feature: &str) -> FeatureValue {
        self.values.get(feature).copied().unwrap_or(FeatureValue::Missing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub features: DailyFeatureVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affect: Option<AffectReport>,
}

impl DayRecord {
    pub fn date(&self) -> NaiveDate {
        self.features.day
    }
}

/// All days observed for one participant, in strictly increasing date order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTimeline")]
pub struct ParticipantTimeline {
    participant_id: String,
    days: Vec<DayRecord>,
}

#[derive(Deserialize)]
struct RawTimeline {
    participant_id: String,
    days: Vec<DayRecord>,
}

impl TryFrom<RawTimeline> for ParticipantTimeline {
    type Error = Error;

    fn try_from(raw: RawTimeline) -> Result<Self> {
        ParticipantTimeline::new(raw.participant_id, raw.days)
    }
}

impl ParticipantTimeline {
    pub fn new(participant_id: impl Into<String>, days: Vec<DayRecord>) -> Result<Self> {
        for pair in days.windows(2) {
            if pair[1].date() <= pair[0].date() {
                return Err(Error::Timeline(format!(
                    "dates not strictly increasing at {}",
                    pair[1].date()
                )));
            }
        }
        for d in &days {
            if let Some(a) = &d.affect {
                if a.day != d.date() {
                    return Err(Error::Timeline(format!(
                        "affect report for {} attached to {}",
                        a.day,
                        d.date()
                    )));
                }
            }
        }
        Ok(ParticipantTimeline {
            participant_id: participant_id.into(),
            days,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timeline serializes")
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn days(&self) -> &[DayRecord] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn day(&self, date: NaiveDate) -> Option<&DayRecord> {
        self.days
            .binary_search_by_key(&date, DayRecord::date)
            .ok()
            .map(|i| &self.days[i])
    }

    pub fn value(&self, date: NaiveDate, feature: &str) -> FeatureValue {
        self.day(date)
            .map_or(FeatureValue::Missing, |d| d.features.get(feature))
    }

    /// Rebuilds the timeline with each day's feature vector replaced.
    /// Affect reports are carried over untouched.
    pub(crate) fn map_features(
        &self,
        mut f: impl FnMut(&DayRecord) -> DailyFeatureVector,
    ) -> ParticipantTimeline {
        let days = self
            .days
            .iter()
            .map(|d| DayRecord {
                features: f(d),
                affect: d.affect.clone(),
            })
            .collect();
        ParticipantTimeline {
            participant_id: self.participant_id.clone(),
            days,
        }
    }
}

/// Reads a timeline file holding either one timeline or an array of them.
pub fn load_timelines(path: impl AsRef<Path>) -> Result<Vec<ParticipantTimeline>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<ParticipantTimeline>),
        One(Box<ParticipantTimeline>),
    }
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(match serde_json::from_str(&text)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(t) => vec![*t],
    })
}

/// Number of days carrying a report with every item answered.
pub fn valid_affect_day_count(timeline: &ParticipantTimeline) -> usize {
    timeline
        .days()
        .iter()
        .filter(|d| d.affect.as_ref().is_some_and(AffectReport::is_complete))
        .count()
}

/// Keeps participants with strictly more than `threshold` valid affect days.
pub fn filter_eligible_participants(
    timelines: &[ParticipantTimeline],
    threshold: usize,
) -> Vec<ParticipantTimeline> {
    timelines
        .iter()
        .filter(|t| valid_affect_day_count(t) > threshold)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AffectPolarity;

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, d).unwrap()
    }

    fn report(day: NaiveDate, drop: Option<&str>) -> AffectReport {
        let p = AffectPolarity::default();
        let ratings = p
            .item_ids()
            .filter(|id| Some(*id) != drop)
            .map(|id| (id.to_string(), 50.0))
            .collect();
        AffectReport::new(day, &ratings, &p).unwrap()
    }

    fn record(d: u32, affect: Option<AffectReport>) -> DayRecord {
        DayRecord {
            features: DailyFeatureVector::empty(date(d), ["hr"]),
            affect,
        }
    }

    #[test]
    fn empty_timeline_has_no_valid_days() {
        let t = ParticipantTimeline::new("p", vec![]).unwrap();
        assert_eq!(valid_affect_day_count(&t), 0);
    }

    #[test]
    fn counts_complete_reports_only() {
        let t = ParticipantTimeline::new(
            "p",
            vec![
                record(1, Some(report(date(1), None))),
                record(2, None),
                record(3, Some(report(date(3), None))),
            ],
        )
        .unwrap();
        assert_eq!(valid_affect_day_count(&t), 2);

        let t = ParticipantTimeline::new("p", vec![record(1, Some(report(date(1), Some("nervous"))))])
            .unwrap();
        assert_eq!(valid_affect_day_count(&t), 0);
    }

    #[test]
    fn rejects_unordered_dates() {
        assert!(ParticipantTimeline::new("p", vec![record(2, None), record(1, None)]).is_err());
        assert!(ParticipantTimeline::new("p", vec![record(2, None), record(2, None)]).is_err());
    }

    fn with_count(id: &str, n: usize) -> ParticipantTimeline {
        let days = (0..n)
            .map(|i| {
                let d = date(1) + chrono::Days::new(i as u64);
                DayRecord {
                    features: DailyFeatureVector::empty(d, ["hr"]),
                    affect: Some(report(d, None)),
                }
            })
            .collect();
        ParticipantTimeline::new(id, days).unwrap()
    }

    #[test]
    fn eligibility_is_strict() {
        let ts = vec![with_count("a", 201), with_count("b", 200), with_count("c", 199)];
        let kept = filter_eligible_participants(&ts, 200);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].participant_id(), "a");
        assert_eq!(filter_eligible_participants(&ts, 0).len(), 3);
    }

    #[test]
    fn json_round_trip_keeps_provenance() {
        let mut fv = DailyFeatureVector::empty(date(1), ["a", "b", "c"]);
        fv.values.insert("a".into(), FeatureValue::Measured(1.5));
        fv.values.insert("b".into(), FeatureValue::Imputed(2.0));
        let t = ParticipantTimeline::new(
            "p",
            vec![DayRecord {
                features: fv,
                affect: Some(report(date(1), Some("upset"))),
            }],
        )
        .unwrap();
        let back: ParticipantTimeline = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert!(t.to_json().contains(r#""provenance": "imputed""#));
    }
}
