//! Neighbor-window imputation of daily feature values.
//!
//! A missing value on day `d` becomes the plain mean of the *measured*
//! values of the same feature on days `d-2, d-1, d+1, d+2`. Imputed values
//! never act as donors, and affect reports are never touched.

use std::fmt;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureSchema, FeatureValue, ParticipantTimeline};
use crate::error::{Error, Result};

/// Calendar-day offsets that may donate a value.
pub const WINDOW_OFFSETS: [i64; 4] = [-2, -1, 1, 2];

/// What to do with values still missing after window imputation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackPolicy {
    /// Rows needing a still-missing value are dropped.
    #[default]
    Drop,
    /// Fill with the participant's mean over measured values.
    ParticipantMean,
}

impl FromStr for FallbackPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(FallbackPolicy::Drop),
            "participant-mean" => Ok(FallbackPolicy::ParticipantMean),
            other => Err(Error::InvalidInput(format!("unknown fallback policy `{other}`"))),
        }
    }
}

impl fmt::Display for FallbackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FallbackPolicy::Drop => "drop",
            FallbackPolicy::ParticipantMean => "participant-mean",
        })
    }
}

fn offset(day: NaiveDate, by: i64) -> Option<NaiveDate> {
    if by >= 0 {
        day.checked_add_days(Days::new(by as u64))
    } else {
        day.checked_sub_days(Days::new(by.unsigned_abs()))
    }
}

/// Mean of `values`, clamped into their range against rounding drift.
fn bounded_mean(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mean.clamp(lo, hi)
}

/// Measured donor values for `feature` around `day`.
pub fn window_donors(timeline: &ParticipantTimeline, feature: &str, day: NaiveDate) -> Vec<f64> {
    WINDOW_OFFSETS
        .iter()
        .filter_map(|&o| offset(day, o))
        .filter_map(|d| timeline.value(d, feature).measured())
        .collect()
}

pub fn impute_feature(timeline: &ParticipantTimeline, feature: &str) -> ParticipantTimeline {
    timeline.map_features(|rec| {
        let mut fv = rec.features.clone();
        if let Some(cell) = fv.values.get_mut(feature) {
            if *cell == FeatureValue::Missing {
                let donors = window_donors(timeline, feature, rec.date());
                if !donors.is_empty() {
                    *cell = FeatureValue::Imputed(bounded_mean(&donors));
                }
            }
        }
        fv
    })
}

/// Window-imputes every schema feature. Donors are read from the input
/// timeline, so the result does not depend on feature order.
pub fn impute_all(timeline: &ParticipantTimeline, schema: &FeatureSchema) -> ParticipantTimeline {
    timeline.map_features(|rec| {
        let mut fv = rec.features.clone();
        for id in schema.ids() {
            if let Some(cell) = fv.values.get_mut(id) {
                if *cell == FeatureValue::Missing {
                    let donors = window_donors(timeline, id, rec.date());
                    if !donors.is_empty() {
                        *cell = FeatureValue::Imputed(bounded_mean(&donors));
                    }
                }
            }
        }
        fv
    })
}

/// Mean of all measured values of `feature`, if any.
pub fn participant_mean(timeline: &ParticipantTimeline, feature: &str) -> Option<f64> {
    let values: Vec<f64> = timeline
        .days()
        .iter()
        .filter_map(|d| d.features.get(feature).measured())
        .collect();
    (!values.is_empty()).then(|| bounded_mean(&values))
}

/// Applies the residual-missingness policy. `Drop` leaves the timeline as is.
pub fn apply_fallback(
    timeline: &ParticipantTimeline,
    schema: &FeatureSchema,
    policy: FallbackPolicy,
) -> ParticipantTimeline {
    match policy {
        FallbackPolicy::Drop => timeline.clone(),
        FallbackPolicy::ParticipantMean => {
            let means: Vec<(&str, Option<f64>)> = schema
                .ids()
                .map(|id| (id, participant_mean(timeline, id)))
                .collect();
            timeline.map_features(|rec| {
                let mut fv = rec.features.clone();
                for (id, mean) in &means {
                    if let (Some(cell), Some(m)) = (fv.values.get_mut(*id), mean) {
                        if *cell == FeatureValue::Missing {
                            *cell = FeatureValue::Imputed(*m);
                        }
                    }
                }
                fv
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AffectPolarity, AffectReport, DailyFeatureVector, DayRecord};
    use std::collections::BTreeMap;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, day).unwrap()
    }

    /// Days 1..=n with feature `x` set from `values` (None = missing).
    fn series(values: &[Option<f64>]) -> ParticipantTimeline {
        let days = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut fv = DailyFeatureVector::empty(d(i as u32 + 1), ["x"]);
                if let Some(v) = v {
                    fv.values.insert("x".into(), FeatureValue::Measured(*v));
                }
                DayRecord {
                    features: fv,
                    affect: None,
                }
            })
            .collect();
        ParticipantTimeline::new("p", days).unwrap()
    }

    #[test]
    fn mean_of_two_neighbours() {
        let t = impute_feature(&series(&[None, Some(10.0), None, Some(20.0), None]), "x");
        assert_eq!(t.value(d(3), "x"), FeatureValue::Imputed(15.0));
    }

    #[test]
    fn all_four_donors() {
        let t = impute_feature(
            &series(&[Some(10.0), Some(20.0), None, Some(30.0), Some(40.0)]),
            "x",
        );
        assert_eq!(t.value(d(3), "x"), FeatureValue::Imputed(25.0));
    }

    #[test]
    fn single_donor_and_no_donor() {
        let t = impute_feature(&series(&[Some(8.0), None, None, None, None, None, None]), "x");
        assert_eq!(t.value(d(3), "x"), FeatureValue::Imputed(8.0));
        assert_eq!(t.value(d(6), "x"), FeatureValue::Missing);
        assert_eq!(t.value(d(7), "x"), FeatureValue::Missing);
    }

    #[test]
    fn calendar_gaps_are_respected() {
        // Day 1 and day 6 present; day 4 has no donors within two calendar days.
        let mut fv1 = DailyFeatureVector::empty(d(1), ["x"]);
        fv1.values.insert("x".into(), FeatureValue::Measured(1.0));
        let fv4 = DailyFeatureVector::empty(d(4), ["x"]);
        let mut fv6 = DailyFeatureVector::empty(d(6), ["x"]);
        fv6.values.insert("x".into(), FeatureValue::Measured(6.0));
        let t = ParticipantTimeline::new(
            "p",
            [fv1, fv4, fv6]
                .into_iter()
                .map(|features| DayRecord { features, affect: None })
                .collect(),
        )
        .unwrap();
        let out = impute_feature(&t, "x");
        assert_eq!(out.value(d(4), "x"), FeatureValue::Imputed(6.0));
    }

    #[test]
    fn imputed_values_do_not_donate() {
        // day 3 gets imputed from day 1; day 5 sees only day 3 (imputed) and day 7 (missing).
        let t = series(&[Some(4.0), None, None, None, None]);
        let once = impute_feature(&t, "x");
        assert_eq!(once.value(d(5), "x"), FeatureValue::Missing);
        assert_eq!(once.value(d(3), "x"), FeatureValue::Imputed(4.0));
    }

    #[test]
    fn fixed_point_and_empty_column() {
        let schema = FeatureSchema::new(vec![crate::domain::FeatureDef {
            id: "x".into(),
            modality: crate::domain::Modality::Ring,
            kind: crate::domain::FeatureKind::Continuous,
            units: "u".into(),
        }])
        .unwrap();
        let full = series(&[Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(impute_all(&full, &schema), full);
        let empty = series(&[None, None, None]);
        assert_eq!(impute_all(&empty, &schema), empty);
    }

    #[test]
    fn affect_untouched() {
        let p = AffectPolarity::default();
        let ratings: BTreeMap<String, f64> = p
            .item_ids()
            .filter(|i| *i != "nervous")
            .map(|i| (i.to_string(), 40.0))
            .collect();
        let report = AffectReport::new(d(1), &ratings, &p).unwrap();
        let mut t = series(&[None, Some(2.0)]);
        t = ParticipantTimeline::new(
            "p",
            t.days()
                .iter()
                .enumerate()
                .map(|(i, r)| DayRecord {
                    features: r.features.clone(),
                    affect: (i == 0).then(|| report.clone()),
                })
                .collect(),
        )
        .unwrap();
        let out = impute_all(&t, &FeatureSchema::default_schema());
        let before = serde_json::to_string(&t.days()[0].affect).unwrap();
        let after = serde_json::to_string(&out.days()[0].affect).unwrap();
        assert_eq!(before, after);
        assert_eq!(out.days()[0].affect.as_ref().unwrap().item("nervous"), None);
    }

    #[test]
    fn participant_mean_fallback() {
        let schema = FeatureSchema::new(vec![crate::domain::FeatureDef {
            id: "x".into(),
            modality: crate::domain::Modality::Ring,
            kind: crate::domain::FeatureKind::Continuous,
            units: "u".into(),
        }])
        .unwrap();
        let t = series(&[Some(2.0), Some(4.0), None, None, None, None, None]);
        let imputed = impute_all(&t, &schema);
        assert_eq!(imputed.value(d(7), "x"), FeatureValue::Missing);
        let filled = apply_fallback(&imputed, &schema, FallbackPolicy::ParticipantMean);
        assert_eq!(filled.value(d(7), "x"), FeatureValue::Imputed(3.0));
        assert_eq!(apply_fallback(&imputed, &schema, FallbackPolicy::Drop), imputed);
        assert_eq!("participant-mean".parse::<FallbackPolicy>().unwrap(), FallbackPolicy::ParticipantMean);
    }
}
