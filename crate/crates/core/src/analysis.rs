//! Feature/affect correlations and month-by-month shifts in predicted mood.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::Lag;
use crate::domain::{FeatureSchema, ParticipantTimeline};
use crate::error::{Error, Result};
use crate::learners::ParticipantModel;

pub const MIN_CORRELATION_PAIRS: usize = 3;
pub const MIN_GROUP_SCORES: usize = 3;
pub const LAST_WEEK_DAYS: u64 = 7;

/// Pearson correlation. `None` with fewer than three pairs or when either
/// variable is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("{} x values but {} y values", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if x.len() < MIN_CORRELATION_PAIRS || constant(x) || constant(y) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchT {
    /// Positive when the first group has the larger mean.
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's unequal-variance two-sample t, using sample variances.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchT> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "welch t needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (n, m, var)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(WelchT {
                t: 0.0,
                df: na + nb - 2.0,
                p_value: 1.0,
            });
        }
        return Err(Error::InvalidInput("both groups have zero variance and different means".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(WelchT {
        t,
        df,
        p_value: 2.0 * (1.0 - dist.cdf(t.abs())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffectTarget {
    Pa,
    Na,
}

impl AffectTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            AffectTarget::Pa => "pa",
            AffectTarget::Na => "na",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub feature: String,
    pub target: AffectTarget,
    pub n: usize,
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub lag: Lag,
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationReport {
    pub fn get(&self, feature: &str, target: AffectTarget) -> Option<&CorrelationEntry> {
        self.entries.iter().find(|e| e.feature == feature && e.target == target)
    }
}

/// Pearson r of each schema feature against PA and NA, pooled over all
/// participants. A feature on day `t` pairs with affect on the label day
/// `lag` assigns to `t`.
pub fn feature_affect_correlations(
    timelines: &[ParticipantTimeline],
    schema: &FeatureSchema,
    lag: Lag,
) -> Result<CorrelationReport> {
    let mut entries = Vec::new();
    for def in schema.entries() {
        for target in [AffectTarget::Pa, AffectTarget::Na] {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for tl in timelines {
                for rec in tl.days() {
                    let Some(x) = rec.features.get(&def.id).value() else { continue };
                    let Some(label_day) = lag.label_day(rec.date()) else { continue };
                    let Some(report) = tl.day(label_day).and_then(|r| r.affect.as_ref()) else {
                        continue;
                    };
                    let y = match target {
                        AffectTarget::Pa => report.pa,
                        AffectTarget::Na => report.na,
                    };
                    if let Some(y) = y {
                        xs.push(x);
                        ys.push(y);
                    }
                }
            }
            entries.push(CorrelationEntry {
                feature: def.id.clone(),
                target,
                n: xs.len(),
                r: pearson(&xs, &ys)?,
            });
        }
    }
    Ok(CorrelationReport { lag, entries })
}

/// `feature,pa,na` rows; undefined correlations are left empty.
pub fn write_correlation_csv(report: &CorrelationReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "pa", "na"])?;
    let mut rows: Vec<(&str, [String; 2])> = Vec::new();
    for e in &report.entries {
        let cell = e.r.map(|r| r.to_string()).unwrap_or_default();
        match rows.iter_mut().find(|(f, _)| *f == e.feature) {
            Some((_, cells)) => cells[e.target as usize] = cell,
            None => {
                let mut cells = [String::new(), String::new()];
                cells[e.target as usize] = cell;
                rows.push((&e.feature, cells));
            }
        }
    }
    for (f, [pa, na]) in rows {
        w.write_record([f, &pa, &na])?;
    }
    w.flush().map_err(|e| Error::io("<correlation csv>", e))?;
    Ok(())
}

fn month_key(d: NaiveDate) -> String {
    d.format("%Y-%m").to_string()
}

fn last_day_of_month(d: NaiveDate) -> NaiveDate {
    let first_next = if d.month() == 12 {
        NaiveDate::from_ymd_opt(d.year() + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(d.year(), d.month() + 1, 1)
    };
    first_next.expect("valid month").pred_opt().expect("not the first date")
}

/// Predicted probability of `High` for each day in the last week of every
/// month the timeline touches. Days whose feature day is missing any model
/// input are skipped.
pub fn last_week_scores(model: &ParticipantModel, timeline: &ParticipantTimeline) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let (Some(first), Some(last)) = (timeline.days().first(), timeline.days().last()) else {
        return Ok(out);
    };
    let mut month_end = last_day_of_month(first.date());
    let final_end = last_day_of_month(last.date());
    while month_end <= final_end {
        let scores = out.entry(month_key(month_end)).or_default();
        for back in (0..LAST_WEEK_DAYS).rev() {
            let day = month_end - Days::new(back);
            let Some(fday) = model.lag.feature_day(day) else { continue };
            let Some(row) = timeline.day(fday).and_then(|r| model.row_for(&r.features)) else {
                continue;
            };
            scores.push(model.model.predict_proba(&row)?);
        }
        month_end = last_day_of_month(month_end + Days::new(1));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthT {
    pub month: String,
    pub n_month: usize,
    pub n_reference: usize,
    pub t: f64,
    pub abs_t: f64,
    pub df: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthWarning {
    /// `None` for the pooled analysis.
    pub participant_id: Option<String>,
    pub month: String,
    pub reason: String,
}

/// Each month against the pooled scores of the reference months: all other
/// months, or the `baseline` months when given (minus the month itself).
pub fn month_tvalues(
    scores: &BTreeMap<String, Vec<f64>>,
    baseline: Option<&[String]>,
    participant_id: Option<&str>,
) -> (Vec<MonthT>, Vec<MonthWarning>) {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let warn = |month: &str, reason: String| MonthWarning {
        participant_id: participant_id.map(str::to_string),
        month: month.to_string(),
        reason,
    };
    for (month, own) in scores {
        let reference: Vec<f64> = scores
            .iter()
            .filter(|(m, _)| *m != month && baseline.is_none_or(|b| b.contains(m)))
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        if own.len() < MIN_GROUP_SCORES || reference.len() < MIN_GROUP_SCORES {
            warnings.push(warn(
                month,
                format!(
                    "too few scores: {} in month, {} in reference (need {MIN_GROUP_SCORES})",
                    own.len(),
                    reference.len()
                ),
            ));
            continue;
        }
        match welch_t(own, &reference) {
            Ok(w) => rows.push(MonthT {
                month: month.clone(),
                n_month: own.len(),
                n_reference: reference.len(),
                t: w.t,
                abs_t: w.t.abs(),
                df: w.df,
                p_value: w.p_value,
            }),
            Err(e) => warnings.push(warn(month, e.to_string())),
        }
    }
    (rows, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMonths {
    pub participant_id: String,
    pub months: Vec<MonthT>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TValueReport {
    pub baseline_months: Option<Vec<String>>,
    pub participants: Vec<ParticipantMonths>,
    /// All participants' last-week scores pooled per month.
    pub pooled: Vec<MonthT>,
    pub warnings: Vec<MonthWarning>,
}

impl TValueReport {
    /// Month with the largest pooled |t|.
    pub fn pooled_peak(&self) -> Option<&MonthT> {
        self.pooled.iter().max_by(|a, b| a.abs_t.total_cmp(&b.abs_t))
    }
}

/// Per-participant and pooled month t-values. Each model scores its own
/// participant's timeline.
pub fn monthly_tvalues(
    pairs: &[(&ParticipantModel, &ParticipantTimeline)],
    baseline_months: Option<&[String]>,
) -> Result<TValueReport> {
    for (m, tl) in pairs {
        if m.participant_id != tl.participant_id() {
            return Err(Error::InvalidInput(format!(
                "model for `{}` paired with timeline of `{}`",
                m.participant_id,
                tl.participant_id()
            )));
        }
    }
    let scores: Vec<BTreeMap<String, Vec<f64>>> = pairs
        .par_iter()
        .map(|(m, tl)| last_week_scores(m, tl))
        .collect::<Result<_>>()?;

    let mut participants = Vec::new();
    let mut warnings = Vec::new();
    let mut pooled: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((m, _), s) in pairs.iter().zip(&scores) {
        let (months, w) = month_tvalues(s, baseline_months, Some(&m.participant_id));
        participants.push(ParticipantMonths {
            participant_id: m.participant_id.clone(),
            months,
        });
        warnings.extend(w);
        for (month, v) in s {
            pooled.entry(month.clone()).or_default().extend(v);
        }
    }
    let (pooled, w) = month_tvalues(&pooled, baseline_months, None);
    warnings.extend(w);
    Ok(TValueReport {
        baseline_months: baseline_months.map(<[String]>::to_vec),
        participants,
        pooled,
        warnings,
    })
}

/// Participant x month matrix of |t|, with a trailing `pooled` row. Omitted
/// months are empty cells.
pub fn write_tvalue_csv(report: &TValueReport, out: impl Write) -> Result<()> {
    let mut months: Vec<&str> = report
        .participants
        .iter()
        .flat_map(|p| p.months.iter().map(|m| m.month.as_str()))
        .chain(report.pooled.iter().map(|m| m.month.as_str()))
        .collect();
    months.sort_unstable();
    months.dedup();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["participant_id"];
    header.extend(&months);
    w.write_record(&header)?;
    let row = |id: &str, ms: &[MonthT]| -> Vec<String> {
        std::iter::once(id.to_string())
            .chain(months.iter().map(|m| {
                ms.iter()
                    .find(|x| x.month == *m)
                    .map(|x| x.abs_t.to_string())
                    .unwrap_or_default()
            }))
            .collect()
    };
    for p in &report.participants {
        w.write_record(row(&p.participant_id, &p.months))?;
    }
    w.write_record(row("pooled", &report.pooled))?;
    w.flush().map_err(|e| Error::io("<t-value csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_fixtures() {
        let r = |x: &[f64], y: &[f64]| pearson(x, y).unwrap().unwrap();
        assert!((r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((r(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[6.0, 4.0, 2.0]).unwrap(), None);
        assert_eq!(pearson(&[1.0, 2.0], &[6.0, 4.0]).unwrap(), None);
        assert!(pearson(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn welch_fixture() {
        // Both variances are 1 with n=3, so se = sqrt(2/3) and t = -3 / se.
        let w = welch_t(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((w.t.abs() - 3.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((w.t.abs() - 3.674).abs() < 1e-3);
        assert!((w.df - 4.0).abs() < 1e-12);
        let swapped = welch_t(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(swapped.t, -w.t);
        assert_eq!(welch_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().t, 0.0);
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn month_grouping_and_small_groups() {
        let mut scores = BTreeMap::new();
        scores.insert("2020-01".to_string(), vec![0.1, 0.2, 0.15]);
        scores.insert("2020-02".to_string(), vec![0.2, 0.1, 0.12]);
        scores.insert("2020-03".to_string(), vec![0.9, 0.8, 0.85]);
        scores.insert("2020-04".to_string(), vec![0.5, 0.4]);
        let (rows, warnings) = month_tvalues(&scores, None, Some("p"));
        assert_eq!(rows.len(), 3);
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].month, "2020-04");
        let peak = rows.iter().max_by(|a, b| a.abs_t.total_cmp(&b.abs_t)).unwrap();
        assert_eq!(peak.month, "2020-03");
        assert_eq!(rows[0].n_reference, 8);

        let baseline = ["2020-01".to_string(), "2020-02".to_string()];
        let (rows, _) = month_tvalues(&scores, Some(&baseline), None);
        let march = rows.iter().find(|r| r.month == "2020-03").unwrap();
        assert_eq!(march.n_reference, 6);
        // January compares only against February when it is itself a baseline month.
        let jan = rows.iter().find(|r| r.month == "2020-01").unwrap();
        assert_eq!(jan.n_reference, 3);
    }

    #[test]
    fn month_ends() {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
        assert_eq!(last_day_of_month(d(2020, 2, 10)), d(2020, 2, 29));
        assert_eq!(last_day_of_month(d(2020, 12, 1)), d(2020, 12, 31));
    }
}
