//! Seeded synthetic cohorts with a known feature/affect relationship.
//!
//! Each feature is driven by a standard-normal AR(1) latent series. Next-day
//! positive and negative affect are linear in the previous day's latents
//! plus Gaussian noise, then rescaled to the configured cohort moments. The
//! output goes through the same CSV formats and timeline builder as real
//! data.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalDist};

use crate::domain::{
    AffectPolarity, AffectReport, FeatureDef, FeatureKind, FeatureSchema, Modality, ParticipantTimeline,
};
use crate::error::{Error, Result};
use crate::ingest::{build_timeline, write_participant_dir, IntradaySample, RawRow, RawSampleFile};
use crate::labeling::DEFAULT_MIDDLE_BAND;
use crate::rng::SeedTree;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const ITEMS_FILE: &str = "affect_items.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSignal {
    /// Linear weight of each feature's latent series.
    pub weights: BTreeMap<String, f64>,
    pub noise_std: f64,
}

impl TargetSignal {
    pub fn weight_norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Weights from shares of signal variance; a negative share gives a
    /// negative weight.
    pub fn from_shares(shares: &[(&str, f64)], noise_std: f64) -> Self {
        TargetSignal {
            weights: shares
                .iter()
                .map(|&(id, s)| (id.to_string(), s.signum() * s.abs().sqrt()))
                .collect(),
            noise_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffectMoments {
    pub pa_mean: f64,
    pub pa_sd: f64,
    pub na_mean: f64,
    pub na_sd: f64,
}

impl Default for AffectMoments {
    fn default() -> Self {
        AffectMoments {
            pa_mean: 45.27,
            pa_sd: 20.22,
            na_mean: 21.79,
            na_sd: 12.28,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissingnessSpec {
    /// Independent probability that a modality records nothing on a day.
    pub daily: BTreeMap<Modality, f64>,
    /// Daily probability that a multi-day outage starts.
    pub block_start: f64,
    /// Inclusive outage length range, in days.
    pub block_len: [usize; 2],
    /// Probability that a single emotion item is left unanswered.
    pub item: f64,
}

impl Default for MissingnessSpec {
    fn default() -> Self {
        MissingnessSpec {
            daily: [(Modality::Ring, 0.05), (Modality::Watch, 0.15), (Modality::Phone, 0.30)].into(),
            block_start: 0.004,
            block_len: [3, 10],
            item: 0.002,
        }
    }
}

impl MissingnessSpec {
    pub fn none() -> Self {
        MissingnessSpec {
            daily: Modality::ALL.iter().map(|&m| (m, 0.0)).collect(),
            block_start: 0.0,
            block_len: [1, 1],
            item: 0.0,
        }
    }
}

/// Adds `offset` latent standard deviations, along the positive-affect
/// weight direction, to every day in calendar month `month`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedShift {
    pub month: u32,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_participants: usize,
    /// Participants given enough reports to pass the eligibility filter.
    pub n_eligible: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    pub eligible_report_days: [usize; 2],
    pub ineligible_report_days: [usize; 2],
    pub schema: FeatureSchema,
    pub affect_items: AffectPolarity,
    pub pa: TargetSignal,
    pub na: TargetSignal,
    pub ar_coefficient: f64,
    /// Per-participant latent offsets for every feature and both targets.
    pub participant_offset_sd: f64,
    /// Spread of item ratings around their composite.
    pub item_sd: f64,
    pub moments: AffectMoments,
    pub missingness: MissingnessSpec,
    pub shift: Option<PlantedShift>,
    pub seed: u64,
}

/// Noise level giving a Bayes accuracy of about 0.85 on the default
/// labeling for a unit-norm weight vector.
pub const DEFAULT_NOISE_STD: f64 = 0.76;

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_participants: 20,
            n_eligible: 7,
            days: 366,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            eligible_report_days: [240, 330],
            ineligible_report_days: [40, 190],
            schema: FeatureSchema::default_schema(),
            affect_items: AffectPolarity::default(),
            pa: TargetSignal::from_shares(
                &[
                    ("sleep_deep", 0.25),
                    ("sleep_light", 0.15),
                    ("sleep_rem", 0.10),
                    ("heart_rate_variability", 0.10),
                    ("walk_steps", 0.15),
                    ("distance", 0.15),
                    ("location_change", 0.10),
                ],
                DEFAULT_NOISE_STD,
            ),
            na: TargetSignal::from_shares(
                &[
                    ("minutes_high_activity", -0.30),
                    ("calorie_active", -0.20),
                    ("daily_movement", -0.20),
                    ("stay_active", -0.15),
                    ("runsteps", -0.15),
                ],
                DEFAULT_NOISE_STD,
            ),
            ar_coefficient: 0.3,
            participant_offset_sd: 0.3,
            item_sd: 10.0,
            moments: AffectMoments::default(),
            missingness: MissingnessSpec::default(),
            shift: Some(PlantedShift { month: 3, offset: 1.2 }),
            seed: 20200101,
        }
    }
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::CohortConfig(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl CohortConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: CohortConfig = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CohortConfig(m));
        if self.days < 30 {
            return bad(format!("days must be at least 30, got {}", self.days));
        }
        if self.n_participants == 0 || self.n_eligible > self.n_participants {
            return bad(format!(
                "need 0 < n_eligible ({}) <= n_participants ({})",
                self.n_eligible, self.n_participants
            ));
        }
        for (name, [lo, hi]) in [
            ("eligible_report_days", self.eligible_report_days),
            ("ineligible_report_days", self.ineligible_report_days),
        ] {
            if lo > hi || hi > self.days {
                return bad(format!("{name} [{lo}, {hi}] must be ordered and at most days"));
            }
        }
        for (name, t) in [("pa", &self.pa), ("na", &self.na)] {
            if !(t.noise_std.is_finite() && t.noise_std > 0.0) {
                return bad(format!("{name}.noise_std must be positive"));
            }
            if !(t.weight_norm() > 0.0 && t.weight_norm().is_finite()) {
                return bad(format!("{name}.weights must be finite and not all zero"));
            }
            for id in t.weights.keys() {
                if !self.schema.contains(id) {
                    return bad(format!("{name} weight names unknown feature `{id}`"));
                }
            }
        }
        if self.ar_coefficient.is_nan() || self.ar_coefficient.abs() >= 1.0 {
            return bad("ar_coefficient must lie in (-1, 1)".into());
        }
        if !(self.participant_offset_sd >= 0.0 && self.item_sd >= 0.0) {
            return bad("participant_offset_sd and item_sd must be non-negative".into());
        }
        let m = &self.moments;
        if !(m.pa_sd > 0.0 && m.na_sd > 0.0) {
            return bad("moment standard deviations must be positive".into());
        }
        for (modality, p) in &self.missingness.daily {
            probability(&format!("missingness.daily.{modality}"), *p)?;
        }
        probability("missingness.block_start", self.missingness.block_start)?;
        probability("missingness.item", self.missingness.item)?;
        let [lo, hi] = self.missingness.block_len;
        if lo == 0 || lo > hi {
            return bad("missingness.block_len must be an ordered range of positive lengths".into());
        }
        if let Some(s) = self.shift {
            if !(1..=12).contains(&s.month) || !s.offset.is_finite() {
                return bad("shift.month must be 1..=12 and shift.offset finite".into());
            }
        }
        Ok(())
    }
}

/// Accuracy of the optimal classifier when labels come from a median split
/// (middle `band` removed) of `s + noise`, with `s` the standardized signal
/// and the classifier seeing `s` exactly.
pub fn bayes_accuracy(weight_norm: f64, noise_std: f64, band: f64) -> f64 {
    if noise_std == 0.0 {
        return 1.0;
    }
    let r = noise_std / weight_norm;
    let std = NormalDist::standard();
    let c = std.inverse_cdf(0.5 + band / 2.0) * (1.0 + r * r).sqrt();
    // P(s > 0, y > c), by Simpson's rule over s in [0, 12].
    let f = |s: f64| std.pdf(s) * (1.0 - std.cdf((c - s) / r));
    let (n, hi) = (4000, 12.0);
    let h = hi / n as f64;
    let mut acc = f(0.0) + f(hi);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let joint = acc * h / 3.0;
    2.0 * joint / (1.0 - band)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
enum Profile {
    Normal { mean: f64, sd: f64, floor: f64 },
    LogNormal { median: f64, sigma: f64 },
    Fraction,
}

fn profile(def: &FeatureDef) -> Profile {
    use Profile::*;
    if def.kind == FeatureKind::Boolean {
        return Fraction;
    }
    let normal = |mean, sd| Normal { mean, sd, floor: 0.0 };
    match def.id.as_str() {
        "sleep_awake" => normal(45.0, 15.0),
        "sleep_rem" => normal(95.0, 25.0),
        "sleep_light" => normal(220.0, 45.0),
        "sleep_deep" => normal(80.0, 22.0),
        "sleep_total" => normal(430.0, 60.0),
        "heart_rate" => normal(62.0, 6.0),
        "heart_rate_std" => normal(8.0, 2.0),
        "heart_rate_variability" => normal(55.0, 14.0),
        "heart_rate_variability_std" => normal(18.0, 5.0),
        "avg_met" => normal(1.6, 0.2),
        "calorie_total" => normal(2300.0, 250.0),
        "target_calories" => normal(500.0, 60.0),
        "pressure" => normal(1013.0, 8.0),
        "pressure_min" => normal(1006.0, 8.0),
        "pressure_max" => normal(1020.0, 8.0),
        "walk_steps" => LogNormal { median: 6000.0, sigma: 0.45 },
        "runsteps" => LogNormal { median: 600.0, sigma: 0.9 },
        "remains" => LogNormal { median: 2500.0, sigma: 0.6 },
        "distance" => LogNormal { median: 4500.0, sigma: 0.45 },
        "daily_movement" => LogNormal { median: 7000.0, sigma: 0.4 },
        "calorie_active" => LogNormal { median: 350.0, sigma: 0.4 },
        "minutes_high_activity" => LogNormal { median: 15.0, sigma: 0.8 },
        _ => normal(50.0, 12.0),
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Intraday samples whose duration-weighted mean is the day's value.
fn samples_for(def: &FeatureDef, prof: Profile, u: f64) -> Vec<IntradaySample> {
    let s = |value: f64, duration_min: f64| IntradaySample {
        feature_id: def.id.clone(),
        value,
        duration_min,
    };
    match prof {
        Profile::Fraction => {
            let on = (1440.0 * NormalDist::standard().cdf(u)).round();
            [(1.0, on), (0.0, 1440.0 - on)]
                .into_iter()
                .filter(|&(_, d)| d > 0.0)
                .map(|(v, d)| s(v, d))
                .collect()
        }
        Profile::LogNormal { median, sigma } => vec![s(round3(median * (sigma * u).exp()), 1440.0)],
        Profile::Normal { mean, sd, floor } => {
            let v = round3((mean + sd * u).max(floor));
            if def.id.starts_with("heart_rate") {
                // Two half-day readings straddling the daily value.
                let d = round3(0.05 * v.abs() + 0.5);
                vec![s(v + d, 720.0), s(v - d, 720.0)]
            } else {
                vec![s(v, 1440.0)]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTruth {
    pub weights: BTreeMap<String, f64>,
    pub noise_std: f64,
    pub weight_norm: f64,
    /// Correlation between the noiseless signal and the affect latent.
    pub signal_correlation: f64,
    pub bayes_accuracy: f64,
    pub modality_share: BTreeMap<Modality, f64>,
}

impl SignalTruth {
    fn new(t: &TargetSignal, schema: &FeatureSchema) -> Self {
        let norm = t.weight_norm();
        let mut modality_share = BTreeMap::new();
        for (id, w) in &t.weights {
            let m = schema.get(id).expect("validated").modality;
            *modality_share.entry(m).or_insert(0.0) += w * w / (norm * norm);
        }
        SignalTruth {
            weights: t.weights.clone(),
            noise_std: t.noise_std,
            weight_norm: norm,
            signal_correlation: norm / (norm * norm + t.noise_std * t.noise_std).sqrt(),
            bayes_accuracy: bayes_accuracy(norm, t.noise_std, DEFAULT_MIDDLE_BAND),
            modality_share,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTruth {
    pub participant_id: String,
    pub eligible: bool,
    pub report_days: usize,
    pub complete_reports: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTruth {
    pub month: u32,
    pub offset: f64,
    /// Unit direction in latent feature space.
    pub direction: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedStats {
    pub pa_mean: f64,
    pub pa_sd: f64,
    pub na_mean: f64,
    pub na_sd: f64,
    pub report_days: usize,
    /// Fraction of (participant, modality, day) cells with no samples.
    pub missing_rate: BTreeMap<Modality, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: CohortConfig,
    pub pa: SignalTruth,
    pub na: SignalTruth,
    pub shift: Option<ShiftTruth>,
    pub participants: Vec<ParticipantTruth>,
    pub eligible: Vec<String>,
    pub realized: RealizedStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParticipant {
    pub participant_id: String,
    pub files: Vec<RawSampleFile>,
    pub reports: Vec<AffectReport>,
    pub timeline: ParticipantTimeline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub participants: Vec<SyntheticParticipant>,
    pub ground_truth: GroundTruth,
}

impl SyntheticCohort {
    pub fn timelines(&self) -> Vec<ParticipantTimeline> {
        self.participants.iter().map(|p| p.timeline.clone()).collect()
    }

    /// Writes `<dir>/<participant>/{ring,watch,phone,affect}.csv` plus the
    /// ground truth, schema and item lists.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for p in &self.participants {
            write_participant_dir(dir.join(&p.participant_id), &p.files, &p.reports)?;
        }
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write(GROUND_TRUTH_FILE, serde_json::to_string_pretty(&self.ground_truth)?)?;
        write(SCHEMA_FILE, self.ground_truth.config.schema.to_json())?;
        write(ITEMS_FILE, serde_json::to_string_pretty(&self.ground_truth.config.affect_items)?)?;
        Ok(())
    }
}

/// Latent state of one participant before affect is put on its final scale.
struct Draft {
    participant_id: String,
    eligible: bool,
    /// Row `i + 1` holds day `i`; row 0 is the day before the start.
    z: Vec<Vec<f64>>,
    pa: Vec<f64>,
    na: Vec<f64>,
    report_days: Vec<usize>,
}

fn ar1_series(rng: &mut impl Rng, len: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut x: f64 = rng.sample(StandardNormal);
    for _ in 0..len {
        out.push(x);
        x = phi * x + innov * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

fn draft(cfg: &CohortConfig, index: usize, eligible: bool, seeds: SeedTree, shift_dir: &[f64]) -> Draft {
    let ids: Vec<&str> = cfg.schema.ids().collect();
    let n_f = ids.len();
    let offset = Normal::new(0.0, cfg.participant_offset_sd).expect("validated sd");
    let mut rng = seeds.named("offsets").rng();
    let feature_offsets: Vec<f64> = (0..n_f).map(|_| offset.sample(&mut rng)).collect();
    let (pa_off, na_off) = (offset.sample(&mut rng), offset.sample(&mut rng));

    let mut rng = seeds.named("latent").rng();
    let columns: Vec<Vec<f64>> = (0..n_f).map(|_| ar1_series(&mut rng, cfg.days + 1, cfg.ar_coefficient)).collect();
    let mut z: Vec<Vec<f64>> = (0..=cfg.days).map(|t| columns.iter().map(|c| c[t]).collect()).collect();
    if let Some(shift) = cfg.shift {
        for (t, row) in z.iter_mut().enumerate().skip(1) {
            let day = cfg.start_date + Days::new(t as u64 - 1);
            if day.month() == shift.month {
                for (v, d) in row.iter_mut().zip(shift_dir) {
                    *v += shift.offset * d;
                }
            }
        }
    }

    let weights = |t: &TargetSignal| -> Vec<f64> { ids.iter().map(|id| t.weights.get(*id).copied().unwrap_or(0.0)).collect() };
    let (w_pa, w_na) = (weights(&cfg.pa), weights(&cfg.na));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut rng = seeds.named("affect-noise").rng();
    let mut pa = Vec::with_capacity(cfg.days);
    let mut na = Vec::with_capacity(cfg.days);
    for zt in &z[..cfg.days] {
        let e_pa: f64 = rng.sample(StandardNormal);
        let e_na: f64 = rng.sample(StandardNormal);
        pa.push(dot(&w_pa, zt) + cfg.pa.noise_std * e_pa + pa_off);
        na.push(dot(&w_na, zt) + cfg.na.noise_std * e_na + na_off);
    }

    // Observed feature latents carry the participant offset; affect does not
    // depend on it.
    for row in z.iter_mut() {
        for (v, o) in row.iter_mut().zip(&feature_offsets) {
            *v += o;
        }
    }

    let mut rng = seeds.named("reports").rng();
    let [lo, hi] = if eligible { cfg.eligible_report_days } else { cfg.ineligible_report_days };
    let n_reports = rng.random_range(lo..=hi);
    let mut report_days = sample(&mut rng, cfg.days, n_reports).into_vec();
    report_days.sort_unstable();

    Draft {
        participant_id: format!("p{:02}", index + 1),
        eligible,
        z,
        pa,
        na,
        report_days,
    }
}

fn outage_mask(rng: &mut impl Rng, days: usize, p: f64, spec: &MissingnessSpec) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..days).map(|_| rng.random_bool(p)).collect();
    if spec.block_start > 0.0 {
        let mut d = 0;
        while d < days {
            if rng.random_bool(spec.block_start) {
                let len = rng.random_range(spec.block_len[0]..=spec.block_len[1]);
                mask[d..(d + len).min(days)].fill(true);
                d += len;
            } else {
                d += 1;
            }
        }
    }
    mask
}

/// Ratings averaging exactly to `composite` (before rounding), kept inside
/// the rating range by shrinking the spread where needed.
fn item_ratings(rng: &mut impl Rng, composite: f64, sd: f64, n: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let m = e.iter().sum::<f64>() / n as f64;
    e.iter_mut().for_each(|x| *x -= m);
    let mut scale: f64 = 1.0;
    for x in &e {
        if *x > 0.0 {
            scale = scale.min((100.0 - composite) / x);
        } else if *x < 0.0 {
            scale = scale.min(composite / -x);
        }
    }
    e.iter()
        .map(|x| ((composite + scale * x) * 100.0).round() / 100.0)
        .map(|v| v.clamp(0.0, 100.0))
        .collect()
}

struct Finished {
    participant: SyntheticParticipant,
    truth: ParticipantTruth,
    missing: BTreeMap<Modality, usize>,
    pa: Vec<f64>,
    na: Vec<f64>,
}

fn finish(cfg: &CohortConfig, d: &Draft, scale: &dyn Fn(f64, f64) -> (f64, f64), seeds: SeedTree) -> Result<Finished> {
    let schema = &cfg.schema;
    let profiles: Vec<Profile> = schema.entries().iter().map(profile).collect();

    let mut rng = seeds.named("missing").rng();
    let masks: BTreeMap<Modality, Vec<bool>> = Modality::ALL
        .iter()
        .map(|&m| {
            let p = cfg.missingness.daily.get(&m).copied().unwrap_or(0.0);
            (m, outage_mask(&mut rng, cfg.days, p, &cfg.missingness))
        })
        .collect();

    let mut files: Vec<RawSampleFile> = Modality::ALL
        .iter()
        .filter(|m| !schema.features_for(&[**m]).is_empty())
        .map(|&m| RawSampleFile {
            participant_id: d.participant_id.clone(),
            modality: m,
            rows: Vec::new(),
        })
        .collect();
    for (day, latent) in d.z[1..=cfg.days].iter().enumerate() {
        let date = cfg.start_date + Days::new(day as u64);
        for file in files.iter_mut() {
            if masks[&file.modality][day] {
                continue;
            }
            for (f, def) in schema.entries().iter().enumerate() {
                if def.modality != file.modality {
                    continue;
                }
                for sample in samples_for(def, profiles[f], latent[f]) {
                    file.rows.push(RawRow { date, sample });
                }
            }
        }
    }

    let mut rng = seeds.named("items").rng();
    let mut reports = Vec::new();
    let (mut pa_out, mut na_out) = (Vec::new(), Vec::new());
    let polarity = &cfg.affect_items;
    for &day in &d.report_days {
        let (pa, na) = scale(d.pa[day], d.na[day]);
        let mut ratings = BTreeMap::new();
        for (ids, composite) in [(polarity.positive(), pa), (polarity.negative(), na)] {
            let values = item_ratings(&mut rng, composite, cfg.item_sd, ids.len());
            for (id, v) in ids.iter().zip(values) {
                if !rng.random_bool(cfg.missingness.item) {
                    ratings.insert(id.clone(), v);
                }
            }
        }
        if ratings.is_empty() {
            continue;
        }
        let date = cfg.start_date + Days::new(day as u64);
        let report = AffectReport::new(date, &ratings, polarity)?;
        if let Some(v) = report.pa {
            pa_out.push(v);
        }
        if let Some(v) = report.na {
            na_out.push(v);
        }
        reports.push(report);
    }

    let timeline = build_timeline(&d.participant_id, &files, &reports, schema)?;
    let complete_reports = reports.iter().filter(|r| r.is_complete()).count();
    Ok(Finished {
        truth: ParticipantTruth {
            participant_id: d.participant_id.clone(),
            eligible: d.eligible,
            report_days: reports.len(),
            complete_reports,
        },
        missing: masks
            .iter()
            .filter(|(m, _)| !schema.features_for(&[**m]).is_empty())
            .map(|(m, v)| (*m, v.iter().filter(|x| **x).count()))
            .collect(),
        participant: SyntheticParticipant {
            participant_id: d.participant_id.clone(),
            files,
            reports,
            timeline,
        },
        pa: pa_out,
        na: na_out,
    })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Generates the cohort. Identical configs give identical output; work is
/// spread over participants with per-participant seeds.
pub fn generate(cfg: &CohortConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let root = SeedTree::new(cfg.seed);
    let ids: Vec<&str> = cfg.schema.ids().collect();
    let norm = cfg.pa.weight_norm();
    let shift_dir: Vec<f64> = ids.iter().map(|id| cfg.pa.weights.get(*id).copied().unwrap_or(0.0) / norm).collect();

    let mut order: Vec<usize> = (0..cfg.n_participants).collect();
    order.shuffle(&mut root.named("eligibility").rng());
    let mut eligible = vec![false; cfg.n_participants];
    for &i in &order[..cfg.n_eligible] {
        eligible[i] = true;
    }

    let people = root.named("participant");
    let drafts: Vec<Draft> = (0..cfg.n_participants)
        .into_par_iter()
        .map(|i| draft(cfg, i, eligible[i], people.child(i as u64), &shift_dir))
        .collect();

    // Cohort-wide rescaling over every reported day.
    let gather = |f: fn(&Draft) -> &Vec<f64>| -> Vec<f64> {
        drafts.iter().flat_map(|d| d.report_days.iter().map(move |&t| f(d)[t])).collect()
    };
    let (pa_m, pa_s) = mean_sd(&gather(|d| &d.pa));
    let (na_m, na_s) = mean_sd(&gather(|d| &d.na));
    let m = cfg.moments;
    let scale = move |pa: f64, na: f64| {
        let z = |v: f64, mu: f64, sd: f64| if sd > 0.0 { (v - mu) / sd } else { 0.0 };
        (
            (m.pa_mean + m.pa_sd * z(pa, pa_m, pa_s)).clamp(0.0, 100.0),
            (m.na_mean + m.na_sd * z(na, na_m, na_s)).clamp(0.0, 100.0),
        )
    };

    let finished: Vec<Finished> = drafts
        .par_iter()
        .enumerate()
        .map(|(i, d)| finish(cfg, d, &scale, people.child(i as u64)))
        .collect::<Result<_>>()?;

    let all_pa: Vec<f64> = finished.iter().flat_map(|f| f.pa.iter().copied()).collect();
    let all_na: Vec<f64> = finished.iter().flat_map(|f| f.na.iter().copied()).collect();
    let (pa_mean, pa_sd) = mean_sd(&all_pa);
    let (na_mean, na_sd) = mean_sd(&all_na);
    let mut missing_rate = BTreeMap::new();
    for f in &finished {
        for (m, n) in &f.missing {
            *missing_rate.entry(*m).or_insert(0.0) += *n as f64;
        }
    }
    let cells = (cfg.days * cfg.n_participants) as f64;
    missing_rate.values_mut().for_each(|v| *v /= cells);

    let participants: Vec<ParticipantTruth> = finished.iter().map(|f| f.truth.clone()).collect();
    let ground_truth = GroundTruth {
        seed: cfg.seed,
        config: cfg.clone(),
        pa: SignalTruth::new(&cfg.pa, &cfg.schema),
        na: SignalTruth::new(&cfg.na, &cfg.schema),
        shift: cfg.shift.map(|s| ShiftTruth {
            month: s.month,
            offset: s.offset,
            direction: ids
                .iter()
                .zip(&shift_dir)
                .filter(|(_, d)| **d != 0.0)
                .map(|(id, d)| (id.to_string(), *d))
                .collect(),
        }),
        eligible: participants.iter().filter(|p| p.eligible).map(|p| p.participant_id.clone()).collect(),
        participants,
        realized: RealizedStats {
            pa_mean,
            pa_sd,
            na_mean,
            na_sd,
            report_days: all_pa.len().max(all_na.len()),
            missing_rate,
        },
    };
    Ok(SyntheticCohort {
        participants: finished.into_iter().map(|f| f.participant).collect(),
        ground_truth,
    })
}
