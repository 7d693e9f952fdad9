//! K-fold cross-validation, ROC/AUC and modality ablation.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ParticipantDataset;
use crate::domain::Modality;
use crate::error::{Error, Result};
use crate::labeling::{Label, TargetSpec};
use crate::learners::{ModelFamily, ModelParams, ModelSpec, TrainedModel};
use crate::rng::SeedTree;

pub const DEFAULT_FOLDS: usize = 5;

/// Figures published for the original (private) cohort. They are reported
/// next to our numbers and never used as pass/fail thresholds.
pub mod reference {
    pub const MOOD_ACCURACY: f64 = 0.81;
    pub const MOOD_AUC: f64 = 0.82;
    /// Best gain of the all-modality model over a single-modality model.
    pub const MULTIMODAL_GAIN: f64 = 0.218;
    /// Gains over the earlier mood and stress baselines.
    pub const MOOD_GAIN: f64 = 0.16;
    pub const STRESS_GAIN: f64 = 0.04;
    pub const BEST_RELATIVE_GAIN: f64 = 0.23;
    pub const AUC_GAIN: f64 = 0.081;
}

/// A value set against a reference, under both improvement conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub ours: f64,
    pub reference: f64,
    /// `ours - reference`.
    pub absolute_delta: f64,
    /// `(ours - reference) / reference`.
    pub relative_delta: Option<f64>,
}

impl Comparison {
    pub fn new(ours: f64, reference: f64) -> Self {
        Comparison {
            ours,
            reference,
            absolute_delta: ours - reference,
            relative_delta: (reference != 0.0).then(|| (ours - reference) / reference),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    #[serde(default)]
    pub stratified: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: DEFAULT_FOLDS,
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or above this value are called `High`; `inf` for the origin.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC over every distinct score, from (0,0) to (1,1), with the trapezoidal
/// area. Equal scores form a single step.
pub fn roc_auc(scores: &[(f64, Label)]) -> Result<Roc> {
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let pos = scores.iter().filter(|(_, l)| l.is_high()).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1.is_high() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("origin pushed");
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(Roc { points, auc })
}

/// Fold index of each row. Unstratified shuffles all rows and deals them
/// round-robin; stratified deals each class in turn so fold class ratios
/// stay close to the overall ratio.
pub fn fold_assignment(labels: &[Label], k: usize, stratified: bool, seed: SeedTree) -> Vec<usize> {
    let mut rng = seed.rng();
    let mut assignment = vec![0; labels.len()];
    if stratified {
        let mut next = 0;
        for class in [Label::High, Label::Low] {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            for i in idx {
                assignment[i] = next % k;
                next += 1;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % k;
        }
    }
    assignment
}

/// Hex SHA-256 of a fold assignment; equal hashes mean equal partitions.
pub fn fold_hash(assignment: &[usize]) -> String {
    let mut h = Sha256::new();
    for a in assignment {
        h.update((*a as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn every_training_split_has_both(labels: &[Label], assignment: &[usize], k: usize) -> bool {
    (0..k).all(|f| {
        let mut seen = [false; 2];
        for (l, &a) in labels.iter().zip(assignment) {
            if a != f {
                seen[l.is_high() as usize] = true;
            }
        }
        seen[0] && seen[1]
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_high: usize,
    pub false_high: usize,
    pub true_low: usize,
    pub false_low: usize,
}

impl Confusion {
    fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::High, Label::High) => self.true_high += 1,
            (Label::Low, Label::High) => self.false_high += 1,
            (Label::Low, Label::Low) => self.true_low += 1,
            (Label::High, Label::Low) => self.false_low += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub participant_id: String,
    pub target: Option<TargetSpec>,
    pub modalities: Vec<Modality>,
    pub family: ModelFamily,
    pub seed: u64,
    pub folds: usize,
    pub stratified: bool,
    pub n_rows: usize,
    pub fold_hash: String,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Majority-class predictor trained on the same training splits.
    pub baseline_accuracy: f64,
    pub roc: Roc,
    pub confusion: Confusion,
}

struct FoldOutcome {
    accuracy: f64,
    baseline_accuracy: f64,
    scores: Vec<(usize, f64)>,
}

fn run_fold(
    ds: &ParticipantDataset,
    assignment: &[usize],
    fold: usize,
    spec: &ModelSpec,
) -> Result<FoldOutcome> {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| assignment[i] == fold);
    let tr = ds.select(&train);
    let model = TrainedModel::train(spec, &tr.rows, &tr.labels)?;
    let baseline = TrainedModel::train(&ModelSpec::new(ModelParams::Baseline, 0), &tr.rows, &tr.labels)?;
    let mut correct = 0;
    let mut base_correct = 0;
    let mut scores = Vec::with_capacity(test.len());
    for &i in &test {
        let p = model.predict_proba(&ds.rows[i])?;
        correct += (Label::from_proba(p) == ds.labels[i]) as usize;
        base_correct += (baseline.predict(&ds.rows[i])? == ds.labels[i]) as usize;
        scores.push((i, p));
    }
    Ok(FoldOutcome {
        accuracy: correct as f64 / test.len() as f64,
        baseline_accuracy: base_correct as f64 / test.len() as f64,
        scores,
    })
}

/// K-fold CV of one participant's dataset. Folds are drawn from `spec.seed`
/// so every model family and modality subset on the same rows sees the same
/// partition.
pub fn cross_validate(ds: &ParticipantDataset, spec: &ModelSpec, cv: CvOptions) -> Result<EvaluationReport> {
    spec.validate()?;
    let k = cv.folds;
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if ds.len() < k {
        return Err(Error::InsufficientLabels(format!(
            "participant `{}`: {} rows for {k} folds",
            ds.participant_id,
            ds.len()
        )));
    }
    if ds.count(Label::High) == 0 || ds.count(Label::Low) == 0 {
        return Err(Error::SingleClass);
    }
    let seeds = SeedTree::new(spec.seed);
    let fold_seeds = seeds.named("folds");
    let mut assignment = fold_assignment(&ds.labels, k, cv.stratified, fold_seeds.child(0));
    if !every_training_split_has_both(&ds.labels, &assignment, k) {
        assignment = fold_assignment(&ds.labels, k, cv.stratified, fold_seeds.child(1));
        if !every_training_split_has_both(&ds.labels, &assignment, k) {
            return Err(Error::SingleClass);
        }
    }

    let model_seeds = seeds.named("model");
    let outcomes: Vec<FoldOutcome> = (0..k)
        .into_par_iter()
        .map(|f| run_fold(ds, &assignment, f, &spec.with_seed(model_seeds.child(f as u64).seed())))
        .collect::<Result<_>>()?;

    let mut pooled = vec![0.0; ds.len()];
    for o in &outcomes {
        for &(i, p) in &o.scores {
            pooled[i] = p;
        }
    }
    let mut confusion = Confusion::default();
    for (p, l) in pooled.iter().zip(&ds.labels) {
        confusion.add(*l, Label::from_proba(*p));
    }
    let pairs: Vec<(f64, Label)> = pooled.into_iter().zip(ds.labels.iter().copied()).collect();
    let fold_accuracies: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
    Ok(EvaluationReport {
        participant_id: ds.participant_id.clone(),
        target: None,
        modalities: Vec::new(),
        family: spec.family(),
        seed: spec.seed,
        folds: k,
        stratified: cv.stratified,
        n_rows: ds.len(),
        fold_hash: fold_hash(&assignment),
        mean_accuracy: mean(&fold_accuracies),
        fold_accuracies,
        baseline_accuracy: mean(&outcomes.iter().map(|o| o.baseline_accuracy).collect::<Vec<_>>()),
        roc: roc_auc(&pairs)?,
        confusion,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedParticipant {
    pub participant_id: String,
    pub reason: String,
}

/// Per-participant models, macro-averaged across participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub target: TargetSpec,
    pub modalities: Vec<Modality>,
    pub family: ModelFamily,
    pub seed: u64,
    pub folds: usize,
    pub macro_accuracy: f64,
    pub macro_auc: f64,
    pub macro_baseline_accuracy: f64,
    pub accuracy_vs_reference: Comparison,
    pub auc_vs_reference: Comparison,
    pub participants: Vec<EvaluationReport>,
    pub skipped: Vec<SkippedParticipant>,
}

pub fn evaluate_cohort(
    datasets: &[ParticipantDataset],
    target: &TargetSpec,
    modalities: &[Modality],
    spec: &ModelSpec,
    cv: CvOptions,
) -> Result<CohortReport> {
    let results: Vec<Result<EvaluationReport>> = datasets
        .par_iter()
        .map(|ds| {
            cross_validate(ds, spec, cv).map(|mut r| {
                r.target = Some(target.clone());
                r.modalities = modalities.to_vec();
                r
            })
        })
        .collect();
    let mut participants = Vec::new();
    let mut skipped = Vec::new();
    for (ds, r) in datasets.iter().zip(results) {
        match r {
            Ok(r) => participants.push(r),
            Err(e @ (Error::SingleClass | Error::InsufficientLabels(_))) => skipped.push(SkippedParticipant {
                participant_id: ds.participant_id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if participants.is_empty() {
        return Err(Error::InsufficientLabels("no participant could be evaluated".into()));
    }
    let macro_of = |f: &dyn Fn(&EvaluationReport) -> f64| mean(&participants.iter().map(f).collect::<Vec<_>>());
    let macro_accuracy = macro_of(&|r| r.mean_accuracy);
    let macro_auc = macro_of(&|r| r.roc.auc);
    Ok(CohortReport {
        target: target.clone(),
        modalities: modalities.to_vec(),
        family: spec.family(),
        seed: spec.seed,
        folds: cv.folds,
        macro_accuracy,
        macro_auc,
        macro_baseline_accuracy: macro_of(&|r| r.baseline_accuracy),
        accuracy_vs_reference: Comparison::new(macro_accuracy, reference::MOOD_ACCURACY),
        auc_vs_reference: Comparison::new(macro_auc, reference::MOOD_AUC),
        participants,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub subsets: Vec<CohortReport>,
    /// Every participant was partitioned identically under every subset.
    pub paired: bool,
    /// Union-of-all-subsets model against the best single-subset model.
    pub union_vs_best_other: Option<Comparison>,
    pub multimodal_gain_reference: f64,
}

/// One cohort evaluation per modality subset. `datasets[s]` holds the
/// participants' rows for `subsets[s]`; rows must be shared across subsets
/// (see `build_paired_datasets`).
pub fn ablation_run(
    datasets: &[Vec<ParticipantDataset>],
    subsets: &[Vec<Modality>],
    target: &TargetSpec,
    spec: &ModelSpec,
    cv: CvOptions,
) -> Result<AblationReport> {
    if subsets.is_empty() || subsets.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("ablation needs nonempty modality subsets".into()));
    }
    if datasets.len() != subsets.len() {
        return Err(Error::InvalidInput(format!(
            "{} dataset groups for {} subsets",
            datasets.len(),
            subsets.len()
        )));
    }
    let reports: Vec<CohortReport> = datasets
        .iter()
        .zip(subsets)
        .map(|(ds, mods)| evaluate_cohort(ds, target, mods, spec, cv))
        .collect::<Result<_>>()?;

    let hashes = |r: &CohortReport| -> Vec<(String, String)> {
        r.participants
            .iter()
            .map(|p| (p.participant_id.clone(), p.fold_hash.clone()))
            .collect()
    };
    let paired = reports.windows(2).all(|w| hashes(&w[0]) == hashes(&w[1]));

    let widest = reports.iter().enumerate().max_by_key(|(_, r)| r.modalities.len()).map(|(i, _)| i);
    let union_vs_best_other = widest.and_then(|w| {
        let best_other = reports
            .iter()
            .enumerate()
            .filter(|&(i, r)| i != w && r.modalities.len() < reports[w].modalities.len())
            .map(|(_, r)| r.macro_accuracy)
            .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.max(a))))?;
        Some(Comparison::new(reports[w].macro_accuracy, best_other))
    });
    Ok(AblationReport {
        subsets: reports,
        paired,
        union_vs_best_other,
        multimodal_gain_reference: reference::MULTIMODAL_GAIN,
    })
}

pub fn modality_label(mods: &[Modality]) -> String {
    if mods.len() == Modality::ALL.len() {
        return "all".into();
    }
    mods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+")
}

/// `fpr,tpr,threshold` rows.
pub fn write_roc_csv(roc: &Roc, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in &roc.points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<roc csv>", e))?;
    Ok(())
}

/// `family,participant_id,fpr,tpr,threshold` rows for every participant of
/// every report.
pub fn write_roc_table<'a>(reports: impl IntoIterator<Item = &'a CohortReport>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "participant_id", "fpr", "tpr", "threshold"])?;
    for r in reports {
        for p in &r.participants {
            for pt in &p.roc.points {
                w.write_record([
                    r.family.to_string(),
                    p.participant_id.clone(),
                    pt.fpr.to_string(),
                    pt.tpr.to_string(),
                    pt.threshold.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<roc csv>", e))?;
    Ok(())
}

/// One row per (participant, family, modality subset), plus a `macro` row
/// per cohort report.
pub fn write_accuracy_csv<'a>(reports: impl IntoIterator<Item = &'a CohortReport>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["participant_id", "family", "modalities", "accuracy", "auc", "baseline_accuracy"])?;
    for r in reports {
        let mods = modality_label(&r.modalities);
        for p in &r.participants {
            w.write_record([
                p.participant_id.clone(),
                r.family.to_string(),
                mods.clone(),
                p.mean_accuracy.to_string(),
                p.roc.auc.to_string(),
                p.baseline_accuracy.to_string(),
            ])?;
        }
        w.write_record([
            "macro".to_string(),
            r.family.to_string(),
            mods,
            r.macro_accuracy.to_string(),
            r.macro_auc.to_string(),
            r.macro_baseline_accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<accuracy csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::KnnParams;
    use chrono::NaiveDate;

    fn concordance(scores: &[(f64, Label)]) -> f64 {
        let pos: Vec<f64> = scores.iter().filter(|s| s.1.is_high()).map(|s| s.0).collect();
        let neg: Vec<f64> = scores.iter().filter(|s| !s.1.is_high()).map(|s| s.0).collect();
        let mut c = 0.0;
        for p in &pos {
            for n in &neg {
                c += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        c / (pos.len() * neg.len()) as f64
    }

    fn dataset(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> ParticipantDataset {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        ParticipantDataset {
            participant_id: "p".into(),
            feature_ids: (0..rows[0].len()).map(|i| format!("f{i}")).collect(),
            dates: (0..rows.len()).map(|i| start + chrono::Days::new(i as u64)).collect(),
            rows,
            labels,
        }
    }

    #[test]
    fn auc_fixture() {
        use Label::*;
        let s = [(0.9, High), (0.8, High), (0.1, Low), (0.85, Low)];
        let roc = roc_auc(&s).unwrap();
        assert!((roc.auc - 0.75).abs() < 1e-12);
        assert_eq!(concordance(&s), 0.75);
        let first = roc.points[0];
        let last = *roc.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn auc_edge_cases() {
        use Label::*;
        assert_eq!(roc_auc(&[(0.9, High), (0.2, Low)]).unwrap().auc, 1.0);
        let tied = roc_auc(&[(0.5, High), (0.5, Low), (0.5, High)]).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(tied.points.len(), 2);
        assert!(matches!(roc_auc(&[(0.5, High)]), Err(Error::SingleClass)));
    }

    #[test]
    fn folds_partition_rows() {
        let labels: Vec<Label> = (0..23).map(|i| if i % 3 == 0 { Label::High } else { Label::Low }).collect();
        for stratified in [false, true] {
            let a = fold_assignment(&labels, 5, stratified, SeedTree::new(1));
            let mut sizes = [0; 5];
            for f in &a {
                sizes[*f] += 1;
            }
            assert!(sizes.iter().all(|&s| s == 4 || s == 5), "{sizes:?}");
            assert_eq!(sizes.iter().sum::<usize>(), 23);
            assert_eq!(a, fold_assignment(&labels, 5, stratified, SeedTree::new(1)));
        }
    }

    #[test]
    fn leave_one_out_knn() {
        // Leave-one-out with k=1, neighbour in parentheses:
        // 0 -> 1 (Low) ok; 1 -> 1.9 (High) wrong; 1.9 -> 1 (Low) wrong;
        // 3 -> 4 (High) ok; 4 -> 3 (High) ok. Accuracy 3/5.
        let xs = [0.0, 1.0, 1.9, 3.0, 4.0];
        let labels = vec![Label::Low, Label::Low, Label::High, Label::High, Label::High];
        let ds = dataset(xs.iter().map(|&x| vec![x]).collect(), labels);
        let spec = ModelSpec::new(ModelParams::Knn(KnnParams { k: 1 }), 3);
        let r = cross_validate(&ds, &spec, CvOptions { folds: 5, stratified: false }).unwrap();
        assert!((r.mean_accuracy - 0.6).abs() < 1e-12);
        assert_eq!(r.fold_accuracies.len(), 5);
    }

    #[test]
    fn separable_rf_is_perfect() {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![if i < 30 { i as f64 } else { 100.0 + i as f64 }, ((i * 7) % 5) as f64])
            .collect();
        let labels = rows.iter().map(|r| if r[0] >= 100.0 { Label::High } else { Label::Low }).collect();
        let ds = dataset(rows, labels);
        let r = cross_validate(&ds, &ModelSpec::family_default(ModelFamily::Rf, 1), CvOptions::default()).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.roc.auc, 1.0);
    }

    #[test]
    fn baseline_family_matches_baseline_column() {
        let rows: Vec<Vec<f64>> = (0..37).map(|i| vec![i as f64]).collect();
        let labels = (0..37).map(|i| if i % 3 == 0 { Label::High } else { Label::Low }).collect();
        let ds = dataset(rows, labels);
        let r = cross_validate(&ds, &ModelSpec::new(ModelParams::Baseline, 8), CvOptions::default()).unwrap();
        assert!((r.mean_accuracy - r.baseline_accuracy).abs() < 1e-12);
    }

    #[test]
    fn comparison_conventions() {
        let c = Comparison::new(0.9, 0.75);
        assert!((c.absolute_delta - 0.15).abs() < 1e-12);
        assert!((c.relative_delta.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn roc_csv_has_header_and_points() {
        let roc = roc_auc(&[(0.9, Label::High), (0.1, Label::Low)]).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&roc, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("fpr,tpr,threshold"));
        assert_eq!(text.lines().count(), 1 + roc.points.len());
    }
}
