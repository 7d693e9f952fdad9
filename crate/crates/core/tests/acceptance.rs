//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p affectpipe --test acceptance`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use affectpipe::analysis::{monthly_tvalues, welch_t};
use affectpipe::dataset::{build_dataset, build_paired_datasets, DatasetOptions, ParticipantDataset};
use affectpipe::domain::{
    filter_eligible_participants, AffectPolarity, AffectReport, DailyFeatureVector, DayRecord, FeatureSchema,
    FeatureValue, Modality, ParticipantTimeline,
};
use affectpipe::evaluation::{ablation_run, cross_validate, evaluate_cohort, roc_auc, CvOptions};
use affectpipe::impute::{impute_all, impute_feature};
use affectpipe::labeling::{label_cohort, median_split_labels, Label, LabelOptions, TargetSpec};
use affectpipe::learners::{Mlp, ModelFamily, ModelSpec, ParticipantModel, Standardizer};
use affectpipe::pipeline::{run_pipeline, RunManifest, MANIFEST_FILE};
use affectpipe::rng::SeedTree;
use affectpipe::synth::{generate, CohortConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn day(n: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 3, 1).unwrap() + Days::new(n)
}

fn series(values: &[Option<f64>], affect: &[Option<AffectReport>]) -> ParticipantTimeline {
    let days = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut fv = DailyFeatureVector::empty(day(i as u64), ["x"]);
            if let Some(v) = v {
                fv.values.insert("x".into(), FeatureValue::Measured(*v));
            }
            DayRecord {
                features: fv,
                affect: affect.get(i).cloned().flatten(),
            }
        })
        .collect();
    ParticipantTimeline::new("fixture", days).unwrap()
}

fn imputation_fixtures() -> Outcome {
    let a = impute_feature(&series(&[None, Some(10.0), None, Some(20.0), None], &[]), "x");
    let b = impute_feature(&series(&[Some(10.0), Some(20.0), None, Some(30.0), Some(40.0)], &[]), "x");
    let c = impute_feature(&series(&[Some(8.0), None, None, None, None, None], &[]), "x");
    let got = [a.value(day(2), "x"), b.value(day(2), "x"), c.value(day(2), "x")];
    let want = [FeatureValue::Imputed(15.0), FeatureValue::Imputed(25.0), FeatureValue::Imputed(8.0)];
    let stays_missing = c.value(day(5), "x") == FeatureValue::Missing;

    let polarity = AffectPolarity::default_items();
    let ids: Vec<String> = polarity.item_ids().map(str::to_string).collect();
    let report = |d: u64, drop_one: bool| {
        let ratings: BTreeMap<String, f64> = ids
            .iter()
            .enumerate()
            .filter(|(i, _)| !(drop_one && *i == 3))
            .map(|(i, id)| (id.clone(), (i as f64 * 7.3 + d as f64) % 100.0))
            .collect();
        AffectReport::new(day(d), &ratings, &polarity).unwrap()
    };
    let affect = vec![Some(report(0, false)), None, Some(report(2, true)), None, Some(report(4, false))];
    let schema = FeatureSchema::from_json(r#"{"entries":[{"id":"x","modality":"ring","kind":"continuous","units":"u"}]}"#)
        .map_err(|e| e.to_string())?;
    let tl = series(&[Some(1.0), None, None, Some(4.0), None], &affect);
    let imputed = impute_all(&tl, &schema);
    let bytes = |t: &ParticipantTimeline| -> Vec<String> {
        t.days()
            .iter()
            .map(|d| serde_json::to_string(&d.affect).unwrap())
            .collect()
    };
    let affect_same = bytes(&tl) == bytes(&imputed);
    check(
        got == want && stays_missing && affect_same,
        format!("windows -> {got:?}; empty window stays missing: {stays_missing}; affect byte-identical: {affect_same}"),
    )
}

fn concordance(pairs: &[(f64, Label)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(sp, lp) in pairs {
        if lp != Label::High {
            continue;
        }
        for &(sn, ln) in pairs {
            if ln != Label::Low {
                continue;
            }
            den += 1.0;
            num += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn auc_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut sets = 0;
    for seed in 0..10u64 {
        let mut rng = SeedTree::new(seed).named("auc-oracle").rng();
        while sets < (seed as usize + 1) * 20 {
            let n = rng.random_range(2..=50);
            let coarse = rng.random_bool(0.5);
            let pairs: Vec<(f64, Label)> = (0..n)
                .map(|_| {
                    let s: f64 = rng.random();
                    let s = if coarse { (s * 10.0).round() / 10.0 } else { s };
                    (s, if rng.random_bool(0.5) { Label::High } else { Label::Low })
                })
                .collect();
            if !pairs.iter().any(|p| p.1 == Label::High) || !pairs.iter().any(|p| p.1 == Label::Low) {
                continue;
            }
            let auc = roc_auc(&pairs).map_err(|e| e.to_string())?.auc;
            worst = worst.max((auc - concordance(&pairs)).abs());
            sets += 1;
        }
    }
    check(worst <= 1e-9, format!("{sets} score sets, max |trapezoid - concordance| = {worst:.2e}"))
}

fn label_balance() -> Outcome {
    let mut rng = SeedTree::new(3).named("label-balance").rng();
    let (mut worst_band, mut worst_gap, mut changed) = (0i64, 0i64, 0);
    for _ in 0..500 {
        let values: BTreeMap<NaiveDate, f64> = (0..300)
            .map(|i| (day(i), rng.sample::<f64, _>(StandardNormal) * 15.0 + 50.0))
            .collect();
        let base = median_split_labels(&values, 0.2).map_err(|e| e.to_string())?;
        let excluded = base.middle_band.len() as i64;
        let high = base.entries.values().filter(|l| l.is_high()).count() as i64;
        let low = base.entries.len() as i64 - high;
        worst_band = worst_band.max((excluded - 60).abs());
        worst_gap = worst_gap.max((high - low).abs());
        for f in [|x: f64| x.exp() / 1e20, |x: f64| 3.0 * x + 7.0, |x: f64| x.powi(3) + x] {
            let mapped: BTreeMap<NaiveDate, f64> = values.iter().map(|(d, v)| (*d, f(*v))).collect();
            let out = median_split_labels(&mapped, 0.2).map_err(|e| e.to_string())?;
            if out.entries != base.entries || out.middle_band != base.middle_band {
                changed += 1;
            }
        }
    }
    check(
        worst_band <= 1 && worst_gap <= 1 && changed == 0,
        format!("500 vectors: max |excluded - 60| = {worst_band}, max |High - Low| = {worst_gap}, label changes under monotone maps = {changed}"),
    )
}

/// Eligible participants of a generated cohort: imputed timelines, labels
/// and datasets on all modalities.
struct Prepared {
    cohort_cfg: CohortConfig,
    eligible_in_truth: usize,
    bayes: f64,
    shares: BTreeMap<Modality, f64>,
    timelines: Vec<ParticipantTimeline>,
    labels: Vec<affectpipe::labeling::LabelSet>,
    datasets: Vec<ParticipantDataset>,
}

fn prepare(seed: u64) -> Result<Prepared, String> {
    let cfg = CohortConfig {
        seed,
        ..CohortConfig::default()
    };
    let cohort = generate(&cfg).map_err(|e| e.to_string())?;
    let schema = cfg.schema.clone();
    let imputed: Vec<ParticipantTimeline> = cohort.timelines().iter().map(|t| impute_all(t, &schema)).collect();
    let timelines = filter_eligible_participants(&imputed, 200);
    let labels = label_cohort(&timelines, &TargetSpec::Pa, &LabelOptions::default()).map_err(|e| e.to_string())?;
    let opts = DatasetOptions::default();
    let datasets = timelines
        .iter()
        .zip(&labels)
        .map(|(t, l)| build_dataset(t, l, &schema, &opts))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(Prepared {
        eligible_in_truth: cohort.ground_truth.eligible.len(),
        bayes: cohort.ground_truth.pa.bayes_accuracy,
        shares: cohort.ground_truth.pa.modality_share.clone(),
        cohort_cfg: cfg,
        timelines,
        labels,
        datasets,
    })
}

fn permutation_null() -> Outcome {
    let p = prepare(CohortConfig::default().seed)?;
    let pooled_rows: Vec<Vec<f64>> = p.datasets.iter().flat_map(|d| d.rows.iter().cloned()).take(500).collect();
    let pooled_labels: Vec<Label> = p.datasets.iter().flat_map(|d| d.labels.iter().copied()).take(500).collect();
    if pooled_rows.len() < 500 {
        return Err(format!("only {} synthetic rows", pooled_rows.len()));
    }
    let mut lo: f64 = 1.0;
    let mut hi: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        let mut labels = pooled_labels.clone();
        labels.shuffle(&mut SeedTree::new(seed).named("permute").rng());
        let ds = ParticipantDataset {
            participant_id: format!("shuffled-{seed}"),
            feature_ids: p.datasets[0].feature_ids.clone(),
            dates: (0..500).map(day).collect(),
            rows: pooled_rows.clone(),
            labels,
        };
        for family in [ModelFamily::Rf, ModelFamily::Knn, ModelFamily::Mlp, ModelFamily::Svm] {
            let r = cross_validate(&ds, &ModelSpec::family_default(family, seed), CvOptions::default())
                .map_err(|e| e.to_string())?;
            for v in [r.mean_accuracy, r.roc.auc] {
                lo = lo.min(v);
                hi = hi.max(v);
                if !(0.40..=0.60).contains(&v) {
                    failures.push(format!("{family} seed {seed}: {v:.3}"));
                }
            }
        }
    }
    check(
        failures.is_empty(),
        format!("40 runs, accuracy and AUC range [{lo:.3}, {hi:.3}]{}", if failures.is_empty() { String::new() } else { format!("; out of range: {}", failures.join(", ")) }),
    )
}

fn planted_signal(p: &Prepared) -> Outcome {
    let r = evaluate_cohort(
        &p.datasets,
        &TargetSpec::Pa,
        &Modality::ALL,
        &ModelSpec::family_default(ModelFamily::Rf, p.cohort_cfg.seed),
        CvOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let min_days = p.timelines.iter().map(affectpipe::domain::valid_affect_day_count).min().unwrap_or(0);
    let margin = r.macro_accuracy - r.macro_baseline_accuracy;
    check(
        p.timelines.len() == 7
            && p.eligible_in_truth == 7
            && min_days > 200
            && (p.bayes - 0.85).abs() < 0.01
            && r.macro_accuracy >= 0.70
            && margin >= 0.10,
        format!(
            "{} eligible (min {} report days), Bayes {:.3}; RF macro accuracy {:.3}, baseline {:.3}, margin {:.3}",
            p.timelines.len(),
            min_days,
            p.bayes,
            r.macro_accuracy,
            r.macro_baseline_accuracy,
            margin
        ),
    )
}

fn modality_ablation(p: &Prepared) -> Outcome {
    let schema = p.cohort_cfg.schema.clone();
    let subsets = vec![
        vec![Modality::Ring],
        vec![Modality::Watch],
        vec![Modality::Phone],
        Modality::ALL.to_vec(),
    ];
    let mut by_subset: Vec<Vec<ParticipantDataset>> = vec![Vec::new(); subsets.len()];
    for (t, l) in p.timelines.iter().zip(&p.labels) {
        let paired =
            build_paired_datasets(t, l, &schema, &subsets, &DatasetOptions::default()).map_err(|e| e.to_string())?;
        for (slot, ds) in by_subset.iter_mut().zip(paired) {
            slot.push(ds);
        }
    }
    let spec = ModelSpec::family_default(ModelFamily::Rf, p.cohort_cfg.seed);
    let report =
        ablation_run(&by_subset, &subsets, &TargetSpec::Pa, &spec, CvOptions::default()).map_err(|e| e.to_string())?;
    let acc: Vec<f64> = report.subsets.iter().map(|r| r.macro_accuracy).collect();
    let all = acc[3];
    let ok = report.paired && acc[..3].iter().all(|&a| all >= a - 0.01) && all - acc[2] >= 0.05;
    let share = |m| p.shares.get(&m).copied().unwrap_or(0.0);
    check(
        ok,
        format!(
            "signal shares ring {:.2} / watch {:.2} / phone {:.2}; accuracy ring {:.3}, watch {:.3}, phone {:.3}, all {:.3}; paired folds {}",
            share(Modality::Ring),
            share(Modality::Watch),
            share(Modality::Phone),
            acc[0],
            acc[1],
            acc[2],
            all,
            report.paired
        ),
    )
}

fn welch_and_month_shift() -> Outcome {
    let w = welch_t(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    let fixture_ok = (w.t.abs() - 3.674).abs() < 1e-3;
    let mut hits = 0;
    let mut peaks = Vec::new();
    for seed in 1..=10u64 {
        let p = prepare(seed)?;
        let spec = ModelSpec::family_default(ModelFamily::Rf, seed);
        let lag = DatasetOptions::default().lag;
        let models: Vec<ParticipantModel> = p
            .datasets
            .iter()
            .map(|ds| ParticipantModel::train(ds, &TargetSpec::Pa, &Modality::ALL, lag, &spec))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let pairs: Vec<_> = models.iter().zip(&p.timelines).collect();
        let report = monthly_tvalues(&pairs, None).map_err(|e| e.to_string())?;
        let peak = report.pooled_peak().map(|m| m.month.clone()).unwrap_or_default();
        if peak.ends_with("-03") {
            hits += 1;
        }
        peaks.push(peak);
    }
    check(
        fixture_ok && hits >= 9,
        format!("|t| = {:.4} for the fixture; month-3 peak in {hits}/10 seeds ({})", w.t.abs(), peaks.join(" ")),
    )
}

fn standardizer_contract() -> Outcome {
    let mut rng = SeedTree::new(8).rng();
    let train: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            vec![
                rng.random::<f64>() * 100.0,
                i as f64 * 0.5 - 3.0,
                rng.sample::<f64, _>(StandardNormal) * 1e-3 + 7.0,
            ]
        })
        .collect();
    let s = Standardizer::fit(&train).map_err(|e| e.to_string())?;
    let z = s.transform(&train).map_err(|e| e.to_string())?;
    let n = z.len() as f64;
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    for j in 0..3 {
        let mean = z.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((sd - 1.0).abs());
    }
    // Test rows far from the training distribution: standardized with train
    // statistics they must not come out centred.
    let test: Vec<Vec<f64>> = (0..5).map(|i| vec![500.0 + i as f64, 100.0, 9.0]).collect();
    let zt = s.transform(&test).map_err(|e| e.to_string())?;
    let col0_mean = train.iter().map(|r| r[0]).sum::<f64>() / n;
    let col0_sd = (train.iter().map(|r| (r[0] - col0_mean).powi(2)).sum::<f64>() / n).sqrt();
    let uses_train = zt.iter().zip(&test).all(|(z, x)| (z[0] - (x[0] - col0_mean) / col0_sd).abs() < 1e-9);
    let own = Standardizer::fit(&test).map_err(|e| e.to_string())?.transform(&test).map_err(|e| e.to_string())?;
    let asymmetric = zt[0][0] > 5.0 && own[0][0] < 0.0;
    check(
        worst_mean < 1e-9 && worst_std < 1e-9 && uses_train && asymmetric,
        format!("max |mean| {worst_mean:.1e}, max |std - 1| {worst_std:.1e}; test rows use train statistics: {uses_train}; differs from refitting on test: {asymmetric}"),
    )
}

fn mlp_gradient() -> Outcome {
    let mut rng = SeedTree::new(11).rng();
    let m = Mlp::init(5, 3, &mut rng);
    let mut worst: f64 = 0.0;
    for trial in 0..4 {
        let x: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y = (trial % 2) as f64;
        let mut analytic = vec![0.0; m.n_params()];
        m.accumulate_gradient(&x, y, &mut analytic);
        let base = m.params();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            let mut plus = m.clone();
            plus.set_params(&p);
            p[i] = base[i] - h;
            let mut minus = m.clone();
            minus.set_params(&p);
            let numeric = (plus.loss(&x, y) - minus.loss(&x, y)) / (2.0 * h);
            let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    check(
        worst < 1e-5,
        format!("{} parameters, 4 samples, max relative error {worst:.2e}", m.n_params()),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut digests = Vec::new();
    for name in ["first", "second"] {
        let cfg = dir.path().join(format!("{name}.json"));
        std::fs::write(&cfg, format!(r#"{{"output_dir": "{name}"}}"#)).map_err(|e| e.to_string())?;
        let summary = run_pipeline(&cfg, None).map_err(|e| e.to_string())?;
        let m = RunManifest::load(summary.output_dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
        digests.push(m.outputs);
    }
    let same = digests[0] == digests[1];
    check(
        same && !digests[0].is_empty(),
        format!("{} output files, digests identical: {same}", digests[0].len()),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome, budget: Duration| {
        let t0 = Instant::now();
        let outcome = f();
        let took = t0.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) => (took <= budget, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{:.2}s, budget {}s]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
        took
    };

    let s = Duration::from_secs;
    report(1, "imputation fixtures", &mut imputation_fixtures, s(1));
    report(2, "AUC equals pairwise concordance", &mut auc_oracle, s(5));
    report(3, "label balance", &mut label_balance, s(10));
    report(4, "permutation null", &mut permutation_null, s(120));
    let mut prepared = None;
    let budget5 = s(180);
    report(
        5,
        "planted signal recovery",
        &mut || {
            let p = prepare(CohortConfig::default().seed)?;
            let r = planted_signal(&p);
            prepared = Some(p);
            r
        },
        budget5,
    );
    report(
        6,
        "modality ablation ordering",
        &mut || match &prepared {
            Some(p) => modality_ablation(p),
            None => Err("cohort unavailable".into()),
        },
        s(300),
    );
    report(7, "Welch t and month-3 shift", &mut welch_and_month_shift, s(120));
    report(8, "standardizer contract", &mut standardizer_contract, s(1));
    report(9, "MLP gradient check", &mut mlp_gradient, s(5));
    report(10, "run determinism", &mut determinism, budget5 * 2);

    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
