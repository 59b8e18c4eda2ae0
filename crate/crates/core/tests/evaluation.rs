use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use taskaware::data::{synthesize_tasks, SynthConfig};
use taskaware::encoder::EncoderConfig;
use taskaware::evaluation::{
    accuracy, ci95_t, f1_macro, f1_positive, format_table, parse_records, reports_to_records,
    run_cv, run_traintest, CheckpointPolicy, ExperimentSpec, Metric,
};
use taskaware::models::{ModelConfig, Variant};
use taskaware::seeded_rng;
use taskaware::training::{OptimConfig, SchedulePolicy};

/// Counts for one class by direct enumeration.
fn counts(preds: &[usize], golds: &[usize], class: usize) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for i in 0..preds.len() {
        match (preds[i] == class, golds[i] == class) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

fn brute_f1(preds: &[usize], golds: &[usize], class: usize) -> f64 {
    let (tp, fp, fn_) = counts(preds, golds, class);
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

fn brute_macro(preds: &[usize], golds: &[usize]) -> f64 {
    let k = preds.iter().chain(golds).max().copied().unwrap().max(1) + 1;
    (0..k).map(|c| brute_f1(preds, golds, c)).sum::<f64>() / k as f64
}

#[test]
fn metrics_agree_with_brute_force_counts() {
    let mut rng = seeded_rng(2024);
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let k = rng.gen_range(2..5);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let golds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let hits = preds.iter().zip(&golds).filter(|(p, g)| p == g).count();
        assert!((accuracy(&preds, &golds).unwrap() - hits as f64 / n as f64).abs() <= 1e-12);
        assert!(
            (f1_positive(&preds, &golds, 1).unwrap() - brute_f1(&preds, &golds, 1)).abs() <= 1e-12
        );
        assert!((f1_macro(&preds, &golds).unwrap() - brute_macro(&preds, &golds)).abs() <= 1e-12);
    }
}

#[test]
fn macro_f1_of_constant_prediction_on_balanced_golds() {
    let golds = [0, 1, 0, 1, 1, 0];
    assert_eq!(f1_macro(&[0; 6], &golds).unwrap(), 1.0 / 3.0);
    assert_eq!(f1_positive(&[0; 6], &golds, 1).unwrap(), 0.0);
}

#[test]
fn metric_names_parse() {
    for m in [Metric::Accuracy, Metric::F1Positive, Metric::F1Macro] {
        assert_eq!(Metric::parse(m.name()), Some(m));
    }
    assert_eq!(Metric::parse("auc"), None);
    assert!(accuracy(&[0, 1], &[0]).is_err());
    assert!(accuracy(&[], &[]).is_err());
}

#[test]
fn ci_on_two_point_sample() {
    let (mean, half) = ci95_t(&[0.0, 1.0]).unwrap();
    assert_eq!(mean, 0.5);
    let s = 0.5f64.sqrt();
    assert!((half - 12.706 * s / 2f64.sqrt()).abs() < 1e-3);
    assert_eq!(ci95_t(&[0.4; 5]).unwrap().1, 0.0);
}

#[test]
fn ci_matches_statrs() {
    let mut rng = seeded_rng(77);
    for _ in 0..20 {
        let n = rng.gen_range(2..=31);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .unwrap()
            .inverse_cdf(0.975);
        let expected = t * var.sqrt() / (n as f64).sqrt();
        let (m, h) = ci95_t(&xs).unwrap();
        assert!((m - mean).abs() <= 1e-12);
        assert!((h - expected).abs() <= 1e-9, "n={n}: {h} vs {expected}");
    }
}

#[test]
fn ci_large_samples_stay_close_to_statrs() {
    for n in [32usize, 40, 60, 120, 500] {
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .unwrap()
            .inverse_cdf(0.975);
        let got = taskaware::evaluation::t_quantile_975(n - 1).unwrap();
        assert!((got - t).abs() < 1e-5, "df={}: {got} vs {t}", n - 1);
    }
}

#[test]
fn ci_half_width_shrinks_like_inverse_sqrt_n() {
    let base = [0.2, 0.8];
    let mut prev = f64::INFINITY;
    for reps in [2usize, 8, 32, 128] {
        let xs: Vec<f64> = base.iter().copied().cycle().take(2 * reps).collect();
        let (_, h) = ci95_t(&xs).unwrap();
        assert!(h < prev);
        prev = h;
    }
    let xs: Vec<f64> = base.iter().copied().cycle().take(400).collect();
    let ys: Vec<f64> = base.iter().copied().cycle().take(1600).collect();
    let ratio = ci95_t(&xs).unwrap().1 / ci95_t(&ys).unwrap().1;
    assert!((ratio - 2.0).abs() < 0.01, "{ratio}");
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_permutation_invariant(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40),
        rot in 0usize..40,
    ) {
        let (preds, golds): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let r = rot % pairs.len();
        let mut p2 = preds.clone();
        let mut g2 = golds.clone();
        p2.rotate_left(r);
        g2.rotate_left(r);
        for f in [accuracy, f1_macro] {
            let a = f(&preds, &golds).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - f(&p2, &g2).unwrap()).abs() < 1e-12);
        }
        let pos = f1_positive(&preds, &golds, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&pos));
    }

    #[test]
    fn binary_macro_f1_ignores_label_names(
        pairs in prop::collection::vec((0usize..2, 0usize..2), 1..40),
    ) {
        let (preds, golds): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let flip = |v: &[usize]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
        let a = f1_macro(&preds, &golds).unwrap();
        let b = f1_macro(&flip(&preds), &flip(&golds)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert_eq!(
            f1_positive(&preds, &golds, 1).unwrap(),
            f1_positive(&flip(&preds), &flip(&golds), 0).unwrap()
        );
    }

    #[test]
    fn ci_is_shift_invariant_and_scales(
        xs in prop::collection::vec(0.0f64..1.0, 2..20),
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
    ) {
        let (m, h) = ci95_t(&xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let (ms, hs) = ci95_t(&shifted).unwrap();
        prop_assert!((ms - m - shift).abs() < 1e-9);
        prop_assert!((hs - h).abs() < 1e-9);
        let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
        prop_assert!((ci95_t(&scaled).unwrap().1 - h * scale).abs() < 1e-9);
    }
}

fn spec(
    variant: Variant,
    tasks: Vec<taskaware::data::TaskSpec>,
    seeds: Vec<u64>,
) -> ExperimentSpec {
    ExperimentSpec {
        tasks,
        model: ModelConfig {
            variant,
            encoder: EncoderConfig {
                vocab_size: 0,
                hidden: 4,
                layers: 1,
                heads: 1,
                max_len: 16,
                ffn_mult: 1,
            },
            teb_units: (variant == Variant::MtlTe).then_some(1),
            dropout: 0.0,
        },
        optim: OptimConfig {
            epochs: 2,
            batch_size: 16,
            ..OptimConfig::default()
        },
        schedule: SchedulePolicy::RoundRobin,
        seeds,
        min_count: 1,
        checkpoints: CheckpointPolicy::First,
    }
}

#[test]
fn cv_run_produces_fold_intervals_and_round_trips() {
    let corpus = synthesize_tasks(&SynthConfig::new(60, 0.5, 1)).unwrap();
    let s = spec(Variant::MtlTe, corpus.tasks.to_vec(), vec![3, 4]);
    let result = run_cv(&s, &corpus.samples, 3).unwrap();
    assert_eq!(result.runs.len(), 6);
    assert_eq!(result.report.mode, "cv");
    assert_eq!(
        result
            .runs
            .iter()
            .filter(|r| !r.checkpoints.is_empty())
            .count(),
        1
    );
    for (t, score) in result.report.scores.iter().enumerate() {
        assert_eq!(score.n, 3);
        for f in 0..3 {
            let fold: Vec<f64> = result
                .runs
                .iter()
                .filter(|r| r.fold == Some(f))
                .map(|r| r.scores[t])
                .collect();
            assert!((score.scores[f] - fold.iter().sum::<f64>() / 2.0).abs() < 1e-12);
        }
        let (m, h) = ci95_t(&score.scores).unwrap();
        assert_eq!((score.mean, score.half_width), (m, h));
    }
    let again = run_cv(&s, &corpus.samples, 3).unwrap();
    assert_eq!(again.report, result.report);

    let text = reports_to_records(std::slice::from_ref(&result.report));
    assert_eq!(parse_records(&text).unwrap(), vec![result.report.clone()]);
    let table = format_table(&[result.report]);
    assert!(
        table.contains("MTL-TE") && table.contains("task_a (accuracy)"),
        "{table}"
    );
}

#[test]
fn traintest_needs_two_seeds_and_one_task_for_stl() {
    let corpus = synthesize_tasks(&SynthConfig::new(40, 0.0, 2)).unwrap();
    let one = vec![corpus.samples[0].clone()];
    let s = spec(Variant::Stl, vec![corpus.tasks[0].clone()], vec![1]);
    assert!(run_traintest(&s, &one, &one).is_err());
    let s = spec(Variant::Stl, vec![corpus.tasks[0].clone()], vec![1, 2]);
    let r = run_traintest(&s, &one, &one).unwrap();
    assert_eq!(r.report.mode, "traintest");
    assert_eq!(r.report.scores[0].n, 2);
    let s = spec(Variant::Stl, corpus.tasks.to_vec(), vec![1, 2]);
    assert!(run_traintest(&s, &corpus.samples, &corpus.samples).is_err());
}

#[test]
fn records_name_the_bad_line() {
    let err = parse_records("{\"nope\": 1}\n").unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
    assert_eq!(format_table(&[]), "no records\n");
}
