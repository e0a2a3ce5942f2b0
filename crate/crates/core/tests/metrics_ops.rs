use proptest::prelude::*;
use selfdense::metrics::*;

const FIG6: ConfusionMatrix = ConfusionMatrix { tp: 1119, tn: 3728, fp: 20, fn_: 15 };

fn pct(v: f64) -> f64 {
    (v * 10000.0).round() / 100.0
}

#[test]
fn figure6_counts_reproduce_stated_rates() {
    let r = weighted_report(&FIG6, None).unwrap();
    assert_eq!(FIG6.total(), 4882);
    assert!((r.overall_accuracy * 100.0 - 99.28).abs() <= 0.01);
    assert_eq!(pct(r.per_class[1].sensitivity), 98.68);
    assert_eq!(pct(r.per_class[0].sensitivity), 99.47);
    // the stacking row of the results table matches the non-nodule orientation
    assert_eq!(pct(r.per_class[0].precision), 99.60);
    assert_eq!(pct(r.per_class[0].f1), 99.53);
    let hand = (1134.0 * (1119.0 / 1139.0) + 3748.0 * (3728.0 / 3743.0)) / 4882.0;
    assert!((r.weighted.precision - hand).abs() < 1e-15);
    assert!((r.weighted.precision - 0.99284).abs() < 5e-6);
}

#[test]
fn confusion_counts() {
    let truth: Vec<u8> = (0..4882).map(|i| u8::from(i < 1134)).collect();
    let cm = confusion_matrix(&truth, &truth).unwrap();
    assert_eq!(cm, ConfusionMatrix { tp: 1134, tn: 3748, fp: 0, fn_: 0 });
    let mut pred = truth.clone();
    pred[0] = 0;
    assert_eq!(confusion_matrix(&pred, &truth).unwrap().fn_, 1);
    assert_eq!(confusion_matrix(&pred[1..], &truth), Err(MetricsError::Length(4881, 4882)));
    assert_eq!(confusion_matrix(&[2], &[1]), Err(MetricsError::Label(2)));
}

#[test]
fn perfect_single_class_and_empty_matrices() {
    let r = weighted_report(&ConfusionMatrix { tp: 5, tn: 7, fp: 0, fn_: 0 }, Some(0)).unwrap();
    for m in [&r.per_class[0], &r.per_class[1], &r.weighted] {
        assert_eq!(m.values(), [1.0; 5]);
    }
    let single = weighted_report(&ConfusionMatrix { tp: 0, tn: 9, fp: 1, fn_: 0 }, None).unwrap();
    assert!(single.single_class);
    assert!(single.per_class[1].degenerate);
    assert_eq!(single.per_class[1].sensitivity, 0.0);
    assert_eq!(weighted_report(&ConfusionMatrix::default(), None), Err(MetricsError::Empty));
}

#[test]
fn symmetric_matrix_weighted_equals_per_class() {
    let r = weighted_report(&ConfusionMatrix { tp: 40, tn: 40, fp: 10, fn_: 10 }, None).unwrap();
    for (a, b) in r.weighted.values().iter().zip(r.per_class[1].values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn fold_aggregation() {
    let r = weighted_report(&FIG6, Some(0)).unwrap();
    let agg = aggregate_folds(&[r.clone(), r.clone(), r.clone()]).unwrap();
    assert!(agg.iter().all(|e| e.std == 0.0));
    let a = weighted_report(&ConfusionMatrix { tp: 45, tn: 45, fp: 5, fn_: 5 }, Some(0)).unwrap();
    let b = weighted_report(&ConfusionMatrix { tp: 50, tn: 50, fp: 0, fn_: 0 }, Some(1)).unwrap();
    let agg = aggregate_folds(&[a, b]).unwrap();
    assert!((agg[0].mean - 0.95).abs() < 1e-15);
    assert!((agg[0].std - 0.05).abs() < 1e-15);
    let cms = [(10, 20, 3, 4), (12, 18, 1, 2), (9, 25, 0, 6), (14, 14, 5, 1), (11, 21, 2, 2)];
    let reports: Vec<_> = cms
        .iter()
        .enumerate()
        .map(|(i, &(tp, tn, fp, fn_))| weighted_report(&ConfusionMatrix { tp, tn, fp, fn_ }, Some(i)).unwrap())
        .collect();
    let accs: Vec<f64> = cms.iter().map(|&(tp, tn, fp, fn_)| (tp + tn) as f64 / (tp + tn + fp + fn_) as f64).collect();
    let mean = accs.iter().sum::<f64>() / 5.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
    let agg = aggregate_folds(&reports).unwrap();
    assert!((agg[0].mean - mean).abs() < 1e-15 && (agg[0].std - std).abs() < 1e-15);
    assert_eq!(aggregate_folds(&[]), Err(MetricsError::NoReports));
}

#[test]
fn csv_and_text_output() {
    let r = weighted_report(&FIG6, Some(2)).unwrap();
    let csv = reports_to_csv(&[r.clone()]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("metric,class,value,fold"));
    assert_eq!(lines.next(), Some(format!("accuracy,overall,{},2", r.overall_accuracy).as_str()));
    assert_eq!(csv.lines().count(), 1 + 16);
    let text = report_to_text(&r);
    assert!(text.contains("nodule") && text.contains("non-nodule") && text.contains("weighted"));
}

proptest! {
    #[test]
    fn orientation_duality_and_bounds(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let cm = ConfusionMatrix { tp, tn, fp, fn_ };
        prop_assume!(cm.total() > 0);
        let pos = class_metrics(&cm, 1);
        let neg = class_metrics(&cm, 0);
        prop_assert_eq!(pos.sensitivity, neg.specificity);
        prop_assert_eq!(pos.accuracy, neg.accuracy);
        let r = weighted_report(&cm, None).unwrap();
        for m in [&pos, &neg, &r.weighted] {
            prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for (k, w) in r.weighted.values().iter().enumerate() {
            let (a, b) = (pos.values()[k], neg.values()[k]);
            prop_assert!(*w >= a.min(b) - 1e-12 && *w <= a.max(b) + 1e-12);
        }
    }
}
