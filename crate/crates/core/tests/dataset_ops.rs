mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::Rng;
use selfdense::dataset::{
    batch_iter, stratified_kfold, stratified_kfold_indices, synth_background, synth_generate, synth_write, load_manifest,
    BlobParams, DatasetManifest, FoldPlan, Record, SplitRatios,
};

fn check_partition(labels: &[u32], k: usize, seed: u64) {
    let folds = stratified_kfold_indices(labels, k, SplitRatios::default(), seed).unwrap();
    let n = labels.len();
    let mut test_union = vec![0usize; n];
    let classes: HashSet<u32> = labels.iter().copied().collect();
    for f in &folds {
        let (tr, va, te): (HashSet<_>, HashSet<_>, HashSet<_>) =
            (f.train.iter().collect(), f.val.iter().collect(), f.test.iter().collect());
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(tr.len() + va.len() + te.len(), n, "every sample used once per fold");
        for &i in &f.test {
            test_union[i] += 1;
        }
        for &c in &classes {
            let total = labels.iter().filter(|&&l| l == c).count() as f64;
            let in_test = f.test.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!((in_test - total / k as f64).abs() < 1.0, "class {c} test share off by ≥ 1");
        }
    }
    assert!(test_union.iter().all(|&c| c == 1), "test sets partition the data");
}

#[test]
fn thousand_random_manifests_partition() {
    let mut r = common::rng(81);
    for _ in 0..1000 {
        let classes = r.gen_range(1..=5u32);
        let n = 10f64.powf(r.gen_range(1.0..=4.0)).round() as usize;
        let mut labels: Vec<u32> = (0..n).map(|_| r.gen_range(0..classes)).collect();
        // guarantee every class can fill 5 shards
        for c in 0..classes {
            for j in 0..5 {
                labels[(c as usize * 5 + j) % n] = c;
            }
        }
        if (0..classes).any(|c| labels.iter().filter(|&&l| l == c).count() < 5) {
            continue;
        }
        check_partition(&labels, 5, r.gen());
    }
}

#[test]
fn node21_sized_counts() {
    let mut labels = vec![1u32; 1134];
    labels.extend(vec![0u32; 3748]);
    let folds = stratified_kfold_indices(&labels, 5, SplitRatios::default(), 2024).unwrap();
    for f in &folds {
        let count = |set: &[usize], c: u32| set.iter().filter(|&&i| labels[i] == c).count() as i64;
        for (c, want) in [(1u32, [795i64, 113, 227]), (0, [2625, 375, 750])] {
            let got = [count(&f.train, c), count(&f.val, c), count(&f.test, c)];
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 2, "class {c}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn manifest_plan_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_generate(20, 32, &BlobParams::default(), 9).unwrap();
    let written = synth_write(dir.path(), &samples, Some("seed=9")).unwrap();
    let loaded = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(loaded, written);
    assert_eq!(loaded.class_counts(), [10, 10]);
    let plan = stratified_kfold(&loaded, 5, SplitRatios::default(), 9).unwrap();
    assert_eq!(FoldPlan::from_text(&plan.to_text(&[])).unwrap(), plan);
}

#[test]
fn node21_manifest_counts() {
    let records: Vec<Record> = (0..4882)
        .map(|i| Record { id: format!("n{i}"), path: format!("{i}.png").into(), label: u8::from(i < 1134) })
        .collect();
    let m = DatasetManifest::new(records).unwrap();
    assert_eq!(m.class_counts(), [3748, 1134]);
    assert_eq!(m.len(), 4882);
}

#[test]
fn blob_contrast_exceeds_three_background_sigmas() {
    let size = 64;
    let samples = synth_generate(40, size, &BlobParams::default(), 17).unwrap();
    for (i, s) in samples.iter().enumerate().filter(|(_, s)| s.label == 1) {
        let bg = synth_background(17, i, size);
        let mean = bg.iter().sum::<f64>() / bg.len() as f64;
        let sigma = (bg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / bg.len() as f64).sqrt();
        let img = s.image.values();
        for b in &s.blobs {
            let disc: Vec<usize> = (0..size * size)
                .filter(|&p| ((p % size) as f64 - b.cx).powi(2) + ((p / size) as f64 - b.cy).powi(2) <= b.radius * b.radius)
                .collect();
            let inside = disc.iter().map(|&p| img[p]).sum::<f64>() / disc.len() as f64;
            let local = disc.iter().map(|&p| bg[p]).sum::<f64>() / disc.len() as f64;
            assert!(inside - local >= 3.0 * sigma, "sample {i}: {} < 3·{sigma}", inside - local);
        }
    }
}

proptest! {
    #[test]
    fn batches_cover_input_once(n in 1usize..200, bs in 1usize..20, seed in any::<u64>(), epoch in 0u64..50) {
        let ids: Vec<usize> = (0..n).collect();
        let batches: Vec<Vec<usize>> = batch_iter(&ids, bs, seed, epoch).unwrap().collect();
        prop_assert_eq!(batches.len(), n.div_ceil(bs));
        prop_assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == bs));
        let mut all = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
    }
}
