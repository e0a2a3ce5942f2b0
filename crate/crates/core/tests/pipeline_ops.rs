use std::fs;
use std::path::Path;

use selfdense::enhance::EnhancementVariant;
use selfdense::net::checkpoint_load;
use selfdense::pipeline::*;

fn tiny_config(root: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    cfg.manifest = root.join("data/manifest.csv");
    cfg.workdir = root.join("work");
    cfg.folds = 3;
    cfg.model.image_size = 32;
    cfg.model.stages.truncate(2);
    cfg.train.max_epochs = 1;
    cfg.learners.mlp_epochs = 20;
    cfg.meta.n_trees = 10;
    cfg
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 3);
    stage_synth(&dir.path().join("data"), 36, 32, 3).unwrap();
    let summary = run_all(&cfg).unwrap();
    let wd = Workdir::new(&cfg.workdir);
    for v in EnhancementVariant::ALL {
        assert_eq!(summary.variant_accuracy[&v].len(), 3);
        for f in 0..3 {
            assert!(wd.predictions(v, f).is_file());
            let (_, meta) = checkpoint_load::<f32>(&wd.checkpoint(v, f)).unwrap();
            assert_eq!(meta["config_hash"], cfg.hash());
            assert_eq!(meta["variant"], v.tag());
        }
    }
    assert_eq!(summary.stack_accuracy.len(), 3);
    assert_eq!(summary.learner_accuracy.len(), 8);
    let table = fs::read_to_string(wd.table()).unwrap();
    assert!(table.starts_with(&format!("# config_hash={}\n# seed=3\n", cfg.hash())));
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 37);
    assert!(wd.stack().is_file());
    assert!(wd.reports().join("stack.txt").is_file());

    let ids: Vec<String> = vec!["syn00000".into(), "syn00001".into()];
    let pngs = stage_cam(&cfg, EnhancementVariant::Gamma, 0, &ids).unwrap();
    assert_eq!(pngs.len(), 2);
    assert!(pngs.iter().all(|p| p.is_file()));

    let img = selfdense::enhance::io::read_planar(&wd.image(EnhancementVariant::Gray, "syn00000"), selfdense::enhance::io::IM3F_MAGIC).unwrap();
    let b = bench(&wd.checkpoint(EnhancementVariant::Gray, 0), &img, 2, 5).unwrap();
    assert_eq!(b.runs, 5);
    assert!(b.mean_ms > 0.0 && b.std_ms >= 0.0);
}

#[test]
fn missing_upstream_artifacts_name_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    match stage_split(&cfg) {
        Err(PipelineError::Missing { path, hint }) => {
            assert_eq!(path, cfg.manifest);
            assert!(hint.contains("synth"));
        }
        other => panic!("expected a missing manifest, got {other:?}"),
    }
    stage_synth(&dir.path().join("data"), 12, 32, 1).unwrap();
    match stage_train(&cfg, None) {
        Err(PipelineError::Missing { hint, .. }) => assert!(hint.contains("split")),
        other => panic!("expected a missing fold plan, got {other:?}"),
    }
    match stage_stack(&cfg) {
        Err(PipelineError::Missing { hint, .. }) => assert!(hint.contains("table")),
        other => panic!("expected a missing table, got {other:?}"),
    }
}

#[test]
fn prediction_csv_with_figure_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.csv");
    let mut text = String::from("id,pred,label\n");
    let mut push = |n: usize, pred: u8, label: u8, tag: &str| {
        for i in 0..n {
            text.push_str(&format!("{tag}{i},{pred},{label}\n"));
        }
    };
    push(1119, 1, 1, "tp");
    push(3728, 0, 0, "tn");
    push(20, 1, 0, "fp");
    push(15, 0, 1, "fn");
    fs::write(&path, text).unwrap();
    let r = eval_prediction_csv(&path).unwrap();
    assert_eq!(format!("{:.2}", r.overall_accuracy * 100.0), "99.28");
    assert_eq!((r.cm.tp, r.cm.tn, r.cm.fp, r.cm.fn_), (1119, 3728, 20, 15));

    fs::write(&path, "id,p,label\na,0.9,1\nb,0.5,1\n").unwrap();
    let r = eval_prediction_csv(&path).unwrap();
    assert_eq!((r.cm.tp, r.cm.fn_), (1, 1));
    fs::write(&path, "id,score,label\na,1,1\n").unwrap();
    assert!(matches!(eval_prediction_csv(&path), Err(PipelineError::Input(_))));
}
