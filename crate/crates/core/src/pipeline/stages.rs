use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{io_err, require, PipelineError, Result, RunConfig, Workdir};
use crate::dataset::{load_manifest, stratified_kfold, synth_generate, synth_write, BlobParams, DatasetManifest, FoldPlan};
use crate::enhance::io::{read_image, read_planar, IM3F_MAGIC};
use crate::enhance::{augment_planes, balance_training_set, preprocess, render_variant, EnhancementVariant, PlanarImage};
use crate::ensemble::{
    cross_validated_accuracy, encode_stack, predict_stack, train_meta_rf, LearnerKind, ProbabilityTable, StackModel,
};
use crate::metrics::{aggregate_folds, aggregate_to_text, confusion_matrix, report_to_text, reports_to_csv, weighted_report, MetricReport};
use crate::net::{checkpoint_load, checkpoint_save, predict_proba, train_model, Model, TrainConfig};
use crate::rng::id_hash;
use crate::scorecam::{default_layer, overlay_export, score_cam, write_cam_dump};
use crate::tensor::Tensor;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn header(cfg: &RunConfig) -> String {
    cfg.provenance().iter().map(|l| format!("# {l}\n")).collect()
}

fn manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    require(&cfg.manifest, "synth")?;
    Ok(load_manifest(&cfg.manifest)?)
}

fn fold_plan(wd: &Workdir) -> Result<FoldPlan> {
    let path = wd.fold_plan();
    require(&path, "split")?;
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(FoldPlan::from_text(&text)?)
}

/// Seed of the network trained on `variant` for `fold`.
fn model_seed(cfg: &RunConfig, v: EnhancementVariant, fold: usize) -> u64 {
    cfg.seed ^ id_hash(&format!("{}/fold{fold}", v.tag()))
}

/// Synthetic dataset under `dir`; returns the manifest path.
pub fn stage_synth(dir: &Path, n: usize, size: usize, seed: u64) -> Result<PathBuf> {
    let samples = synth_generate(n, size, &BlobParams::default(), seed)?;
    synth_write(dir, &samples, Some(&format!("synthetic n={n} size={size} seed={seed}")))?;
    Ok(dir.join("manifest.csv"))
}

/// Preprocess every manifest image and write each enhancement variant.
pub fn stage_enhance(cfg: &RunConfig) -> Result<()> {
    let wd = Workdir::new(&cfg.workdir);
    let m = manifest(cfg)?;
    for v in &cfg.variants {
        let dir = wd.images(*v);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut index: BTreeMap<EnhancementVariant, String> = cfg.variants.iter().map(|v| (*v, header(cfg) + "id,file\n")).collect();
    for r in &m.records {
        let img = preprocess(&read_image(&r.path)?, cfg.model.image_size)?;
        for v in &cfg.variants {
            let out = render_variant(&img, *v)?;
            crate::enhance::io::write_planar(&wd.image(*v, &r.id), IM3F_MAGIC, &out)?;
            let _ = writeln!(index.get_mut(v).expect("variant listed"), "{},{}.im3f", r.id, r.id);
        }
    }
    for (v, text) in index {
        write_text(&wd.images(v).join("index.csv"), &text)?;
    }
    Ok(())
}

pub fn stage_split(cfg: &RunConfig) -> Result<FoldPlan> {
    let wd = Workdir::new(&cfg.workdir);
    let plan = stratified_kfold(&manifest(cfg)?, cfg.folds, cfg.ratios, cfg.seed)?;
    write_text(&wd.fold_plan(), &plan.to_text(&cfg.provenance()))?;
    Ok(plan)
}

fn load_images(wd: &Workdir, v: EnhancementVariant, ids: &[String]) -> Result<Vec<PlanarImage>> {
    ids.iter()
        .map(|id| {
            let path = wd.image(v, id);
            require(&path, "enhance")?;
            Ok(read_planar(&path, IM3F_MAGIC)?)
        })
        .collect()
}

fn labels_of(m: &DatasetManifest, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            m.position(id)
                .map(|i| m.records[i].label as usize)
                .ok_or_else(|| PipelineError::Input(format!("fold id {id} is not in the manifest")))
        })
        .collect()
}

/// Train one network per (variant, fold); `only` restricts to the listed pairs.
pub fn stage_train(cfg: &RunConfig, only: Option<&[(EnhancementVariant, usize)]>) -> Result<()> {
    let wd = Workdir::new(&cfg.workdir);
    let m = manifest(cfg)?;
    let plan = fold_plan(&wd)?;
    for v in &cfg.variants {
        for (f, fold) in plan.folds.iter().enumerate() {
            if only.is_some_and(|o| !o.contains(&(*v, f))) {
                continue;
            }
            let seed = model_seed(cfg, *v, f);
            let train_imgs = load_images(&wd, *v, &fold.train)?;
            let train_labels = labels_of(&m, &fold.train)?;
            let mut x = Vec::new();
            let mut y = Vec::new();
            if cfg.augment {
                let labels_u8: Vec<u8> = train_labels.iter().map(|&l| l as u8).collect();
                let idx: Vec<usize> = (0..train_imgs.len()).collect();
                for item in balance_training_set(&idx, &labels_u8, seed)? {
                    let img = match &item.augment {
                        Some(spec) => augment_planes(&train_imgs[item.index], spec)?,
                        None => train_imgs[item.index].clone(),
                    };
                    x.push(img.to_tensor());
                    y.push(train_labels[item.index]);
                }
            } else {
                x = train_imgs.iter().map(PlanarImage::to_tensor).collect();
                y = train_labels;
            }
            let val_x: Vec<Tensor<f32>> = load_images(&wd, *v, &fold.val)?.iter().map(PlanarImage::to_tensor).collect();
            let val_y = labels_of(&m, &fold.val)?;
            let model_cfg = crate::net::ModelConfig { in_channels: v.channels(), ..cfg.model.clone() };
            let model = Model::<f32>::build(&model_cfg, seed)?;
            let tcfg = TrainConfig { seed, ..cfg.train.clone() };
            log::info!("training {v} fold {f}: {} train, {} val", x.len(), val_x.len());
            let out = train_model(model, (&x, &y), (&val_x, &val_y), &tcfg)?;
            let mut meta = BTreeMap::new();
            meta.insert("config_hash".to_string(), cfg.hash());
            meta.insert("seed".to_string(), cfg.seed.to_string());
            meta.insert("variant".to_string(), v.tag().to_string());
            meta.insert("fold".to_string(), f.to_string());
            meta.insert("best_epoch".to_string(), out.best_epoch.to_string());
            let path = wd.checkpoint(*v, f);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            checkpoint_save(&out.best, &meta, &path).map_err(|source| PipelineError::Checkpoint { path: path.clone(), source })?;
            let mut hist = header(cfg) + "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
            for r in &out.history {
                let _ = writeln!(hist, "{},{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
            }
            write_text(&wd.history(*v, f), &hist)?;
        }
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    require(path, "train")?;
    let (model, _) = checkpoint_load::<f32>(path).map_err(|source| PipelineError::Checkpoint { path: path.to_path_buf(), source })?;
    Ok(model)
}

/// Test-set nodule probabilities of every (variant, fold) network.
pub fn stage_predict(cfg: &RunConfig) -> Result<()> {
    let wd = Workdir::new(&cfg.workdir);
    let m = manifest(cfg)?;
    let plan = fold_plan(&wd)?;
    for v in &cfg.variants {
        for (f, fold) in plan.folds.iter().enumerate() {
            let model = load_model(&wd.checkpoint(*v, f))?;
            let imgs: Vec<Tensor<f32>> = load_images(&wd, *v, &fold.test)?.iter().map(PlanarImage::to_tensor).collect();
            let probs = predict_proba(&model, &imgs, cfg.train.eval_batch)?;
            let labels = labels_of(&m, &fold.test)?;
            let mut out = header(cfg) + "id,p,label\n";
            for ((id, p), l) in fold.test.iter().zip(&probs).zip(&labels) {
                let _ = writeln!(out, "{id},{p},{l}");
            }
            write_text(&wd.predictions(*v, f), &out)?;
        }
    }
    Ok(())
}

/// `(id, probability, label)` rows of a prediction file.
fn read_predictions(path: &Path) -> Result<Vec<(String, f64, u8)>> {
    require(path, "predict")?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |n: usize, m: &str| PipelineError::Input(format!("{} line {}: {m}", path.display(), n + 1));
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty()).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(n, "expected id,p,label"));
        }
        let p = f[1].parse().map_err(|_| bad(n, "bad probability"))?;
        let l = f[2].trim().parse().map_err(|_| bad(n, "bad label"))?;
        rows.push((f[0].to_string(), p, l));
    }
    Ok(rows)
}

/// Out-of-fold probability table: each sample's column comes from the
/// network whose test fold contained it.
pub fn stage_table(cfg: &RunConfig) -> Result<ProbabilityTable> {
    let wd = Workdir::new(&cfg.workdir);
    let m = manifest(cfg)?;
    let plan = fold_plan(&wd)?;
    let mut cols: [BTreeMap<String, f64>; 4] = Default::default();
    for (c, v) in EnhancementVariant::ALL.iter().enumerate() {
        if !cfg.variants.contains(v) {
            return Err(PipelineError::Missing {
                path: wd.images(*v),
                hint: format!("the probability table needs the `{v}` variant; add it to data.variants"),
            });
        }
        for f in 0..plan.k() {
            for (id, p, _) in read_predictions(&wd.predictions(*v, f))? {
                cols[c].insert(id, p);
            }
        }
    }
    let ids: Vec<String> = m.records.iter().map(|r| r.id.clone()).collect();
    let col = |c: usize| -> Result<Vec<f64>> {
        ids.iter()
            .map(|id| cols[c].get(id).copied().ok_or_else(|| PipelineError::Input(format!("no test-fold prediction for {id}"))))
            .collect()
    };
    let (c0, c1, c2, c3) = (col(0)?, col(1)?, col(2)?, col(3)?);
    let table = ProbabilityTable::from_columns(&ids, [&c0, &c1, &c2, &c3], &m.labels())?;
    let path = wd.table();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    table.write(&path, &cfg.provenance())?;
    Ok(table)
}

fn read_table(wd: &Workdir) -> Result<ProbabilityTable> {
    let path = wd.table();
    require(&path, "table")?;
    Ok(ProbabilityTable::read(&path)?)
}

/// Cross-validated accuracy of every learner, top-3 selection, meta forest on the full table.
pub fn stage_stack(cfg: &RunConfig) -> Result<StackModel> {
    let wd = Workdir::new(&cfg.workdir);
    let table = read_table(&wd)?;
    let plan = fold_plan(&wd)?;
    let mut selection = Vec::new();
    let mut report = header(cfg) + "learner,cv_accuracy\n";
    for kind in LearnerKind::ALL {
        let acc = cross_validated_accuracy(kind, &table, &plan, &cfg.learners, cfg.seed)?;
        let _ = writeln!(report, "{kind},{acc}");
        selection.push((kind, acc));
    }
    write_text(&wd.reports().join("learners.csv"), &report)?;
    let (stack, audit) = train_meta_rf(&selection, &table, &cfg.learners, &cfg.meta, cfg.seed)?;
    if !audit.is_leak_free() || !audit.covers(&table.ids()) {
        return Err(PipelineError::Input("out-of-fold audit failed".into()));
    }
    let path = wd.stack();
    write_bytes(&path, &encode_stack(&stack, &cfg.provenance()))?;
    Ok(stack)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_learner_accuracies(wd: &Workdir) -> Result<Vec<(LearnerKind, f64)>> {
    let path = wd.reports().join("learners.csv");
    require(&path, "stack")?;
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let (k, a) = l.split_once(',').ok_or_else(|| PipelineError::Input(format!("{}: bad line `{l}`", path.display())))?;
            Ok((k.parse()?, a.parse().map_err(|_| PipelineError::Input(format!("{}: bad accuracy `{a}`", path.display())))?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    /// Test accuracy of each (variant, fold) network.
    pub variant_accuracy: BTreeMap<EnhancementVariant, Vec<f64>>,
    /// Test accuracy of the stack retrained inside each fold.
    pub stack_accuracy: Vec<f64>,
    pub learner_accuracy: Vec<(LearnerKind, f64)>,
    pub stack_reports: Vec<MetricReport>,
}

fn write_reports(cfg: &RunConfig, dir: &Path, name: &str, reports: &[MetricReport]) -> Result<()> {
    write_text(&dir.join(format!("{name}.csv")), &(header(cfg) + &reports_to_csv(reports)))?;
    let mut text = header(cfg);
    for r in reports {
        text.push_str(&report_to_text(r));
        text.push('\n');
    }
    let _ = writeln!(text, "mean over folds");
    text.push_str(&aggregate_to_text(&aggregate_folds(reports)?));
    write_text(&dir.join(format!("{name}.txt")), &text)
}

/// Per-fold reports for every variant network and for the stack retrained on
/// each fold's train and validation rows.
pub fn stage_eval(cfg: &RunConfig) -> Result<EvalSummary> {
    let wd = Workdir::new(&cfg.workdir);
    let plan = fold_plan(&wd)?;
    let mut variant_accuracy = BTreeMap::new();
    for v in &cfg.variants {
        let mut reports = Vec::new();
        for f in 0..plan.k() {
            let rows = read_predictions(&wd.predictions(*v, f))?;
            let pred: Vec<u8> = rows.iter().map(|r| u8::from(r.1 > 0.5)).collect();
            let truth: Vec<u8> = rows.iter().map(|r| r.2).collect();
            reports.push(weighted_report(&confusion_matrix(&pred, &truth)?, Some(f))?);
        }
        variant_accuracy.insert(*v, reports.iter().map(|r| r.overall_accuracy).collect());
        write_reports(cfg, &wd.reports(), v.tag(), &reports)?;
    }
    let table = read_table(&wd)?;
    let learner_accuracy = read_learner_accuracies(&wd)?;
    let mut stack_reports = Vec::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let pos = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter().map(|id| table.position(id).ok_or_else(|| PipelineError::Input(format!("{id} missing from table")))).collect()
        };
        let mut fit = pos(&fold.train)?;
        fit.extend(pos(&fold.val)?);
        fit.sort_unstable();
        let test = pos(&fold.test)?;
        let (stack, _) = train_meta_rf(&learner_accuracy, &table.select(&fit), &cfg.learners, &cfg.meta, cfg.seed)?;
        let sub = table.select(&test);
        let (pred, _) = predict_stack(&stack, &sub.features())?;
        stack_reports.push(weighted_report(&confusion_matrix(&pred, &sub.labels())?, Some(f))?);
    }
    write_reports(cfg, &wd.reports(), "stack", &stack_reports)?;
    Ok(EvalSummary {
        variant_accuracy,
        stack_accuracy: stack_reports.iter().map(|r| r.overall_accuracy).collect(),
        learner_accuracy,
        stack_reports,
    })
}

/// Report for a CSV with an `id`, a `label` and either a `pred` (0/1) or a `p`
/// (probability, class 1 above 0.5) column.
pub fn eval_prediction_csv(path: &Path) -> Result<MetricReport> {
    require(path, "predict")?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |m: String| PipelineError::Input(format!("{}: {m}", path.display()));
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let head: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').map(str::trim).collect();
    let col = |name: &str| head.iter().position(|h| *h == name);
    let label_col = col("label").ok_or_else(|| bad("no `label` column".into()))?;
    let (pcol, is_prob) = match (col("pred"), col("p")) {
        (Some(c), _) => (c, false),
        (None, Some(c)) => (c, true),
        _ => return Err(bad("needs a `pred` or `p` column".into())),
    };
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |c: usize| f.get(c).copied().ok_or_else(|| bad(format!("row {}: too few fields", n + 1)));
        let p = get(pcol)?;
        pred.push(if is_prob {
            u8::from(p.parse::<f64>().map_err(|_| bad(format!("row {}: bad probability `{p}`", n + 1)))? > 0.5)
        } else {
            p.parse().map_err(|_| bad(format!("row {}: bad prediction `{p}`", n + 1)))?
        });
        let l = get(label_col)?;
        truth.push(l.parse().map_err(|_| bad(format!("row {}: bad label `{l}`", n + 1)))?);
    }
    Ok(weighted_report(&confusion_matrix(&pred, &truth)?, None)?)
}

/// ScoreCAM overlays for `ids` from the network of (`variant`, `fold`).
pub fn stage_cam(cfg: &RunConfig, variant: EnhancementVariant, fold: usize, ids: &[String]) -> Result<Vec<PathBuf>> {
    let wd = Workdir::new(&cfg.workdir);
    let model = load_model(&wd.checkpoint(variant, fold))?;
    let layer = if cfg.cam_layer.is_empty() { default_layer(&model.config) } else { cfg.cam_layer.clone() };
    let dir = wd.cams(variant);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut index = header(cfg) + &format!("# layer={layer} target={} fold={fold}\nid,png,cam,weights\n", cfg.cam_target);
    let mut written = Vec::new();
    for (id, img) in ids.iter().zip(load_images(&wd, variant, ids)?) {
        let x = img.to_tensor();
        let cam = score_cam(&model, &x, &layer, cfg.cam_target)?;
        let png = dir.join(format!("{id}.png"));
        overlay_export(&png, &x, &cam)?;
        write_cam_dump(&dir.join(format!("{id}.cam1")), &cam)?;
        let w: Vec<String> = cam.weights.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(index, "{id},{id}.png,{id}.cam1,{}", w.join(" "));
        written.push(png);
    }
    write_text(&dir.join("index.csv"), &index)?;
    Ok(written)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchResult {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub runs: usize,
}

/// Single-image inference latency after `warmup` untimed runs.
pub fn bench(checkpoint: &Path, image: &PlanarImage, warmup: usize, runs: usize) -> Result<BenchResult> {
    if runs == 0 {
        return Err(PipelineError::Input("bench needs at least one timed run".into()));
    }
    let model = load_model(checkpoint)?;
    let x = image.to_tensor();
    for _ in 0..warmup {
        model.logits(&x)?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        std::hint::black_box(model.logits(&x)?);
        times.push(t.elapsed().as_secs_f64() * 1000.0);
    }
    let mean = times.iter().sum::<f64>() / runs as f64;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / runs as f64).sqrt();
    Ok(BenchResult { mean_ms: mean, std_ms: std, runs })
}

/// enhance → split → train → predict → table → stack → eval.
pub fn run_all(cfg: &RunConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    stage_enhance(cfg)?;
    stage_split(cfg)?;
    stage_train(cfg, None)?;
    stage_predict(cfg)?;
    stage_table(cfg)?;
    stage_stack(cfg)?;
    stage_eval(cfg)
}
