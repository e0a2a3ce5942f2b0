//! Top-3 learner selection and the out-of-fold meta random forest.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use super::forest::{ForestParams, MaxFeatures, RandomForest};
use super::learner::{fit_learner, FittedLearner, LearnerKind, LearnerParams};
use super::{EnsembleError, Features, ProbabilityTable, Result};
use crate::container::{self, Record};
use crate::dataset::{stratified_kfold_indices, FoldPlan, SplitRatios};

pub const STACK_MAGIC: [u8; 4] = *b"SDSK";
pub const STACK_VERSION: u32 = 1;
pub const META_FOLDS: usize = 5;

pub fn meta_forest_params() -> ForestParams {
    ForestParams { n_trees: 100, max_depth: 8, max_features: MaxFeatures::Sqrt, bootstrap: true }
}

/// Rank learners by accuracy, ties broken by [`LearnerKind::ALL`] order, and keep the best three.
pub fn select_top3(accuracies: &[(LearnerKind, f64)]) -> Vec<LearnerKind> {
    let mut ranked = accuracies.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.order().cmp(&b.0.order())));
    ranked.into_iter().take(3).map(|(k, _)| k).collect()
}

fn accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn rows_of(table: &ProbabilityTable, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter().map(|id| table.position(id).ok_or_else(|| EnsembleError::Table(format!("fold id {id} missing from table")))).collect()
}

/// Mean test accuracy over the folds of `plan`, each fitted on its train and validation ids.
pub fn cross_validated_accuracy(
    kind: LearnerKind,
    table: &ProbabilityTable,
    plan: &FoldPlan,
    params: &LearnerParams,
    seed: u64,
) -> Result<f64> {
    let (x, y) = (table.features(), table.labels());
    let mut total = 0.0;
    for fold in &plan.folds {
        let mut fit_idx = rows_of(table, &fold.train)?;
        fit_idx.extend(rows_of(table, &fold.val)?);
        let test_idx = rows_of(table, &fold.test)?;
        let fit_y: Vec<u8> = fit_idx.iter().map(|&i| y[i]).collect();
        let model = fit_learner(kind, &x.select(&fit_idx), &fit_y, params, seed)?;
        let pred = model.predict(&x.select(&test_idx))?;
        total += accuracy(&pred, &test_idx.iter().map(|&i| y[i]).collect::<Vec<_>>());
    }
    Ok(total / plan.folds.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackModel {
    /// Mean cross-validated accuracy of every learner considered.
    pub selection: Vec<(LearnerKind, f64)>,
    pub bases: Vec<FittedLearner>,
    pub meta: RandomForest,
}

/// Which ids each internal fold trained on and which it predicted.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OofAudit {
    pub folds: Vec<(HashSet<String>, HashSet<String>)>,
}

impl OofAudit {
    pub fn is_leak_free(&self) -> bool {
        self.folds.iter().all(|(train, pred)| train.is_disjoint(pred))
    }

    /// Every id predicted exactly once.
    pub fn covers(&self, ids: &[String]) -> bool {
        let mut seen = HashSet::new();
        for (_, pred) in &self.folds {
            for id in pred {
                if !seen.insert(id.clone()) {
                    return false;
                }
            }
        }
        seen.len() == ids.len() && ids.iter().all(|id| seen.contains(id))
    }
}

/// Meta features are out-of-fold base probabilities from an internal stratified
/// 5-fold split; the meta forest is fitted on them and the bases are then refit
/// on the whole table.
pub fn train_meta_rf(
    selection: &[(LearnerKind, f64)],
    table: &ProbabilityTable,
    params: &LearnerParams,
    meta_params: &ForestParams,
    seed: u64,
) -> Result<(StackModel, OofAudit)> {
    let top = select_top3(selection);
    if top.len() != 3 {
        return Err(EnsembleError::Parameter(format!("stacking needs three base learners, got {}", top.len())));
    }
    let (x, y) = (table.features(), table.labels());
    let ids = table.ids();
    let labels32: Vec<u32> = y.iter().map(|&l| u32::from(l)).collect();
    let folds = stratified_kfold_indices(&labels32, META_FOLDS, SplitRatios { train: 1.0, val: 0.0 }, seed)
        .map_err(|e| EnsembleError::Parameter(format!("internal split: {e}")))?;
    let mut meta = vec![0.0; x.n() * 3];
    let mut audit = OofAudit::default();
    for fold in &folds {
        let mut fit_idx: Vec<usize> = fold.train.iter().chain(&fold.val).copied().collect();
        fit_idx.sort_unstable();
        let fit_y: Vec<u8> = fit_idx.iter().map(|&i| y[i]).collect();
        let held = x.select(&fold.test);
        for (b, &kind) in top.iter().enumerate() {
            let model = fit_learner(kind, &x.select(&fit_idx), &fit_y, params, seed)?;
            for (&i, p) in fold.test.iter().zip(model.predict_proba(&held)?) {
                meta[i * 3 + b] = p;
            }
        }
        audit.folds.push((
            fit_idx.iter().map(|&i| ids[i].clone()).collect(),
            fold.test.iter().map(|&i| ids[i].clone()).collect(),
        ));
    }
    let meta_x = Features::new(3, meta)?;
    let forest = RandomForest::fit(&meta_x, &y, meta_params, seed, "meta-rf")?;
    let bases = top.iter().map(|&k| fit_learner(k, &x, &y, params, seed)).collect::<Result<Vec<_>>>()?;
    Ok((StackModel { selection: selection.to_vec(), bases, meta: forest }, audit))
}

impl StackModel {
    pub fn meta_features(&self, x: &Features) -> Result<Features> {
        x.expect_width(4)?;
        let cols = self.bases.iter().map(|b| b.predict_proba(x)).collect::<Result<Vec<_>>>()?;
        Features::new(3, (0..x.n()).flat_map(|i| cols.iter().map(move |c| c[i])).collect())
    }

    pub fn kinds(&self) -> Vec<LearnerKind> {
        self.bases.iter().map(FittedLearner::kind).collect()
    }
}

/// Labels (class 1 only when the vote fraction exceeds one half) and class-1 probabilities.
pub fn predict_stack(stack: &StackModel, x: &Features) -> Result<(Vec<u8>, Vec<f64>)> {
    let probs = stack.meta.predict_proba(&stack.meta_features(x)?)?;
    Ok((probs.iter().map(|&p| u8::from(p > 0.5)).collect(), probs))
}

pub fn encode_stack(stack: &StackModel, comments: &[String]) -> Vec<u8> {
    let mut config = String::new();
    for c in comments {
        let _ = writeln!(config, "# {c}");
    }
    let kinds: Vec<&str> = stack.bases.iter().map(|b| b.kind().name()).collect();
    let _ = writeln!(config, "bases={}", kinds.join(","));
    let sel: Vec<String> = stack.selection.iter().map(|(k, a)| format!("{k}:{a}")).collect();
    let _ = writeln!(config, "selection={}", sel.join(","));
    let mut records = Vec::new();
    for (b, base) in stack.bases.iter().enumerate() {
        records.extend(base.to_records(&format!("base{b}")));
    }
    records.extend(
        stack.meta.trees.iter().enumerate().map(|(t, tree)| Record::tree(format!("meta/tree/{t}"), &tree.to_records())),
    );
    container::encode(STACK_MAGIC, STACK_VERSION, &config, &records)
}

pub fn decode_stack(bytes: &[u8]) -> Result<StackModel> {
    let (config, records) = container::decode(STACK_MAGIC, STACK_VERSION, bytes)?;
    let bad = |m: String| EnsembleError::Table(format!("stack config: {m}"));
    let mut keys = BTreeMap::new();
    for line in config.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line '{line}' is not key=value")))?;
        keys.insert(k.trim(), v.trim());
    }
    let kinds: Vec<LearnerKind> = keys
        .get("bases")
        .ok_or_else(|| bad("missing bases".into()))?
        .split(',')
        .map(str::parse)
        .collect::<Result<_>>()?;
    if kinds.len() != 3 {
        return Err(bad(format!("{} bases listed", kinds.len())));
    }
    let mut selection = Vec::new();
    for item in keys.get("selection").ok_or_else(|| bad("missing selection".into()))?.split(',').filter(|s| !s.is_empty()) {
        let (k, a) = item.split_once(':').ok_or_else(|| bad(format!("selection item '{item}'")))?;
        selection.push((k.parse()?, a.parse::<f64>().map_err(|_| bad(format!("accuracy '{a}'")))?));
    }
    let by_name: BTreeMap<&str, &Record> = records.iter().map(|r| (r.name.as_str(), r)).collect();
    let bases = kinds
        .iter()
        .enumerate()
        .map(|(b, &k)| FittedLearner::from_records(k, 4, &format!("base{b}"), &by_name))
        .collect::<Result<Vec<_>>>()?;
    let meta = match FittedLearner::from_records(LearnerKind::Rf, 3, "meta", &by_name)? {
        FittedLearner::Rf(f) => f,
        _ => unreachable!("decoded as a forest"),
    };
    Ok(StackModel { selection, bases, meta })
}
