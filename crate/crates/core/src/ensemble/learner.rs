use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::boost::{AdaBoost, GbParams, GradientBoosting};
use super::forest::{ForestParams, RandomForest};
use super::linear::{Lda, LinearSvm, LogisticRegression};
use super::mlp::MlpClassifier;
use super::tree::DecisionTree;
use super::{EnsembleError, Features, Result};
use crate::container::Record;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LearnerKind {
    Mlp,
    Lda,
    Xgb,
    Rf,
    Lr,
    Svm,
    Ada,
    Gb,
}

impl LearnerKind {
    /// Every kind, in the fixed order used to break accuracy ties.
    pub const ALL: [LearnerKind; 8] = [
        LearnerKind::Mlp,
        LearnerKind::Lda,
        LearnerKind::Xgb,
        LearnerKind::Rf,
        LearnerKind::Lr,
        LearnerKind::Svm,
        LearnerKind::Ada,
        LearnerKind::Gb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Mlp => "MLP",
            LearnerKind::Lda => "LDA",
            LearnerKind::Xgb => "XGB",
            LearnerKind::Rf => "RF",
            LearnerKind::Lr => "LR",
            LearnerKind::Svm => "SVM",
            LearnerKind::Ada => "ADA",
            LearnerKind::Gb => "GB",
        }
    }

    pub fn order(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("kind listed in ALL")
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| EnsembleError::Parameter(format!("unknown learner '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnerParams {
    pub lr_lambda: f64,
    pub lr_tol: f64,
    pub lda_ridge: f64,
    pub rf: ForestParams,
    pub ada_rounds: usize,
    pub gb: GbParams,
    pub xgb: GbParams,
    pub mlp_hidden: usize,
    pub mlp_lr: f64,
    pub mlp_epochs: usize,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            lr_lambda: 1e-4,
            lr_tol: 1e-8,
            lda_ridge: 1e-6,
            rf: ForestParams::default(),
            ada_rounds: 100,
            gb: GbParams::gradient_boosting(),
            xgb: GbParams::xgboost(),
            mlp_hidden: 16,
            mlp_lr: 0.01,
            mlp_epochs: 300,
            svm_lambda: 1e-3,
            svm_epochs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FittedLearner {
    Mlp(MlpClassifier),
    Lda(Lda),
    Xgb(GradientBoosting),
    Rf(RandomForest),
    Lr(LogisticRegression),
    Svm(LinearSvm),
    Ada(AdaBoost),
    Gb(GradientBoosting),
}

pub fn fit_learner(kind: LearnerKind, x: &Features, y: &[u8], params: &LearnerParams, seed: u64) -> Result<FittedLearner> {
    Ok(match kind {
        LearnerKind::Mlp => FittedLearner::Mlp(MlpClassifier::fit(x, y, params.mlp_hidden, params.mlp_lr, params.mlp_epochs, seed)?),
        LearnerKind::Lda => FittedLearner::Lda(Lda::fit(x, y, params.lda_ridge)?),
        LearnerKind::Xgb => FittedLearner::Xgb(GradientBoosting::fit(x, y, &params.xgb)?),
        LearnerKind::Rf => FittedLearner::Rf(RandomForest::fit(x, y, &params.rf, seed, "rf")?),
        LearnerKind::Lr => FittedLearner::Lr(LogisticRegression::fit(x, y, params.lr_lambda, params.lr_tol)?),
        LearnerKind::Svm => FittedLearner::Svm(LinearSvm::fit(x, y, params.svm_lambda, params.svm_epochs, seed)?),
        LearnerKind::Ada => FittedLearner::Ada(AdaBoost::fit(x, y, params.ada_rounds)?),
        LearnerKind::Gb => FittedLearner::Gb(GradientBoosting::fit(x, y, &params.gb)?),
    })
}

fn tree_records(prefix: &str, trees: &[DecisionTree]) -> Vec<Record> {
    trees.iter().enumerate().map(|(t, tree)| Record::tree(format!("{prefix}/tree/{t}"), &tree.to_records())).collect()
}

fn malformed(msg: impl Into<String>) -> EnsembleError {
    EnsembleError::Table(msg.into())
}

fn get_f64(recs: &BTreeMap<&str, &Record>, name: &str, len: Option<usize>) -> Result<Vec<f64>> {
    let r = recs.get(name).ok_or_else(|| malformed(format!("missing record {name}")))?;
    let v = r.as_f64()?;
    if len.is_some_and(|l| l != v.len()) || v.iter().any(|x| !x.is_finite()) {
        return Err(malformed(format!("record {name} has the wrong size or non-finite values")));
    }
    Ok(v)
}

fn get_trees(recs: &BTreeMap<&str, &Record>, prefix: &str, d: usize) -> Result<Vec<DecisionTree>> {
    let mut trees = Vec::new();
    while let Some(r) = recs.get(format!("{prefix}/tree/{}", trees.len()).as_str()) {
        let tree = DecisionTree::from_records(&r.as_tree()?, d).ok_or_else(|| malformed(format!("bad tree under {prefix}")))?;
        trees.push(tree);
    }
    if trees.is_empty() {
        return Err(malformed(format!("no trees under {prefix}")));
    }
    Ok(trees)
}

impl FittedLearner {
    pub fn kind(&self) -> LearnerKind {
        match self {
            FittedLearner::Mlp(_) => LearnerKind::Mlp,
            FittedLearner::Lda(_) => LearnerKind::Lda,
            FittedLearner::Xgb(_) => LearnerKind::Xgb,
            FittedLearner::Rf(_) => LearnerKind::Rf,
            FittedLearner::Lr(_) => LearnerKind::Lr,
            FittedLearner::Svm(_) => LearnerKind::Svm,
            FittedLearner::Ada(_) => LearnerKind::Ada,
            FittedLearner::Gb(_) => LearnerKind::Gb,
        }
    }

    /// Class-1 probability per row.
    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.check_finite()?;
        match self {
            FittedLearner::Mlp(m) => m.predict_proba(x),
            FittedLearner::Lda(m) => m.predict_proba(x),
            FittedLearner::Xgb(m) | FittedLearner::Gb(m) => m.predict_proba(x),
            FittedLearner::Rf(m) => m.predict_proba(x),
            FittedLearner::Lr(m) => m.predict_proba(x),
            FittedLearner::Svm(m) => m.predict_proba(x),
            FittedLearner::Ada(m) => m.predict_proba(x),
        }
    }

    /// Labels with ties going to class 0.
    pub fn predict(&self, x: &Features) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| u8::from(p > 0.5)).collect())
    }

    pub fn to_records(&self, prefix: &str) -> Vec<Record> {
        let f = |name: &str, v: &[f64]| Record::f64(format!("{prefix}/{name}"), vec![v.len()], v);
        match self {
            FittedLearner::Mlp(m) => {
                let mut out = vec![Record::u32(format!("{prefix}/shape"), &[m.d as u32, m.hidden as u32])];
                out.extend(m.params.iter().enumerate().map(|(k, p)| f(&format!("p{k}"), p)));
                out
            }
            FittedLearner::Lda(m) => {
                let mut w = m.weights.clone();
                w.push(m.bias);
                let means: Vec<f64> = m.means.concat();
                vec![f("w", &w), f("means", &means), f("cov", &m.covariance), f("priors", &m.priors)]
            }
            FittedLearner::Lr(m) => {
                let mut w = m.weights.clone();
                w.push(m.bias);
                vec![f("w", &w)]
            }
            FittedLearner::Svm(m) => vec![f("w", &m.weights), f("calib", &[m.calib_a, m.calib_b])],
            FittedLearner::Rf(m) => tree_records(prefix, &m.trees),
            FittedLearner::Ada(m) => {
                let mut out = vec![f("alphas", &m.alphas)];
                out.extend(tree_records(prefix, &m.stumps));
                out
            }
            FittedLearner::Xgb(m) | FittedLearner::Gb(m) => {
                let mut out = vec![f("base", &[m.base, m.learning_rate])];
                out.extend(tree_records(prefix, &m.trees));
                out
            }
        }
    }

    pub fn from_records(kind: LearnerKind, d: usize, prefix: &str, recs: &BTreeMap<&str, &Record>) -> Result<Self> {
        let name = |s: &str| format!("{prefix}/{s}");
        Ok(match kind {
            LearnerKind::Mlp => {
                let shape = recs.get(name("shape").as_str()).ok_or_else(|| malformed("missing mlp shape"))?.as_u32()?;
                if shape.len() != 2 || shape[0] as usize != d {
                    return Err(malformed("mlp shape record invalid"));
                }
                let params = (0..4).map(|k| get_f64(recs, &name(&format!("p{k}")), None)).collect::<Result<Vec<_>>>()?;
                FittedLearner::Mlp(MlpClassifier::from_params(d, shape[1] as usize, params)?)
            }
            LearnerKind::Lda => {
                let mut w = get_f64(recs, &name("w"), Some(d + 1))?;
                let bias = w.pop().expect("d + 1 values");
                let means = get_f64(recs, &name("means"), Some(2 * d))?;
                let priors = get_f64(recs, &name("priors"), Some(2))?;
                FittedLearner::Lda(Lda {
                    means: [means[..d].to_vec(), means[d..].to_vec()],
                    covariance: get_f64(recs, &name("cov"), Some(d * d))?,
                    priors: [priors[0], priors[1]],
                    weights: w,
                    bias,
                })
            }
            LearnerKind::Lr => {
                let mut w = get_f64(recs, &name("w"), Some(d + 1))?;
                let bias = w.pop().expect("d + 1 values");
                FittedLearner::Lr(LogisticRegression { weights: w, bias, iterations: 0 })
            }
            LearnerKind::Svm => {
                let c = get_f64(recs, &name("calib"), Some(2))?;
                FittedLearner::Svm(LinearSvm { weights: get_f64(recs, &name("w"), Some(d + 1))?, calib_a: c[0], calib_b: c[1] })
            }
            LearnerKind::Rf => FittedLearner::Rf(RandomForest { d, trees: get_trees(recs, prefix, d)? }),
            LearnerKind::Ada => {
                let stumps = get_trees(recs, prefix, d)?;
                let alphas = get_f64(recs, &name("alphas"), Some(stumps.len()))?;
                FittedLearner::Ada(AdaBoost { d, stumps, alphas })
            }
            LearnerKind::Xgb | LearnerKind::Gb => {
                let b = get_f64(recs, &name("base"), Some(2))?;
                let m = GradientBoosting { d, base: b[0], learning_rate: b[1], trees: get_trees(recs, prefix, d)? };
                if kind == LearnerKind::Xgb {
                    FittedLearner::Xgb(m)
                } else {
                    FittedLearner::Gb(m)
                }
            }
        })
    }
}
