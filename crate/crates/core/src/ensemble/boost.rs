use super::tree::{DecisionTree, TreeParams};
use super::{check_training, sigmoid, EnsembleError, Features, Result};
use crate::rng::stream;

/// Discrete SAMME boosting over depth-1 Gini stumps.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaBoost {
    pub d: usize,
    pub stumps: Vec<DecisionTree>,
    pub alphas: Vec<f64>,
}

impl AdaBoost {
    pub fn fit(x: &Features, y: &[u8], rounds: usize) -> Result<Self> {
        check_training(x, y)?;
        if rounds == 0 {
            return Err(EnsembleError::Parameter("boosting needs at least one round".into()));
        }
        let n = x.n();
        let mut w = vec![1.0 / n as f64; n];
        let params = TreeParams { max_depth: 1, ..TreeParams::default() };
        // stumps see every feature, so the stream is never consulted
        let mut rng = stream(0, "ada", 0);
        let (mut stumps, mut alphas) = (Vec::new(), Vec::new());
        for _ in 0..rounds {
            let stump = DecisionTree::fit_classifier(x, y, &w, &params, &mut rng);
            let wrong: Vec<bool> = (0..n).map(|i| stump.vote(x.row(i)) != y[i]).collect();
            let err: f64 = w.iter().zip(&wrong).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / w.iter().sum::<f64>();
            if err <= 1e-12 {
                stumps.push(stump);
                alphas.push(1.0);
                break;
            }
            if err >= 0.5 {
                if stumps.is_empty() {
                    stumps.push(stump);
                    alphas.push(1.0);
                }
                break;
            }
            let alpha = ((1.0 - err) / err).ln();
            for (wi, &m) in w.iter_mut().zip(&wrong) {
                if m {
                    *wi *= alpha.exp();
                }
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            stumps.push(stump);
            alphas.push(alpha);
        }
        Ok(Self { d: x.d(), stumps, alphas })
    }

    /// Alpha-weighted fraction of stumps voting class 1.
    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.expect_width(self.d)?;
        let total: f64 = self.alphas.iter().sum();
        Ok((0..x.n())
            .map(|i| {
                let ones: f64 = self.stumps.iter().zip(&self.alphas).filter(|(s, _)| s.vote(x.row(i)) == 1).map(|(_, a)| a).sum();
                ones / total
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GbParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    /// Split on the hessian-weighted gain (XGBoost style) instead of squared error.
    pub second_order: bool,
    /// Start from the log-odds of the class prior instead of zero.
    pub prior_init: bool,
}

impl GbParams {
    pub fn gradient_boosting() -> Self {
        Self { rounds: 100, max_depth: 3, learning_rate: 0.1, lambda: 0.0, min_child_weight: 0.0, second_order: false, prior_init: true }
    }

    pub fn xgboost() -> Self {
        Self { rounds: 100, max_depth: 6, learning_rate: 0.3, lambda: 1.0, min_child_weight: 1.0, second_order: true, prior_init: false }
    }
}

/// Log-loss gradient boosting with Newton leaf values.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBoosting {
    pub d: usize,
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
}

impl GradientBoosting {
    pub fn fit(x: &Features, y: &[u8], p: &GbParams) -> Result<Self> {
        check_training(x, y)?;
        if !(p.learning_rate > 0.0) || p.lambda < 0.0 {
            return Err(EnsembleError::Parameter(format!("learning rate {} / lambda {} invalid", p.learning_rate, p.lambda)));
        }
        let n = x.n();
        let pos = y.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        let base = if p.prior_init { (pos / (1.0 - pos)).ln() } else { 0.0 };
        let mut f = vec![base; n];
        let tp = TreeParams { max_depth: p.max_depth, max_features: None, lambda: p.lambda, min_child_weight: p.min_child_weight };
        let samples: Vec<usize> = (0..n).collect();
        let ones = vec![1.0; n];
        let mut trees = Vec::with_capacity(p.rounds);
        for _ in 0..p.rounds {
            let prob: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = prob.iter().zip(y).map(|(&q, &l)| q - f64::from(l)).collect();
            let h: Vec<f64> = prob.iter().map(|&q| (q * (1.0 - q)).max(1e-16)).collect();
            let split_h = if p.second_order { &h } else { &ones };
            let tree = DecisionTree::fit_gradient(x, &g, &h, split_h, &samples, &tp);
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += p.learning_rate * tree.leaf(x.row(i))[0];
            }
            trees.push(tree);
        }
        Ok(Self { d: x.d(), base, learning_rate: p.learning_rate, trees })
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.leaf(row)[0]).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.expect_width(self.d)?;
        Ok((0..x.n()).map(|i| sigmoid(self.decision(x.row(i)))).collect())
    }
}
