use rand::Rng;
use rayon::prelude::*;

use super::tree::{DecisionTree, TreeParams};
use super::{check_training, EnsembleError, Features, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, d: usize) -> Option<usize> {
        match self {
            MaxFeatures::All => None,
            MaxFeatures::Sqrt => Some(((d as f64).sqrt().floor() as usize).max(1)),
            MaxFeatures::Count(k) => Some(k.clamp(1, d)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, max_features: MaxFeatures::Sqrt, bootstrap: true }
    }
}

/// Gini forest whose probability is the fraction of trees voting class 1.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomForest {
    pub d: usize,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Tree `t` draws its bootstrap sample and feature subsets from the stream `(seed, tag, t)`.
    pub fn fit(x: &Features, y: &[u8], params: &ForestParams, seed: u64, tag: &str) -> Result<Self> {
        check_training(x, y)?;
        if params.n_trees == 0 {
            return Err(EnsembleError::Parameter("forest needs at least one tree".into()));
        }
        let tree_params =
            TreeParams { max_depth: params.max_depth, max_features: params.max_features.resolve(x.d()), ..TreeParams::default() };
        let n = x.n();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream(seed, tag, t as u64);
                let mut w = vec![0.0; n];
                if params.bootstrap {
                    for _ in 0..n {
                        w[rng.gen_range(0..n)] += 1.0;
                    }
                } else {
                    w.fill(1.0);
                }
                DecisionTree::fit_classifier(x, y, &w, &tree_params, &mut rng)
            })
            .collect();
        Ok(Self { d: x.d(), trees })
    }

    pub fn vote_fraction(&self, row: &[f64]) -> f64 {
        let ones = self.trees.iter().filter(|t| t.vote(row) == 1).count();
        ones as f64 / self.trees.len() as f64
    }

    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.expect_width(self.d)?;
        Ok((0..x.n()).map(|i| self.vote_fraction(x.row(i))).collect())
    }
}
