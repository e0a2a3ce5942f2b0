//! Flat `key=value` run configuration with dotted sections.

use std::fmt::Write as _;
use std::path::PathBuf;

use super::PipelineError;
use crate::dataset::SplitRatios;
use crate::enhance::EnhancementVariant;
use crate::ensemble::{ForestParams, LearnerParams};
use crate::net::{ModelConfig, StageSpec, TrainConfig};
use crate::rng::id_hash;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub manifest: PathBuf,
    pub workdir: PathBuf,
    pub folds: usize,
    pub ratios: SplitRatios,
    pub variants: Vec<EnhancementVariant>,
    pub augment: bool,
    /// `in_channels` is set per variant at training time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub learners: LearnerParams,
    pub meta: ForestParams,
    /// Empty selects the last stage.
    pub cam_layer: String,
    pub cam_target: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            manifest: PathBuf::from("manifest.csv"),
            workdir: PathBuf::from("work"),
            folds: 5,
            ratios: SplitRatios::default(),
            variants: EnhancementVariant::ALL.to_vec(),
            augment: true,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            learners: LearnerParams::default(),
            meta: crate::ensemble::meta_forest_params(),
            cam_layer: String::new(),
            cam_target: 1,
        }
    }
}

impl RunConfig {
    /// Scaled-down network and epoch budget for single-core runs on 64×64 synthetic data.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.model = ModelConfig {
            in_channels: 1,
            image_size: 64,
            stem_channels: 8,
            stages: vec![
                StageSpec { channels: 16, blocks: 1, stride: 2 },
                StageSpec { channels: 24, blocks: 1, stride: 2 },
                StageSpec { channels: 32, blocks: 1, stride: 2 },
            ],
            expansion: 2,
            q: 3,
            block_q: 1,
            dropout: 0.1,
            head_hidden: 0,
        };
        cfg.train.max_epochs = 10;
        cfg
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let l = &self.learners;
        let stages: Vec<String> = m.stages.iter().map(ToString::to_string).collect();
        let variants: Vec<&str> = self.variants.iter().map(|v| v.tag()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("data.manifest", self.manifest.display().to_string());
        kv("data.workdir", self.workdir.display().to_string());
        kv("data.folds", self.folds.to_string());
        kv("data.train_ratio", self.ratios.train.to_string());
        kv("data.val_ratio", self.ratios.val.to_string());
        kv("data.variants", variants.join(","));
        kv("data.augment", self.augment.to_string());
        kv("model.image_size", m.image_size.to_string());
        kv("model.stem_channels", m.stem_channels.to_string());
        kv("model.stages", stages.join(","));
        kv("model.expansion", m.expansion.to_string());
        kv("model.q", m.q.to_string());
        kv("model.block_q", m.block_q.to_string());
        kv("model.dropout", m.dropout.to_string());
        kv("model.head_hidden", m.head_hidden.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.max_epochs", t.max_epochs.to_string());
        kv("train.lr_patience", t.lr_patience.to_string());
        kv("train.stop_patience", t.stop_patience.to_string());
        kv("train.lr_factor", t.lr_factor.to_string());
        kv("train.eval_batch", t.eval_batch.to_string());
        kv("learner.lr_lambda", l.lr_lambda.to_string());
        kv("learner.lr_tol", l.lr_tol.to_string());
        kv("learner.lda_ridge", l.lda_ridge.to_string());
        kv("learner.rf_trees", l.rf.n_trees.to_string());
        kv("learner.rf_depth", l.rf.max_depth.to_string());
        kv("learner.ada_rounds", l.ada_rounds.to_string());
        kv("learner.gb_rounds", l.gb.rounds.to_string());
        kv("learner.gb_depth", l.gb.max_depth.to_string());
        kv("learner.gb_lr", l.gb.learning_rate.to_string());
        kv("learner.xgb_rounds", l.xgb.rounds.to_string());
        kv("learner.xgb_depth", l.xgb.max_depth.to_string());
        kv("learner.xgb_eta", l.xgb.learning_rate.to_string());
        kv("learner.xgb_lambda", l.xgb.lambda.to_string());
        kv("learner.xgb_min_child_weight", l.xgb.min_child_weight.to_string());
        kv("learner.mlp_hidden", l.mlp_hidden.to_string());
        kv("learner.mlp_lr", l.mlp_lr.to_string());
        kv("learner.mlp_epochs", l.mlp_epochs.to_string());
        kv("learner.svm_lambda", l.svm_lambda.to_string());
        kv("learner.svm_epochs", l.svm_epochs.to_string());
        kv("stack.trees", self.meta.n_trees.to_string());
        kv("stack.depth", self.meta.max_depth.to_string());
        kv("cam.layer", self.cam_layer.clone());
        kv("cam.target", self.cam_target.to_string());
        s
    }

    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let bad = |msg: &str| PipelineError::Config(format!("{key}={value}: {msg}"));
        let uint = || value.parse::<usize>().map_err(|_| bad("expected a non-negative integer"));
        let real = || value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("expected a finite number"));
        let m = &mut self.model;
        let t = &mut self.train;
        let l = &mut self.learners;
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an unsigned integer"))?,
            "threads" => self.threads = uint()?,
            "data.manifest" => self.manifest = PathBuf::from(value),
            "data.workdir" => self.workdir = PathBuf::from(value),
            "data.folds" => self.folds = uint()?,
            "data.train_ratio" => self.ratios.train = real()?,
            "data.val_ratio" => self.ratios.val = real()?,
            "data.variants" => {
                self.variants = value
                    .split(',')
                    .map(|s| EnhancementVariant::from_tag(s.trim()).ok_or_else(|| bad(&format!("unknown variant `{s}`"))))
                    .collect::<Result<_, _>>()?
            }
            "data.augment" => self.augment = value.parse().map_err(|_| bad("expected true or false"))?,
            "model.image_size" => m.image_size = uint()?,
            "model.stem_channels" => m.stem_channels = uint()?,
            "model.stages" => {
                m.stages = value.split(',').map(|s| s.trim().parse::<StageSpec>()).collect::<Result<_, _>>().map_err(|e| bad(&e.to_string()))?
            }
            "model.expansion" => m.expansion = uint()?,
            "model.q" => m.q = uint()? as u32,
            "model.block_q" => m.block_q = uint()? as u32,
            "model.dropout" => m.dropout = real()?,
            "model.head_hidden" => m.head_hidden = uint()?,
            "train.lr" => t.lr = real()?,
            "train.batch_size" => t.batch_size = uint()?,
            "train.max_epochs" => t.max_epochs = uint()?,
            "train.lr_patience" => t.lr_patience = uint()?,
            "train.stop_patience" => t.stop_patience = uint()?,
            "train.lr_factor" => t.lr_factor = real()?,
            "train.eval_batch" => t.eval_batch = uint()?,
            "learner.lr_lambda" => l.lr_lambda = real()?,
            "learner.lr_tol" => l.lr_tol = real()?,
            "learner.lda_ridge" => l.lda_ridge = real()?,
            "learner.rf_trees" => l.rf.n_trees = uint()?,
            "learner.rf_depth" => l.rf.max_depth = uint()?,
            "learner.ada_rounds" => l.ada_rounds = uint()?,
            "learner.gb_rounds" => l.gb.rounds = uint()?,
            "learner.gb_depth" => l.gb.max_depth = uint()?,
            "learner.gb_lr" => l.gb.learning_rate = real()?,
            "learner.xgb_rounds" => l.xgb.rounds = uint()?,
            "learner.xgb_depth" => l.xgb.max_depth = uint()?,
            "learner.xgb_eta" => l.xgb.learning_rate = real()?,
            "learner.xgb_lambda" => l.xgb.lambda = real()?,
            "learner.xgb_min_child_weight" => l.xgb.min_child_weight = real()?,
            "learner.mlp_hidden" => l.mlp_hidden = uint()?,
            "learner.mlp_lr" => l.mlp_lr = real()?,
            "learner.mlp_epochs" => l.mlp_epochs = uint()?,
            "learner.svm_lambda" => l.svm_lambda = real()?,
            "learner.svm_epochs" => l.svm_epochs = uint()?,
            "stack.trees" => self.meta.n_trees = uint()?,
            "stack.depth" => self.meta.max_depth = uint()?,
            "cam.layer" => self.cam_layer = value.to_string(),
            "cam.target" => self.cam_target = uint()?,
            _ => return Err(PipelineError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Overlay `key=value` lines (`#` comments and blank lines ignored) on `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: `{line}` is not key=value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.threads == 0 {
            return err("threads: must be at least 1".into());
        }
        if self.folds < 2 {
            return err(format!("data.folds: {} is below 2", self.folds));
        }
        if !(self.ratios.train > 0.0 && self.ratios.val >= 0.0) {
            return err(format!("data.train_ratio/data.val_ratio: {:?} invalid", self.ratios));
        }
        if self.variants.is_empty() {
            return err("data.variants: empty".into());
        }
        if self.cam_target > 1 {
            return err(format!("cam.target: {} is not a class", self.cam_target));
        }
        self.model.validate().map_err(|e| PipelineError::Config(format!("model: {e}")))?;
        let t = &self.train;
        if !(t.lr > 0.0) || t.batch_size == 0 || t.max_epochs == 0 || t.eval_batch == 0 || !(t.lr_factor > 0.0 && t.lr_factor <= 1.0) {
            return err("train: lr, batch_size, max_epochs, eval_batch and lr_factor must be positive (lr_factor ≤ 1)".into());
        }
        Ok(())
    }

    /// 16 hex digits identifying every setting that can change results;
    /// paths and the thread count are left out.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !(l.starts_with("data.manifest=") || l.starts_with("data.workdir=") || l.starts_with("threads=")))
            .map(|l| format!("{l}\n"))
            .collect();
        format!("{:016x}", id_hash(&text))
    }

    /// Provenance lines written at the top of text artifacts.
    pub fn provenance(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.hash()), format!("seed={}", self.seed)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_unknown_keys() {
        let mut cfg = RunConfig::desk();
        cfg.seed = 42;
        cfg.variants = vec![EnhancementVariant::Invert, EnhancementVariant::Gray];
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert!(matches!(RunConfig::from_text("model.bogus=1"), Err(PipelineError::Config(m)) if m.contains("model.bogus")));
        assert!(RunConfig::from_text("train.lr=abc").is_err());
        assert!(RunConfig::from_text("model.q=9").is_err());
    }
}
