use thiserror::Error;

use super::model::{ForwardMode, Model};
use super::config::NUM_CLASSES;
use super::NetError;
use crate::dataset::batch_iter;
use crate::rng::stream;
use crate::tensor::{AdamConfig, AdamState, Graph, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Non-improving epochs before the learning rate is multiplied by `lr_factor`.
    pub lr_patience: usize,
    /// Non-improving epochs before training stops.
    pub stop_patience: usize,
    pub lr_factor: f64,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch_size: 8, max_epochs: 50, lr_patience: 6, stop_patience: 20, lr_factor: 0.5, eval_batch: 32, seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: loss {loss} at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        Self::Net(e.into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauAction {
    Improved,
    Wait,
    ReduceLr,
    Stop,
}

/// Validation-loss bookkeeping for learning-rate decay and early stopping.
/// Both counters restart on improvement; the decay counter also restarts
/// after each decay.
#[derive(Clone, Debug)]
pub struct PlateauTracker {
    lr_patience: usize,
    stop_patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
    since_reduce: usize,
}

impl PlateauTracker {
    pub fn new(lr_patience: usize, stop_patience: usize) -> Self {
        Self { lr_patience, stop_patience, best: f64::INFINITY, best_epoch: 0, since_best: 0, since_reduce: 0 }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> PlateauAction {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            self.since_reduce = 0;
            return PlateauAction::Improved;
        }
        self.since_best += 1;
        self.since_reduce += 1;
        if self.since_best >= self.stop_patience {
            PlateauAction::Stop
        } else if self.since_reduce >= self.lr_patience {
            self.since_reduce = 0;
            PlateauAction::ReduceLr
        } else {
            PlateauAction::Wait
        }
    }
}

pub struct TrainOutcome<T: Scalar> {
    /// Weights from the epoch with the lowest validation loss.
    pub best: Model<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

fn check_set<T: Scalar>(name: &'static str, images: &[Tensor<T>], labels: &[usize]) -> Result<(), TrainError> {
    if images.is_empty() {
        return Err(TrainError::EmptySet(name));
    }
    if images.len() != labels.len() {
        return Err(TrainError::Input(format!("{name}: {} images but {} labels", images.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(TrainError::Input(format!("{name}: label {l} is not a class index")));
    }
    Ok(())
}

fn stack<T: Scalar>(images: &[Tensor<T>], idx: &[usize]) -> Result<Tensor<T>, TrainError> {
    let items: Vec<Tensor<T>> = idx.iter().map(|&i| images[i].clone()).collect();
    Ok(Tensor::stack_batch(&items)?)
}

/// Mean cross-entropy and accuracy in eval mode.
pub fn evaluate<T: Scalar>(model: &Model<T>, images: &[Tensor<T>], labels: &[usize], batch: usize) -> Result<(f64, f64), TrainError> {
    let (mut loss, mut correct) = (0.0, 0usize);
    for (chunk, lab) in images.chunks(batch.max(1)).zip(labels.chunks(batch.max(1))) {
        let logits = model.logits(&Tensor::stack_batch(chunk)?)?;
        for (row, &t) in logits.data().chunks(NUM_CLASSES).zip(lab) {
            let z: Vec<f64> = row.iter().map(|&v| Scalar::to_f64(v)).collect();
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - z[t];
            let pred = usize::from(z[1] > z[0]);
            correct += usize::from(pred == t);
        }
    }
    Ok((loss / images.len() as f64, correct as f64 / images.len() as f64))
}

/// Adam on mini-batches with plateau-based decay and early stopping; keeps the
/// weights from the best validation epoch. Deterministic for a given seed:
/// batch order comes from `(seed, epoch)` and dropout masks from the
/// `(seed, "dropout", epoch)` stream.
pub fn train_model<T: Scalar>(
    mut model: Model<T>,
    train: (&[Tensor<T>], &[usize]),
    val: (&[Tensor<T>], &[usize]),
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    check_set("train", train.0, train.1)?;
    check_set("validation", val.0, val.1)?;
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(TrainError::Input("batch size and epoch budget must be positive".into()));
    }
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, model.params.values());
    let mut tracker = PlateauTracker::new(cfg.lr_patience, cfg.stop_patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut lr = cfg.lr;
    let mut stopped_early = false;
    let order: Vec<usize> = (0..train.0.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = stream(cfg.seed, "dropout", epoch as u64);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, idx) in batch_iter(&order, cfg.batch_size, cfg.seed, epoch as u64).map_err(|e| TrainError::Input(e.to_string()))?.enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| train.1[i]).collect();
            let mut g = Graph::new();
            let x = g.input(stack(train.0, &idx)?);
            let out = model.forward(&mut g, x, ForwardMode::Train(&mut rng))?;
            let loss = g.softmax_cross_entropy(out.logits, &labels)?;
            let lv = Scalar::to_f64(g.value(loss)?.item());
            if !lv.is_finite() {
                return Err(TrainError::Divergence { epoch, batch: bi, loss: lv });
            }
            loss_sum += lv * idx.len() as f64;
            let logits = g.value(out.logits)?;
            correct += logits.data().chunks(NUM_CLASSES).zip(&labels).filter(|(z, &t)| usize::from(z[1] > z[0]) == t).count();
            g.backward(loss)?;
            let grads: Vec<Tensor<T>> = out.param_vars.iter().map(|&v| g.grad(v)).collect::<Result<_, _>>()?;
            let grad_refs: Vec<&Tensor<T>> = grads.iter().collect();
            let mut params: Vec<&mut Tensor<T>> = model.params.values_mut().iter_mut().collect();
            adam.step(&mut params, &grad_refs)?;
            model.apply_bn_updates(&out.bn_updates);
        }
        let n = train.0.len() as f64;
        let (val_loss, val_acc) = evaluate(&model, val.0, val.1, cfg.eval_batch)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Divergence { epoch, batch: usize::MAX, loss: val_loss });
        }
        let rec = EpochRecord { epoch, lr, train_loss: loss_sum / n, train_acc: correct as f64 / n, val_loss, val_acc };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} train loss {:.4} acc {:.4} | val loss {val_loss:.4} acc {val_acc:.4}",
            rec.train_loss,
            rec.train_acc
        );
        history.push(rec);
        match tracker.observe(epoch, val_loss) {
            PlateauAction::Improved => best = model.clone(),
            PlateauAction::Wait => {}
            PlateauAction::ReduceLr => {
                lr *= cfg.lr_factor;
                adam.set_lr(lr);
            }
            PlateauAction::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome { best, best_epoch: tracker.best_epoch(), history, stopped_early })
}
