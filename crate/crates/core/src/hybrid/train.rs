use std::time::Instant;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fastgrnn::project_sparse;
use crate::rng::RngState;
use crate::tensor::{Mode, Tape, Tensor};

use super::{forward_graph, FeatureScaler, Model, ModelConfig};

/// Smallest validation-loss decrease that resets the patience counter.
const MIN_DELTA: f64 = 1e-5;

/// RNG tags; per-epoch streams keep resumed runs on the same sequence.
const SHUFFLE_TAG: u64 = 1 << 32;
const DROPOUT_TAG: u64 = 2 << 32;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &ModelConfig, params: &[Tensor]) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim("adam", p.shape(), g.shape()));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (x, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *x -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based, counting epochs of earlier runs when resumed.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Last epoch run.
    pub stopped_epoch: usize,
    /// Stopped by patience rather than the epoch limit.
    pub early_stopped: bool,
}

/// Fresh model from `cfg`, input scaler fitted on `train`, then
/// [`train_from`] with no epoch callback.
pub fn train(cfg: &ModelConfig, train: &Dataset, val: &Dataset) -> Result<(Model, TrainReport)> {
    let mut model = Model::init(cfg.clone())?;
    if cfg.standardize {
        model.params.scaler = FeatureScaler::fit(train);
    }
    train_from(model, train, val, 0, |_| {})
}

/// Continues training `model` from `start_epoch` completed epochs until
/// `max_epochs` or until validation loss has not improved by more than
/// 1e-5 for `patience` epochs. Returns the parameters of the epoch with
/// the lowest validation loss.
pub fn train_from(
    mut model: Model,
    train: &Dataset,
    val: &Dataset,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model, TrainReport)> {
    let cfg = model.config.clone();
    cfg.validate()?;
    model.params.check_against(&cfg)?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    for d in [train, val] {
        if d.n_vars() != cfg.n_vars || d.seq_len() != cfg.seq_len {
            return Err(Error::dim(
                "train",
                &[cfg.n_vars, cfg.seq_len],
                &[d.n_vars(), d.seq_len()],
            ));
        }
    }

    let base = RngState::new(cfg.seed);
    let mut adam = Adam::new(&cfg, &model.params.trainable());
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = start_epoch;
    let mut patience_ref = f64::INFINITY;
    let mut waited = 0;
    let mut epochs = Vec::new();
    let mut early_stopped = false;

    for epoch in start_epoch + 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        base.derive(SHUFFLE_TAG + epoch as u64).shuffle(&mut order);
        let mut dropout_rng = base.derive(DROPOUT_TAG + epoch as u64);

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = || Error::Divergence { epoch, batch: b + 1 };
            let mut x = train.batch(chunk)?;
            model.params.scaler.apply(&mut x)?;
            let targets: Vec<f64> = chunk.iter().map(|&i| train.label(i) as f64).collect();

            let mut tape = Tape::new();
            let vars = model.params.register(&mut tape);
            let input = tape.leaf(x);
            let mut bn = model.params.bn_stats();
            let out = forward_graph(
                &mut tape,
                &cfg,
                &vars,
                &mut bn,
                input,
                Mode::Train,
                &mut dropout_rng,
            )?;
            let loss = tape.weighted_bce(out.probs, &targets, cfg.loss_weight)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(diverged());
            }
            tape.backward(loss)?;

            loss_sum += loss_value * chunk.len() as f64;
            correct += count_correct(tape.value(out.probs), &targets);

            let grads: Vec<_> = vars.all().iter().map(|&v| tape.grad(v)).collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged());
            }
            let mut params = model.params.trainable();
            adam.step(&mut params, &grads)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(diverged());
            }
            model.params.set_trainable(&params)?;
            model.params.set_bn_stats(bn);
            if !cfg.sparsity.is_dense() {
                if let Some(g) = &model.params.fastgrnn {
                    model.params.fastgrnn = Some(project_sparse(g, cfg.sparsity)?);
                }
            }
        }

        let (val_loss, val_acc) = evaluate_loss(&model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        epochs.push(stats);

        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best = model.clone();
        }
        if val_loss < patience_ref - MIN_DELTA {
            patience_ref = val_loss;
            waited = 0;
        } else {
            waited += 1;
            if waited >= cfg.patience {
                early_stopped = true;
                break;
            }
        }
    }

    let stopped_epoch = epochs.last().map_or(start_epoch, |e| e.epoch);
    Ok((
        best,
        TrainReport {
            epochs,
            best_epoch,
            best_val_loss: best_loss,
            stopped_epoch,
            early_stopped,
        },
    ))
}

/// Weighted loss and 0.5-threshold accuracy of `model` on `data` in
/// inference mode.
pub fn evaluate_loss(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    let scores = model.predict_dataset(data)?;
    let targets: Vec<f64> = data.labels().iter().map(|&l| l as f64).collect();
    let probs = Tensor::new(
        &[scores.len(), 2],
        scores.iter().flat_map(|&p| [1.0 - p, p]).collect(),
    )?;
    let loss = super::weighted_cross_entropy(&probs, &targets, model.config.loss_weight)?;
    let acc = count_correct(&probs, &targets) as f64 / data.len() as f64;
    Ok((loss, acc))
}

fn count_correct(probs: &Tensor, targets: &[f64]) -> usize {
    let cols = probs.shape()[1];
    probs
        .data()
        .chunks(cols)
        .zip(targets)
        .filter(|(row, &t)| (row[1] > 0.5) == (t > 0.5))
        .count()
}
