use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{ForwardMode, SurrogateModel};
use super::{adam_step, AdamConfig, AdamState, Real};
use crate::rng::{derive_seed, substream, Stream};
use crate::{Error, Result};

/// Staged learning-rate schedule: weights carry over between stages, Adam
/// moments restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub learning_rates: Vec<f64>,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl TrainingSchedule {
    pub fn paper(seed: u64) -> Self {
        TrainingSchedule {
            learning_rates: vec![1e-3, 1e-4, 1e-4, 1e-5],
            epochs_per_stage: 150,
            batch_size: 32,
            seed,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn desk(seed: u64) -> Self {
        TrainingSchedule { learning_rates: vec![1e-3], epochs_per_stage: 50, ..Self::paper(seed) }
    }

    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(seed)),
            "desk" => Ok(Self::desk(seed)),
            other => Err(Error::config(format!("unknown schedule '{other}' (expected paper or desk)"))),
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.learning_rates.len() * self.epochs_per_stage
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.epochs_per_stage == 0 || self.batch_size == 0 {
            return Err(Error::config("schedule needs stages, epochs and a batch size"));
        }
        if self.learning_rates.iter().any(|&lr| !(lr >= 0.0 && lr.is_finite())) {
            return Err(Error::config("learning rates must be finite and non-negative"));
        }
        Ok(())
    }

    fn adam(&self, stage: usize) -> AdamConfig {
        AdamConfig { lr: self.learning_rates[stage], beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

/// Row-major `rows × input` features with `rows × output` targets.
#[derive(Clone, Copy, Debug)]
pub struct TensorView<'a, T> {
    pub x: &'a [T],
    pub y: &'a [T],
    pub rows: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Training-set RMSE of the initial weights.
    pub initial_train_rmse: f64,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_train_rmse(&self) -> f64 {
        self.epochs.last().map_or(self.initial_train_rmse, |e| e.train_rmse)
    }

    pub fn final_val_rmse(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_rmse)
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_trajectory(&self, other: &History) -> bool {
        self.initial_train_rmse.to_bits() == other.initial_train_rmse.to_bits()
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.stage == b.stage
                    && a.epoch == b.epoch
                    && a.train_rmse.to_bits() == b.train_rmse.to_bits()
                    && a.val_rmse.map(f64::to_bits) == b.val_rmse.map(f64::to_bits)
            })
    }
}

const EVAL_CHUNK: usize = 512;

/// Inference over `x` in fixed-size chunks.
pub fn predict<T: Real>(model: &SurrogateModel<T>, x: &[T], rows: usize) -> Result<Vec<T>> {
    let width = model.input_size();
    if x.len() != rows * width {
        return Err(Error::shape(format!("{} values for {rows} rows of {width}", x.len())));
    }
    let mut out = Vec::with_capacity(rows * model.output_size());
    for start in (0..rows).step_by(EVAL_CHUNK) {
        let n = EVAL_CHUNK.min(rows - start);
        out.extend(model.forward(&x[start * width..(start + n) * width], n, ForwardMode::Inference)?);
    }
    Ok(out)
}

pub fn evaluate_rmse<T: Real>(model: &SurrogateModel<T>, data: TensorView<'_, T>) -> Result<f64> {
    let pred = predict(model, data.x, data.rows)?;
    if pred.len() != data.y.len() {
        return Err(Error::shape("target width does not match model output"));
    }
    let sse: f64 = pred
        .iter()
        .zip(data.y)
        .map(|(&p, &t)| {
            let r = (p - t).to_f64().unwrap_or(f64::NAN);
            r * r
        })
        .sum();
    Ok((sse / pred.len() as f64).sqrt())
}

fn check_view<T: Real>(model: &SurrogateModel<T>, v: &TensorView<'_, T>, what: &str) -> Result<()> {
    if v.rows == 0 {
        return Err(Error::config(format!("{what} set is empty")));
    }
    if v.x.len() != v.rows * model.input_size() || v.y.len() != v.rows * model.output_size() {
        return Err(Error::shape(format!("{what} set does not match the model dimensions")));
    }
    Ok(())
}

/// Mini-batch Adam over every stage of `schedule`. Batch order is reshuffled
/// each epoch from `(seed, stage, epoch)`; dropout masks come from
/// `(seed, stage, epoch, batch)`.
pub fn train<T: Real>(
    model: &mut SurrogateModel<T>,
    train_set: TensorView<'_, T>,
    val_set: Option<TensorView<'_, T>>,
    schedule: &TrainingSchedule,
) -> Result<History> {
    schedule.validate()?;
    check_view(model, &train_set, "training")?;
    if let Some(v) = &val_set {
        check_view(model, v, "validation")?;
    }
    let (in_w, out_w) = (model.input_size(), model.output_size());
    let initial = evaluate_rmse(model, train_set)?;
    if !initial.is_finite() {
        return Err(Error::Diverged { stage: 0, epoch: 0, loss: initial });
    }
    let mut history = History { initial_train_rmse: initial, epochs: Vec::with_capacity(schedule.total_epochs()) };
    let mut order: Vec<usize> = (0..train_set.rows).collect();
    let mut bx = Vec::with_capacity(schedule.batch_size * in_w);
    let mut by = Vec::with_capacity(schedule.batch_size * out_w);
    let clock = Instant::now();

    for stage in 0..schedule.learning_rates.len() {
        let mut adam = AdamState::new(schedule.adam(stage), model.param_count());
        for epoch in 0..schedule.epochs_per_stage {
            order.sort_unstable();
            order.shuffle(&mut substream(schedule.seed, Stream::Shuffle, &[stage as u64, epoch as u64]));
            for (b, batch) in order.chunks(schedule.batch_size).enumerate() {
                bx.clear();
                by.clear();
                for &i in batch {
                    bx.extend_from_slice(&train_set.x[i * in_w..(i + 1) * in_w]);
                    by.extend_from_slice(&train_set.y[i * out_w..(i + 1) * out_w]);
                }
                let dropout_seed = derive_seed(schedule.seed, Stream::Dropout, &[stage as u64, epoch as u64, b as u64]);
                let (loss, grads) =
                    model.loss_and_gradients(&bx, &by, batch.len(), ForwardMode::Training { dropout_seed })?;
                if !loss.mse.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged { stage, epoch, loss: loss.rmse });
                }
                adam_step(model.params_mut(), &grads, &mut adam)?;
            }
            let train_rmse = evaluate_rmse(model, train_set)?;
            let val_rmse = val_set.map(|v| evaluate_rmse(model, v)).transpose()?;
            if !train_rmse.is_finite() || val_rmse.is_some_and(|v| !v.is_finite()) {
                return Err(Error::Diverged { stage, epoch, loss: train_rmse });
            }
            log::debug!("stage {stage} epoch {epoch}: train rmse {train_rmse:.5}");
            history.epochs.push(EpochRecord {
                stage,
                epoch,
                train_rmse,
                val_rmse,
                wall_seconds: clock.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(history)
}

/// `stage,epoch,train_rmse,val_rmse,wall_seconds`; a missing validation value
/// is left empty.
pub fn write_history_csv<W: Write>(out: W, history: &History) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "epoch", "train_rmse", "val_rmse", "wall_seconds"])?;
    for e in &history.epochs {
        w.write_record([
            e.stage.to_string(),
            e.epoch.to_string(),
            e.train_rmse.to_string(),
            e.val_rmse.map(|v| v.to_string()).unwrap_or_default(),
            e.wall_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
