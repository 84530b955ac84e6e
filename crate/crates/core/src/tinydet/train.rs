use std::io::Write;

use serde::{Deserialize, Serialize};

use super::net;
use super::{DetError, DetectorConfig, Result};
use crate::exec::Execution;
use crate::params::{ParamSet, Rng};
use crate::synthdata::Sample;

/// Mean per-image loss of every epoch, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epoch_losses: Vec<f64>,
}

impl TrainStats {
    /// One `{"epoch": e, "mean_loss": l}` object per line, epochs counted from 1.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            let line = serde_json::json!({ "epoch": i + 1, "mean_loss": loss });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Summed loss and summed gradient (f64) of the samples at `batch`, computed
/// per sample under `exec` and reduced in index order.
pub fn batch_gradient(
    cfg: &DetectorConfig,
    w: &[f32],
    samples: &[Sample],
    batch: &[usize],
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    let per_sample = exec.map(batch, |&i| {
        let s = &samples[i];
        net::loss_and_grad::<f32>(cfg, w, &s.image.data, &s.boxes)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; w.len()];
    for r in per_sample {
        let (l, g) = r?;
        loss += l as f64;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += *v as f64;
        }
    }
    Ok((loss, grad))
}

/// Local training with the default execution strategy.
pub fn train_local(
    init: &ParamSet,
    data: &[Sample],
    cfg: &DetectorConfig,
    epochs: usize,
    rng: &mut Rng,
) -> Result<(ParamSet, TrainStats)> {
    train_local_with(init, data, cfg, epochs, rng, Execution::default())
}

/// Mini-batch SGD with momentum (`v = μv + g; w -= lr·v`, `g` the batch-mean
/// gradient). The sample order is reshuffled from `rng` every epoch; the
/// momentum buffer starts at zero on every call.
pub fn train_local_with(
    init: &ParamSet,
    data: &[Sample],
    cfg: &DetectorConfig,
    epochs: usize,
    rng: &mut Rng,
    exec: Execution,
) -> Result<(ParamSet, TrainStats)> {
    cfg.validate()?;
    cfg.check_params(init)?;
    if data.is_empty() {
        return Err(DetError::EmptyDataset);
    }
    let mut w = init.to_flat();
    let mut velocity = vec![0.0f64; w.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = TrainStats::default();

    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = batch_gradient(cfg, &w, data, batch, exec)?;
            epoch_loss += loss;
            let inv = 1.0 / batch.len() as f64;
            for ((wi, vi), gi) in w.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *vi = cfg.momentum * *vi + gi * inv;
                *wi = (*wi as f64 - cfg.learning_rate * *vi) as f32;
            }
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(DetError::Diverged { epoch: epoch + 1 });
        }
        log::debug!("epoch {} loss {mean:.5}", epoch + 1);
        stats.epoch_losses.push(mean);
    }
    Ok((init.with_flat(&w)?, stats))
}
