//! Adam, gradient clipping and the epoch loop with early stopping.

use crate::bench::metrics::{MetricSums, Metrics};
use crate::data::{downsample, Dataset, MaskMode, MaskSpec, Split, Windows};
use crate::error::{Error, Result};
use crate::model::{adapt_imputation, adapt_superres, imputation_loss_mask, AdaWaveNet, KvConfig, ModelConfig, Task};
use crate::params::{NamedGrads, Parameterized};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// A model the training loop can drive.
pub trait Trainable: Parameterized + Clone {
    fn config(&self) -> &ModelConfig;

    fn predict(&self, x: &Tensor) -> Result<Tensor>;

    fn loss_and_grads(&self, x: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<(f64, NamedGrads)>;

    /// One-off setup on `[S, C, L]` training inputs before the first step.
    fn prepare(&mut self, _train_inputs: &Tensor) -> Result<()> {
        Ok(())
    }
}

impl Trainable for AdaWaveNet {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    fn loss_and_grads(&self, x: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<(f64, NamedGrads)> {
        AdaWaveNet::loss_and_grads(self, x, target, mask)
    }

    fn prepare(&mut self, train_inputs: &Tensor) -> Result<()> {
        self.fit_clustering(train_inputs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Required for imputation.
    pub mask: Option<MaskSpec>,
    /// Let validation/test inputs start before their split.
    pub reach_back: bool,
    /// Cap on optimizer steps per epoch.
    pub max_steps_per_epoch: Option<usize>,
    /// Training windows sampled for the channel clustering.
    pub cluster_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 30,
            patience: 3,
            clip_norm: Some(5.0),
            seed: 0,
            mask: None,
            reach_back: true,
            max_steps_per_epoch: None,
            cluster_samples: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.cluster_samples == 0 {
            return Err(Error::Config("batch_size, patience and cluster_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &mut KvConfig) -> Result<Self> {
        let d = TrainConfig::default();
        let clip: f64 = kv.take_or("clip_norm", d.clip_norm.unwrap_or(0.0))?;
        let mask_mode: Option<MaskMode> = kv.take_opt("mask_mode")?;
        let mask_ratio: f64 = kv.take_or("mask_ratio", 0.25)?;
        let seed = kv.take_or("train_seed", d.seed)?;
        let cfg = TrainConfig {
            lr: kv.take_or("lr", d.lr)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            max_epochs: kv.take_or("max_epochs", d.max_epochs)?,
            patience: kv.take_or("patience", d.patience)?,
            clip_norm: (clip > 0.0).then_some(clip),
            mask: mask_mode.map(|mode| MaskSpec {
                mode,
                ratio: mask_ratio,
                seed,
            }),
            reach_back: kv.take_or("reach_back", d.reach_back)?,
            max_steps_per_epoch: kv.take_opt("max_steps_per_epoch")?,
            cluster_samples: kv.take_or("cluster_samples", d.cluster_samples)?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("lr".to_string(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("clip_norm".into(), self.clip_norm.unwrap_or(0.0).to_string()),
            ("train_seed".into(), self.seed.to_string()),
            ("reach_back".into(), self.reach_back.to_string()),
            ("cluster_samples".into(), self.cluster_samples.to_string()),
        ];
        if let Some(m) = &self.mask {
            out.push(("mask_mode".into(), m.mode.to_string()));
            out.push(("mask_ratio".into(), m.ratio.to_string()));
        }
        if let Some(s) = self.max_steps_per_epoch {
            out.push(("max_steps_per_epoch".into(), s.to_string()));
        }
        out
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Update every parameter that has a gradient; the others are untouched.
    pub fn step(&mut self, params: &mut impl Parameterized, grads: &NamedGrads) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut err = None;
        let moments = &mut self.moments;
        params.visit_params_mut(&mut |name, p| {
            let Some(g) = grads.get(name) else { return };
            if g.shape() != p.shape() {
                err.get_or_insert(Error::shape(
                    "adam",
                    format!("gradient {:?} for `{name}` of shape {:?}", g.shape(), p.shape()),
                ));
                return;
            }
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; p.numel()], vec![0.0; p.numel()]));
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        err.map_or(Ok(()), Err)
    }
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut NamedGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Model input, target and loss mask for one batch.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub input: Tensor,
    pub target: Tensor,
    /// Positions that count toward loss and metrics; `None` means all.
    pub loss_mask: Option<Tensor>,
    /// Observation mask handed to the imputation adapter.
    pub observed: Option<Tensor>,
}

/// Apply the task adapter to windows `ids`.
pub fn prepare_batch(
    config: &ModelConfig,
    data: &Dataset,
    windows: &Windows,
    ids: &[usize],
    mask: Option<&MaskSpec>,
) -> Result<PreparedBatch> {
    let (x, target) = data.batch(windows, ids)?;
    match config.task {
        Task::Forecast => Ok(PreparedBatch {
            input: x,
            target,
            loss_mask: None,
            observed: None,
        }),
        Task::Impute => {
            let spec = mask.ok_or_else(|| Error::Config("imputation needs a mask (mask_mode, mask_ratio)".into()))?;
            let starts: Vec<usize> = ids.iter().map(|&i| windows.starts[i]).collect();
            let observed = spec.make_batch(config.channels, config.input_len, &starts)?;
            Ok(PreparedBatch {
                input: adapt_imputation(&x, &observed)?,
                target,
                loss_mask: imputation_loss_mask(&observed)?,
                observed: Some(observed),
            })
        }
        Task::SuperRes => {
            let low = downsample(&x, config.sr_ratio)?;
            Ok(PreparedBatch {
                input: adapt_superres(&low, config.sr_ratio)?,
                target,
                loss_mask: None,
                observed: None,
            })
        }
    }
}

pub fn split_windows(config: &ModelConfig, data: &Dataset, split: Split, reach_back: bool) -> Result<Windows> {
    if data.num_channels() != config.channels {
        return Err(Error::Data(format!(
            "model expects {} channels, data has {}",
            config.channels,
            data.num_channels()
        )));
    }
    data.windows(split, config.input_len, config.horizon, config.task, reach_back && split != Split::Train)
}

const EVAL_BATCH: usize = 64;

/// Metrics over every window of `split` (hidden positions only for imputation).
pub fn evaluate<M: Trainable>(model: &M, data: &Dataset, split: Split, cfg: &TrainConfig) -> Result<Metrics> {
    let windows = split_windows(model.config(), data, split, cfg.reach_back)?;
    let ids: Vec<usize> = (0..windows.len()).collect();
    let mut sums = MetricSums::default();
    for chunk in ids.chunks(EVAL_BATCH) {
        let b = prepare_batch(model.config(), data, &windows, chunk, cfg.mask.as_ref())?;
        let pred = model.predict(&b.input)?;
        sums.add(&pred, &b.target, b.loss_mask.as_ref())?;
    }
    sums.finish()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
}

/// Evenly spaced indices, at most `n` of them.
fn spread(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    (0..n).map(|i| i * len / n).collect()
}

/// Minimize the task loss on the training windows, validate after every
/// epoch, stop after `patience` epochs without improvement and restore the
/// best parameters.
pub fn train<M: Trainable>(model: &mut M, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let config = model.config().clone();
    let train_w = split_windows(&config, data, Split::Train, cfg.reach_back)?;
    // Fail early if validation windows cannot be formed.
    split_windows(&config, data, Split::Val, cfg.reach_back)?;

    let sample = spread(train_w.len(), cfg.cluster_samples);
    let (inputs, _) = data.batch(&train_w, &sample)?;
    model.prepare(&inputs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, M)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_w.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, ids) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps_per_epoch.is_some_and(|m| step >= m) {
                break;
            }
            let b = prepare_batch(&config, data, &train_w, ids, cfg.mask.as_ref())?;
            let (loss, mut grads) = model.loss_and_grads(&b.input, &b.target, b.loss_mask.as_ref())?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss is {loss} at epoch {epoch}, step {step}")));
            }
            if let Some(name) = grads.first_non_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of `{name}` is not finite at epoch {epoch}, step {step}"
                )));
            }
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.step(model, &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        let val = evaluate(model, data, Split::Val, cfg)?.mse;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_loss: val,
            lr: cfg.lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6} ({:.1}s)",
            entry.train_loss,
            entry.val_loss,
            entry.seconds
        );
        history.push(entry);
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("validation loss is {val} at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
            best = Some((val, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (best_val_loss, best_epoch) = match best {
        Some((v, e, m)) => {
            *model = m;
            (v, e)
        }
        None => (f64::NAN, 0),
    };
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_loss,
        steps: adam.step,
    })
}

/// CSV with columns `epoch,train_loss,val_loss,lr,seconds`.
pub fn write_log_csv(path: &Path, history: &[EpochLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_loss,lr,seconds")?;
    for e in history {
        writeln!(f, "{},{},{},{},{:.3}", e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds)?;
    }
    f.flush()?;
    Ok(())
}
