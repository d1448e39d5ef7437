use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::adapt::probe_encoder;
use crate::data::MultitaskDataset;
use crate::encoders::SuiteSpec;
use crate::error::{Error, Result};
use crate::nn::{adam_step_all, clip_global_norm, FlushDenormals, Parameterized, Scalar};
use crate::sampler::{Prefetcher, TransitionBatch};

use super::checkpoint::{save_checkpoint, Checkpoint, METRIC_TAIL};
use super::config::{MetricRecord, PretrainConfig};
use super::objective::{objective, ModelSpec, PretrainModel};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PROBE_FILE: &str = "probe.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

/// The pretraining loop. Owns the model; batches are drawn from a stream keyed
/// by (seed, step), so a resumed trainer continues the exact same sequence.
pub struct Pretrainer<T> {
    config: PretrainConfig,
    model: PretrainModel<T>,
    dataset: Arc<MultitaskDataset>,
    step: u64,
    metrics: Vec<MetricRecord>,
}

fn check_dataset(config: &PretrainConfig, dataset: &MultitaskDataset) -> Result<()> {
    let need = config.sample_k() + 2;
    if dataset.min_episode_len() < need {
        return Err(Error::Dataset(format!(
            "shortest episode has {} steps; K={} needs at least {need}",
            dataset.min_episode_len(),
            config.sample_k()
        )));
    }
    Ok(())
}

impl<T: Scalar> Pretrainer<T> {
    pub fn new(config: PretrainConfig, dataset: Arc<MultitaskDataset>) -> Result<Self> {
        config.validate()?;
        check_dataset(&config, &dataset)?;
        let suite = SuiteSpec::new(dataset.obs_kind(), dataset.action_dim(), config.k, &config.encoder)?;
        let model = PretrainModel::new(ModelSpec::new(suite, config.variant, &config.encoder), config.seed)?;
        Ok(Pretrainer {
            config,
            model,
            dataset,
            step: 0,
            metrics: Vec::new(),
        })
    }

    /// Continues from a checkpoint written for the same dataset.
    pub fn resume(ckpt: Checkpoint<T>, dataset: Arc<MultitaskDataset>) -> Result<Self> {
        if ckpt.dataset_fingerprint != dataset.fingerprint() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on dataset {} but this dataset is {}",
                ckpt.dataset_fingerprint,
                dataset.fingerprint()
            )));
        }
        check_dataset(&ckpt.config, &dataset)?;
        if ckpt.model.suite.spec.obs_kind != dataset.obs_kind() {
            return Err(Error::config("checkpoint encoder does not match the dataset observations"));
        }
        Ok(Pretrainer {
            config: ckpt.config,
            model: ckpt.model,
            dataset,
            step: ckpt.step,
            metrics: ckpt.metric_tail,
        })
    }

    pub fn config(&self) -> &PretrainConfig {
        &self.config
    }

    pub fn model(&self) -> &PretrainModel<T> {
        &self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn metrics(&self) -> &[MetricRecord] {
        &self.metrics
    }

    pub fn dataset(&self) -> &MultitaskDataset {
        &self.dataset
    }

    pub fn batch(&self, step: u64) -> Result<TransitionBatch<T>> {
        self.config.batch_plan().batch(&self.dataset, step)
    }

    /// Loss of the current model on the batch of `step`, without updating.
    pub fn eval_loss(&mut self, step: u64) -> Result<f64> {
        let batch = self.batch(step)?;
        Ok(objective(&mut self.model, &batch, self.config.variant, self.config.temperature, false)?.loss)
    }

    fn apply(&mut self, batch: &TransitionBatch<T>) -> Result<MetricRecord> {
        let start = Instant::now();
        let _fp = FlushDenormals::enable();
        self.model.zero_grads();
        let stats = objective(&mut self.model, batch, self.config.variant, self.config.temperature, true)?;
        let grad_norm = match self.config.grad_clip {
            Some(c) => clip_global_norm(&mut self.model, c),
            None => self.model.grad_norm(),
        };
        if !grad_norm.is_finite() {
            return Err(Error::Training(format!("non-finite gradient norm at step {}", self.step)));
        }
        adam_step_all(&mut self.model, &self.config.adam())?;
        let rec = MetricRecord {
            step: self.step,
            loss: stats.loss,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.step += 1;
        self.metrics.push(rec);
        Ok(rec)
    }

    /// One optimizer step. On error the parameters are left unchanged.
    pub fn step_once(&mut self) -> Result<MetricRecord> {
        let batch = self.batch(self.step)?;
        self.apply(&batch)
    }

    /// Trains until `target` steps, calling `sink` after every step.
    pub fn run_until(
        &mut self,
        target: u64,
        mut sink: impl FnMut(&Self, &MetricRecord) -> Result<()>,
    ) -> Result<()> {
        if self.step >= target {
            return Ok(());
        }
        if self.config.prefetch {
            let mut pf = Prefetcher::<T>::spawn(self.dataset.clone(), self.config.batch_plan(), self.step..target, 2);
            while self.step < target {
                let batch = pf.next(self.step)?;
                let rec = self.apply(&batch)?;
                sink(self, &rec)?;
            }
        } else {
            while self.step < target {
                let rec = self.step_once()?;
                sink(self, &rec)?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        let tail = self.metrics.len().saturating_sub(METRIC_TAIL);
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            step: self.step,
            dataset_fingerprint: self.dataset.fingerprint(),
            metric_tail: self.metrics[tail..].to_vec(),
        }
    }

    pub fn into_checkpoint(self) -> Checkpoint<T> {
        self.checkpoint()
    }
}

/// Runs `config.steps` steps in memory.
pub fn pretrain<T: Scalar>(config: &PretrainConfig, dataset: Arc<MultitaskDataset>) -> Result<Checkpoint<T>> {
    let mut t = Pretrainer::<T>::new(config.clone(), dataset)?;
    t.run_until(config.steps, |_, _| Ok(()))?;
    Ok(t.into_checkpoint())
}

/// Output locations and optional probe set of [`pretrain_to_dir`].
pub struct RunOutputs<'a> {
    pub dir: &'a Path,
    /// Held-out episodes with latents, probed every `eval_probe_every` steps.
    pub probe: Option<&'a MultitaskDataset>,
}

fn append_json<S: serde::Serialize>(w: &mut BufWriter<File>, rec: &S, path: &Path) -> Result<()> {
    let line = serde_json::to_string(rec).map_err(|e| Error::Internal(e.to_string()))?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

/// Trains with metrics, periodic checkpoints and (optionally) probes written
/// under `out.dir`. Logs are appended to when resuming and replaced
/// otherwise. When a step fails numerically the last good parameters
/// are saved as `last_good.ckpt` before the error is returned.
pub fn pretrain_to_dir<T: Scalar>(trainer: &mut Pretrainer<T>, target: u64, out: RunOutputs<'_>) -> Result<Checkpoint<T>> {
    fs::create_dir_all(out.dir).map_err(|e| Error::io(out.dir, e))?;
    let metrics_path = out.dir.join(METRICS_FILE);
    let fresh = trainer.step() == 0;
    let open = |p: &Path| {
        OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(fresh)
            .append(!fresh)
            .open(p)
            .map(BufWriter::new)
            .map_err(|e| Error::io(p, e))
    };
    let mut metrics = open(&metrics_path)?;
    let probe_path = out.dir.join(PROBE_FILE);
    let mut probes = match out.probe {
        Some(_) if trainer.config().eval_probe_every > 0 => Some(open(&probe_path)?),
        _ => None,
    };
    let every_ckpt = trainer.config().checkpoint_every;
    let every_probe = trainer.config().eval_probe_every;
    let result = trainer.run_until(target, |t, rec| {
        append_json(&mut metrics, rec, &metrics_path)?;
        let done = rec.step + 1;
        if every_ckpt > 0 && done % every_ckpt == 0 {
            save_checkpoint(&t.checkpoint(), &out.dir.join(format!("step_{done:08}.ckpt")))?;
        }
        if let (Some(w), Some(ds)) = (probes.as_mut(), out.probe) {
            if done % every_probe == 0 {
                let r2 = probe_encoder(&t.model().suite, ds, t.config().seed)?;
                append_json(w, &serde_json::json!({ "step": done, "probe_r2": r2 }), &probe_path)?;
            }
        }
        Ok(())
    });
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    if let Some(w) = probes.as_mut() {
        w.flush().map_err(|e| Error::io(&probe_path, e))?;
    }
    match result {
        Ok(()) => {
            let ckpt = trainer.checkpoint();
            save_checkpoint(&ckpt, &out.dir.join(FINAL_CHECKPOINT))?;
            Ok(ckpt)
        }
        Err(e) => {
            save_checkpoint(&trainer.checkpoint(), &out.dir.join(LAST_GOOD_CHECKPOINT))?;
            Err(e)
        }
    }
}
