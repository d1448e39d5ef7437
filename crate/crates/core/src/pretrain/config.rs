use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::nn::{AdamConfig, DType};
use crate::sampler::BatchPlan;

use super::objective::negative_mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Action horizon `K`.
    pub k: usize,
    /// Negative window half-width `W`.
    pub w: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
    pub dtype: DType,
    pub variant: LossVariant,
    pub temperature: f64,
    /// Probe the encoder every this many steps when a probe set is given
    /// (0 disables).
    pub eval_probe_every: u64,
    /// Write a checkpoint every this many steps when an output directory is
    /// given (0 writes only the final one).
    pub checkpoint_every: u64,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Sample batches on a background thread. Batches are keyed by step, so
    /// results are unchanged.
    pub prefetch: bool,
    pub encoder: EncoderConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            k: 3,
            w: 5,
            batch_size: 256,
            steps: 5000,
            lr: 1e-4,
            seed: 0,
            dtype: DType::F32,
            variant: LossVariant::PremierTaco,
            temperature: 1.0,
            eval_probe_every: 0,
            checkpoint_every: 1000,
            grad_clip: None,
            prefetch: false,
            encoder: EncoderConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.w == 0 {
            return Err(Error::config(format!("K and W must be >= 1 (K={}, W={})", self.k, self.w)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.variant == LossVariant::TacoBatch && self.batch_size < 2 {
            return Err(Error::config("taco_batch needs batch_size >= 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Horizon used by the sampler: the inverse-dynamics baseline pairs each
    /// state with its immediate successor.
    pub fn sample_k(&self) -> usize {
        if self.variant == LossVariant::InverseDynamics {
            1
        } else {
            self.k
        }
    }

    pub fn batch_plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch_size,
            k: self.sample_k(),
            w: self.w,
            mode: negative_mode(self.variant),
            seed: self.seed,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}
