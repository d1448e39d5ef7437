//! Few-shot behavior cloning on a held-out task.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Episode, ObsKind, TaskSpec};
use crate::encoders::{normalize_obs, state_encoder_spec, EncoderConfig, EncoderSuite};
use crate::error::{Error, Result};
use crate::losses::mse;
use crate::nn::rng::{derive_seed, label_id, rng_for, Rng};
use crate::nn::{adam_step, Activation, AdamConfig, FlushDenormals, NdArray, NetSpec, ParamStore, Parameterized, Scalar};

use super::eval::{best3, evaluate_against, expert_mean_return, BatchPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    /// Demonstrations used per task (default: every available demo).
    pub demos: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub steps: u64,
    /// Evaluate every this many steps (0 disables evaluation).
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub finetune_encoder: bool,
    /// Pad-and-crop translation of pixel observations.
    pub augment_random_shift: bool,
    pub shift_pad: usize,
    pub policy_hidden: usize,
    pub seed: u64,
    /// Encoder widths used when learning from scratch.
    pub encoder: EncoderConfig,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            demos: None,
            batch_size: 128,
            lr: 1e-4,
            steps: 10_000,
            eval_every: 200,
            eval_episodes: 20,
            finetune_encoder: true,
            augment_random_shift: true,
            shift_pad: 4,
            policy_hidden: 256,
            seed: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.demos == Some(0) {
            return Err(Error::config("demos must be >= 1"));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::config("batch_size and lr must be positive"));
        }
        if self.eval_every > 0 && self.steps % self.eval_every != 0 {
            return Err(Error::config(format!(
                "eval_every ({}) must divide steps ({})",
                self.eval_every, self.steps
            )));
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be >= 1"));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("crc32:{:08x}", crc32fast::hash(&json))
    }
}

/// State encoder plus a tanh-squashed action head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    pub obs_kind: ObsKind,
    pub encoder_spec: NetSpec,
    pub encoder: ParamStore<T>,
    pub head_spec: NetSpec,
    pub head: ParamStore<T>,
}

pub fn policy_head_spec(features: usize, hidden: usize, action_dim: usize) -> NetSpec {
    NetSpec::mlp(vec![features, hidden, action_dim], Activation::Relu, Some(Activation::Tanh))
}

impl<T: Scalar> PolicyNet<T> {
    pub fn new(obs_kind: ObsKind, encoder_spec: NetSpec, encoder: ParamStore<T>, hidden: usize, action_dim: usize, seed: u64) -> Result<Self> {
        encoder_spec.check_params(&encoder)?;
        let head_spec = policy_head_spec(encoder_spec.output_dim(), hidden, action_dim);
        let head = head_spec.init_params(derive_seed(seed, &[label_id("init"), label_id("policy_head")]))?;
        Ok(PolicyNet {
            obs_kind,
            encoder_spec,
            encoder,
            head_spec,
            head,
        })
    }

    /// Actions for a batch of raw observations.
    pub fn act(&self, obs: &NdArray<T>) -> Result<NdArray<T>> {
        let (z, _) = self.encoder_spec.forward(&self.encoder, &normalize_obs(self.obs_kind, obs))?;
        Ok(self.head_spec.forward(&self.head, &z)?.0)
    }
}

impl<T: Scalar> Parameterized<T> for PolicyNet<T> {
    fn stores(&self) -> Vec<(&str, &ParamStore<T>)> {
        vec![("encoder", &self.encoder), ("head", &self.head)]
    }

    fn stores_mut(&mut self) -> Vec<(&str, &mut ParamStore<T>)> {
        vec![("encoder", &mut self.encoder), ("head", &mut self.head)]
    }
}

impl<T: Scalar> BatchPolicy for PolicyNet<T> {
    fn act_batch(&mut self, obs: &[&[f64]], _latents: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut shape = vec![obs.len()];
        shape.extend(self.obs_kind.dims());
        let flat = obs.iter().flat_map(|o| o.iter().map(|&v| T::from_f64_lossy(v))).collect();
        let a = self.act(&NdArray::from_vec(shape, flat)?)?;
        Ok((0..a.rows()).map(|i| a.row(i).iter().map(|v| v.as_f64()).collect()).collect())
    }
}

/// Replicate-pads a `[c, h, w]` image by `pad` and crops back at offset
/// `(dy, dx)` in `[0, 2 pad]`.
pub fn shift_image<T: Copy>(src: &[T], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize, dst: &mut [T]) {
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy).saturating_sub(pad).min(h - 1);
            for x in 0..w {
                let sx = (x + dx).saturating_sub(pad).min(w - 1);
                dst[ch * h * w + y * w + x] = src[ch * h * w + sy * w + sx];
            }
        }
    }
}

fn random_shift<T: Scalar>(obs: &mut NdArray<T>, kind: ObsKind, pad: usize, rng: &mut Rng) {
    if let ObsKind::Pixel { c, h, w } = kind {
        let mut buf = vec![T::zero(); c * h * w];
        for i in 0..obs.rows() {
            let dy = rng.gen_range(0..=2 * pad);
            let dx = rng.gen_range(0..=2 * pad);
            shift_image(obs.row(i), c, h, w, pad, dy, dx, &mut buf);
            obs.row_mut(i).copy_from_slice(&buf);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub ratio: f64,
}

/// Evaluation history of one BC run on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: u64,
    pub seed: u64,
    pub points: Vec<EvalPoint>,
    /// Mean of the three best evaluation points.
    pub best3: f64,
    pub final_train_mse: f64,
    pub config_fingerprint: String,
}

pub struct BcRun<T> {
    pub policy: PolicyNet<T>,
    pub report: EvalReport,
}

/// Where the BC encoder comes from.
pub enum EncoderInit<'a, T> {
    /// Copy φ from a pretrained suite.
    Pretrained(&'a EncoderSuite<T>),
    /// Fresh initialization ("learn from scratch").
    Scratch,
}

/// Trains a policy on `demos` of `task` and evaluates it periodically.
pub fn behavior_clone<T: Scalar>(init: EncoderInit<'_, T>, demos: &[&Episode], task: &TaskSpec, cfg: &BcConfig) -> Result<BcRun<T>> {
    cfg.validate()?;
    let demos: Vec<&Episode> = demos.iter().copied().filter(|e| e.task_id == task.task_id).collect();
    let demos = &demos[..cfg.demos.unwrap_or(demos.len()).min(demos.len())];
    if demos.is_empty() {
        return Err(Error::Dataset(format!("no demonstrations for task {}", task.task_id)));
    }
    let (enc_spec, enc_params) = match init {
        EncoderInit::Pretrained(suite) => {
            if suite.spec.obs_kind != task.obs_kind || suite.spec.action_dim != task.action_dim {
                return Err(Error::config(format!(
                    "pretrained encoder expects {:?} with {} actions, task {} has {:?} with {}",
                    suite.spec.obs_kind, suite.spec.action_dim, task.task_id, task.obs_kind, task.action_dim
                )));
            }
            (suite.spec.phi.clone(), suite.phi.clone())
        }
        EncoderInit::Scratch => {
            let spec = state_encoder_spec(task.obs_kind, &cfg.encoder)?;
            let p = spec.init_params(derive_seed(cfg.seed, &[label_id("init"), label_id("phi")]))?;
            (spec, p)
        }
    };
    let mut policy = PolicyNet::new(task.obs_kind, enc_spec, enc_params, cfg.policy_hidden, task.action_dim, cfg.seed)?;
    // fresh optimizer state for both parts
    for (_, s) in policy.stores_mut() {
        *s = reset_optimizer(s);
    }

    let pairs: Vec<(usize, usize)> = demos
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.len()).map(move |t| (e, t)))
        .collect();
    let obs_len = task.obs_kind.len();
    let m = task.action_dim;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let augment = cfg.augment_random_shift && task.obs_kind.is_pixel();
    let expert_mean = if cfg.eval_every > 0 {
        expert_mean_return(task, cfg.eval_episodes, cfg.seed)?
    } else {
        0.0
    };
    let mut points = Vec::new();
    let mut last_mse = f64::NAN;
    let mut shape = vec![cfg.batch_size];
    shape.extend(task.obs_kind.dims());
    let _fp = FlushDenormals::enable();
    for step in 0..cfg.steps {
        let mut rng = rng_for(cfg.seed, &[label_id("bc_batch"), task.task_id, step]);
        let mut obs = Vec::with_capacity(cfg.batch_size * obs_len);
        let mut act = Vec::with_capacity(cfg.batch_size * m);
        for _ in 0..cfg.batch_size {
            let (e, t) = pairs[rng.gen_range(0..pairs.len())];
            obs.extend(demos[e].obs(t).iter().map(|&v| T::from_f64_lossy(v as f64)));
            act.extend(demos[e].action(t).iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        let mut obs = NdArray::from_vec(shape.clone(), obs)?;
        if augment {
            random_shift(&mut obs, task.obs_kind, cfg.shift_pad, &mut rng);
        }
        let target = NdArray::from_vec(vec![cfg.batch_size, m], act)?;

        policy.zero_grads();
        let (z, enc_cache) = policy.encoder_spec.forward(&policy.encoder, &normalize_obs(task.obs_kind, &obs))?;
        let (pred, head_cache) = policy.head_spec.forward(&policy.head, &z)?;
        let (loss, grad) = mse(&pred, &target)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite BC loss at step {step}")));
        }
        last_mse = loss;
        let dz = policy.head_spec.backward(&mut policy.head, &head_cache, &grad)?;
        adam_step(&mut policy.head, &adam)?;
        if cfg.finetune_encoder {
            policy.encoder_spec.backward_params_only(&mut policy.encoder, &enc_cache, &dz)?;
            adam_step(&mut policy.encoder, &adam)?;
        }

        let done = step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 {
            let r = evaluate_against(task, &mut policy, cfg.eval_episodes, cfg.seed, expert_mean)?;
            points.push(EvalPoint { step: done, ratio: r.ratio });
        }
    }
    let ratios: Vec<f64> = points.iter().map(|p| p.ratio).collect();
    Ok(BcRun {
        report: EvalReport {
            task_id: task.task_id,
            seed: cfg.seed,
            best3: best3(&ratios),
            points,
            final_train_mse: last_mse,
            config_fingerprint: cfg.fingerprint(),
        },
        policy,
    })
}

fn reset_optimizer<T: Scalar>(s: &ParamStore<T>) -> ParamStore<T> {
    let mut out = ParamStore::new();
    for (name, e) in s.iter() {
        out.insert(name.clone(), e.value.clone());
    }
    out
}

/// Mean squared action error of `policy` on every step of `demos`.
pub fn demo_mse<T: Scalar>(policy: &PolicyNet<T>, demos: &[&Episode]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ep in demos {
        let mut shape = vec![ep.len()];
        shape.extend(policy.obs_kind.dims());
        let obs = NdArray::from_vec(shape, ep.observations.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())?;
        let target = NdArray::from_vec(
            vec![ep.len(), ep.action_dim],
            ep.actions.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
        )?;
        let (l, _) = mse(&policy.act(&obs)?, &target)?;
        total += l * target.len() as f64;
        count += target.len();
    }
    Ok(total / count.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_is_identity_and_edges_replicate() {
        let src: Vec<u32> = (0..2 * 3 * 3).collect();
        let mut dst = vec![0; 18];
        shift_image(&src, 2, 3, 3, 1, 1, 1, &mut dst);
        assert_eq!(dst, src);
        shift_image(&src, 2, 3, 3, 1, 0, 0, &mut dst);
        // moved down-right by one, first row/column replicated
        assert_eq!(&dst[..9], &[0, 0, 1, 0, 0, 1, 3, 3, 4]);
    }

    #[test]
    fn eval_every_must_divide_steps() {
        let cfg = BcConfig {
            steps: 100,
            eval_every: 30,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
