use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::env::{expert_policy, make_env, Env, Policy};
use crate::data::task::TaskSpec;
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, label_id, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorTag {
    Expert,
    NoisyScripted,
    UniformRandom,
}

impl BehaviorTag {
    pub fn code(self) -> u64 {
        match self {
            BehaviorTag::Expert => 0,
            BehaviorTag::NoisyScripted => 1,
            BehaviorTag::UniformRandom => 2,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(BehaviorTag::Expert),
            1 => Some(BehaviorTag::NoisyScripted),
            2 => Some(BehaviorTag::UniformRandom),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorTag::Expert => "expert",
            BehaviorTag::NoisyScripted => "noisy_scripted",
            BehaviorTag::UniformRandom => "uniform_random",
        }
    }
}

/// One trajectory. Row `t` of every array belongs to time step `t`; the reward
/// at `t` is earned by the transition taken with `actions[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task_id: u64,
    pub index: u64,
    pub behavior: BehaviorTag,
    pub obs_len: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub observations: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    true_latents: Vec<f32>,
}

impl Episode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task_id: u64,
        index: u64,
        behavior: BehaviorTag,
        obs_len: usize,
        action_dim: usize,
        latent_dim: usize,
        observations: Vec<f32>,
        actions: Vec<f32>,
        rewards: Vec<f32>,
        true_latents: Vec<f32>,
    ) -> Result<Self> {
        let t = rewards.len();
        if observations.len() != t * obs_len || actions.len() != t * action_dim || true_latents.len() != t * latent_dim {
            return Err(Error::Format(format!(
                "episode {task_id}/{index}: arrays disagree on length {t} (obs {}, actions {}, latents {})",
                observations.len(),
                actions.len(),
                true_latents.len()
            )));
        }
        Ok(Episode {
            task_id,
            index,
            behavior,
            obs_len,
            action_dim,
            latent_dim,
            observations,
            actions,
            rewards,
            true_latents,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs(&self, t: usize) -> &[f32] {
        &self.observations[t * self.obs_len..(t + 1) * self.obs_len]
    }

    pub fn action(&self, t: usize) -> &[f32] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    /// Ground-truth latent state. Diagnostics only: the linear probe is the
    /// sole consumer, no training path reads it.
    pub fn true_latents(&self) -> &[f32] {
        &self.true_latents
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }
}

/// How actions are chosen during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    /// Scripted expert plus `N(0, noise_std^2)` per action dim, clipped.
    Scripted { noise_std: f64 },
    /// Each action dim i.i.d. from `U(-1, 1)`.
    UniformRandom,
}

impl Behavior {
    pub fn tag(&self) -> BehaviorTag {
        match *self {
            Behavior::Scripted { noise_std } if noise_std > 0.0 => BehaviorTag::NoisyScripted,
            Behavior::Scripted { .. } => BehaviorTag::Expert,
            Behavior::UniformRandom => BehaviorTag::UniformRandom,
        }
    }
}

/// Reset seed used for episode `index` of `task_id` under root `seed`.
pub fn episode_reset_seed(seed: u64, task_id: u64, index: u64) -> u64 {
    derive_seed(seed, &[label_id("reset"), task_id, index])
}

/// Rolls out one episode of `horizon` steps.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    env: &mut dyn Env,
    policy: &mut dyn Policy,
    behavior: Behavior,
    reset_seed: u64,
    action_seed: u64,
    horizon: usize,
    index: u64,
) -> Result<Episode> {
    let task = env.task().clone();
    if let Behavior::Scripted { noise_std } = behavior {
        if !(noise_std >= 0.0) {
            return Err(Error::config(format!("noise_std must be >= 0, got {noise_std}")));
        }
    }
    let m = task.action_dim;
    let mut rng = rng_for(action_seed, &[]);
    let noise = match behavior {
        Behavior::Scripted { noise_std } if noise_std > 0.0 => Some(Normal::new(0.0, noise_std).expect("valid std")),
        _ => None,
    };
    let mut obs = env.reset(reset_seed);
    let obs_len = obs.len();
    let mut observations = Vec::with_capacity(horizon * obs_len);
    let mut actions = Vec::with_capacity(horizon * m);
    let mut rewards = Vec::with_capacity(horizon);
    let mut latents = Vec::with_capacity(horizon * task.latent_dim);
    for _ in 0..horizon {
        let latent = env.latent().to_vec();
        let action: Vec<f64> = match behavior {
            Behavior::UniformRandom => (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
            Behavior::Scripted { .. } => {
                let mut a = policy.act(&obs, &latent);
                if let Some(n) = &noise {
                    for v in a.iter_mut() {
                        *v += n.sample(&mut rng);
                    }
                }
                a.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect()
            }
        };
        let out = env.step(&action);
        observations.extend(obs.iter().map(|&v| v as f32));
        actions.extend(action.iter().map(|&v| v as f32));
        rewards.push(out.reward as f32);
        latents.extend(latent.iter().map(|&v| v as f32));
        obs = out.obs;
    }
    Episode::new(
        task.task_id,
        index,
        behavior.tag(),
        obs_len,
        m,
        task.latent_dim,
        observations,
        actions,
        rewards,
        latents,
    )
}

/// Collects `episodes` trajectories of `task` with its scripted expert (or
/// uniform random actions). Episode `i` draws every random number from streams
/// keyed by `(seed, task_id, i)`, so the output is schedule independent.
pub fn collect(task: &TaskSpec, behavior: Behavior, episodes: usize, seed: u64) -> Result<Vec<Episode>> {
    collect_range(task, behavior, 0..episodes as u64, seed)
}

pub fn collect_range(
    task: &TaskSpec,
    behavior: Behavior,
    indices: std::ops::Range<u64>,
    seed: u64,
) -> Result<Vec<Episode>> {
    let mut env = make_env(task)?;
    let mut policy = expert_policy(task)?;
    indices
        .map(|i| {
            rollout(
                env.as_mut(),
                &mut policy,
                behavior,
                episode_reset_seed(seed, task.task_id, i),
                derive_seed(seed, &[label_id("actions"), task.task_id, i]),
                task.horizon,
                i,
            )
        })
        .collect()
}
