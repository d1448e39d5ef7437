use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::env::LinearDynamics;
use crate::data::episode::{collect, Behavior, BehaviorTag};
use crate::data::store::{MultitaskDataset, WindowEnvelope};
use crate::data::task::{Family, GridPixelParams, LatentLinearParams, ObsKind, TaskSpec};
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, label_id, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    LatentLinear,
    GridPixel,
}

/// Settings for generating a pretraining set, held-out demonstrations and a
/// probe set in one go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub family: FamilyKind,
    pub pretrain_tasks: usize,
    pub heldout_tasks: usize,
    pub episodes_per_task: usize,
    /// Defaults to 100 (latent_linear) or 60 (grid_pixel).
    pub horizon: Option<usize>,
    pub behavior: BehaviorTag,
    pub noise_std: f64,
    /// Expert demonstrations per held-out task. Defaults to 20 (latent_linear)
    /// or 5 (grid_pixel).
    pub demos_per_task: Option<usize>,
    pub probe_episodes_per_task: usize,
    pub latent_dim: usize,
    pub action_dim: usize,
    pub latent_linear: LatentLinearParams,
    pub grid_pixel: GridPixelParams,
    /// Window envelope every episode must support.
    pub k: usize,
    pub w: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            family: FamilyKind::LatentLinear,
            pretrain_tasks: 8,
            heldout_tasks: 2,
            episodes_per_task: 100,
            horizon: None,
            behavior: BehaviorTag::NoisyScripted,
            noise_std: 0.3,
            demos_per_task: None,
            probe_episodes_per_task: 20,
            latent_dim: 4,
            action_dim: 2,
            latent_linear: LatentLinearParams::default(),
            grid_pixel: GridPixelParams::default(),
            k: 3,
            w: 5,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn grid_pixel() -> Self {
        DataConfig {
            family: FamilyKind::GridPixel,
            latent_dim: 2,
            action_dim: 2,
            ..Default::default()
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(match self.family {
            FamilyKind::LatentLinear => 100,
            FamilyKind::GridPixel => 60,
        })
    }

    pub fn demos_per_task(&self) -> usize {
        self.demos_per_task.unwrap_or(match self.family {
            FamilyKind::LatentLinear => 20,
            FamilyKind::GridPixel => 5,
        })
    }

    pub fn behavior(&self) -> Behavior {
        match self.behavior {
            BehaviorTag::Expert => Behavior::Scripted { noise_std: 0.0 },
            BehaviorTag::NoisyScripted => Behavior::Scripted {
                noise_std: self.noise_std,
            },
            BehaviorTag::UniformRandom => Behavior::UniformRandom,
        }
    }

    pub fn envelope(&self) -> WindowEnvelope {
        WindowEnvelope { k: self.k, w: self.w }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pretrain_tasks == 0 || self.episodes_per_task == 0 {
            return Err(Error::config("need at least one pretraining task and episode"));
        }
        if self.heldout_tasks < 2 {
            return Err(Error::config("at least 2 held-out tasks are required"));
        }
        if self.k == 0 || self.w == 0 {
            return Err(Error::config("window envelope needs K >= 1 and W >= 1"));
        }
        if self.horizon() < self.k + self.w + 1 {
            return Err(Error::config(format!(
                "horizon {} is shorter than K + W + 1 = {}",
                self.horizon(),
                self.k + self.w + 1
            )));
        }
        if self.behavior == BehaviorTag::NoisyScripted && !(self.noise_std > 0.0) {
            return Err(Error::config("noisy_scripted behavior needs noise_std > 0"));
        }
        if self.family == FamilyKind::GridPixel && (self.latent_dim != 2 || self.action_dim != 2) {
            return Err(Error::config("grid_pixel uses latent_dim = action_dim = 2"));
        }
        Ok(())
    }

    fn family(&self) -> Family {
        match self.family {
            FamilyKind::LatentLinear => Family::LatentLinear(self.latent_linear.clone()),
            FamilyKind::GridPixel => Family::GridPixel(self.grid_pixel.clone()),
        }
    }

    fn obs_kind(&self) -> ObsKind {
        match self.family {
            FamilyKind::LatentLinear => ObsKind::Vector {
                n: self.latent_linear.mix_dim + self.latent_linear.distractor_dims,
            },
            FamilyKind::GridPixel => ObsKind::Pixel {
                c: 3 * self.grid_pixel.frame_stack,
                h: self.grid_pixel.image_size,
                w: self.grid_pixel.image_size,
            },
        }
    }

    /// All task specs, split into (pretraining, held-out). The split is a
    /// seed-derived hash order, so goals of the two groups are disjoint.
    pub fn tasks(&self) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>)> {
        self.validate()?;
        let total = self.pretrain_tasks + self.heldout_tasks;
        let dynamics_seed = derive_seed(self.seed, &[label_id("dynamics")]);
        let family = self.family();
        let dynamics = match &family {
            Family::LatentLinear(p) => Some(LinearDynamics::generate(dynamics_seed, self.latent_dim, self.action_dim, p)?),
            Family::GridPixel(_) => None,
        };
        let mut used_cells = Vec::new();
        let mut tasks = Vec::with_capacity(total);
        for i in 0..total as u64 {
            let mut rng = rng_for(self.seed, &[label_id("goal"), i]);
            let goal = match (&family, &dynamics) {
                (Family::LatentLinear(_), Some(dyn_)) => {
                    let hold: Vec<f64> = (0..self.action_dim).map(|_| rng.gen_range(-0.5..=0.5)).collect();
                    dyn_.reachable_goal(&hold)?
                }
                (Family::GridPixel(p), _) => {
                    let n = p.grid_size as i64;
                    let mut cell;
                    loop {
                        cell = [rng.gen_range(0..n), rng.gen_range(0..n)];
                        if !used_cells.contains(&cell) || used_cells.len() as i64 >= n * n {
                            break;
                        }
                    }
                    used_cells.push(cell);
                    vec![cell[0] as f64, cell[1] as f64]
                }
                _ => unreachable!(),
            };
            tasks.push(TaskSpec {
                task_id: i,
                family: family.clone(),
                latent_dim: self.latent_dim,
                action_dim: self.action_dim,
                obs_kind: self.obs_kind(),
                goal,
                dynamics_seed,
                horizon: self.horizon(),
            });
        }
        let mut order: Vec<(u64, usize)> = (0..total)
            .map(|i| (derive_seed(self.seed, &[label_id("split"), i as u64]), i))
            .collect();
        order.sort_unstable();
        let heldout_ids: Vec<usize> = order.iter().take(self.heldout_tasks).map(|&(_, i)| i).collect();
        let (mut pre, mut held) = (Vec::new(), Vec::new());
        for (i, t) in tasks.into_iter().enumerate() {
            if heldout_ids.contains(&i) {
                held.push(t);
            } else {
                pre.push(t);
            }
        }
        Ok((pre, held))
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct GeneratedData {
    /// Pretraining tasks with the configured behavior policy.
    pub pretrain: MultitaskDataset,
    /// Held-out tasks, noise-free expert demonstrations.
    pub heldout: MultitaskDataset,
    /// Held-out tasks, noisy scripted episodes for linear probing.
    pub probe: MultitaskDataset,
}

pub fn generate(cfg: &DataConfig) -> Result<GeneratedData> {
    let (pre_tasks, held_tasks) = cfg.tasks()?;
    let envelope = cfg.envelope();
    let mut pre_eps = Vec::new();
    for t in &pre_tasks {
        pre_eps.extend(collect(t, cfg.behavior(), cfg.episodes_per_task, derive_seed(cfg.seed, &[label_id("pretrain")]))?);
    }
    let mut demo_eps = Vec::new();
    let mut probe_eps = Vec::new();
    for t in &held_tasks {
        demo_eps.extend(collect(
            t,
            Behavior::Scripted { noise_std: 0.0 },
            cfg.demos_per_task(),
            derive_seed(cfg.seed, &[label_id("demos")]),
        )?);
        probe_eps.extend(collect(
            t,
            Behavior::Scripted {
                noise_std: if cfg.noise_std > 0.0 { cfg.noise_std } else { 0.3 },
            },
            cfg.probe_episodes_per_task,
            derive_seed(cfg.seed, &[label_id("probe")]),
        )?);
    }
    Ok(GeneratedData {
        pretrain: MultitaskDataset::new(pre_tasks, pre_eps, envelope)?,
        heldout: MultitaskDataset::new(held_tasks.clone(), demo_eps, envelope)?,
        probe: MultitaskDataset::new(held_tasks, probe_eps, envelope)?,
    })
}

/// Only the pretraining dataset (skips demo and probe collection).
pub fn generate_pretrain(cfg: &DataConfig) -> Result<MultitaskDataset> {
    let (pre_tasks, _) = cfg.tasks()?;
    let mut eps = Vec::new();
    for t in &pre_tasks {
        eps.extend(collect(t, cfg.behavior(), cfg.episodes_per_task, derive_seed(cfg.seed, &[label_id("pretrain")]))?);
    }
    MultitaskDataset::new(pre_tasks, eps, cfg.envelope())
}
