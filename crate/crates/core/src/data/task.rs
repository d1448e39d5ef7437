use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation layout shared by every task of one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    Vector { n: usize },
    Pixel { c: usize, h: usize, w: usize },
}

impl ObsKind {
    pub fn len(&self) -> usize {
        match *self {
            ObsKind::Vector { n } => n,
            ObsKind::Pixel { c, h, w } => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample array shape (without the batch dimension).
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ObsKind::Vector { n } => vec![n],
            ObsKind::Pixel { c, h, w } => vec![c, h, w],
        }
    }

    pub fn is_pixel(&self) -> bool {
        matches!(self, ObsKind::Pixel { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentLinearParams {
    /// Number of `tanh(M z)` observation channels.
    pub mix_dim: usize,
    /// i.i.d. Gaussian noise channels appended to every observation.
    pub distractor_dims: usize,
    pub distractor_std: f64,
    /// Scale of the observation mixing matrix `M`.
    pub mix_gain: f64,
    /// Spectral radius of the transition matrix `A` (must be <= 0.98).
    pub spectral_radius: f64,
    pub process_noise: f64,
    pub init_std: f64,
    /// Reward is `exp(-|z - goal|^2 / width^2)`.
    pub reward_width: f64,
}

impl Default for LatentLinearParams {
    fn default() -> Self {
        LatentLinearParams {
            mix_dim: 12,
            distractor_dims: 8,
            distractor_std: 3.0,
            mix_gain: 2.0,
            spectral_radius: 0.95,
            process_noise: 0.02,
            init_std: 1.0,
            reward_width: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPixelParams {
    pub grid_size: usize,
    /// Rendered image side in pixels; must be a multiple of `grid_size`.
    pub image_size: usize,
    pub frame_stack: usize,
}

impl Default for GridPixelParams {
    fn default() -> Self {
        GridPixelParams {
            grid_size: 8,
            image_size: 32,
            frame_stack: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LatentLinear(LatentLinearParams),
    GridPixel(GridPixelParams),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::LatentLinear(_) => "latent_linear",
            Family::GridPixel(_) => "grid_pixel",
        }
    }
}

/// One control task. Tasks of a dataset share dynamics and observation
/// layout and differ in their goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: u64,
    pub family: Family,
    pub latent_dim: usize,
    pub action_dim: usize,
    pub obs_kind: ObsKind,
    pub goal: Vec<f64>,
    pub dynamics_seed: u64,
    pub horizon: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.action_dim == 0 || self.horizon == 0 {
            return Err(Error::config(format!(
                "task {} has a zero dimension (latent {}, action {}, horizon {})",
                self.task_id, self.latent_dim, self.action_dim, self.horizon
            )));
        }
        if self.goal.len() != self.latent_dim {
            return Err(Error::config(format!(
                "task {} goal has {} entries for latent dim {}",
                self.task_id,
                self.goal.len(),
                self.latent_dim
            )));
        }
        match &self.family {
            Family::LatentLinear(p) => {
                let n = p.mix_dim + p.distractor_dims;
                if self.obs_kind != (ObsKind::Vector { n }) {
                    return Err(Error::config(format!(
                        "latent_linear task {} needs vector({n}) observations, spec says {:?}",
                        self.task_id, self.obs_kind
                    )));
                }
                if p.mix_dim == 0 {
                    return Err(Error::config("latent_linear mix_dim must be positive"));
                }
                if !(p.spectral_radius > 0.0 && p.spectral_radius <= 0.98) {
                    return Err(Error::config(format!(
                        "spectral radius {} outside (0, 0.98]",
                        p.spectral_radius
                    )));
                }
                if p.process_noise < 0.0 || p.distractor_std < 0.0 || p.reward_width <= 0.0 {
                    return Err(Error::config("latent_linear noise/width parameters out of range"));
                }
            }
            Family::GridPixel(p) => {
                if self.latent_dim != 2 || self.action_dim != 2 {
                    return Err(Error::config("grid_pixel tasks have 2-d latents and actions"));
                }
                if p.grid_size < 2 || p.frame_stack == 0 || p.image_size % p.grid_size != 0 {
                    return Err(Error::config(format!(
                        "grid_pixel geometry invalid: grid {} image {} stack {}",
                        p.grid_size, p.image_size, p.frame_stack
                    )));
                }
                let want = ObsKind::Pixel {
                    c: 3 * p.frame_stack,
                    h: p.image_size,
                    w: p.image_size,
                };
                if self.obs_kind != want {
                    return Err(Error::config(format!(
                        "grid_pixel task {} needs {:?}, spec says {:?}",
                        self.task_id, want, self.obs_kind
                    )));
                }
            }
        }
        Ok(())
    }
}
