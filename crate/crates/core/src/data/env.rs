//! Synthetic control environments with ground-truth latent state.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::task::{Family, GridPixelParams, LatentLinearParams, TaskSpec};
use crate::error::{Error, Result};
use crate::nn::rng::{label_id, rng_for, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub latent: Vec<f64>,
}

pub trait Env {
    fn task(&self) -> &TaskSpec;
    /// Starts a new episode and returns the first observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepOutcome;
    fn observation(&self) -> &[f64];
    fn latent(&self) -> &[f64];
}

/// Anything that maps an observation to an action. Scripted experts read the
/// latent state; learned policies must ignore it.
pub trait Policy {
    fn act(&mut self, obs: &[f64], latent: &[f64]) -> Vec<f64>;
}

pub fn make_env(task: &TaskSpec) -> Result<Box<dyn Env + Send>> {
    task.validate()?;
    Ok(match &task.family {
        Family::LatentLinear(p) => Box::new(LatentLinearEnv::new(task.clone(), p.clone())?),
        Family::GridPixel(p) => Box::new(GridPixelEnv::new(task.clone(), p.clone())),
    })
}

/// Shared linear dynamics `z' = A z + B a + noise`, observed through
/// `tanh(M z)`. Everything is a deterministic function of the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

/// Largest singular value via power iteration on `A^T A`.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    let mut v = DVector::from_element(a.ncols(), 1.0 / (a.ncols() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = &ata * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda.sqrt()
}

fn gaussian(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        x * scale
    })
}

impl LinearDynamics {
    pub fn generate(seed: u64, latent_dim: usize, action_dim: usize, p: &LatentLinearParams) -> Result<Self> {
        let d = latent_dim;
        let mut rng = rng_for(seed, &[label_id("latent_linear_dynamics")]);
        // A = r * P R P^T with R block-diagonal rotations, so every eigenvalue
        // has modulus r (or r/2 for an odd leftover) and A is normal.
        let basis = gaussian(&mut rng, d, d, 1.0).qr().q();
        let mut rot = DMatrix::<f64>::zeros(d, d);
        let mut i = 0;
        while i + 1 < d {
            let theta = rng.gen_range(std::f64::consts::PI / 8.0..std::f64::consts::PI / 3.0);
            let (s, c) = theta.sin_cos();
            rot[(i, i)] = c;
            rot[(i, i + 1)] = -s;
            rot[(i + 1, i)] = s;
            rot[(i + 1, i + 1)] = c;
            i += 2;
        }
        if i < d {
            rot[(i, i)] = 0.5;
        }
        let mut a = &basis * rot * basis.transpose() * p.spectral_radius;
        let norm = operator_norm(&a);
        if norm > 0.98 {
            a *= 0.98 / norm;
        }
        let b = gaussian(&mut rng, d, action_dim, 0.5);
        let m = gaussian(&mut rng, p.mix_dim, d, p.mix_gain / (d as f64).sqrt());
        Ok(LinearDynamics { a, b, m })
    }

    /// Goal held in place by the constant action `hold`: `(I - A)^-1 B hold`.
    pub fn reachable_goal(&self, hold: &[f64]) -> Result<Vec<f64>> {
        let d = self.a.nrows();
        let rhs = &self.b * DVector::from_column_slice(hold);
        let lhs = DMatrix::<f64>::identity(d, d) - &self.a;
        lhs.lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Internal("I - A is singular".into()))
    }

    /// Damped pseudo-inverse of B: `(B^T B + lambda I)^-1 B^T`.
    pub fn damped_pinv(&self, lambda: f64) -> DMatrix<f64> {
        let m = self.b.ncols();
        let btb = self.b.transpose() * &self.b + DMatrix::<f64>::identity(m, m) * lambda;
        btb.try_inverse().expect("damped gram is positive definite") * self.b.transpose()
    }
}

pub struct LatentLinearEnv {
    task: TaskSpec,
    params: LatentLinearParams,
    dynamics: LinearDynamics,
    z: DVector<f64>,
    obs: Vec<f64>,
    rng: Rng,
}

impl LatentLinearEnv {
    pub fn new(task: TaskSpec, params: LatentLinearParams) -> Result<Self> {
        let dynamics = LinearDynamics::generate(task.dynamics_seed, task.latent_dim, task.action_dim, &params)?;
        let d = task.latent_dim;
        let mut env = LatentLinearEnv {
            task,
            params,
            dynamics,
            z: DVector::zeros(d),
            obs: Vec::new(),
            rng: rng_for(0, &[]),
        };
        env.obs = env.render();
        Ok(env)
    }

    pub fn dynamics(&self) -> &LinearDynamics {
        &self.dynamics
    }

    /// Places the latent state directly (tests and diagnostics).
    pub fn set_latent(&mut self, z: &[f64]) {
        self.z = DVector::from_column_slice(z);
        self.obs = self.render();
    }

    fn render(&mut self) -> Vec<f64> {
        let mixed = &self.dynamics.m * &self.z;
        let mut obs: Vec<f64> = mixed.iter().map(|v| v.tanh()).collect();
        for _ in 0..self.params.distractor_dims {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            obs.push(e * self.params.distractor_std);
        }
        obs
    }

    fn reward(&self) -> f64 {
        let goal = DVector::from_column_slice(&self.task.goal);
        let d2 = (&self.z - goal).norm_squared();
        (-d2 / (self.params.reward_width * self.params.reward_width)).exp()
    }
}

impl Env for LatentLinearEnv {
    fn task(&self) -> &TaskSpec {
        &self.task
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = rng_for(seed, &[label_id("latent_linear_episode")]);
        let d = self.task.latent_dim;
        let z: Vec<f64> = (0..d)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                e * self.params.init_std
            })
            .collect();
        self.z = DVector::from_vec(z);
        self.obs = self.render();
        self.obs.clone()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let a = DVector::from_iterator(action.len(), action.iter().map(|v| v.clamp(-1.0, 1.0)));
        let mut next = &self.dynamics.a * &self.z + &self.dynamics.b * a;
        if self.params.process_noise > 0.0 {
            for v in next.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                *v += e * self.params.process_noise;
            }
        }
        self.z = next;
        self.obs = self.render();
        StepOutcome {
            obs: self.obs.clone(),
            reward: self.reward(),
            latent: self.z.iter().copied().collect(),
        }
    }

    fn observation(&self) -> &[f64] {
        &self.obs
    }

    fn latent(&self) -> &[f64] {
        self.z.as_slice()
    }
}

pub struct GridPixelEnv {
    task: TaskSpec,
    params: GridPixelParams,
    pos: [i64; 2],
    latent: Vec<f64>,
    frames: Vec<Vec<f64>>,
    obs: Vec<f64>,
}

impl GridPixelEnv {
    pub fn new(task: TaskSpec, params: GridPixelParams) -> Self {
        let mut env = GridPixelEnv {
            task,
            params,
            pos: [0, 0],
            latent: vec![0.0, 0.0],
            frames: Vec::new(),
            obs: Vec::new(),
        };
        env.restart_frames();
        env
    }

    pub fn position(&self) -> [i64; 2] {
        self.pos
    }

    pub fn set_position(&mut self, pos: [i64; 2]) {
        self.pos = pos;
        self.restart_frames();
    }

    fn goal_cell(&self) -> [i64; 2] {
        [self.task.goal[0].round() as i64, self.task.goal[1].round() as i64]
    }

    /// RGB frame (channel-major): red marks the agent, green the goal.
    pub fn render_frame(&self) -> Vec<f64> {
        let s = self.params.image_size;
        let cell = s / self.params.grid_size;
        let mut img = vec![0.0; 3 * s * s];
        let mut paint = |ch: usize, p: [i64; 2]| {
            let (x0, y0) = (p[0] as usize * cell, p[1] as usize * cell);
            for y in y0..y0 + cell {
                for x in x0..x0 + cell {
                    img[ch * s * s + y * s + x] = 255.0;
                }
            }
        };
        paint(0, self.pos);
        paint(1, self.goal_cell());
        img
    }

    fn restart_frames(&mut self) {
        let f = self.render_frame();
        self.frames = vec![f; self.params.frame_stack];
        self.obs = self.frames.concat();
        self.latent = vec![self.pos[0] as f64, self.pos[1] as f64];
    }

    fn reward(&self) -> f64 {
        let g = self.goal_cell();
        let l1 = (self.pos[0] - g[0]).abs() + (self.pos[1] - g[1]).abs();
        1.0 - l1 as f64 / (2.0 * (self.params.grid_size as f64 - 1.0))
    }
}

impl Env for GridPixelEnv {
    fn task(&self) -> &TaskSpec {
        &self.task
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, &[label_id("grid_pixel_episode")]);
        let n = self.params.grid_size as i64;
        self.pos = [rng.gen_range(0..n), rng.gen_range(0..n)];
        self.restart_frames();
        self.obs.clone()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let n = self.params.grid_size as i64;
        for (p, a) in self.pos.iter_mut().zip(action) {
            let mv = a.clamp(-1.0, 1.0).round() as i64;
            *p = (*p + mv).clamp(0, n - 1);
        }
        self.frames.remove(0);
        self.frames.push(self.render_frame());
        self.obs = self.frames.concat();
        self.latent = vec![self.pos[0] as f64, self.pos[1] as f64];
        StepOutcome {
            obs: self.obs.clone(),
            reward: self.reward(),
            latent: self.latent.clone(),
        }
    }

    fn observation(&self) -> &[f64] {
        &self.obs
    }

    fn latent(&self) -> &[f64] {
        &self.latent
    }
}

/// Privileged scripted controller.
///
/// latent_linear: `a = clip(a_hold - K (z - goal))` where `a_hold` keeps the
/// goal stationary and `K = pinv_damped(B) A`. grid_pixel: one greedy step
/// toward the goal along each axis.
#[derive(Debug, Clone)]
pub enum ExpertPolicy {
    LatentLinear {
        goal: DVector<f64>,
        hold: DVector<f64>,
        gain: DMatrix<f64>,
    },
    Grid {
        goal: [f64; 2],
    },
}

pub const EXPERT_PINV_DAMPING: f64 = 1e-3;

pub fn expert_policy(task: &TaskSpec) -> Result<ExpertPolicy> {
    task.validate()?;
    match &task.family {
        Family::LatentLinear(p) => {
            let dyn_ = LinearDynamics::generate(task.dynamics_seed, task.latent_dim, task.action_dim, p)?;
            let goal = DVector::from_column_slice(&task.goal);
            let pinv = dyn_.damped_pinv(EXPERT_PINV_DAMPING);
            let d = task.latent_dim;
            let hold = &pinv * ((DMatrix::<f64>::identity(d, d) - &dyn_.a) * &goal);
            let gain = &pinv * &dyn_.a;
            Ok(ExpertPolicy::LatentLinear { goal, hold, gain })
        }
        Family::GridPixel(_) => Ok(ExpertPolicy::Grid {
            goal: [task.goal[0].round(), task.goal[1].round()],
        }),
    }
}

impl Policy for ExpertPolicy {
    fn act(&mut self, _obs: &[f64], latent: &[f64]) -> Vec<f64> {
        match self {
            ExpertPolicy::LatentLinear { goal, hold, gain } => {
                let z = DVector::from_column_slice(latent);
                let a = &*hold - &*gain * (z - &*goal);
                a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
            }
            ExpertPolicy::Grid { goal } => latent
                .iter()
                .zip(goal.iter())
                .map(|(p, g)| (g - p).signum() * ((g - p).abs() > 0.5) as i64 as f64)
                .collect(),
        }
    }
}
