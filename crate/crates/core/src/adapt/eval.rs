//! Policy rollouts and the agent/expert return ratio.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{expert_policy, make_env, Env, ExpertPolicy, Policy, TaskSpec};
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, label_id, rng_for, Rng};

/// A policy acting on a batch of environments in lockstep.
pub trait BatchPolicy {
    fn act_batch(&mut self, obs: &[&[f64]], latents: &[&[f64]]) -> Result<Vec<Vec<f64>>>;
}

/// Wraps the scripted expert (which reads the true latent).
pub struct ExpertBatch(pub ExpertPolicy);

impl BatchPolicy for ExpertBatch {
    fn act_batch(&mut self, obs: &[&[f64]], latents: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        Ok(obs.iter().zip(latents).map(|(o, z)| self.0.act(o, z)).collect())
    }
}

/// Uniform actions in `[-1, 1]^m`.
pub struct RandomBatch {
    pub action_dim: usize,
    pub rng: Rng,
}

impl BatchPolicy for RandomBatch {
    fn act_batch(&mut self, obs: &[&[f64]], _latents: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        Ok(obs
            .iter()
            .map(|_| (0..self.action_dim).map(|_| self.rng.gen_range(-1.0..=1.0)).collect())
            .collect())
    }
}

/// Reset seed of evaluation episode `i`. Distinct from data-collection seeds.
pub fn eval_reset_seed(seed: u64, task_id: u64, i: u64) -> u64 {
    derive_seed(seed, &[label_id("eval"), task_id, i])
}

/// Undiscounted return of each of `episodes` rollouts of `task.horizon` steps.
pub fn rollout_returns(task: &TaskSpec, policy: &mut dyn BatchPolicy, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut envs: Vec<Box<dyn Env + Send>> = (0..episodes).map(|_| make_env(task)).collect::<Result<_>>()?;
    for (i, env) in envs.iter_mut().enumerate() {
        env.reset(eval_reset_seed(seed, task.task_id, i as u64));
    }
    let mut returns = vec![0.0; episodes];
    for _ in 0..task.horizon {
        let actions = {
            let obs: Vec<&[f64]> = envs.iter().map(|e| e.observation()).collect();
            let lat: Vec<&[f64]> = envs.iter().map(|e| e.latent()).collect();
            policy.act_batch(&obs, &lat)?
        };
        if actions.len() != episodes {
            return Err(Error::Internal("policy returned the wrong number of actions".into()));
        }
        for ((env, a), r) in envs.iter_mut().zip(&actions).zip(returns.iter_mut()) {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::Training("policy produced a non-finite action".into()));
            }
            *r += env.step(a).reward;
        }
    }
    Ok(returns)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub agent_mean: f64,
    pub expert_mean: f64,
    pub ratio: f64,
}

pub fn expert_mean_return(task: &TaskSpec, episodes: usize, seed: u64) -> Result<f64> {
    let r = rollout_returns(task, &mut ExpertBatch(expert_policy(task)?), episodes, seed)?;
    Ok(mean(&r))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Mean agent return over mean expert return on the same reset seeds.
pub fn evaluate_policy(task: &TaskSpec, policy: &mut dyn BatchPolicy, episodes: usize, seed: u64) -> Result<EvalResult> {
    let expert_mean = expert_mean_return(task, episodes, seed)?;
    evaluate_against(task, policy, episodes, seed, expert_mean)
}

/// As [`evaluate_policy`] with a precomputed expert reference.
pub fn evaluate_against(
    task: &TaskSpec,
    policy: &mut dyn BatchPolicy,
    episodes: usize,
    seed: u64,
    expert_mean: f64,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    if !(expert_mean > 0.0) {
        return Err(Error::Training(format!("expert return {expert_mean} is not positive")));
    }
    let agent_mean = mean(&rollout_returns(task, policy, episodes, seed)?);
    Ok(EvalResult {
        agent_mean,
        expert_mean,
        ratio: agent_mean / expert_mean,
    })
}

pub fn random_policy(task: &TaskSpec, seed: u64) -> RandomBatch {
    RandomBatch {
        action_dim: task.action_dim,
        rng: rng_for(seed, &[label_id("random_policy")]),
    }
}

/// Mean of the three largest values (fewer if there are fewer).
pub fn best3(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = v.len().min(3);
    if k == 0 {
        return f64::NAN;
    }
    v[..k].iter().sum::<f64>() / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best3_picks_the_top_three() {
        assert_eq!(best3(&[0.1, 0.9, 0.5, 0.7, 0.2]), (0.9 + 0.7 + 0.5) / 3.0);
        assert_eq!(best3(&[0.4, 0.6]), 0.5);
        assert!(best3(&[]).is_nan());
    }
}
