#![allow(dead_code)]

use std::sync::Arc;

use tacoforge::data::{
    generate, BehaviorTag, DataConfig, Episode, Family, GeneratedData, GridPixelParams, LatentLinearParams, MultitaskDataset,
    ObsKind, TaskSpec, WindowEnvelope,
};
use tacoforge::encoders::EncoderConfig;
use tacoforge::losses::LossVariant;
use tacoforge::nn::DType;
use tacoforge::pretrain::PretrainConfig;

/// Small latent_linear data: 3 pretraining tasks, short episodes.
pub fn tiny_vector_data(seed: u64) -> GeneratedData {
    generate(&DataConfig {
        pretrain_tasks: 3,
        heldout_tasks: 2,
        episodes_per_task: 6,
        horizon: Some(30),
        probe_episodes_per_task: 4,
        demos_per_task: Some(4),
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// Small grid_pixel data: 8x8 images, one frame.
pub fn tiny_pixel_data(seed: u64) -> GeneratedData {
    generate(&DataConfig {
        pretrain_tasks: 2,
        heldout_tasks: 2,
        episodes_per_task: 3,
        horizon: Some(20),
        probe_episodes_per_task: 2,
        demos_per_task: Some(2),
        grid_pixel: GridPixelParams {
            grid_size: 4,
            image_size: 8,
            frame_stack: 1,
        },
        seed,
        ..DataConfig::grid_pixel()
    })
    .unwrap()
}

pub fn tiny_config(variant: LossVariant, dtype: DType) -> PretrainConfig {
    PretrainConfig {
        batch_size: 8,
        steps: 40,
        variant,
        dtype,
        lr: 1e-3,
        checkpoint_every: 0,
        encoder: EncoderConfig::tiny(),
        ..Default::default()
    }
}

pub fn arc(data: &GeneratedData) -> Arc<tacoforge::data::MultitaskDataset> {
    Arc::new(data.pretrain.clone())
}

fn scalar_params() -> LatentLinearParams {
    LatentLinearParams {
        mix_dim: 1,
        distractor_dims: 0,
        ..Default::default()
    }
}

fn task(id: u64) -> TaskSpec {
    TaskSpec {
        task_id: id,
        family: Family::LatentLinear(scalar_params()),
        latent_dim: 1,
        action_dim: 1,
        obs_kind: ObsKind::Vector { n: 1 },
        goal: vec![0.0],
        dynamics_seed: 0,
        horizon: 1,
    }
}

/// Observation at step `t` of episode `e` encodes both: `e * 1000 + t`.
pub fn indexed_dataset(lens: &[(u64, usize)], k: usize, w: usize) -> MultitaskDataset {
    let mut tasks: Vec<u64> = lens.iter().map(|&(t, _)| t).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let eps = lens
        .iter()
        .enumerate()
        .map(|(e, &(task_id, len))| {
            let obs = (0..len).map(|t| (e * 1000 + t) as f32).collect();
            let act = (0..len).map(|t| t as f32).collect();
            Episode::new(task_id, e as u64, BehaviorTag::NoisyScripted, 1, 1, 1, obs, act, vec![0.0; len], vec![0.0; len])
                .unwrap()
        })
        .collect();
    MultitaskDataset::new(tasks.into_iter().map(task).collect(), eps, WindowEnvelope { k, w }).unwrap()
}
