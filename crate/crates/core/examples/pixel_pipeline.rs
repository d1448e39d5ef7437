//! Pixel observations end to end: grid-world frames, conv encoder
//! pretraining, then behavior cloning with random-shift augmentation.
//!
//!     cargo run --release --example pixel_pipeline

use std::sync::Arc;

use tacoforge::adapt::{behavior_clone, BcConfig, EncoderInit};
use tacoforge::data::{generate, DataConfig, GridPixelParams};
use tacoforge::encoders::EncoderConfig;
use tacoforge::pretrain::{PretrainConfig, Pretrainer};

fn main() -> tacoforge::Result<()> {
    let data = generate(&DataConfig {
        pretrain_tasks: 4,
        episodes_per_task: 8,
        horizon: Some(40),
        demos_per_task: Some(5),
        grid_pixel: GridPixelParams {
            grid_size: 6,
            image_size: 24,
            frame_stack: 3,
        },
        ..DataConfig::grid_pixel()
    })?;
    println!("observations {:?}", data.pretrain.obs_kind());

    let encoder = EncoderConfig {
        features: 32,
        conv_filters: 16,
        ..Default::default()
    };
    let cfg = PretrainConfig {
        steps: 800,
        batch_size: 32,
        lr: 3e-4,
        checkpoint_every: 0,
        encoder: encoder.clone(),
        ..Default::default()
    };
    let mut trainer = Pretrainer::<f32>::new(cfg, Arc::new(data.pretrain.clone()))?;
    trainer.run_until(800, |_, rec| {
        if (rec.step + 1) % 200 == 0 {
            println!("step {:>3} loss {:.4}", rec.step + 1, rec.loss);
        }
        Ok(())
    })?;
    let ckpt = trainer.into_checkpoint();

    let bc = BcConfig {
        steps: 300,
        batch_size: 32,
        eval_every: 100,
        eval_episodes: 5,
        encoder,
        ..Default::default()
    };
    let task = data.heldout.tasks().next().expect("held-out task");
    let demos = data.heldout.task_episodes(task.task_id);
    let run = behavior_clone(EncoderInit::Pretrained(ckpt.suite()), &demos, task, &bc)?;
    println!("held-out task {}: best-3 return ratio {:.3}", task.task_id, run.report.best3);
    Ok(())
}
