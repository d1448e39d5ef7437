//! Behavior cloning on held-out tasks from a handful of expert demos, with a
//! pretrained encoder and from scratch.
//!
//!     cargo run --release --example few_shot_imitation

use std::sync::Arc;

use tacoforge::adapt::{behavior_clone, BcConfig, EncoderInit};
use tacoforge::data::{generate, DataConfig};
use tacoforge::pretrain::{pretrain, PretrainConfig};

fn main() -> tacoforge::Result<()> {
    let data = generate(&DataConfig {
        episodes_per_task: 30,
        ..Default::default()
    })?;
    let ckpt = pretrain::<f32>(
        &PretrainConfig {
            steps: 1000,
            checkpoint_every: 0,
            ..Default::default()
        },
        Arc::new(data.pretrain.clone()),
    )?;
    let bc = BcConfig {
        demos: Some(5),
        steps: 2000,
        eval_every: 250,
        eval_episodes: 10,
        ..Default::default()
    };
    for task in data.heldout.tasks() {
        let demos = data.heldout.task_episodes(task.task_id);
        let pre = behavior_clone(EncoderInit::Pretrained(ckpt.suite()), &demos, task, &bc)?;
        let lfs = behavior_clone::<f32>(EncoderInit::Scratch, &demos, task, &bc)?;
        println!("task {} ({} demos)", task.task_id, bc.demos.unwrap_or(demos.len()));
        for (name, run) in [("pretrained", &pre), ("scratch", &lfs)] {
            let curve: Vec<String> = run.report.points.iter().map(|p| format!("{:.2}", p.ratio)).collect();
            println!("  {name:>10}: best-3 ratio {:.3}  curve [{}]", run.report.best3, curve.join(" "));
        }
    }
    Ok(())
}
