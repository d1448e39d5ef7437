//! Pretrains the encoders with the window-negative objective and measures
//! how linearly the true latent state can be read off the features.
//!
//!     cargo run --release --example pretrain_and_probe [steps]

use std::sync::Arc;

use tacoforge::adapt::{probe_encoder, probe_random_init};
use tacoforge::data::{generate, DataConfig};
use tacoforge::pretrain::{PretrainConfig, Pretrainer};

fn main() -> tacoforge::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let data = generate(&DataConfig {
        episodes_per_task: 30,
        ..Default::default()
    })?;
    let cfg = PretrainConfig {
        steps,
        checkpoint_every: 0,
        ..Default::default()
    };
    let before = probe_random_init::<f32>(&data.probe, cfg.k, &cfg.encoder, cfg.seed, cfg.seed)?;
    println!("random-init probe R2 {before:.3}");

    let mut trainer = Pretrainer::<f32>::new(cfg, Arc::new(data.pretrain))?;
    let every = (steps / 5).max(1);
    trainer.run_until(steps, |t, rec| {
        if (rec.step + 1) % every == 0 {
            let r2 = probe_encoder(&t.model().suite, &data.probe, 0)?;
            println!("step {:>5}  loss {:.4}  grad norm {:.3}  probe R2 {r2:.3}", rec.step + 1, rec.loss, rec.grad_norm);
        }
        Ok(())
    })?;
    Ok(())
}
