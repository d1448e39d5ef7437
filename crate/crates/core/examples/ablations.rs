//! Small window-size and batch-size sweeps scored by probe R2.
//!
//!     cargo run --release --example ablations

use std::sync::Arc;

use tacoforge::adapt::{ablate_batch_size, ablate_window, AblationSetup};
use tacoforge::cli::summarize_rows;
use tacoforge::data::{generate, DataConfig};
use tacoforge::losses::LossVariant;
use tacoforge::pretrain::PretrainConfig;

fn main() -> tacoforge::Result<()> {
    let data = generate(&DataConfig {
        episodes_per_task: 20,
        ..Default::default()
    })?;
    let setup = AblationSetup {
        base: PretrainConfig {
            steps: 300,
            checkpoint_every: 0,
            ..Default::default()
        },
        dataset: Arc::new(data.pretrain.clone()),
        probe: &data.probe,
        jobs: 1,
    };
    let rows = ablate_window(&setup, &[1, 3, 5, 7, 9], &[0, 1])?;
    println!("window sweep\n{}", summarize_rows(&rows));
    let rows = ablate_batch_size(&setup, &[32, 128], &[LossVariant::PremierTaco, LossVariant::TacoBatch], &[0])?;
    println!("batch-size sweep\n{}", summarize_rows(&rows));
    Ok(())
}
