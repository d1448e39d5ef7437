//! Anchors, positives and window negatives drawn from a dataset.
//!
//!     cargo run --example window_sampling

use tacoforge::data::{generate, DataConfig};
use tacoforge::nn::rng::rng_for;
use tacoforge::sampler::{sample_batch, valid_anchors, window_candidates, NegativeMode, TransitionBatch};

fn main() -> tacoforge::Result<()> {
    let (k, w, len) = (3, 5, 100);
    println!("T={len} K={k} W={w}: anchors {:?}", valid_anchors(len, k, w)?);
    for t in [0, 50, 95] {
        println!("  anchor {t:>2}: negatives drawn from {:?}", window_candidates(t, k, w, len));
    }

    let data = generate(&DataConfig {
        pretrain_tasks: 3,
        episodes_per_task: 5,
        ..Default::default()
    })?;
    let mut rng = rng_for(7, &[]);
    let batch: TransitionBatch<f32> = sample_batch(&data.pretrain, 6, k, w, NegativeMode::Single, &mut rng)?;
    println!("\nbatch of {}: s_t {:?}, actions {:?}", batch.len(), batch.s_t.shape(), batch.a_seq.shape());
    for (ix, task) in batch.index.iter().zip(&batch.task_ids) {
        println!("  task {task} episode {:>2}: t={:>2} positive={:>2} negative={:>2}", ix.episode, ix.t, ix.t + k, ix.t_neg);
    }

    let all: TransitionBatch<f32> = sample_batch(&data.pretrain, 4, k, w, NegativeMode::AllWindow, &mut rng)?;
    println!("\nall-window negatives per sample: {:?}", all.neg_counts);
    Ok(())
}
