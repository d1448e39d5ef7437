//! The three contrastive objectives on hand-made embeddings, and how many
//! inner products each evaluates.
//!
//!     cargo run --example contrastive_losses

use tacoforge::losses::{premier_all_window_loss, premier_taco_loss, similarity_evals_per_step, taco_batch_loss, LossVariant};
use tacoforge::nn::NdArray;

fn main() -> tacoforge::Result<()> {
    let g = NdArray::<f64>::from_f64(&[2, 2], &[1.0, 0.5, -0.5, 1.0])?;
    let pos = NdArray::from_f64(&[2, 2], &[1.0, 0.4, -0.4, 1.1])?;
    let neg = NdArray::from_f64(&[2, 2], &[0.2, -1.0, 1.0, 0.1])?;

    let p = premier_taco_loss(&g, &pos, &neg, 1.0)?;
    println!("premier_taco      loss {:.5}  similarity evals {}", p.loss, p.similarity_evals);

    let b = taco_batch_loss(&g, &pos, 1.0)?;
    println!("taco_batch        loss {:.5}  similarity evals {}", b.loss, b.similarity_evals);

    // three window negatives for the first sample, one for the second
    let negs = NdArray::from_f64(&[4, 2], &[0.2, -1.0, 0.9, 0.3, -0.1, 0.0, 1.0, 0.1])?;
    let w = premier_all_window_loss(&g, &pos, &negs, &[3, 1], 1.0)?;
    println!("premier_all_window loss {:.5}  similarity evals {}", w.loss, w.similarity_evals);

    let same = premier_taco_loss(&g, &pos, &pos, 1.0)?;
    println!("positive == negative gives ln 2: {:.12}", same.loss);

    println!("\nper-sample inner products by batch size");
    for n in [32, 256, 4096] {
        println!(
            "  N={n:>4}: premier_taco {:>2}, taco_batch {:>4}",
            similarity_evals_per_step(LossVariant::PremierTaco, n, 1) / n as u64,
            similarity_evals_per_step(LossVariant::TacoBatch, n, 1) / n as u64
        );
    }
    Ok(())
}
