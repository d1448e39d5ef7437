//! Generates latent_linear and grid_pixel datasets, saves one to disk and
//! reloads it.
//!
//!     cargo run --release --example generate_data

use std::collections::BTreeMap;

use tacoforge::data::{generate, load_dataset, save_dataset, DataConfig, MultitaskDataset};

fn describe(name: &str, ds: &MultitaskDataset) {
    let mut mix: BTreeMap<&str, usize> = BTreeMap::new();
    for e in ds.episodes() {
        *mix.entry(e.behavior.as_str()).or_default() += 1;
    }
    println!(
        "{name:>10}: {} tasks, {} episodes, obs {:?}, actions {}, behavior {mix:?}",
        ds.manifest().tasks.len(),
        ds.episodes().len(),
        ds.obs_kind(),
        ds.action_dim()
    );
}

fn main() -> tacoforge::Result<()> {
    let vector = generate(&DataConfig {
        episodes_per_task: 20,
        ..Default::default()
    })?;
    describe("pretrain", &vector.pretrain);
    describe("heldout", &vector.heldout);
    describe("probe", &vector.probe);

    let ep = &vector.pretrain.episodes()[0];
    println!("first episode: task {}, {} steps, return {:.2}", ep.task_id, ep.len(), ep.rewards.iter().sum::<f32>());

    let pixel = generate(&DataConfig {
        episodes_per_task: 4,
        ..DataConfig::grid_pixel()
    })?;
    describe("pixels", &pixel.pretrain);

    let dir = tempfile::tempdir().expect("temp dir");
    save_dataset(&vector.pretrain, dir.path())?;
    let back = load_dataset(dir.path())?;
    println!(
        "saved and reloaded {} episodes, fingerprint {} (unchanged: {})",
        back.episodes().len(),
        back.fingerprint(),
        back.fingerprint() == vector.pretrain.fingerprint()
    );
    Ok(())
}
