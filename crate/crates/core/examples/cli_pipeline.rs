//! Drives the command-line interface from a TOML config: generate data,
//! pretrain, probe and report, all under one temporary directory.
//!
//!     cargo run --release --example cli_pipeline

use tacoforge::cli::run_args;

const CONFIG: &str = r#"
seed = 3

[data]
episodes_per_task = 20

[pretrain]
steps = 400
checkpoint_every = 200
"#;

fn main() -> tacoforge::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let cfg = root.join("run.toml");
    std::fs::write(&cfg, CONFIG).expect("write config");
    let p = |s: &str| root.join(s).display().to_string();
    let cfg = cfg.display().to_string();

    let steps: [Vec<String>; 4] = [
        vec!["gen-data".into(), "--out".into(), p("data")],
        vec!["pretrain".into(), "--data".into(), p("data"), "--out".into(), p("run")],
        vec!["probe".into(), "--data".into(), p("data"), "--checkpoint".into(), p("run/final.ckpt"), "--out".into(), p("probe")],
        vec!["report".into(), "--out".into(), p("probe")],
    ];
    for args in steps {
        println!("$ tacoforge {} --config run.toml", args.join(" "));
        let mut argv = vec!["tacoforge".to_string()];
        argv.extend(args);
        argv.extend(["--config".to_string(), cfg.clone()]);
        run_args(argv, None)?;
        println!();
    }
    let snapshot = std::fs::read_to_string(root.join("run/resolved_config.toml")).expect("snapshot");
    println!("resolved config of the pretraining run starts with:\n{}", snapshot.lines().take(6).collect::<Vec<_>>().join("\n"));
    Ok(())
}
