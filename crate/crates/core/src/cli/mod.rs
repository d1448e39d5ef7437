//! Command-line front end. Every command reads one TOML config (optional),
//! applies flag overrides, snapshots the resolved config beside its outputs
//! and maps errors to exit codes (2 config, 3 data, 4 numeric).

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adapt::{
    ablate_batch_size, ablate_window, behavior_clone, probe_encoder, probe_random_init, read_table, write_table,
    AblationRow, AblationSetup, EncoderInit, EvalReport,
};
use crate::data::{generate, load_dataset, read_manifest, save_dataset, BehaviorTag, MultitaskDataset};
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::nn::{DType, GradCheckOptions, Scalar};
use crate::pretrain::{load_checkpoint_cast, pretrain_to_dir, Pretrainer, RunOutputs, FINAL_CHECKPOINT};
use crate::selfcheck::{gradient_suite, require_pass, GRAD_TOLERANCE};

pub use config::{parse_values, prepare_out_dir, AblateSection, Axis, PathsSection, RunConfig, DTYPE_ENV, RESOLVED_CONFIG};

pub const PRETRAIN_DIR: &str = "pretrain";
pub const HELDOUT_DIR: &str = "heldout";
pub const PROBE_DIR: &str = "probe";
pub const ADAPT_REPORTS: &str = "adapt_reports.json";
pub const PROBE_REPORT: &str = "probe.json";
pub const ABLATION_TABLE: &str = "ablation.csv";
pub const GRADCHECK_REPORT: &str = "gradcheck.json";
pub const SUMMARY: &str = "summary.md";

#[derive(Debug, Parser)]
#[command(name = "tacoforge", version, about = "Contrastive pretraining and few-shot imitation on synthetic control tasks")]
pub struct Cli {
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate pretraining, held-out demonstration and probe datasets.
    GenData {
        #[arg(long, value_parser = parse_behavior)]
        behavior: Option<BehaviorTag>,
    },
    /// Pretrain the encoders on a generated dataset.
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<LossVariant>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Few-shot behavior cloning on every held-out task.
    Adapt {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Train the encoder from a fresh initialization instead.
        #[arg(long)]
        from_scratch: bool,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Linear-probe R² of a checkpoint (and of a random-init encoder).
    Probe {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Batch-size or window-size sweep scored by probe R².
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        /// Comma-separated axis values, e.g. 1,3,5,7,9.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Finite-difference check of every network and objective.
    Gradcheck,
    /// Summarize the tables and reports found in --out.
    Report,
}

fn parse_variant(s: &str) -> std::result::Result<LossVariant, String> {
    LossVariant::parse(s).map_err(|e| e.to_string())
}

fn parse_behavior(s: &str) -> std::result::Result<BehaviorTag, String> {
    match s {
        "expert" => Ok(BehaviorTag::Expert),
        "noisy_scripted" => Ok(BehaviorTag::NoisyScripted),
        "uniform_random" => Ok(BehaviorTag::UniformRandom),
        _ => Err(format!("unknown behavior {s:?} (expert, noisy_scripted, uniform_random)")),
    }
}

/// Parses `args` and runs the command. `env_dtype` is the value of
/// `TACOFORGE_DTYPE`, passed in so callers control the environment.
pub fn run_args<I, S>(args: I, env_dtype: Option<&str>) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::config(e.to_string()))?;
    run(cli, env_dtype)
}

/// Process entry point: prints errors and returns the exit code.
pub fn main_exit_code() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let env = std::env::var(DTYPE_ENV).ok();
    match run(cli, env.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, env_dtype: Option<&str>) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out.clone() {
        cfg.out = Some(out);
    }
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    let dtype = cfg.resolve_dtype(env_dtype)?;
    match cli.command {
        Command::GenData { behavior } => {
            if let Some(b) = behavior {
                cfg.data.behavior = b;
            }
            gen_data(cfg, cli.force)
        }
        Command::Pretrain {
            data,
            variant,
            steps,
            resume,
        } => {
            set(&mut cfg.paths.data, data);
            if let Some(v) = variant {
                cfg.pretrain.variant = v;
            }
            if let Some(s) = steps {
                cfg.pretrain.steps = s;
            }
            match dtype {
                DType::F32 => pretrain_cmd::<f32>(cfg, resume, cli.force),
                DType::F64 => pretrain_cmd::<f64>(cfg, resume, cli.force),
            }
        }
        Command::Adapt {
            data,
            checkpoint,
            from_scratch,
            steps,
        } => {
            set(&mut cfg.paths.data, data);
            set(&mut cfg.paths.checkpoint, checkpoint);
            if let Some(s) = steps {
                cfg.bc.steps = s;
            }
            match dtype {
                DType::F32 => adapt_cmd::<f32>(cfg, from_scratch, cli.force),
                DType::F64 => adapt_cmd::<f64>(cfg, from_scratch, cli.force),
            }
        }
        Command::Probe { data, checkpoint } => {
            set(&mut cfg.paths.data, data);
            set(&mut cfg.paths.checkpoint, checkpoint);
            match dtype {
                DType::F32 => probe_cmd::<f32>(cfg, cli.force),
                DType::F64 => probe_cmd::<f64>(cfg, cli.force),
            }
        }
        Command::Ablate {
            data,
            axis,
            values,
            jobs,
            steps,
        } => {
            set(&mut cfg.paths.data, data);
            if let Some(a) = axis {
                cfg.ablate.axis = a;
            }
            if let Some(v) = values {
                cfg.ablate.values = parse_values(&v)?;
            }
            if let Some(j) = jobs {
                cfg.ablate.jobs = j;
            }
            if let Some(s) = steps {
                cfg.pretrain.steps = s;
            }
            ablate_cmd(cfg, cli.force)
        }
        Command::Gradcheck => gradcheck_cmd(cfg, cli.force),
        Command::Report => report_cmd(cfg),
    }
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_split(cfg: &RunConfig, name: &str) -> Result<MultitaskDataset> {
    let dir = cfg.data_dir()?.join(name);
    if !dir.exists() {
        return Err(Error::Dataset(format!(
            "dataset {} not found (run `tacoforge gen-data --out {}` first)",
            dir.display(),
            cfg.data_dir()?.display()
        )));
    }
    load_dataset(&dir)
}

fn gen_data(mut cfg: RunConfig, force: bool) -> Result<()> {
    if let Some(s) = cfg.seed {
        cfg.data.seed = s;
    }
    cfg.data.validate()?;
    let out = cfg.out_dir()?.to_path_buf();
    prepare_out_dir(&out, force)?;
    let data = generate(&cfg.data)?;
    for (name, ds) in [(PRETRAIN_DIR, &data.pretrain), (HELDOUT_DIR, &data.heldout), (PROBE_DIR, &data.probe)] {
        save_dataset(ds, &out.join(name))?;
    }
    cfg.write_snapshot(&out)?;
    for (name, ds) in [(PRETRAIN_DIR, &data.pretrain), (HELDOUT_DIR, &data.heldout), (PROBE_DIR, &data.probe)] {
        let mut mix: BTreeMap<&str, usize> = BTreeMap::new();
        for e in ds.episodes() {
            *mix.entry(e.behavior.as_str()).or_default() += 1;
        }
        let mix: Vec<String> = mix.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!(
            "{name}: {} tasks, {} episodes ({}), fingerprint {}",
            ds.manifest().tasks.len(),
            ds.episodes().len(),
            mix.join(", "),
            ds.fingerprint()
        );
    }
    Ok(())
}

fn pretrain_cmd<T: Scalar>(mut cfg: RunConfig, resume: Option<PathBuf>, force: bool) -> Result<()> {
    if let Some(s) = cfg.seed {
        cfg.pretrain.seed = s;
    }
    cfg.pretrain.validate()?;
    let ds = Arc::new(load_split(&cfg, PRETRAIN_DIR)?);
    if let Some(want) = &cfg.paths.expect_fingerprint {
        if *want != ds.fingerprint() {
            return Err(Error::Dataset(format!(
                "dataset fingerprint is {} but the config expects {want}",
                ds.fingerprint()
            )));
        }
    }
    let probe = if cfg.pretrain.eval_probe_every > 0 {
        Some(load_split(&cfg, PROBE_DIR)?)
    } else {
        None
    };
    let out = cfg.out_dir()?.to_path_buf();
    prepare_out_dir(&out, force)?;
    let mut trainer = match resume {
        Some(p) => {
            let mut ckpt = load_checkpoint_cast::<T>(&p)?;
            if ckpt.config.variant != cfg.pretrain.variant {
                return Err(Error::config(format!(
                    "checkpoint was trained with {} but the config asks for {}",
                    ckpt.config.variant.as_str(),
                    cfg.pretrain.variant.as_str()
                )));
            }
            ckpt.config.steps = cfg.pretrain.steps;
            Pretrainer::resume(ckpt, ds)?
        }
        None => Pretrainer::<T>::new(cfg.pretrain.clone(), ds)?,
    };
    cfg.write_snapshot(&out)?;
    let ckpt = pretrain_to_dir(
        &mut trainer,
        cfg.pretrain.steps,
        RunOutputs {
            dir: &out,
            probe: probe.as_ref(),
        },
    )?;
    let last = ckpt.metric_tail.last().map(|m| m.loss).unwrap_or(f64::NAN);
    println!(
        "pretrained {} for {} steps (final loss {last:.4}); checkpoint {}",
        ckpt.config.variant.as_str(),
        ckpt.step,
        out.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

/// Held-out tasks must not appear among the pretraining tasks.
fn check_heldout(cfg: &RunConfig, heldout: &MultitaskDataset) -> Result<()> {
    let dir = cfg.data_dir()?.join(PRETRAIN_DIR);
    if !dir.exists() {
        return Ok(());
    }
    let pre = read_manifest(&dir)?;
    for t in heldout.tasks() {
        if pre.tasks.iter().any(|p| p.spec.task_id == t.task_id || p.spec.goal == t.goal) {
            return Err(Error::Dataset(format!("held-out task {} appears in the pretraining manifest", t.task_id)));
        }
    }
    Ok(())
}

fn adapt_cmd<T: Scalar>(mut cfg: RunConfig, from_scratch: bool, force: bool) -> Result<()> {
    if let Some(s) = cfg.seed {
        cfg.bc.seed = s;
    }
    cfg.bc.validate()?;
    let heldout = load_split(&cfg, HELDOUT_DIR)?;
    check_heldout(&cfg, &heldout)?;
    let ckpt = if from_scratch {
        None
    } else {
        Some(load_checkpoint_cast::<T>(cfg.checkpoint_path()?)?)
    };
    let out = cfg.out_dir()?.to_path_buf();
    prepare_out_dir(&out, force)?;
    cfg.write_snapshot(&out)?;
    let demos: Vec<_> = heldout.episodes().iter().collect();
    let mut reports: Vec<EvalReport> = Vec::new();
    for task in heldout.tasks() {
        let init = match &ckpt {
            Some(c) => EncoderInit::Pretrained(c.suite()),
            None => EncoderInit::Scratch,
        };
        let run = behavior_clone::<T>(init, &demos, task, &cfg.bc)?;
        println!(
            "task {}: best-3 ratio {:.3}, final train mse {:.2e}",
            task.task_id, run.report.best3, run.report.final_train_mse
        );
        reports.push(run.report);
    }
    write_json(&out.join(ADAPT_REPORTS), &reports)?;
    let mean = reports.iter().map(|r| r.best3).sum::<f64>() / reports.len().max(1) as f64;
    println!(
        "{}: mean best-3 ratio {mean:.3} over {} tasks",
        if from_scratch { "learn from scratch" } else { "pretrained" },
        reports.len()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub checkpoint: Option<PathBuf>,
    pub probe_r2: Option<f64>,
    pub random_init_r2: f64,
}

fn probe_cmd<T: Scalar>(mut cfg: RunConfig, force: bool) -> Result<()> {
    let seed = cfg.seed.unwrap_or(cfg.pretrain.seed);
    let ds = load_split(&cfg, PROBE_DIR)?;
    let ckpt = match &cfg.paths.checkpoint {
        Some(p) => Some(load_checkpoint_cast::<T>(p)?),
        None => None,
    };
    if let Some(c) = &ckpt {
        cfg.pretrain = c.config.clone();
    }
    let probe_r2 = match &ckpt {
        Some(c) => Some(probe_encoder(c.suite(), &ds, seed)?),
        None => None,
    };
    let random_init_r2 = probe_random_init::<T>(&ds, cfg.pretrain.k, &cfg.pretrain.encoder, seed, seed)?;
    let report = ProbeReport {
        checkpoint: cfg.paths.checkpoint.clone(),
        probe_r2,
        random_init_r2,
    };
    let out = cfg.out_dir()?.to_path_buf();
    prepare_out_dir(&out, force)?;
    cfg.write_snapshot(&out)?;
    write_json(&out.join(PROBE_REPORT), &report)?;
    match probe_r2 {
        Some(r) => println!("probe R2 {r:.4} (random init {random_init_r2:.4}, delta {:.4})", r - random_init_r2),
        None => println!("random-init probe R2 {random_init_r2:.4}"),
    }
    Ok(())
}

fn ablate_cmd(mut cfg: RunConfig, force: bool) -> Result<()> {
    if let Some(s) = cfg.seed {
        cfg.ablate.seeds = vec![s];
    }
    if cfg.ablate.values.is_empty() || cfg.ablate.seeds.is_empty() {
        return Err(Error::config("ablation needs at least one value and one seed"));
    }
    let ds = Arc::new(load_split(&cfg, PRETRAIN_DIR)?);
    let probe = load_split(&cfg, PROBE_DIR)?;
    let out = cfg.out_dir()?.to_path_buf();
    prepare_out_dir(&out, force)?;
    cfg.write_snapshot(&out)?;
    let setup = AblationSetup {
        base: cfg.pretrain.clone(),
        dataset: ds,
        probe: &probe,
        jobs: cfg.ablate.jobs,
    };
    let a = &cfg.ablate;
    let rows = match a.axis {
        Axis::BatchSize => ablate_batch_size(&setup, &a.values, &a.variants, &a.seeds)?,
        Axis::Window => ablate_window(&setup, &a.values, &a.seeds)?,
    };
    let path = out.join(ABLATION_TABLE);
    write_table(&rows, &path)?;
    println!("{}", summarize_rows(&rows));
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn gradcheck_cmd(cfg: RunConfig, force: bool) -> Result<()> {
    let entries = gradient_suite(&GradCheckOptions::default())?;
    for e in &entries {
        println!(
            "{:<40} max_rel_err {:.3e}  checked {:>4}  kinks {:>3}  {}",
            e.name,
            e.max_rel_error,
            e.checked,
            e.skipped_kinks,
            if e.passed() { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &cfg.out {
        prepare_out_dir(out, force)?;
        cfg.write_snapshot(out)?;
        write_json(&out.join(GRADCHECK_REPORT), &entries)?;
    }
    let worst = require_pass(&entries)?;
    println!("max_rel_err {worst:.3e} < {GRAD_TOLERANCE:e}");
    Ok(())
}

/// Mean, sample standard deviation and count of `metric` per (variant, axis value).
pub fn summarize_rows(rows: &[AblationRow]) -> String {
    let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.variant.clone(), r.batch_size_or_w, r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    let mut s = String::from("| variant | batch_size_or_W | metric | mean | std | n |\n|---|---|---|---|---|---|\n");
    for ((variant, axis, metric), v) in groups {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        s += &format!("| {variant} | {axis} | {metric} | {mean:.4} | {std:.4} | {} |\n", v.len());
    }
    s
}

fn report_cmd(cfg: RunConfig) -> Result<()> {
    let dir = cfg.out_dir()?;
    let mut sections = Vec::new();
    let table = dir.join(ABLATION_TABLE);
    if table.exists() {
        sections.push(format!("## Ablation\n\n{}", summarize_rows(&read_table(&table)?)));
    }
    let probe = dir.join(PROBE_REPORT);
    if probe.exists() {
        let text = fs::read_to_string(&probe).map_err(|e| Error::io(&probe, e))?;
        let r: ProbeReport = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", probe.display())))?;
        let line = match r.probe_r2 {
            Some(p) => format!("probe R2 {p:.4}, random init {:.4}, delta {:.4}", r.random_init_r2, p - r.random_init_r2),
            None => format!("random-init probe R2 {:.4}", r.random_init_r2),
        };
        sections.push(format!("## Probe\n\n{line}\n"));
    }
    let adapt = dir.join(ADAPT_REPORTS);
    if adapt.exists() {
        let text = fs::read_to_string(&adapt).map_err(|e| Error::io(&adapt, e))?;
        let reports: Vec<EvalReport> =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", adapt.display())))?;
        let mut s = String::from("## Behavior cloning\n\n| task | seed | best-3 ratio | final train mse |\n|---|---|---|---|\n");
        for r in &reports {
            s += &format!("| {} | {} | {:.4} | {:.3e} |\n", r.task_id, r.seed, r.best3, r.final_train_mse);
        }
        sections.push(s);
    }
    if sections.is_empty() {
        return Err(Error::Dataset(format!(
            "nothing to report in {} (expected {ABLATION_TABLE}, {PROBE_REPORT} or {ADAPT_REPORTS})",
            dir.display()
        )));
    }
    let text = format!("# Summary\n\n{}", sections.join("\n"));
    let path = dir.join(SUMMARY);
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    print!("{text}");
    Ok(())
}
