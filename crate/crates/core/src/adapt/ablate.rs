//! Batch-size and window-size sweeps, scored by held-out probe R².

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::data::MultitaskDataset;
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::nn::{DType, Scalar};
use crate::pretrain::{pretrain, PretrainConfig};

use super::probe::probe_encoder;

pub const TABLE_HEADER: &str = "variant,batch_size_or_W,seed,metric,value";

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    #[serde(rename = "batch_size_or_W")]
    pub batch_size_or_w: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Shared inputs of a sweep.
pub struct AblationSetup<'a> {
    /// Settings every job starts from.
    pub base: PretrainConfig,
    pub dataset: Arc<MultitaskDataset>,
    /// Held-out episodes with latents for scoring.
    pub probe: &'a MultitaskDataset,
    /// Jobs run concurrently (each one single-threaded).
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationJob {
    pub config: PretrainConfig,
    /// Value reported in the `batch_size_or_W` column.
    pub axis_value: usize,
}

fn run_job<T: Scalar>(job: &AblationJob, setup: &AblationSetup<'_>) -> Result<AblationRow> {
    let ckpt = pretrain::<T>(&job.config, setup.dataset.clone())?;
    let r2 = probe_encoder(ckpt.suite(), setup.probe, job.config.seed)?;
    Ok(AblationRow {
        variant: job.config.variant.as_str().to_string(),
        batch_size_or_w: job.axis_value,
        seed: job.config.seed,
        metric: "probe_r2".into(),
        value: r2,
    })
}

/// Runs every job (up to `setup.jobs` at a time); rows come back in job order.
pub fn run_jobs(setup: &AblationSetup<'_>, jobs: &[AblationJob]) -> Result<Vec<AblationRow>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AblationRow>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = setup.jobs.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = match jobs[i].config.dtype {
                    DType::F32 => run_job::<f32>(&jobs[i], setup),
                    DType::F64 => run_job::<f64>(&jobs[i], setup),
                };
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(Error::Internal("ablation job did not run".into()))))
        .collect()
}

/// Probe R² per (variant, batch size, seed) at the base step budget.
pub fn ablate_batch_size(
    setup: &AblationSetup<'_>,
    sizes: &[usize],
    variants: &[LossVariant],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut jobs = Vec::new();
    for &variant in variants {
        for &batch_size in sizes {
            for &seed in seeds {
                let config = PretrainConfig {
                    variant,
                    batch_size,
                    seed,
                    ..setup.base.clone()
                };
                config.validate()?;
                jobs.push(AblationJob {
                    config,
                    axis_value: batch_size,
                });
            }
        }
    }
    run_jobs(setup, &jobs)
}

/// Probe R² per (W, seed) with the base variant.
pub fn ablate_window(setup: &AblationSetup<'_>, windows: &[usize], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut jobs = Vec::new();
    for &w in windows {
        if w == 0 {
            return Err(Error::config("window sizes must be >= 1"));
        }
        for &seed in seeds {
            jobs.push(AblationJob {
                config: PretrainConfig {
                    w,
                    seed,
                    ..setup.base.clone()
                },
                axis_value: w,
            });
        }
    }
    run_jobs(setup, &jobs)
}

pub fn write_table(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(e, path))?;
    // serde writes the header with the first row; an empty table still gets one
    if rows.is_empty() {
        w.write_record(TABLE_HEADER.split(',')).map_err(|e| csv_error(e, path))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(e, path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(e, path))?;
    let header = r.headers().map_err(|e| csv_error(e, path))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != TABLE_HEADER {
        return Err(Error::Format(format!("{}: expected header {TABLE_HEADER:?}", path.display())));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(e, path)))
        .collect()
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}
