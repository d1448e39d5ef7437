//! Finite-difference checks of every network and every objective on tiny
//! shapes, in f64.

use rand::Rng as _;
use serde::Serialize;

use crate::adapt::{policy_head_spec, PolicyNet};
use crate::data::{generate, DataConfig, GridPixelParams, MultitaskDataset};
use crate::encoders::{normalize_obs, state_encoder_spec, EncoderConfig, EncoderSuite, Net, SuiteSpec};
use crate::error::{Error, Result};
use crate::losses::{mse, LossVariant};
use crate::nn::rng::{label_id, rng_for};
use crate::nn::{grad_check, GradCheckOptions, GradCheckReport, NdArray, NetSpec, Probe};
use crate::pretrain::{inverse_dynamics_head, objective, ModelSpec, PretrainConfig, PretrainModel};

/// Largest acceptable relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradSuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: Option<String>,
}

impl GradSuiteEntry {
    fn new(name: String, r: GradCheckReport) -> Self {
        GradSuiteEntry {
            name,
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            skipped_kinks: r.skipped_kinks,
            worst: r.worst,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < GRAD_TOLERANCE
    }
}

const BATCH: usize = 5;
const TAU: f64 = 0.7;

fn tiny_datasets() -> Result<Vec<(&'static str, MultitaskDataset)>> {
    let vector = DataConfig {
        pretrain_tasks: 2,
        heldout_tasks: 2,
        episodes_per_task: 2,
        horizon: Some(16),
        demos_per_task: Some(1),
        probe_episodes_per_task: 2,
        ..Default::default()
    };
    let pixel = DataConfig {
        grid_pixel: GridPixelParams {
            grid_size: 4,
            image_size: 8,
            frame_stack: 2,
        },
        ..DataConfig {
            family: crate::data::FamilyKind::GridPixel,
            latent_dim: 2,
            action_dim: 2,
            ..vector.clone()
        }
    };
    Ok(vec![
        ("vector", generate(&vector)?.pretrain),
        ("pixel", generate(&pixel)?.pretrain),
    ])
}

fn random_array(shape: &[usize], seed: u64, scale: f64) -> NdArray<f64> {
    let mut rng = rng_for(seed, &[label_id("gradcheck_input")]);
    let n = shape.iter().product();
    NdArray::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape matches")
}

/// `sum(net(x) * w)` for a fixed random `w`.
fn check_net(spec: &NetSpec, input: &NdArray<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut params = spec.init_params::<f64>(opts.seed)?;
    let weights = random_array(&[input.rows(), spec.output_dim()], opts.seed + 1, 1.0);
    grad_check(
        &mut params,
        |p, with_grad| {
            let (y, cache) = spec.forward(p, input)?;
            let loss = y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
            if with_grad {
                spec.backward_params_only(p, &cache, &weights)?;
            }
            Ok(Probe {
                loss,
                relu_signature: cache.relu_signature(),
            })
        },
        opts,
    )
}

fn check_objective(ds: &MultitaskDataset, variant: LossVariant, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = PretrainConfig {
        batch_size: BATCH,
        variant,
        encoder: EncoderConfig::tiny(),
        seed: opts.seed,
        ..Default::default()
    };
    let suite = SuiteSpec::new(ds.obs_kind(), ds.action_dim(), cfg.k, &cfg.encoder)?;
    let mut model = PretrainModel::<f64>::new(ModelSpec::new(suite, variant, &cfg.encoder), opts.seed)?;
    let batch = cfg.batch_plan().batch::<f64>(ds, 0)?;
    grad_check(
        &mut model,
        |m, with_grad| {
            let s = objective(m, &batch, variant, TAU, with_grad)?;
            Ok(Probe {
                loss: s.loss,
                relu_signature: s.relu_signature,
            })
        },
        opts,
    )
}

/// Policy MSE against recorded actions, through head and encoder.
fn check_policy(ds: &MultitaskDataset, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = EncoderConfig::tiny();
    let kind = ds.obs_kind();
    let spec = state_encoder_spec(kind, &cfg)?;
    let enc = spec.init_params(opts.seed)?;
    let mut policy = PolicyNet::<f64>::new(kind, spec, enc, 6, ds.action_dim(), opts.seed)?;
    let ep = &ds.episodes()[0];
    let mut shape = vec![BATCH];
    shape.extend(kind.dims());
    let obs = NdArray::from_vec(shape, ep.observations[..BATCH * ep.obs_len].iter().map(|&v| v as f64).collect())?;
    let obs = normalize_obs(kind, &obs);
    let target = NdArray::from_vec(
        vec![BATCH, ep.action_dim],
        ep.actions[..BATCH * ep.action_dim].iter().map(|&v| v as f64).collect(),
    )?;
    grad_check(
        &mut policy,
        |p, with_grad| {
            let (z, enc_cache) = p.encoder_spec.forward(&p.encoder, &obs)?;
            let (pred, head_cache) = p.head_spec.forward(&p.head, &z)?;
            let (loss, grad) = mse(&pred, &target)?;
            if with_grad {
                let dz = p.head_spec.backward(&mut p.head, &head_cache, &grad)?;
                p.encoder_spec.backward_params_only(&mut p.encoder, &enc_cache, &dz)?;
            }
            Ok(Probe {
                loss,
                relu_signature: enc_cache.relu_signature() ^ head_cache.relu_signature().rotate_left(17),
            })
        },
        opts,
    )
}

/// Runs every check. Entries are named `<obs>/<network or objective>`.
pub fn gradient_suite(opts: &GradCheckOptions) -> Result<Vec<GradSuiteEntry>> {
    let mut out = Vec::new();
    let cfg = EncoderConfig::tiny();
    for (label, ds) in tiny_datasets()? {
        let suite = EncoderSuite::<f64>::new(SuiteSpec::new(ds.obs_kind(), ds.action_dim(), 3, &cfg)?, opts.seed)?;
        let f = cfg.features;
        let m = ds.action_dim();
        let mut obs_shape = vec![BATCH];
        obs_shape.extend(ds.obs_kind().dims());
        let nets: Vec<(String, &NetSpec, Vec<usize>)> = vec![
            (format!("{label}/phi"), suite.spec.net(Net::Phi), obs_shape),
            (format!("{label}/psi"), suite.spec.net(Net::Psi), vec![BATCH, m]),
            (format!("{label}/g"), suite.spec.net(Net::G), vec![BATCH, suite.spec.net(Net::G).input_dim()]),
            (format!("{label}/h"), suite.spec.net(Net::H), vec![BATCH, f]),
        ];
        for (name, spec, shape) in nets {
            let r = check_net(spec, &random_array(&shape, opts.seed, 0.8), opts)?;
            out.push(GradSuiteEntry::new(name, r));
        }
        let heads = [
            ("inverse_dynamics_head", inverse_dynamics_head(f, cfg.state_hidden, m)),
            ("policy_head", policy_head_spec(f, 6, m)),
        ];
        for (name, spec) in heads {
            let r = check_net(&spec, &random_array(&[BATCH, spec.input_dim()], opts.seed, 0.8), opts)?;
            out.push(GradSuiteEntry::new(format!("{label}/{name}"), r));
        }
        for variant in [
            LossVariant::PremierTaco,
            LossVariant::TacoBatch,
            LossVariant::PremierAllWindow,
            LossVariant::InverseDynamics,
        ] {
            let r = check_objective(&ds, variant, opts)?;
            out.push(GradSuiteEntry::new(format!("{label}/objective/{}", variant.as_str()), r));
        }
        out.push(GradSuiteEntry::new(format!("{label}/objective/bc"), check_policy(&ds, opts)?));
    }
    Ok(out)
}

/// Worst entry of a suite run, or an error if any entry failed.
pub fn require_pass(entries: &[GradSuiteEntry]) -> Result<f64> {
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    match entries.iter().find(|e| !e.passed()) {
        Some(e) => Err(Error::Training(format!(
            "gradient check {} failed: max relative error {:.3e} over {} coordinates ({})",
            e.name,
            e.max_rel_error,
            e.checked,
            e.worst.as_deref().unwrap_or("-")
        ))),
        None => Ok(worst),
    }
}
