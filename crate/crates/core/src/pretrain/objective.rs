use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderConfig, EncoderSuite, Net, SuiteSpec};
use crate::error::{Error, Result};
use crate::losses::{
    inverse_dynamics_loss, premier_all_window_loss, premier_taco_loss, taco_batch_loss, LossOutput, LossVariant,
};
use crate::nn::rng::{derive_seed, label_id};
use crate::nn::{Activation, NdArray, NetSpec, ParamStore, Parameterized, Scalar};
use crate::sampler::{NegativeMode, TransitionBatch};

/// Encoder suite plus the inverse-dynamics head when that baseline is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainModel<T> {
    pub suite: EncoderSuite<T>,
    pub id_head: Option<(NetSpec, ParamStore<T>)>,
}

/// Architecture of a [`PretrainModel`]; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub suite: SuiteSpec,
    pub id_head: Option<NetSpec>,
}

pub fn inverse_dynamics_head(features: usize, hidden: usize, action_dim: usize) -> NetSpec {
    NetSpec::mlp(vec![2 * features, hidden, action_dim], Activation::Relu, None)
}

impl ModelSpec {
    pub fn new(suite: SuiteSpec, variant: LossVariant, cfg: &EncoderConfig) -> Self {
        let id_head = (variant == LossVariant::InverseDynamics)
            .then(|| inverse_dynamics_head(suite.features(), cfg.state_hidden, suite.action_dim));
        ModelSpec { suite, id_head }
    }
}

impl<T: Scalar> PretrainModel<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let suite = EncoderSuite::new(spec.suite, seed)?;
        let id_head = match spec.id_head {
            Some(h) => {
                let p = h.init_params(derive_seed(seed, &[label_id("init"), label_id("id_head")]))?;
                Some((h, p))
            }
            None => None,
        };
        Ok(PretrainModel { suite, id_head })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            suite: self.suite.spec.clone(),
            id_head: self.id_head.as_ref().map(|(s, _)| s.clone()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PretrainModel<U> {
        PretrainModel {
            suite: self.suite.cast(),
            id_head: self.id_head.as_ref().map(|(s, p)| (s.clone(), p.cast())),
        }
    }
}

impl<T: Scalar> Parameterized<T> for PretrainModel<T> {
    fn stores(&self) -> Vec<(&str, &ParamStore<T>)> {
        let mut v = self.suite.stores();
        if let Some((_, p)) = &self.id_head {
            v.push(("id_head", p));
        }
        v
    }

    fn stores_mut(&mut self) -> Vec<(&str, &mut ParamStore<T>)> {
        let mut v = self.suite.stores_mut();
        if let Some((_, p)) = &mut self.id_head {
            v.push(("id_head", p));
        }
        v
    }
}

/// Outcome of one evaluation of the pretraining objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveStats {
    pub loss: f64,
    pub similarity_evals: u64,
    /// Combined ReLU pattern of every network pass.
    pub relu_signature: u64,
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0000_0100_0000_01B3).rotate_left(17)
}

/// Which negatives a variant needs from the sampler.
pub fn negative_mode(variant: LossVariant) -> NegativeMode {
    match variant {
        LossVariant::PremierAllWindow => NegativeMode::AllWindow,
        _ => NegativeMode::Single,
    }
}

/// Evaluates the objective on `batch` and, with `with_grad`, accumulates
/// gradients into every network it touches. Gradients are not zeroed here.
///
/// The inverse-dynamics variant reads `s_pos` as the next state, so its
/// batches must be sampled with a horizon of one.
pub fn objective<T: Scalar>(
    model: &mut PretrainModel<T>,
    batch: &TransitionBatch<T>,
    variant: LossVariant,
    tau: f64,
    with_grad: bool,
) -> Result<ObjectiveStats> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::config("empty batch"));
    }
    let suite = &model.suite;
    let with_neg = matches!(variant, LossVariant::PremierTaco | LossVariant::PremierAllWindow);
    // One φ pass over every state of the batch (shared weights).
    let stacked = if with_neg {
        NdArray::concat_rows(&[&batch.s_t, &batch.s_pos, &batch.s_neg])?
    } else {
        NdArray::concat_rows(&[&batch.s_t, &batch.s_pos])?
    };
    let (z_all, phi_cache) = suite.encode_state(&stacked)?;
    let total = z_all.rows();
    let z_t = z_all.slice_rows(0, n);
    let mut sig = mix(0, phi_cache.relu_signature());

    if variant == LossVariant::InverseDynamics {
        let z_next = z_all.slice_rows(n, 2 * n);
        let m = suite.spec.action_dim;
        let k = batch.a_seq.shape()[1];
        let a_t = NdArray::from_vec(
            vec![n, m],
            (0..n).flat_map(|i| batch.a_seq.data()[i * k * m..i * k * m + m].to_vec()).collect(),
        )?;
        let (head, params) = model
            .id_head
            .as_mut()
            .ok_or_else(|| Error::config("inverse_dynamics variant needs a model with an inverse-dynamics head"))?;
        let out = inverse_dynamics_loss(head, params, &z_t, &z_next, &a_t, with_grad)?;
        sig = mix(sig, out.cache.relu_signature());
        if let Some(dz) = out.input_grad {
            let f = z_t.row_len();
            let (dz_t, dz_next) = dz.split_cols(f);
            let dz_all = NdArray::concat_rows(&[&dz_t, &dz_next])?;
            model.suite.backward(Net::Phi, &phi_cache, &dz_all, false)?;
        }
        return Ok(ObjectiveStats {
            loss: out.loss,
            similarity_evals: 0,
            relu_signature: sig,
        });
    }

    let (u, psi_cache) = suite.encode_action(&batch.a_seq)?;
    let k = batch.a_seq.shape()[1];
    let mu = u.row_len();
    let u_seq = u.reshape(&[n, k, mu])?;
    let (g, g_cache) = suite.project_g(&z_t, &u_seq)?;
    let (h_all, h_cache) = suite.project_h(&z_all.slice_rows(n, total))?;
    sig = mix(sig, psi_cache.relu_signature());
    sig = mix(sig, g_cache.relu_signature());
    sig = mix(sig, h_cache.relu_signature());
    let h_pos = h_all.slice_rows(0, n);
    let out: LossOutput<T> = match variant {
        LossVariant::PremierTaco => premier_taco_loss(&g, &h_pos, &h_all.slice_rows(n, h_all.rows()), tau)?,
        LossVariant::PremierAllWindow => {
            premier_all_window_loss(&g, &h_pos, &h_all.slice_rows(n, h_all.rows()), &batch.neg_counts, tau)?
        }
        LossVariant::TacoBatch => taco_batch_loss(&g, &h_pos, tau)?,
        LossVariant::InverseDynamics => unreachable!(),
    };
    if !out.loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {}", out.loss)));
    }
    if with_grad {
        let dh_all = match &out.grad_h_neg {
            Some(neg) => NdArray::concat_rows(&[&out.grad_h_pos, neg])?,
            None => out.grad_h_pos.clone(),
        };
        let suite = &mut model.suite;
        let dz_h = suite.backward(Net::H, &h_cache, &dh_all, true)?.expect("input grad");
        let dgin = suite.backward(Net::G, &g_cache, &out.grad_g, true)?.expect("input grad");
        let (dz_t, du) = dgin.split_cols(z_t.row_len());
        let du = du.reshape(&[n * k, mu])?;
        suite.backward(Net::Psi, &psi_cache, &du, false)?;
        let dz_all = NdArray::concat_rows(&[&dz_t, &dz_h])?;
        suite.backward(Net::Phi, &phi_cache, &dz_all, false)?;
    }
    Ok(ObjectiveStats {
        loss: out.loss,
        similarity_evals: out.similarity_evals,
        relu_signature: sig,
    })
}
