//! Contrastive objectives and the supervised losses used by the baselines.
//!
//! Contrastive losses take embeddings in any precision, accumulate in f64 and
//! hand back gradients with respect to every embedding argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gemm, ForwardCache, NdArray, NetSpec, ParamStore, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// One window negative per sample, binary softmax.
    PremierTaco,
    /// Every other sample's positive is a negative (N-way softmax).
    TacoBatch,
    /// Softmax over the positive and every window negative.
    PremierAllWindow,
    /// Predict `a_t` from `(z_t, z_{t+1})`; no contrastive term.
    InverseDynamics,
}

impl LossVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::PremierTaco => "premier_taco",
            LossVariant::TacoBatch => "taco_batch",
            LossVariant::PremierAllWindow => "premier_all_window",
            LossVariant::InverseDynamics => "inverse_dynamics",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "premier_taco" => Ok(LossVariant::PremierTaco),
            "taco_batch" => Ok(LossVariant::TacoBatch),
            "premier_all_window" => Ok(LossVariant::PremierAllWindow),
            "inverse_dynamics" => Ok(LossVariant::InverseDynamics),
            _ => Err(Error::config(format!(
                "unknown loss variant {s:?} (premier_taco, taco_batch, premier_all_window, inverse_dynamics)"
            ))),
        }
    }
}

/// Value and gradients of a contrastive loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub grad_g: NdArray<T>,
    pub grad_h_pos: NdArray<T>,
    /// Absent for the batch loss, which has no separate negatives.
    pub grad_h_neg: Option<NdArray<T>>,
    /// Number of `g . h` inner products evaluated.
    pub similarity_evals: u64,
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log sum exp(xs)`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("temperature must be positive and finite, got {tau}")))
    }
}

fn check_finite<T: Scalar>(what: &str, a: &NdArray<T>) -> Result<()> {
    if a.all_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("non-finite values in {what}")))
    }
}

fn check_matrix<T: Scalar>(what: &str, a: &NdArray<T>, rows: usize, cols: usize) -> Result<()> {
    if a.shape() != [rows, cols] {
        return Err(Error::shape(what, format!("expected [{rows}, {cols}], got {:?}", a.shape())));
    }
    Ok(())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

/// `dst += c * src`, with `c` in f64.
fn axpy<T: Scalar>(dst: &mut [T], c: f64, src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = T::from_f64_lossy(d.as_f64() + c * s.as_f64());
    }
}

/// Binary contrastive loss with one negative per sample:
/// `mean_i softplus(<g_i, h-_i>/tau - <g_i, h+_i>/tau)`.
pub fn premier_taco_loss<T: Scalar>(g: &NdArray<T>, h_pos: &NdArray<T>, h_neg: &NdArray<T>, tau: f64) -> Result<LossOutput<T>> {
    let counts = vec![1; g.rows()];
    premier_all_window_loss(g, h_pos, h_neg, &counts, tau)
}

/// Softmax over one positive and `neg_counts[i]` negatives per sample.
/// `h_neg` stacks the negatives of all samples in order.
pub fn premier_all_window_loss<T: Scalar>(
    g: &NdArray<T>,
    h_pos: &NdArray<T>,
    h_neg: &NdArray<T>,
    neg_counts: &[usize],
    tau: f64,
) -> Result<LossOutput<T>> {
    check_tau(tau)?;
    let n = g.rows();
    if n == 0 || neg_counts.len() != n {
        return Err(Error::config(format!("{} samples but {} negative counts", n, neg_counts.len())));
    }
    if neg_counts.contains(&0) {
        return Err(Error::config("every sample needs at least one negative"));
    }
    let f = g.row_len();
    let total_neg: usize = neg_counts.iter().sum();
    check_matrix("g", g, n, f)?;
    check_matrix("h_pos", h_pos, n, f)?;
    check_matrix("h_neg", h_neg, total_neg, f)?;
    check_finite("g", g)?;
    check_finite("h_pos", h_pos)?;
    check_finite("h_neg", h_neg)?;

    let inv_tau = 1.0 / tau;
    let inv_n = 1.0 / n as f64;
    let mut grad_g = NdArray::zeros(&[n, f]);
    let mut grad_h_pos = NdArray::zeros(&[n, f]);
    let mut grad_h_neg = NdArray::zeros(&[total_neg, f]);
    let mut loss = 0.0;
    let mut off = 0;
    let mut logits = Vec::new();
    for (i, &q) in neg_counts.iter().enumerate() {
        let gi = g.row(i);
        logits.clear();
        logits.push(dot(gi, h_pos.row(i)) * inv_tau);
        for j in 0..q {
            logits.push(dot(gi, h_neg.row(off + j)) * inv_tau);
        }
        let grad_pos;
        if q == 1 {
            // Binary case in softplus form, exact for any logit gap.
            let d = logits[1] - logits[0];
            loss += softplus(d);
            let s = sigmoid(d);
            grad_pos = -s;
            let c = s * inv_n * inv_tau;
            axpy(grad_h_neg.row_mut(off), c, gi);
            axpy(grad_g.row_mut(i), c, h_neg.row(off));
        } else {
            let lse = log_sum_exp(&logits);
            loss += lse - logits[0];
            grad_pos = (logits[0] - lse).exp() - 1.0;
            for j in 0..q {
                let c = (logits[j + 1] - lse).exp() * inv_n * inv_tau;
                axpy(grad_h_neg.row_mut(off + j), c, gi);
                axpy(grad_g.row_mut(i), c, h_neg.row(off + j));
            }
        }
        let c = grad_pos * inv_n * inv_tau;
        axpy(grad_h_pos.row_mut(i), c, gi);
        axpy(grad_g.row_mut(i), c, h_pos.row(i));
        off += q;
    }
    Ok(LossOutput {
        loss: loss * inv_n,
        grad_g,
        grad_h_pos,
        grad_h_neg: Some(grad_h_neg),
        similarity_evals: (n + total_neg) as u64,
    })
}

/// N-way InfoNCE over the batch: logits `L_ij = <g_i, h_j>/tau`, loss
/// `mean_i (logsumexp_j L_ij - L_ii)`.
pub fn taco_batch_loss<T: Scalar>(g: &NdArray<T>, h: &NdArray<T>, tau: f64) -> Result<LossOutput<T>> {
    check_tau(tau)?;
    let n = g.rows();
    if n < 2 {
        return Err(Error::config(format!("batch InfoNCE needs at least 2 samples, got {n}")));
    }
    let f = g.row_len();
    check_matrix("g", g, n, f)?;
    check_matrix("h", h, n, f)?;
    check_finite("g", g)?;
    check_finite("h", h)?;

    let gf = g.to_f64_vec();
    let hf = h.to_f64_vec();
    let mut logits = vec![0.0; n * n];
    gemm(false, true, n, f, n, 1.0 / tau, &gf, &hf, 0.0, &mut logits);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    // dlogits = (softmax - I) / N, reused in place
    for i in 0..n {
        let row = &mut logits[i * n..(i + 1) * n];
        let lse = log_sum_exp(row);
        loss += lse - row[i];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[i] -= inv_n;
    }
    let mut dg = vec![0.0; n * f];
    let mut dh = vec![0.0; n * f];
    gemm(false, false, n, n, f, 1.0 / tau, &logits, &hf, 0.0, &mut dg);
    gemm(true, false, n, n, f, 1.0 / tau, &logits, &gf, 0.0, &mut dh);
    Ok(LossOutput {
        loss: loss * inv_n,
        grad_g: NdArray::from_f64(&[n, f], &dg)?,
        grad_h_pos: NdArray::from_f64(&[n, f], &dh)?,
        grad_h_neg: None,
        similarity_evals: (n * n) as u64,
    })
}

/// `mean((pred - target)^2)` over every entry, with its gradient.
pub fn mse<T: Scalar>(pred: &NdArray<T>, target: &NdArray<T>) -> Result<(f64, NdArray<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse", format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p.as_f64() - t.as_f64();
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, NdArray::from_f64(pred.shape(), &grad)?))
}

/// Result of a supervised head loss.
#[derive(Debug, Clone)]
pub struct HeadLoss<T> {
    pub loss: f64,
    /// Gradient with respect to the head input (present when requested).
    pub input_grad: Option<NdArray<T>>,
    pub cache: ForwardCache<T>,
}

/// Mean squared error of `head([z_t, z_next])` against `a_t`. Accumulates
/// head gradients when `with_grad`.
pub fn inverse_dynamics_loss<T: Scalar>(
    head: &NetSpec,
    params: &mut ParamStore<T>,
    z_t: &NdArray<T>,
    z_next: &NdArray<T>,
    a_t: &NdArray<T>,
    with_grad: bool,
) -> Result<HeadLoss<T>> {
    let input = NdArray::concat_cols(z_t, z_next)?;
    supervised_head(head, params, &input, a_t, with_grad)
}

/// Mean squared error between the policy head's output and expert actions.
/// The head is expected to end in tanh so outputs are squashed to (-1, 1).
pub fn bc_loss<T: Scalar>(
    head: &NetSpec,
    params: &mut ParamStore<T>,
    z: &NdArray<T>,
    a_expert: &NdArray<T>,
    with_grad: bool,
) -> Result<HeadLoss<T>> {
    supervised_head(head, params, z, a_expert, with_grad)
}

fn supervised_head<T: Scalar>(
    head: &NetSpec,
    params: &mut ParamStore<T>,
    input: &NdArray<T>,
    target: &NdArray<T>,
    with_grad: bool,
) -> Result<HeadLoss<T>> {
    let (pred, cache) = head.forward(params, input)?;
    let (loss, grad) = mse(&pred, target)?;
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite head loss {loss}")));
    }
    let input_grad = if with_grad {
        Some(head.backward(params, &cache, &grad)?)
    } else {
        None
    };
    Ok(HeadLoss { loss, input_grad, cache })
}

/// Inner products per training step for each contrastive variant at batch
/// size `n` (`q` window negatives per sample for the all-window variant).
pub fn similarity_evals_per_step(variant: LossVariant, n: usize, q: usize) -> u64 {
    match variant {
        LossVariant::PremierTaco => 2 * n as u64,
        LossVariant::TacoBatch => (n * n) as u64,
        LossVariant::PremierAllWindow => (n * (1 + q)) as u64,
        LossVariant::InverseDynamics => 0,
    }
}
