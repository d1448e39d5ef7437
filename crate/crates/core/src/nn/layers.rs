//! Forward and backward passes for the fixed layer zoo.

use crate::error::{Error, Result};
use crate::nn::array::NdArray;
use crate::nn::params::ParamStore;
use crate::nn::scalar::{gemm, lit, Scalar};
use crate::nn::spec::{Activation, LayerPlan, NetSpec, LAYER_NORM_EPS};

#[derive(Debug, Clone)]
enum Saved<T> {
    Linear { input: NdArray<T> },
    Conv { input: NdArray<T> },
    Relu { pre: NdArray<T> },
    Tanh { out: NdArray<T> },
    LayerNorm { xhat: NdArray<T>, inv_std: Vec<T> },
}

/// Intermediates recorded by [`NetSpec::forward`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    saved: Vec<Saved<T>>,
    batch: usize,
    output_dim: usize,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Hash of every ReLU on/off decision in the pass. Two evaluations with
    /// equal signatures lie on the same linear piece of the network.
    pub fn relu_signature(&self) -> u64 {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        for s in &self.saved {
            if let Saved::Relu { pre } = s {
                for v in pre.data() {
                    let bit = (*v > T::zero()) as u64;
                    h = (h ^ bit).wrapping_mul(0x0000_0100_0000_01B3);
                }
            }
        }
        h
    }

    /// Smallest |pre-activation| over all ReLU units, or +inf without ReLUs.
    pub fn relu_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for s in &self.saved {
            if let Saved::Relu { pre } = s {
                for v in pre.data() {
                    m = m.min(v.as_f64().abs());
                }
            }
        }
        m
    }
}

fn linear_forward<T: Scalar>(x: &NdArray<T>, w: &NdArray<T>, b: &NdArray<T>, fan_out: usize) -> NdArray<T> {
    let n = x.rows();
    let fan_in = x.row_len();
    let mut out = NdArray::zeros(&[n, fan_out]);
    {
        let od = out.data_mut();
        let bd = b.data();
        for r in 0..n {
            od[r * fan_out..(r + 1) * fan_out].copy_from_slice(bd);
        }
    }
    gemm(false, false, n, fan_in, fan_out, T::one(), x.data(), w.data(), T::one(), out.data_mut());
    out
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    in_ch: usize,
    in_hw: (usize, usize),
    kernel: usize,
    stride: usize,
    out_hw: (usize, usize),
    col: &mut [T],
) {
    let (h, w) = in_hw;
    let (ho, wo) = out_hw;
    let plane = ho * wo;
    for c in 0..in_ch {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let src = &x[c * h * w + (oy * stride + ki) * w..];
                    for ox in 0..wo {
                        dst[oy * wo + ox] = src[ox * stride + kj];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    col: &[T],
    in_ch: usize,
    in_hw: (usize, usize),
    kernel: usize,
    stride: usize,
    out_hw: (usize, usize),
    dx: &mut [T],
) {
    let (h, w) = in_hw;
    let (ho, wo) = out_hw;
    let plane = ho * wo;
    for c in 0..in_ch {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let base = c * h * w + (oy * stride + ki) * w;
                    for ox in 0..wo {
                        dx[base + ox * stride + kj] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

impl NetSpec {
    /// Runs the network on a batch. The input's leading dimension is the
    /// batch; trailing dimensions must flatten to [`NetSpec::input_dim`].
    pub fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        input: &NdArray<T>,
    ) -> Result<(NdArray<T>, ForwardCache<T>)> {
        if input.shape().is_empty() || input.row_len() != self.input_dim() {
            return Err(Error::shape(
                self.first_layer_label(),
                format!(
                    "expected rows of width {}, got input of shape {:?}",
                    self.input_dim(),
                    input.shape()
                ),
            ));
        }
        let n = input.rows();
        let mut x = input.clone().reshape(&[n, self.input_dim()])?;
        let mut saved = Vec::new();
        for layer in self.plan() {
            x = match layer {
                LayerPlan::Linear { name, fan_out, .. } => {
                    let w = params.value(&format!("{name}.w"))?;
                    let b = params.value(&format!("{name}.b"))?;
                    if w.shape()[0] != x.row_len() {
                        return Err(Error::shape(name, format!("weight {:?} vs input width {}", w.shape(), x.row_len())));
                    }
                    let y = linear_forward(&x, w, b, fan_out);
                    saved.push(Saved::Linear { input: x });
                    y
                }
                LayerPlan::Conv {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    in_hw,
                    out_hw,
                } => {
                    let w = params.value(&format!("{name}.w"))?;
                    let b = params.value(&format!("{name}.b"))?;
                    let ckk = in_ch * kernel * kernel;
                    let plane = out_hw.0 * out_hw.1;
                    let in_len = in_ch * in_hw.0 * in_hw.1;
                    if x.row_len() != in_len {
                        return Err(Error::shape(name, format!("expected {in_len} inputs per sample, got {}", x.row_len())));
                    }
                    let mut y = NdArray::zeros(&[n, out_ch * plane]);
                    let mut col = vec![T::zero(); ckk * plane];
                    for s in 0..n {
                        im2col(x.row(s), in_ch, in_hw, kernel, stride, out_hw, &mut col);
                        let ys = y.row_mut(s);
                        for (o, &bo) in b.data().iter().enumerate() {
                            ys[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = bo);
                        }
                        gemm(false, false, out_ch, ckk, plane, T::one(), w.data(), &col, T::one(), ys);
                    }
                    saved.push(Saved::Conv { input: x });
                    y
                }
                LayerPlan::Act(Activation::Relu) => {
                    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
                    saved.push(Saved::Relu { pre: x });
                    y
                }
                LayerPlan::Act(Activation::Tanh) => {
                    let y = x.map(|v| v.tanh());
                    saved.push(Saved::Tanh { out: y.clone() });
                    y
                }
                LayerPlan::LayerNorm { name, dim } => {
                    let g = params.value(&format!("{name}.g"))?;
                    let b = params.value(&format!("{name}.b"))?;
                    let eps: T = lit(LAYER_NORM_EPS);
                    let inv_d: T = lit(1.0 / dim as f64);
                    let mut xhat = NdArray::zeros(&[n, dim]);
                    let mut y = NdArray::zeros(&[n, dim]);
                    let mut inv_std = Vec::with_capacity(n);
                    for r in 0..n {
                        let row = x.row(r);
                        let mean = row.iter().copied().sum::<T>() * inv_d;
                        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                        let is = T::one() / (var + eps).sqrt();
                        inv_std.push(is);
                        let xr = xhat.row_mut(r);
                        for (o, &v) in xr.iter_mut().zip(row) {
                            *o = (v - mean) * is;
                        }
                        let yr = y.row_mut(r);
                        for j in 0..dim {
                            yr[j] = xhat.data()[r * dim + j] * g.data()[j] + b.data()[j];
                        }
                    }
                    saved.push(Saved::LayerNorm { xhat, inv_std });
                    y
                }
            };
        }
        let output_dim = x.row_len();
        Ok((
            x,
            ForwardCache {
                saved,
                batch: n,
                output_dim,
            },
        ))
    }

    /// Accumulates parameter gradients (`grad += dL/dparam`) and returns the
    /// gradient with respect to the network input.
    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        cache: &ForwardCache<T>,
        output_grad: &NdArray<T>,
    ) -> Result<NdArray<T>> {
        Ok(self
            .backward_impl(params, cache, output_grad, true)?
            .expect("input grad requested"))
    }

    /// Like [`NetSpec::backward`] but skips the input gradient of the first
    /// layer, for networks fed directly by data.
    pub fn backward_params_only<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        cache: &ForwardCache<T>,
        output_grad: &NdArray<T>,
    ) -> Result<()> {
        self.backward_impl(params, cache, output_grad, false)?;
        Ok(())
    }

    fn backward_impl<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        cache: &ForwardCache<T>,
        output_grad: &NdArray<T>,
        want_input_grad: bool,
    ) -> Result<Option<NdArray<T>>> {
        let plan = self.plan();
        if plan.len() != cache.saved.len()
            || output_grad.rows() != cache.batch
            || output_grad.row_len() != cache.output_dim
        {
            return Err(Error::Internal(format!(
                "stale forward cache: {} layers / batch {} / width {} vs gradient {:?}",
                cache.saved.len(),
                cache.batch,
                cache.output_dim,
                output_grad.shape()
            )));
        }
        let n = cache.batch;
        let mut gy = output_grad.clone().reshape(&[n, cache.output_dim])?;
        let first_param_layer = plan
            .iter()
            .position(|l| matches!(l, LayerPlan::Linear { .. } | LayerPlan::Conv { .. }));
        for (idx, (layer, saved)) in plan.iter().zip(&cache.saved).enumerate().rev() {
            let need_dx = want_input_grad || Some(idx) != first_param_layer;
            gy = match (layer, saved) {
                (LayerPlan::Linear { name, fan_in, fan_out }, Saved::Linear { input }) => {
                    let (fan_in, fan_out) = (*fan_in, *fan_out);
                    {
                        let gw = &mut params.get_mut(&format!("{name}.w"))?.grad;
                        gemm(true, false, fan_in, n, fan_out, T::one(), input.data(), gy.data(), T::one(), gw.data_mut());
                    }
                    {
                        let gb = params.get_mut(&format!("{name}.b"))?.grad.data_mut();
                        for r in 0..n {
                            for (acc, &v) in gb.iter_mut().zip(gy.row(r)) {
                                *acc += v;
                            }
                        }
                    }
                    if need_dx {
                        let w = params.value(&format!("{name}.w"))?;
                        let mut gx = NdArray::zeros(&[n, fan_in]);
                        gemm(false, true, n, fan_out, fan_in, T::one(), gy.data(), w.data(), T::zero(), gx.data_mut());
                        gx
                    } else {
                        break;
                    }
                }
                (
                    LayerPlan::Conv {
                        name,
                        in_ch,
                        out_ch,
                        kernel,
                        stride,
                        in_hw,
                        out_hw,
                    },
                    Saved::Conv { input },
                ) => {
                    let ckk = in_ch * kernel * kernel;
                    let plane = out_hw.0 * out_hw.1;
                    let mut col = vec![T::zero(); ckk * plane];
                    let mut dcol = vec![T::zero(); ckk * plane];
                    let mut gx = if need_dx {
                        Some(NdArray::zeros(&[n, in_ch * in_hw.0 * in_hw.1]))
                    } else {
                        None
                    };
                    let w = params.value(&format!("{name}.w"))?.clone();
                    for s in 0..n {
                        im2col(input.row(s), *in_ch, *in_hw, *kernel, *stride, *out_hw, &mut col);
                        let gys = gy.row(s);
                        {
                            let gw = &mut params.get_mut(&format!("{name}.w"))?.grad;
                            gemm(false, true, *out_ch, plane, ckk, T::one(), gys, &col, T::one(), gw.data_mut());
                        }
                        {
                            let gb = params.get_mut(&format!("{name}.b"))?.grad.data_mut();
                            for (o, acc) in gb.iter_mut().enumerate() {
                                *acc += gys[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
                            }
                        }
                        if let Some(gx) = gx.as_mut() {
                            gemm(true, false, ckk, *out_ch, plane, T::one(), w.data(), gys, T::zero(), &mut dcol);
                            col2im_add(&dcol, *in_ch, *in_hw, *kernel, *stride, *out_hw, gx.row_mut(s));
                        }
                    }
                    match gx {
                        Some(g) => g,
                        None => break,
                    }
                }
                (LayerPlan::Act(Activation::Relu), Saved::Relu { pre }) => {
                    let mut g = gy;
                    for (gv, &p) in g.data_mut().iter_mut().zip(pre.data()) {
                        if p <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    g
                }
                (LayerPlan::Act(Activation::Tanh), Saved::Tanh { out }) => {
                    let mut g = gy;
                    for (gv, &y) in g.data_mut().iter_mut().zip(out.data()) {
                        *gv *= T::one() - y * y;
                    }
                    g
                }
                (LayerPlan::LayerNorm { name, dim }, Saved::LayerNorm { xhat, inv_std }) => {
                    let dim = *dim;
                    let gamma = params.value(&format!("{name}.g"))?.data().to_vec();
                    {
                        let entry = params.get_mut(&format!("{name}.g"))?;
                        let gg = entry.grad.data_mut();
                        for r in 0..n {
                            let (gr, xr) = (gy.row(r), xhat.row(r));
                            for j in 0..dim {
                                gg[j] += gr[j] * xr[j];
                            }
                        }
                    }
                    {
                        let gb = params.get_mut(&format!("{name}.b"))?.grad.data_mut();
                        for r in 0..n {
                            for (acc, &v) in gb.iter_mut().zip(gy.row(r)) {
                                *acc += v;
                            }
                        }
                    }
                    let inv_d: T = lit(1.0 / dim as f64);
                    let mut gx = NdArray::zeros(&[n, dim]);
                    let mut dxhat = vec![T::zero(); dim];
                    for r in 0..n {
                        let (gr, xr) = (gy.row(r), xhat.row(r));
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..dim {
                            dxhat[j] = gr[j] * gamma[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xr[j];
                        }
                        let is = inv_std[r];
                        let out = gx.row_mut(r);
                        for j in 0..dim {
                            out[j] = is * (dxhat[j] - inv_d * s1 - xr[j] * inv_d * s2);
                        }
                    }
                    gx
                }
                _ => {
                    return Err(Error::Internal(
                        "forward cache does not match the layer plan".into(),
                    ))
                }
            };
        }
        if want_input_grad {
            Ok(Some(gy))
        } else {
            Ok(None)
        }
    }

    fn first_layer_label(&self) -> String {
        match self.plan().first() {
            Some(LayerPlan::Linear { name, fan_in, fan_out }) => format!("{name} (linear {fan_in}->{fan_out})"),
            Some(LayerPlan::Conv { name, in_ch, out_ch, .. }) => format!("{name} (conv {in_ch}->{out_ch})"),
            _ => "input".into(),
        }
    }
}
