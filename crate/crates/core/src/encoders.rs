//! State encoder φ, action encoder ψ and the projection heads G and H.
//!
//! One φ and one H are applied to every state of a sample (anchor, positive
//! and negatives): callers stack the rows, run a single forward pass and a
//! single backward pass, so the shared weights receive the summed gradient.

use serde::{Deserialize, Serialize};

use crate::data::ObsKind;
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, label_id};
use crate::nn::{Activation, ConvGeometry, ForwardCache, NdArray, NetSpec, ParamStore, Parameterized, Scalar};

/// Layer widths of the four networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Feature dimension `F` of φ, G and H.
    pub features: usize,
    /// Hidden width of the two-layer vector-observation MLP.
    pub state_hidden: usize,
    pub action_hidden: usize,
    pub proj_hidden: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub conv_strides: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            features: 100,
            state_hidden: 256,
            action_hidden: 64,
            proj_hidden: 1024,
            conv_filters: 32,
            conv_kernel: 3,
            conv_strides: vec![2, 1, 1, 1],
        }
    }
}

impl EncoderConfig {
    /// Small widths for gradient checks and quick tests.
    pub fn tiny() -> Self {
        EncoderConfig {
            features: 5,
            state_hidden: 6,
            action_hidden: 4,
            proj_hidden: 7,
            conv_filters: 2,
            conv_kernel: 3,
            conv_strides: vec![2, 1],
        }
    }
}

/// Which of the four networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Net {
    Phi,
    Psi,
    G,
    H,
}

impl Net {
    pub const ALL: [Net; 4] = [Net::Phi, Net::Psi, Net::G, Net::H];

    pub fn name(self) -> &'static str {
        match self {
            Net::Phi => "phi",
            Net::Psi => "psi",
            Net::G => "g",
            Net::H => "h",
        }
    }
}

/// Architecture of a suite: the four network specs plus the data layout they
/// were built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub obs_kind: ObsKind,
    pub action_dim: usize,
    pub k: usize,
    pub phi: NetSpec,
    pub psi: NetSpec,
    pub g: NetSpec,
    pub h: NetSpec,
}

/// Spec of the state encoder alone (shared by pretraining and behavior
/// cloning from scratch).
pub fn state_encoder_spec(obs_kind: ObsKind, cfg: &EncoderConfig) -> Result<NetSpec> {
    let spec = match obs_kind {
        ObsKind::Vector { n } => NetSpec::mlp(vec![n, cfg.state_hidden, cfg.state_hidden], Activation::Relu, None)
            .with_trunk(cfg.features),
        ObsKind::Pixel { c, h, w } => NetSpec::shallow_conv(
            ConvGeometry {
                in_channels: c,
                height: h,
                width: w,
                kernel: cfg.conv_kernel,
                strides: cfg.conv_strides.clone(),
            },
            vec![cfg.conv_filters; cfg.conv_strides.len()],
            cfg.features,
        ),
    };
    spec.validate()?;
    Ok(spec)
}

impl SuiteSpec {
    pub fn new(obs_kind: ObsKind, action_dim: usize, k: usize, cfg: &EncoderConfig) -> Result<Self> {
        if k == 0 || action_dim == 0 || cfg.features == 0 {
            return Err(Error::config(format!(
                "encoder suite needs K, action dim and features >= 1 (K={k}, m={action_dim}, F={})",
                cfg.features
            )));
        }
        let f = cfg.features;
        let spec = SuiteSpec {
            obs_kind,
            action_dim,
            k,
            phi: state_encoder_spec(obs_kind, cfg)?,
            psi: NetSpec::mlp(vec![action_dim, cfg.action_hidden, action_dim], Activation::Relu, None),
            g: NetSpec::mlp(vec![f + k * action_dim, cfg.proj_hidden, f], Activation::Relu, None),
            h: NetSpec::mlp(vec![f, cfg.proj_hidden, f], Activation::Relu, None),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn features(&self) -> usize {
        self.phi.output_dim()
    }

    pub fn net(&self, net: Net) -> &NetSpec {
        match net {
            Net::Phi => &self.phi,
            Net::Psi => &self.psi,
            Net::G => &self.g,
            Net::H => &self.h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for net in Net::ALL {
            self.net(net).validate()?;
        }
        let f = self.phi.output_dim();
        let mu = self.psi.output_dim();
        if self.phi.input_dim() != self.obs_kind.len() {
            return Err(Error::shape("phi", format!("input {} vs observation length {}", self.phi.input_dim(), self.obs_kind.len())));
        }
        if self.psi.input_dim() != self.action_dim {
            return Err(Error::shape("psi", format!("input {} vs action dim {}", self.psi.input_dim(), self.action_dim)));
        }
        if self.g.input_dim() != f + self.k * mu || self.g.output_dim() != f {
            return Err(Error::shape(
                "g",
                format!("expected {} -> {f}, got {} -> {}", f + self.k * mu, self.g.input_dim(), self.g.output_dim()),
            ));
        }
        if self.h.input_dim() != f || self.h.output_dim() != f {
            return Err(Error::shape("h", format!("expected {f} -> {f}, got {} -> {}", self.h.input_dim(), self.h.output_dim())));
        }
        Ok(())
    }
}

/// φ, ψ, G and H with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSuite<T> {
    pub spec: SuiteSpec,
    pub phi: ParamStore<T>,
    pub psi: ParamStore<T>,
    pub g: ParamStore<T>,
    pub h: ParamStore<T>,
}

/// Maps raw pixel values to `obs / 255 - 0.5`; vector observations pass through.
pub fn normalize_obs<T: Scalar>(obs_kind: ObsKind, obs: &NdArray<T>) -> NdArray<T> {
    if obs_kind.is_pixel() {
        let scale = T::from_f64_lossy(1.0 / 255.0);
        let half = T::from_f64_lossy(0.5);
        obs.map(|v| v * scale - half)
    } else {
        obs.clone()
    }
}

impl<T: Scalar> EncoderSuite<T> {
    pub fn new(spec: SuiteSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let init = |net: Net| spec.net(net).init_params::<T>(derive_seed(seed, &[label_id("init"), label_id(net.name())]));
        Ok(EncoderSuite {
            phi: init(Net::Phi)?,
            psi: init(Net::Psi)?,
            g: init(Net::G)?,
            h: init(Net::H)?,
            spec,
        })
    }

    /// Rebuilds a suite from stored parameters, refusing layouts that do not
    /// match `spec`.
    pub fn from_parts(spec: SuiteSpec, phi: ParamStore<T>, psi: ParamStore<T>, g: ParamStore<T>, h: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        spec.phi.check_params(&phi)?;
        spec.psi.check_params(&psi)?;
        spec.g.check_params(&g)?;
        spec.h.check_params(&h)?;
        Ok(EncoderSuite { spec, phi, psi, g, h })
    }

    pub fn params(&self, net: Net) -> &ParamStore<T> {
        match net {
            Net::Phi => &self.phi,
            Net::Psi => &self.psi,
            Net::G => &self.g,
            Net::H => &self.h,
        }
    }

    pub fn params_mut(&mut self, net: Net) -> &mut ParamStore<T> {
        match net {
            Net::Phi => &mut self.phi,
            Net::Psi => &mut self.psi,
            Net::G => &mut self.g,
            Net::H => &mut self.h,
        }
    }

    pub fn forward(&self, net: Net, input: &NdArray<T>) -> Result<(NdArray<T>, ForwardCache<T>)> {
        self.spec.net(net).forward(self.params(net), input)
    }

    /// Accumulates parameter gradients of `net`; returns the input gradient
    /// when `want_input` is set.
    pub fn backward(&mut self, net: Net, cache: &ForwardCache<T>, grad: &NdArray<T>, want_input: bool) -> Result<Option<NdArray<T>>> {
        let spec = match net {
            Net::Phi => &self.spec.phi,
            Net::Psi => &self.spec.psi,
            Net::G => &self.spec.g,
            Net::H => &self.spec.h,
        };
        let params = match net {
            Net::Phi => &mut self.phi,
            Net::Psi => &mut self.psi,
            Net::G => &mut self.g,
            Net::H => &mut self.h,
        };
        if want_input {
            spec.backward(params, cache, grad).map(Some)
        } else {
            spec.backward_params_only(params, cache, grad).map(|_| None)
        }
    }

    /// `z = φ(obs)`, with pixel inputs normalized first.
    pub fn encode_state(&self, obs: &NdArray<T>) -> Result<(NdArray<T>, ForwardCache<T>)> {
        let dims = self.spec.obs_kind.dims();
        if obs.shape().len() < 2 || (obs.shape()[1..] != dims[..] && obs.row_len() != self.spec.obs_kind.len()) {
            return Err(Error::shape(
                "phi",
                format!("observation batch {:?} does not match {:?}", obs.shape(), self.spec.obs_kind),
            ));
        }
        self.forward(Net::Phi, &normalize_obs(self.spec.obs_kind, obs))
    }

    /// `u = ψ(a)` applied per action; accepts `[N, m]` or `[N, K, m]` and
    /// returns rows of width `m_u` (one per action).
    pub fn encode_action(&self, actions: &NdArray<T>) -> Result<(NdArray<T>, ForwardCache<T>)> {
        let m = self.spec.action_dim;
        if actions.shape().last() != Some(&m) {
            return Err(Error::shape("psi", format!("action batch {:?} does not end in {m}", actions.shape())));
        }
        let rows = actions.len() / m;
        self.forward(Net::Psi, &actions.clone().reshape(&[rows, m])?)
    }

    /// `g = G([z_t, u_t, .., u_{t+K-1}])` with `u_seq` shaped `[N, K, m_u]`.
    pub fn project_g(&self, z: &NdArray<T>, u_seq: &NdArray<T>) -> Result<(NdArray<T>, ForwardCache<T>)> {
        let shape = u_seq.shape();
        if shape.len() != 3 || shape[1] != self.spec.k {
            return Err(Error::config(format!(
                "action sequence {:?} does not match K = {} of the suite",
                shape, self.spec.k
            )));
        }
        let n = shape[0];
        let flat = u_seq.clone().reshape(&[n, shape[1] * shape[2]])?;
        self.forward(Net::G, &NdArray::concat_cols(z, &flat)?)
    }

    pub fn project_h(&self, z: &NdArray<T>) -> Result<(NdArray<T>, ForwardCache<T>)> {
        self.forward(Net::H, z)
    }

    /// Features of a batch without keeping intermediates.
    pub fn features(&self, obs: &NdArray<T>) -> Result<NdArray<T>> {
        Ok(self.encode_state(obs)?.0)
    }

    pub fn cast<U: Scalar>(&self) -> EncoderSuite<U> {
        let c = |s: &ParamStore<T>| s.cast::<U>();
        EncoderSuite {
            spec: self.spec.clone(),
            phi: c(&self.phi),
            psi: c(&self.psi),
            g: c(&self.g),
            h: c(&self.h),
        }
    }
}

impl<T: Scalar> Parameterized<T> for EncoderSuite<T> {
    fn stores(&self) -> Vec<(&str, &ParamStore<T>)> {
        vec![("phi", &self.phi), ("psi", &self.psi), ("g", &self.g), ("h", &self.h)]
    }

    fn stores_mut(&mut self) -> Vec<(&str, &mut ParamStore<T>)> {
        vec![
            ("phi", &mut self.phi),
            ("psi", &mut self.psi),
            ("g", &mut self.g),
            ("h", &mut self.h),
        ]
    }
}
