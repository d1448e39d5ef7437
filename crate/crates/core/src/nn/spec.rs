use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::array::NdArray;
use crate::nn::params::ParamStore;
use crate::nn::rng::rng_for;
use crate::nn::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Geometry of the shallow convolutional stack (no padding, square kernels).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub strides: Vec<usize>,
}

impl ConvGeometry {
    /// Spatial size after every conv layer, first entry is the input size.
    pub fn spatial_sizes(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.height, self.width)];
        let (mut h, mut w) = (self.height, self.width);
        for &s in &self.strides {
            if h < self.kernel || w < self.kernel || s == 0 {
                out.push((0, 0));
                h = 0;
                w = 0;
                continue;
            }
            h = (h - self.kernel) / s + 1;
            w = (w - self.kernel) / s + 1;
            out.push((h, w));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Mlp,
    ShallowConv(ConvGeometry),
}

/// Description of one network from the fixed layer zoo.
///
/// * `Mlp`: `layer_dims = [input, hidden.., output]`; one linear layer per
///   consecutive pair. Hidden layers use `activation`; the last layer uses
///   `activation` when a trunk follows, otherwise `output_activation`.
/// * `ShallowConv`: `layer_dims` lists the filter count of each conv layer,
///   one per stride in the geometry; every conv is followed by `activation`
///   and the stack is flattened.
///
/// The optional trunk is linear -> layer-norm -> tanh to `trunk` features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: NetKind,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub output_activation: Option<Activation>,
    #[serde(default)]
    pub trunk: Option<usize>,
}

/// Flattened layer plan derived from a [`NetSpec`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerPlan {
    Linear {
        name: String,
        fan_in: usize,
        fan_out: usize,
    },
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
    },
    Act(Activation),
    LayerNorm {
        name: String,
        dim: usize,
    },
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl NetSpec {
    pub fn mlp(layer_dims: Vec<usize>, activation: Activation, output_activation: Option<Activation>) -> Self {
        NetSpec {
            kind: NetKind::Mlp,
            layer_dims,
            activation,
            output_activation,
            trunk: None,
        }
    }

    pub fn with_trunk(mut self, features: usize) -> Self {
        self.trunk = Some(features);
        self
    }

    pub fn shallow_conv(geometry: ConvGeometry, filters: Vec<usize>, features: usize) -> Self {
        NetSpec {
            kind: NetKind::ShallowConv(geometry),
            layer_dims: filters,
            activation: Activation::Relu,
            output_activation: None,
            trunk: Some(features),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::config("network layer_dims must be nonempty"));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "network layer_dims contain a zero: {:?}",
                self.layer_dims
            )));
        }
        if self.trunk == Some(0) {
            return Err(Error::config("trunk output dim must be positive"));
        }
        match &self.kind {
            NetKind::Mlp => {
                if self.layer_dims.len() < 2 && self.trunk.is_none() {
                    return Err(Error::config(
                        "an mlp without trunk needs at least input and output dims",
                    ));
                }
            }
            NetKind::ShallowConv(g) => {
                if g.in_channels == 0 || g.kernel == 0 {
                    return Err(Error::config("conv geometry has a zero dimension"));
                }
                if g.strides.len() != self.layer_dims.len() {
                    return Err(Error::config(format!(
                        "conv stack has {} filter counts but {} strides",
                        self.layer_dims.len(),
                        g.strides.len()
                    )));
                }
                if g.spatial_sizes().iter().any(|&(h, w)| h == 0 || w == 0) {
                    return Err(Error::config(format!(
                        "conv stack collapses a {}x{} input to nothing",
                        g.height, g.width
                    )));
                }
            }
        }
        Ok(())
    }

    /// Width of one input row.
    pub fn input_dim(&self) -> usize {
        match &self.kind {
            NetKind::Mlp => self.layer_dims[0],
            NetKind::ShallowConv(g) => g.in_channels * g.height * g.width,
        }
    }

    /// Width of one output row.
    pub fn output_dim(&self) -> usize {
        if let Some(f) = self.trunk {
            return f;
        }
        match &self.kind {
            NetKind::Mlp => *self.layer_dims.last().unwrap(),
            NetKind::ShallowConv(g) => {
                let (h, w) = *g.spatial_sizes().last().unwrap();
                self.layer_dims.last().unwrap() * h * w
            }
        }
    }

    pub(crate) fn plan(&self) -> Vec<LayerPlan> {
        let mut plan = Vec::new();
        let mut width;
        match &self.kind {
            NetKind::Mlp => {
                let n = self.layer_dims.len() - 1;
                for i in 0..n {
                    plan.push(LayerPlan::Linear {
                        name: format!("l{i}"),
                        fan_in: self.layer_dims[i],
                        fan_out: self.layer_dims[i + 1],
                    });
                    if i + 1 < n || self.trunk.is_some() {
                        plan.push(LayerPlan::Act(self.activation));
                    } else if let Some(a) = self.output_activation {
                        plan.push(LayerPlan::Act(a));
                    }
                }
                width = *self.layer_dims.last().unwrap();
            }
            NetKind::ShallowConv(g) => {
                let sizes = g.spatial_sizes();
                let mut in_ch = g.in_channels;
                for (i, (&out_ch, &stride)) in self.layer_dims.iter().zip(&g.strides).enumerate() {
                    plan.push(LayerPlan::Conv {
                        name: format!("l{i}"),
                        in_ch,
                        out_ch,
                        kernel: g.kernel,
                        stride,
                        in_hw: sizes[i],
                        out_hw: sizes[i + 1],
                    });
                    plan.push(LayerPlan::Act(self.activation));
                    in_ch = out_ch;
                }
                let (h, w) = *sizes.last().unwrap();
                width = in_ch * h * w;
            }
        }
        if let Some(f) = self.trunk {
            plan.push(LayerPlan::Linear {
                name: "trunk".into(),
                fan_in: width,
                fan_out: f,
            });
            plan.push(LayerPlan::LayerNorm {
                name: "ln".into(),
                dim: f,
            });
            plan.push(LayerPlan::Act(Activation::Tanh));
            width = f;
        }
        let _ = width;
        plan
    }

    /// Fresh parameters: weights uniform in `[-s, s]` with `s = sqrt(1/fan_in)`,
    /// zero biases, unit layer-norm gain, zero moments.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut rng = rng_for(seed, &[0x1A17]);
        let mut store = ParamStore::new();
        for layer in self.plan() {
            match layer {
                LayerPlan::Linear {
                    name,
                    fan_in,
                    fan_out,
                } => {
                    let s = (1.0 / fan_in as f64).sqrt();
                    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-s..=s)).collect();
                    store.insert(format!("{name}.w"), NdArray::from_f64(&[fan_in, fan_out], &w)?);
                    store.insert(format!("{name}.b"), NdArray::zeros(&[fan_out]));
                }
                LayerPlan::Conv {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let fan_in = in_ch * kernel * kernel;
                    let s = (1.0 / fan_in as f64).sqrt();
                    let w: Vec<f64> = (0..fan_in * out_ch).map(|_| rng.gen_range(-s..=s)).collect();
                    store.insert(format!("{name}.w"), NdArray::from_f64(&[out_ch, fan_in], &w)?);
                    store.insert(format!("{name}.b"), NdArray::zeros(&[out_ch]));
                }
                LayerPlan::LayerNorm { name, dim } => {
                    store.insert(format!("{name}.g"), NdArray::full(&[dim], T::one()));
                    store.insert(format!("{name}.b"), NdArray::zeros(&[dim]));
                }
                LayerPlan::Act(_) => {}
            }
        }
        Ok(store)
    }

    /// Checks that a store has exactly the parameters this spec expects.
    pub fn check_params<T: Scalar>(&self, params: &ParamStore<T>) -> Result<()> {
        let reference: ParamStore<T> = self.init_params(0)?;
        if !reference.same_layout(params) {
            return Err(Error::Checkpoint(format!(
                "parameter layout does not match network spec (expected {:?}, found {:?})",
                reference.names(),
                params.names()
            )));
        }
        Ok(())
    }
}
