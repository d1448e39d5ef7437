//! Minimal differentiable substrate: dense and convolutional layers,
//! layer-norm, ReLU/tanh, Adam, seeded streams and a finite-difference
//! gradient checker.

mod adam;
mod array;
mod fpenv;
mod gradcheck;
mod layers;
mod params;
pub mod rng;
mod scalar;
mod spec;

pub use adam::{adam_step, adam_step_all, clip_global_norm, AdamConfig};
pub use array::NdArray;
pub use fpenv::FlushDenormals;
pub use gradcheck::{grad_check, relative_error, RELATIVE_ERROR_FLOOR, GradCheckOptions, GradCheckReport, Probe};
pub use layers::ForwardCache;
pub use params::{ParamEntry, ParamStore, Parameterized};
pub use scalar::{gemm, lit, DType, Scalar};
pub use spec::{Activation, ConvGeometry, NetKind, NetSpec, LAYER_NORM_EPS};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_bounds_and_zero_biases() {
        let spec = NetSpec::mlp(vec![2, 3], Activation::Relu, None);
        let p = spec.init_params::<f64>(7).unwrap();
        let w = p.value("l0.w").unwrap();
        assert_eq!(w.len(), 6);
        let s = (0.5f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= s));
        assert_eq!(p.value("l0.b").unwrap().data(), &[0.0; 3]);
        for (_, e) in p.iter() {
            assert!(e.adam_m.data().iter().all(|&v| v == 0.0));
            assert!(e.adam_v.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_is_deterministic() {
        let spec = NetSpec::mlp(vec![4, 16, 4], Activation::Tanh, None).with_trunk(8);
        let a = spec.init_params::<f32>(3).unwrap();
        let b = spec.init_params::<f32>(3).unwrap();
        assert_eq!(a, b);
        let c = spec.init_params::<f32>(4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_std_matches_uniform_moments() {
        // Uniform on [-s, s] has standard deviation s / sqrt(3).
        let spec = NetSpec::mlp(vec![4, 64, 4], Activation::Relu, None);
        for seed in 0..10 {
            let p = spec.init_params::<f64>(seed).unwrap();
            for (name, fan_in) in [("l0.w", 4.0f64), ("l1.w", 64.0)] {
                let w = p.value(name).unwrap().data();
                let mean = w.iter().sum::<f64>() / w.len() as f64;
                let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
                let want = (1.0 / fan_in).sqrt() / 3f64.sqrt();
                assert!((std - want).abs() < 0.2 * want, "seed {seed} {name}: {std} vs {want}");
            }
        }
    }

    #[test]
    fn zero_dims_rejected() {
        let spec = NetSpec::mlp(vec![2, 0, 3], Activation::Relu, None);
        assert!(matches!(spec.init_params::<f64>(0), Err(crate::Error::Config(_))));
        let spec = NetSpec::mlp(vec![], Activation::Relu, None);
        assert!(spec.validate().is_err());
        let spec = NetSpec::mlp(vec![2, 3], Activation::Relu, None).with_trunk(0);
        assert!(spec.validate().is_err());
    }
}
