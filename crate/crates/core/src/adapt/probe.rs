//! Closed-form ridge probes from frozen features to ground-truth latents.

use nalgebra::{DMatrix, DVector};

use crate::data::{Episode, MultitaskDataset};
use crate::encoders::{EncoderConfig, EncoderSuite, SuiteSpec};
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, label_id};
use crate::nn::{NdArray, Scalar};

pub const PROBE_RIDGE: f64 = 1e-3;
/// Fraction of each task's episodes used to fit the probe.
pub const PROBE_TRAIN_FRACTION: f64 = 0.75;

/// Ridge regression with an unpenalized intercept.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl RidgeModel {
    /// Fits `y ≈ x W + b` minimizing `|y - xW - b|^2 + lambda |W|^2`.
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(Error::shape("probe", format!("{} feature rows vs {} target rows", x.nrows(), y.nrows())));
        }
        if !(lambda > 0.0) {
            return Err(Error::config("ridge penalty must be positive"));
        }
        let x_mean = x.row_mean();
        let y_mean = y.row_mean();
        let mut xc = x.clone();
        for mut r in xc.row_iter_mut() {
            r -= &x_mean;
        }
        let mut yc = y.clone();
        for mut r in yc.row_iter_mut() {
            r -= &y_mean;
        }
        let p = x.ncols();
        let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
        let rhs = xc.transpose() * &yc;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Training("ridge system is not positive definite".into()))?;
        let weights = chol.solve(&rhs);
        let intercept = (y_mean - x_mean * &weights).transpose();
        Ok(RidgeModel { weights, intercept })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * &self.weights;
        for mut r in out.row_iter_mut() {
            r += self.intercept.transpose();
        }
        out
    }
}

/// Coefficient of determination per output column, averaged.
pub fn r2_score(pred: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let d = y.ncols();
    let mut total = 0.0;
    for j in 0..d {
        let col = y.column(j);
        let mean = col.mean();
        let sst: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let sse: f64 = col.iter().zip(pred.column(j).iter()).map(|(a, b)| (a - b).powi(2)).sum();
        total += if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };
    }
    total / d as f64
}

/// Fits on the train pair and returns R² on the test pair.
pub fn linear_probe(
    train_x: &DMatrix<f64>,
    train_y: &DMatrix<f64>,
    test_x: &DMatrix<f64>,
    test_y: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    let model = RidgeModel::fit(train_x, train_y, lambda)?;
    Ok(r2_score(&model.predict(test_x), test_y))
}

/// Splits each task's episodes into (train, test) by a seeded order so no
/// episode contributes to both sides.
pub fn split_episodes(dataset: &MultitaskDataset, seed: u64) -> (Vec<&Episode>, Vec<&Episode>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (task, idx) in dataset.by_task() {
        let mut order: Vec<(u64, usize)> = idx
            .iter()
            .map(|&i| (derive_seed(seed, &[label_id("probe_split"), *task, dataset.episodes()[i].index]), i))
            .collect();
        order.sort_unstable();
        let n_train = ((idx.len() as f64 * PROBE_TRAIN_FRACTION).round() as usize).clamp(1, idx.len().max(2) - 1);
        for (rank, (_, i)) in order.into_iter().enumerate() {
            let ep = &dataset.episodes()[i];
            if rank < n_train {
                train.push(ep);
            } else {
                test.push(ep);
            }
        }
    }
    (train, test)
}

/// Stacks encoder features and true latents of every step of `episodes`.
pub fn features_and_latents<T: Scalar>(
    suite: &EncoderSuite<T>,
    episodes: &[&Episode],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let f = suite.spec.features();
    let d = episodes.first().map(|e| e.latent_dim).unwrap_or(0);
    let rows: usize = episodes.iter().map(|e| e.len()).sum();
    let mut x = DMatrix::zeros(rows, f);
    let mut y = DMatrix::zeros(rows, d);
    let mut r0 = 0;
    let mut shape = vec![0];
    shape.extend(suite.spec.obs_kind.dims());
    for ep in episodes {
        shape[0] = ep.len();
        let obs = NdArray::from_vec(shape.clone(), ep.observations.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())?;
        let z = suite.features(&obs)?;
        for t in 0..ep.len() {
            for (j, v) in z.row(t).iter().enumerate() {
                x[(r0 + t, j)] = v.as_f64();
            }
            for (j, v) in ep.true_latents()[t * d..(t + 1) * d].iter().enumerate() {
                y[(r0 + t, j)] = *v as f64;
            }
        }
        r0 += ep.len();
    }
    Ok((x, y))
}

/// Held-out R² of a ridge probe from `suite`'s state features to true latents.
pub fn probe_encoder<T: Scalar>(suite: &EncoderSuite<T>, dataset: &MultitaskDataset, seed: u64) -> Result<f64> {
    if dataset.obs_kind() != suite.spec.obs_kind {
        return Err(Error::config("probe dataset observations do not match the encoder"));
    }
    let (train, test) = split_episodes(dataset, seed);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Dataset("probe needs at least two episodes per task".into()));
    }
    let (xtr, ytr) = features_and_latents(suite, &train)?;
    let (xte, yte) = features_and_latents(suite, &test)?;
    linear_probe(&xtr, &ytr, &xte, &yte, PROBE_RIDGE)
}

/// Probe R² of a freshly initialized encoder with the given architecture.
pub fn probe_random_init<T: Scalar>(
    dataset: &MultitaskDataset,
    k: usize,
    cfg: &EncoderConfig,
    init_seed: u64,
    split_seed: u64,
) -> Result<f64> {
    let spec = SuiteSpec::new(dataset.obs_kind(), dataset.action_dim(), k, cfg)?;
    let suite = EncoderSuite::<T>::new(spec, init_seed)?;
    probe_encoder(&suite, dataset, split_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use crate::nn::rng::rng_for;

    #[test]
    fn recovers_an_exact_affine_map() {
        let mut rng = rng_for(0, &[]);
        let x = DMatrix::from_fn(200, 3, |_, _| rng.gen_range(-1.0..1.0));
        let w = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let mut y = &x * &w;
        for mut r in y.row_iter_mut() {
            r[0] += 4.0;
            r[1] -= 1.0;
        }
        let m = RidgeModel::fit(&x, &y, 1e-9).unwrap();
        assert!((m.weights.clone() - w).abs().max() < 1e-6);
        assert!((m.intercept[0] - 4.0).abs() < 1e-6 && (m.intercept[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn rank_deficient_features_still_solve() {
        let x = DMatrix::from_fn(50, 4, |i, j| if j < 2 { i as f64 } else { 0.0 });
        let y = DMatrix::from_fn(50, 1, |i, _| 2.0 * i as f64);
        let m = RidgeModel::fit(&x, &y, 1e-3).unwrap();
        assert!(r2_score(&m.predict(&x), &y) > 0.999);
    }

    #[test]
    fn r2_of_perfect_and_mean_predictions() {
        let y = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r2_score(&y, &y), 1.0);
        let mean = DMatrix::from_element(4, 1, 2.5);
        assert_eq!(r2_score(&mean, &y), 0.0);
    }
}
