//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::nn::params::Parameterized;
use crate::nn::rng::rng_for;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Entries with more coordinates than this are checked on a seeded subset.
    pub max_coords_per_entry: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords_per_entry: 24,
            seed: 0,
        }
    }
}

/// One evaluation of the checked objective.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub loss: f64,
    /// Combined ReLU on/off pattern of every network evaluated (see
    /// [`crate::nn::ForwardCache::relu_signature`]).
    pub relu_signature: u64,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Probe {
            loss,
            relu_signature: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±eps probe crossed a ReLU kink.
    pub skipped_kinks: usize,
    pub worst: Option<String>,
}

/// Floor on the denominator. Central differences at eps = 1e-5 carry ~1e-11
/// of round-off, so gradients below this scale are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn(target, true)` must zero nothing itself but accumulate gradients
/// into `target`'s stores; `loss_fn(target, false)` only evaluates. Grads are
/// zeroed here before the analytic pass and hold the analytic result after
/// the call returns.
pub fn grad_check<P, F>(target: &mut P, mut loss_fn: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    P: Parameterized<f64>,
    F: FnMut(&mut P, bool) -> Result<Probe>,
{
    target.zero_grads();
    let base = loss_fn(target, true)?;
    if !base.loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {} in gradient check", base.loss)));
    }
    // (store index, entry name, coordinates, analytic grads at those coordinates)
    let mut plan: Vec<(usize, String, Vec<usize>, Vec<f64>)> = Vec::new();
    for (si, (label, store)) in target.stores().into_iter().enumerate() {
        for (name, entry) in store.iter() {
            let n = entry.value.len();
            let coords: Vec<usize> = if n <= opts.max_coords_per_entry {
                (0..n).collect()
            } else {
                let mut rng = rng_for(opts.seed, &[si as u64, crate::nn::rng::label_id(label), crate::nn::rng::label_id(name)]);
                let mut c = sample(&mut rng, n, opts.max_coords_per_entry).into_vec();
                c.sort_unstable();
                c
            };
            let g = entry.grad.data();
            let analytic = coords.iter().map(|&c| g[c]).collect();
            plan.push((si, name.clone(), coords, analytic));
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    for (si, name, coords, analytic) in plan {
        for (&c, &a) in coords.iter().zip(&analytic) {
            let original = nudge(target, si, &name, c, None)?;
            nudge(target, si, &name, c, Some(original + opts.eps))?;
            let plus = loss_fn(target, false)?;
            nudge(target, si, &name, c, Some(original - opts.eps))?;
            let minus = loss_fn(target, false)?;
            nudge(target, si, &name, c, Some(original))?;
            if !plus.loss.is_finite() || !minus.loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss while probing {name}[{c}]")));
            }
            if plus.relu_signature != base.relu_signature || minus.relu_signature != base.relu_signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * opts.eps);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                let label = target.stores()[si].0.to_string();
                report.worst = Some(format!("{label}.{name}[{c}] analytic={a:.6e} numeric={numeric:.6e}"));
            }
        }
    }
    Ok(report)
}

/// Reads (and optionally overwrites) one parameter coordinate, returning the
/// previous value.
fn nudge<P: Parameterized<f64>>(target: &mut P, si: usize, name: &str, coord: usize, set: Option<f64>) -> Result<f64> {
    let mut stores = target.stores_mut();
    let (_, store) = stores
        .get_mut(si)
        .ok_or_else(|| Error::Internal("store index out of range".into()))?;
    let v = &mut store.value_mut(name)?.data_mut()[coord];
    let old = *v;
    if let Some(x) = set {
        *v = x;
    }
    Ok(old)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::array::NdArray;
    use crate::nn::params::ParamStore;

    #[test]
    fn quadratic_is_exact() {
        let mut s = ParamStore::<f64>::new();
        s.insert("p", NdArray::from_f64(&[4], &[0.3, -1.2, 2.5, 0.01]).unwrap());
        let report = grad_check(
            &mut s,
            |s, with_grad| {
                let e = s.get_mut("p")?;
                let loss = 0.5 * e.value.sum_sq();
                if with_grad {
                    let v = e.value.data().to_vec();
                    e.grad.data_mut().copy_from_slice(&v);
                }
                Ok(Probe::smooth(loss))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut s = ParamStore::<f64>::new();
        s.insert("p", NdArray::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let report = grad_check(
            &mut s,
            |s, with_grad| {
                let e = s.get_mut("p")?;
                let loss = 0.5 * e.value.sum_sq();
                if with_grad {
                    let v: Vec<f64> = e.value.data().iter().map(|x| 1.1 * x).collect();
                    e.grad.data_mut().copy_from_slice(&v);
                }
                Ok(Probe::smooth(loss))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-2);
    }

    #[test]
    fn non_finite_loss_errors() {
        let mut s = ParamStore::<f64>::new();
        s.insert("p", NdArray::from_f64(&[1], &[1.0]).unwrap());
        let r = grad_check(&mut s, |_, _| Ok(Probe::smooth(f64::NAN)), &GradCheckOptions::default());
        assert!(r.is_err());
    }
}
