use proptest::prelude::*;
use tacoforge::losses::{premier_all_window_loss, premier_taco_loss, similarity_evals_per_step, taco_batch_loss, LossVariant};
use tacoforge::nn::NdArray;

fn arr(rows: usize, cols: usize, v: &[f64]) -> NdArray<f64> {
    NdArray::from_f64(&[rows, cols], v).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-(1/N) sum_i log(e^{l+} / (e^{l+} + sum_j e^{l-_j}))`, evaluated literally.
fn direct_softmax_loss(g: &[f64], pos: &[f64], negs: &[Vec<f64>], f: usize, tau: f64) -> f64 {
    let n = g.len() / f;
    let mut total = 0.0;
    for i in 0..n {
        let gi = &g[i * f..(i + 1) * f];
        let lp = (dot(gi, &pos[i * f..(i + 1) * f]) / tau).exp();
        let ln: f64 = negs[i].chunks(f).map(|h| (dot(gi, h) / tau).exp()).sum();
        total -= (lp / (lp + ln)).ln();
    }
    total / n as f64
}

fn direct_batch_loss(g: &[f64], h: &[f64], f: usize, tau: f64) -> f64 {
    let n = g.len() / f;
    let mut total = 0.0;
    for i in 0..n {
        let gi = &g[i * f..(i + 1) * f];
        let denom: f64 = (0..n).map(|j| (dot(gi, &h[j * f..(j + 1) * f]) / tau).exp()).sum();
        total -= ((dot(gi, &h[i * f..(i + 1) * f]) / tau).exp() / denom).ln();
    }
    total / n as f64
}

prop_compose! {
    fn instance(max_n: usize)(n in 1..=max_n, f in 1usize..6)
        (g in prop::collection::vec(-1.5f64..1.5, n * f),
         pos in prop::collection::vec(-1.5f64..1.5, n * f),
         neg in prop::collection::vec(-1.5f64..1.5, n * f),
         tau in 0.3f64..3.0, n in Just(n), f in Just(f)) -> (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        (n, f, g, pos, neg, tau)
    }
}

/// Central differences of `loss` with respect to every entry of `x`.
fn numeric_grad(x: &[f64], loss: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let eps = 1e-6;
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + eps;
            let up = loss(&y);
            y[i] = x[i] - eps;
            let down = loss(&y);
            y[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn premier_matches_the_direct_formula((n, f, g, pos, neg, tau) in instance(8)) {
        let out = premier_taco_loss(&arr(n, f, &g), &arr(n, f, &pos), &arr(n, f, &neg), tau).unwrap();
        let negs: Vec<Vec<f64>> = neg.chunks(f).map(<[f64]>::to_vec).collect();
        prop_assert!((out.loss - direct_softmax_loss(&g, &pos, &negs, f, tau)).abs() <= 1e-12);
        prop_assert_eq!(out.similarity_evals, 2 * n as u64);
    }

    #[test]
    fn all_window_with_one_negative_is_premier((n, f, g, pos, neg, tau) in instance(8)) {
        let a = premier_taco_loss(&arr(n, f, &g), &arr(n, f, &pos), &arr(n, f, &neg), tau).unwrap();
        let b = premier_all_window_loss(&arr(n, f, &g), &arr(n, f, &pos), &arr(n, f, &neg), &vec![1; n], tau).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-12);
        prop_assert!(close(a.grad_g.data(), b.grad_g.data(), 1e-12));
    }

    #[test]
    fn all_window_matches_the_direct_formula(
        (n, f, g, pos, _neg, tau) in instance(5),
        counts_seed in prop::collection::vec(1usize..5, 5),
        pool in prop::collection::vec(-1.5f64..1.5, 5 * 4 * 5),
    ) {
        let counts = &counts_seed[..n];
        let total: usize = counts.iter().sum();
        let neg = &pool[..total * f];
        let mut negs = Vec::new();
        let mut off = 0;
        for &q in counts {
            negs.push(neg[off * f..(off + q) * f].to_vec());
            off += q;
        }
        let out = premier_all_window_loss(&arr(n, f, &g), &arr(n, f, &pos), &arr(total, f, neg), counts, tau).unwrap();
        prop_assert!((out.loss - direct_softmax_loss(&g, &pos, &negs, f, tau)).abs() <= 1e-12);
    }

    #[test]
    fn batch_loss_matches_the_direct_formula((n, f, g, h, _neg, tau) in instance(8)) {
        prop_assume!(n >= 2);
        let out = taco_batch_loss(&arr(n, f, &g), &arr(n, f, &h), tau).unwrap();
        prop_assert!((out.loss - direct_batch_loss(&g, &h, f, tau)).abs() <= 1e-12);
        prop_assert_eq!(out.similarity_evals, (n * n) as u64);
    }

    #[test]
    fn temperature_scales_the_logits((n, f, g, h, neg, tau) in instance(6), c in 0.2f64..5.0) {
        prop_assume!(n >= 2);
        let scaled: Vec<f64> = g.iter().map(|v| v / c).collect();
        let a = taco_batch_loss(&arr(n, f, &g), &arr(n, f, &h), tau * c).unwrap();
        let b = taco_batch_loss(&arr(n, f, &scaled), &arr(n, f, &h), tau).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-12);
        let a = premier_taco_loss(&arr(n, f, &g), &arr(n, f, &h), &arr(n, f, &neg), tau * c).unwrap();
        let b = premier_taco_loss(&arr(n, f, &scaled), &arr(n, f, &h), &arr(n, f, &neg), tau).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-12);
    }

    #[test]
    fn symmetric_inputs_give_log_counts(n in 2usize..10, f in 1usize..5, q in 1usize..10, v in -2.0f64..2.0, tau in 0.3f64..3.0) {
        let g = vec![v; n * f];
        let h = vec![0.5 * v; n * f];
        let p = premier_taco_loss(&arr(n, f, &g), &arr(n, f, &h), &arr(n, f, &h), tau).unwrap();
        prop_assert!((p.loss - std::f64::consts::LN_2).abs() <= 1e-12);
        let b = taco_batch_loss(&arr(n, f, &g), &arr(n, f, &h), tau).unwrap();
        prop_assert!((b.loss - (n as f64).ln()).abs() <= 1e-12);
        let hn = vec![0.5 * v; n * q * f];
        let w = premier_all_window_loss(&arr(n, f, &g), &arr(n, f, &h), &arr(n * q, f, &hn), &vec![q; n], tau).unwrap();
        prop_assert!((w.loss - ((q + 1) as f64).ln()).abs() <= 1e-12);
    }

    #[test]
    fn raising_the_positive_logit_lowers_the_loss((n, f, g, pos, neg, tau) in instance(6), step in 0.01f64..1.0) {
        // Moving h+ along g raises l+ by step * |g|^2 / tau and leaves l- alone.
        prop_assume!(g.iter().any(|v| v.abs() > 1e-3));
        let moved: Vec<f64> = pos.iter().zip(&g).map(|(p, gv)| p + step * gv).collect();
        let a = premier_taco_loss(&arr(n, f, &g), &arr(n, f, &pos), &arr(n, f, &neg), tau).unwrap();
        let b = premier_taco_loss(&arr(n, f, &g), &arr(n, f, &moved), &arr(n, f, &neg), tau).unwrap();
        prop_assert!(b.loss < a.loss);
    }

    #[test]
    fn huge_logits_stay_finite(n in 2usize..6, f in 1usize..4, scale in 1.0f64..100.0, sign in prop::bool::ANY) {
        // |logit| up to 1e4
        let s = if sign { scale } else { -scale };
        let g: Vec<f64> = (0..n * f).map(|i| s * (1.0 + (i % 3) as f64)).collect();
        let h: Vec<f64> = (0..n * f).map(|i| -s * (1.0 + (i % 2) as f64) / f as f64).collect();
        let neg: Vec<f64> = h.iter().map(|v| -v).collect();
        let p = premier_taco_loss(&arr(n, f, &g), &arr(n, f, &h), &arr(n, f, &neg), 1.0).unwrap();
        let b = taco_batch_loss(&arr(n, f, &g), &arr(n, f, &h), 1.0).unwrap();
        let w = premier_all_window_loss(&arr(n, f, &g), &arr(n, f, &h), &arr(n, f, &neg), &vec![1; n], 1.0).unwrap();
        for out in [&p, &b, &w] {
            prop_assert!(out.loss.is_finite());
            prop_assert!(out.grad_g.all_finite() && out.grad_h_pos.all_finite());
        }
    }

    #[test]
    fn analytic_gradients_match_central_differences((n, f, g, pos, neg, tau) in instance(4)) {
        let p = premier_taco_loss(&arr(n, f, &g), &arr(n, f, &pos), &arr(n, f, &neg), tau).unwrap();
        let dg = numeric_grad(&g, |x| premier_taco_loss(&arr(n, f, x), &arr(n, f, &pos), &arr(n, f, &neg), tau).unwrap().loss);
        let dp = numeric_grad(&pos, |x| premier_taco_loss(&arr(n, f, &g), &arr(n, f, x), &arr(n, f, &neg), tau).unwrap().loss);
        let dn = numeric_grad(&neg, |x| premier_taco_loss(&arr(n, f, &g), &arr(n, f, &pos), &arr(n, f, x), tau).unwrap().loss);
        prop_assert!(close(p.grad_g.data(), &dg, 1e-6));
        prop_assert!(close(p.grad_h_pos.data(), &dp, 1e-6));
        prop_assert!(close(p.grad_h_neg.unwrap().data(), &dn, 1e-6));
        if n >= 2 {
            let b = taco_batch_loss(&arr(n, f, &g), &arr(n, f, &pos), tau).unwrap();
            let dg = numeric_grad(&g, |x| taco_batch_loss(&arr(n, f, x), &arr(n, f, &pos), tau).unwrap().loss);
            let dh = numeric_grad(&pos, |x| taco_batch_loss(&arr(n, f, &g), &arr(n, f, x), tau).unwrap().loss);
            prop_assert!(close(b.grad_g.data(), &dg, 1e-6));
            prop_assert!(close(b.grad_h_pos.data(), &dh, 1e-6));
        }
    }
}

#[test]
fn batch_loss_is_not_the_window_loss() {
    // Two samples whose in-batch negative differs from their own window negative.
    let g = [0.3, -1.2, 0.8, 0.5];
    let pos = [1.0, 0.1, -0.4, 0.9];
    let neg = [-0.7, 0.6, 0.2, -1.1];
    let p = premier_taco_loss(&arr(2, 2, &g), &arr(2, 2, &pos), &arr(2, 2, &neg), 1.0).unwrap();
    let b = taco_batch_loss(&arr(2, 2, &g), &arr(2, 2, &pos), 1.0).unwrap();
    assert!((p.loss - b.loss).abs() > 1e-3, "{} vs {}", p.loss, b.loss);
}

#[test]
fn similarity_counts_per_sample() {
    for n in [2, 32, 256, 4096] {
        assert_eq!(similarity_evals_per_step(LossVariant::PremierTaco, n, 1) / n as u64, 2);
        assert_eq!(similarity_evals_per_step(LossVariant::TacoBatch, n, 1) / n as u64, n as u64);
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let one = arr(1, 2, &[1.0, 2.0]);
    assert!(matches!(taco_batch_loss(&one, &one, 1.0), Err(tacoforge::Error::Config(_))));
    assert!(matches!(premier_taco_loss(&one, &one, &one, 0.0), Err(tacoforge::Error::Config(_))));
    let empty = arr(0, 2, &[]);
    assert!(matches!(premier_all_window_loss(&one, &one, &empty, &[0], 1.0), Err(tacoforge::Error::Config(_))));
}
