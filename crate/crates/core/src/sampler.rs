//! Anchor enumeration and batch assembly with window-centered negatives.
//!
//! For an anchor `t` with horizon `K`, the positive is the state at `t + K` and
//! the negative is drawn uniformly from the same episode's window
//! `[t+K-W, t+K+W]` minus `t+K`, clipped to `[0, T-1]`.

use std::ops::Range;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::Rng as _;

use crate::data::MultitaskDataset;
use crate::error::{Error, Result};
use crate::nn::rng::{label_id, rng_for, Rng};
use crate::nn::{NdArray, Scalar};

/// Anchors `t` with `t + K <= T - 1`. Requires `T >= K + 2`.
pub fn valid_anchors(len: usize, k: usize, w: usize) -> Result<Range<usize>> {
    if k == 0 || w == 0 {
        return Err(Error::config(format!("K and W must be >= 1 (K={k}, W={w})")));
    }
    if len < k + 2 {
        return Err(Error::Dataset(format!(
            "episode of length {len} is too short for K={k} (needs at least {})",
            k + 2
        )));
    }
    Ok(0..len - k)
}

/// Clipped window around `center`, excluding `center` itself: `(lo, hi, count)`.
pub fn negative_window(center: usize, w: usize, len: usize) -> (usize, usize, usize) {
    let lo = center.saturating_sub(w);
    let hi = (center + w).min(len - 1);
    (lo, hi, hi - lo)
}

/// Every candidate negative index for anchor `t`, in increasing order.
pub fn window_candidates(t: usize, k: usize, w: usize, len: usize) -> Vec<usize> {
    let center = t + k;
    let (lo, hi, _) = negative_window(center, w, len);
    (lo..=hi).filter(|&i| i != center).collect()
}

/// Draws one negative index uniformly from the clipped window around `t + K`.
pub fn sample_negative(t: usize, k: usize, w: usize, len: usize, rng: &mut Rng) -> Result<usize> {
    let center = t + k;
    if center >= len {
        return Err(Error::Internal(format!("anchor {t} + K {k} outside episode of length {len}")));
    }
    let (lo, _, count) = negative_window(center, w, len);
    if count == 0 {
        return Err(Error::Internal(format!("empty negative window at anchor {t}")));
    }
    let r = lo + rng.gen_range(0..count);
    Ok(if r >= center { r + 1 } else { r })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionIndex {
    /// Position of the episode in [`MultitaskDataset::episodes`].
    pub episode: usize,
    pub t: usize,
    pub k: usize,
    pub t_neg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeMode {
    /// One window negative per sample.
    Single,
    /// Every clipped-window candidate per sample.
    AllWindow,
}

/// A pretraining batch. With [`NegativeMode::AllWindow`], `s_neg` stacks the
/// negatives of all samples and `neg_counts[i]` says how many belong to
/// sample `i` (in order).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch<T> {
    pub s_t: NdArray<T>,
    pub a_seq: NdArray<T>,
    pub s_pos: NdArray<T>,
    pub s_neg: NdArray<T>,
    pub neg_counts: Vec<usize>,
    pub task_ids: Vec<u64>,
    pub index: Vec<TransitionIndex>,
}

impl<T: Scalar> TransitionBatch<T> {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Picks a (task, episode) pair uniformly over tasks then episodes, and an
/// anchor uniformly over the valid range. Anchors are drawn with replacement.
pub fn sample_index(dataset: &MultitaskDataset, k: usize, w: usize, rng: &mut Rng) -> Result<TransitionIndex> {
    let groups = dataset.by_task();
    if groups.is_empty() {
        return Err(Error::Dataset("dataset has no episodes".into()));
    }
    let (_, eps) = &groups[rng.gen_range(0..groups.len())];
    let episode = eps[rng.gen_range(0..eps.len())];
    let len = dataset.episodes()[episode].len();
    let anchors = valid_anchors(len, k, w)?;
    let t = rng.gen_range(anchors);
    let t_neg = sample_negative(t, k, w, len, rng)?;
    Ok(TransitionIndex { episode, t, k, t_neg })
}

fn push_obs<T: Scalar>(dst: &mut Vec<T>, src: &[f32]) {
    dst.extend(src.iter().map(|&v| T::from_f64_lossy(v as f64)));
}

/// Assembles a batch of `n` samples.
pub fn sample_batch<T: Scalar>(
    dataset: &MultitaskDataset,
    n: usize,
    k: usize,
    w: usize,
    mode: NegativeMode,
    rng: &mut Rng,
) -> Result<TransitionBatch<T>> {
    if n == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let index = (0..n)
        .map(|_| sample_index(dataset, k, w, rng))
        .collect::<Result<Vec<_>>>()?;
    assemble(dataset, index, w, mode)
}

/// Gathers the arrays for a list of transition indices.
pub fn assemble<T: Scalar>(
    dataset: &MultitaskDataset,
    index: Vec<TransitionIndex>,
    w: usize,
    mode: NegativeMode,
) -> Result<TransitionBatch<T>> {
    let n = index.len();
    let obs_kind = dataset.obs_kind();
    let obs_len = obs_kind.len();
    let m = dataset.action_dim();
    let k = index.first().map(|i| i.k).unwrap_or(1);
    let mut s_t = Vec::with_capacity(n * obs_len);
    let mut s_pos = Vec::with_capacity(n * obs_len);
    let mut s_neg = Vec::with_capacity(n * obs_len);
    let mut a_seq = Vec::with_capacity(n * k * m);
    let mut neg_counts = Vec::with_capacity(n);
    let mut task_ids = Vec::with_capacity(n);
    for ix in &index {
        let ep = &dataset.episodes()[ix.episode];
        if ix.k != k {
            return Err(Error::Internal("mixed K inside one batch".into()));
        }
        push_obs(&mut s_t, ep.obs(ix.t));
        push_obs(&mut s_pos, ep.obs(ix.t + k));
        for j in 0..k {
            push_obs(&mut a_seq, ep.action(ix.t + j));
        }
        match mode {
            NegativeMode::Single => {
                push_obs(&mut s_neg, ep.obs(ix.t_neg));
                neg_counts.push(1);
            }
            NegativeMode::AllWindow => {
                let cands = window_candidates(ix.t, k, w, ep.len());
                for &c in &cands {
                    push_obs(&mut s_neg, ep.obs(c));
                }
                neg_counts.push(cands.len());
            }
        }
        task_ids.push(ep.task_id);
    }
    let mut obs_shape = vec![n];
    obs_shape.extend(obs_kind.dims());
    let mut neg_shape = vec![neg_counts.iter().sum::<usize>()];
    neg_shape.extend(obs_kind.dims());
    Ok(TransitionBatch {
        s_t: NdArray::from_vec(obs_shape.clone(), s_t)?,
        a_seq: NdArray::from_vec(vec![n, k, m], a_seq)?,
        s_pos: NdArray::from_vec(obs_shape, s_pos)?,
        s_neg: NdArray::from_vec(neg_shape, s_neg)?,
        neg_counts,
        task_ids,
        index,
    })
}

/// Random stream for the batch of training step `step` under `seed`. Keying
/// by step makes resumption and prefetching order independent.
pub fn batch_rng(seed: u64, step: u64) -> Rng {
    rng_for(seed, &[label_id("batch"), step])
}

/// Batch settings shared by the sampler and the prefetch thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub k: usize,
    pub w: usize,
    pub mode: NegativeMode,
    pub seed: u64,
}

impl BatchPlan {
    pub fn batch<T: Scalar>(&self, dataset: &MultitaskDataset, step: u64) -> Result<TransitionBatch<T>> {
        let mut rng = batch_rng(self.seed, step);
        sample_batch(dataset, self.batch_size, self.k, self.w, self.mode, &mut rng)
    }
}

/// Background producer of batches for consecutive steps through a bounded
/// queue. Batches arrive in step order and are identical to
/// [`BatchPlan::batch`] for the same step.
pub struct Prefetcher<T> {
    rx: Receiver<(u64, Result<TransitionBatch<T>>)>,
    handle: Option<JoinHandle<()>>,
}

impl<T: Scalar> Prefetcher<T> {
    pub fn spawn(dataset: Arc<MultitaskDataset>, plan: BatchPlan, steps: Range<u64>, depth: usize) -> Self {
        let (tx, rx) = sync_channel(depth.max(1));
        let handle = std::thread::spawn(move || {
            for step in steps {
                let b = plan.batch::<T>(&dataset, step);
                if tx.send((step, b)).is_err() {
                    break;
                }
            }
        });
        Prefetcher {
            rx,
            handle: Some(handle),
        }
    }

    /// Next batch; `expected_step` guards the ordering contract.
    pub fn next(&mut self, expected_step: u64) -> Result<TransitionBatch<T>> {
        let (step, batch) = self
            .rx
            .recv()
            .map_err(|_| Error::Internal("prefetch thread ended early".into()))?;
        if step != expected_step {
            return Err(Error::Internal(format!("prefetch produced step {step}, expected {expected_step}")));
        }
        batch
    }
}

impl<T> Drop for Prefetcher<T> {
    fn drop(&mut self) {
        // Drain so a blocked producer can observe the closed channel.
        while self.rx.try_recv().is_ok() {}
        if let Some(h) = self.handle.take() {
            drop(std::mem::replace(&mut self.rx, sync_channel(1).1));
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_pretrain, DataConfig};

    #[test]
    fn anchor_ranges() {
        assert_eq!(valid_anchors(10, 3, 5).unwrap(), 0..7);
        assert_eq!(valid_anchors(5, 3, 5).unwrap(), 0..2);
        assert!(matches!(valid_anchors(4, 3, 5), Err(Error::Dataset(_))));
    }

    #[test]
    fn clipped_left_window() {
        assert_eq!(window_candidates(0, 3, 5, 100), vec![0, 1, 2, 4, 5, 6, 7, 8]);
        let mut rng = rng_for(1, &[]);
        let mut seen = [false; 9];
        for _ in 0..2000 {
            let t = sample_negative(0, 3, 5, 100, &mut rng).unwrap();
            assert!(t <= 8 && t != 3);
            seen[t] = true;
        }
        assert_eq!(seen.iter().filter(|&&s| s).count(), 8);
    }

    #[test]
    fn interior_window_has_2w_candidates() {
        let c = window_candidates(50, 3, 5, 100);
        assert_eq!(c, vec![48, 49, 50, 51, 52, 54, 55, 56, 57, 58]);
    }

    #[test]
    fn clipped_right_window() {
        // t + K = T - 1
        assert_eq!(window_candidates(96, 3, 5, 100), vec![94, 95, 96, 97, 98]);
    }

    fn small_dataset() -> MultitaskDataset {
        let cfg = DataConfig {
            pretrain_tasks: 2,
            episodes_per_task: 3,
            horizon: Some(20),
            ..Default::default()
        };
        generate_pretrain(&cfg).unwrap()
    }

    #[test]
    fn batches_are_deterministic_and_cover_tasks() {
        let ds = small_dataset();
        let plan = BatchPlan {
            batch_size: 4,
            k: 3,
            w: 5,
            mode: NegativeMode::Single,
            seed: 9,
        };
        let a: TransitionBatch<f64> = plan.batch(&ds, 3).unwrap();
        let b: TransitionBatch<f64> = plan.batch(&ds, 3).unwrap();
        assert_eq!(a, b);
        let mut tasks = std::collections::BTreeSet::new();
        for step in 0..20 {
            let bt: TransitionBatch<f32> = plan.batch(&ds, step).unwrap();
            tasks.extend(bt.task_ids);
        }
        assert_eq!(tasks.len(), 2);
    }

    #[test]
    fn batch_shapes_and_contents() {
        let ds = small_dataset();
        let mut rng = rng_for(2, &[]);
        let b: TransitionBatch<f64> = sample_batch(&ds, 5, 3, 5, NegativeMode::Single, &mut rng).unwrap();
        assert_eq!(b.s_t.shape(), &[5, 20]);
        assert_eq!(b.a_seq.shape(), &[5, 3, 2]);
        assert_eq!(b.s_neg.shape(), &[5, 20]);
        for (i, ix) in b.index.iter().enumerate() {
            let ep = &ds.episodes()[ix.episode];
            let want: Vec<f64> = ep.obs(ix.t + 3).iter().map(|&v| v as f64).collect();
            assert_eq!(b.s_pos.row(i), &want[..]);
            let want: Vec<f64> = ep.obs(ix.t_neg).iter().map(|&v| v as f64).collect();
            assert_eq!(b.s_neg.row(i), &want[..]);
        }
        assert!(sample_batch::<f64>(&ds, 0, 3, 5, NegativeMode::Single, &mut rng).is_err());
    }

    #[test]
    fn all_window_mode_counts() {
        let ds = small_dataset();
        let idx = vec![TransitionIndex {
            episode: 0,
            t: 8,
            k: 3,
            t_neg: 10,
        }];
        let b: TransitionBatch<f64> = assemble(&ds, idx, 5, NegativeMode::AllWindow).unwrap();
        assert_eq!(b.neg_counts, vec![10]);
        assert_eq!(b.s_neg.rows(), 10);
    }

    #[test]
    fn prefetch_preserves_order() {
        let ds = Arc::new(small_dataset());
        let plan = BatchPlan {
            batch_size: 3,
            k: 3,
            w: 5,
            mode: NegativeMode::Single,
            seed: 1,
        };
        let mut pf = Prefetcher::<f64>::spawn(ds.clone(), plan, 0..6, 2);
        for step in 0..6 {
            let got = pf.next(step).unwrap();
            assert_eq!(got, plan.batch::<f64>(&ds, step).unwrap());
        }
    }
}
