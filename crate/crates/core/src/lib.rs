//! Multitask offline pretraining of state and action representations with a
//! temporal action-driven contrastive objective whose single negative is drawn
//! from a window around the positive future state, followed by few-shot
//! behavior cloning on held-out tasks.
//!
//! Everything runs on synthetic control families with known latent state so
//! representation quality can be measured directly by linear probing.

pub mod adapt;
pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod losses;
pub mod nn;
pub mod pretrain;
pub mod sampler;
pub mod selfcheck;

pub use error::{Error, Result};
