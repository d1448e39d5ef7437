//! Downstream use of a pretrained encoder: few-shot behavior cloning, policy
//! evaluation, linear probes and the ablation sweeps.

mod ablate;
mod bc;
mod eval;
mod probe;

pub use ablate::{
    ablate_batch_size, ablate_window, read_table, write_table, AblationJob, AblationRow, AblationSetup, TABLE_HEADER,
};
pub use bc::{
    behavior_clone, demo_mse, policy_head_spec, shift_image, BcConfig, BcRun, EncoderInit, EvalPoint, EvalReport,
    PolicyNet,
};
pub use eval::{
    best3, eval_reset_seed, evaluate_against, evaluate_policy, expert_mean_return, random_policy, rollout_returns,
    BatchPolicy, EvalResult, ExpertBatch, RandomBatch,
};
pub use probe::{
    features_and_latents, linear_probe, probe_encoder, probe_random_init, r2_score, split_episodes, RidgeModel,
    PROBE_RIDGE, PROBE_TRAIN_FRACTION,
};
