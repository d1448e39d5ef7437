//! Synthetic multitask control data: environments with known latent state,
//! scripted and random behavior policies, and the on-disk dataset format.

mod env;
mod episode;
mod generate;
mod store;
mod task;

pub use env::{
    expert_policy, make_env, operator_norm, Env, ExpertPolicy, GridPixelEnv, LatentLinearEnv, LinearDynamics, Policy,
    StepOutcome, EXPERT_PINV_DAMPING,
};
pub use episode::{collect, collect_range, episode_reset_seed, rollout, Behavior, BehaviorTag, Episode};
pub use generate::{generate, generate_pretrain, DataConfig, FamilyKind, GeneratedData};
pub use store::{
    decode_episode, encode_episode, episode_file_name, load_dataset, read_manifest, save_dataset, DatasetManifest,
    EpisodeEntry, MultitaskDataset, TaskEntry, WindowEnvelope, FORMAT_VERSION, MANIFEST_FILE,
};
pub use task::{Family, GridPixelParams, LatentLinearParams, ObsKind, TaskSpec};
