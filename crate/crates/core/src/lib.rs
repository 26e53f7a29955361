//! Reward, curriculum, and routing machinery for training multimodal
//! video-ad moderation models, plus the synthetic data and evaluation
//! tooling needed to exercise it end to end.

pub mod active_router;
pub mod client;
pub mod curriculum;
pub mod data_gen;
pub mod grpo_sim;
pub mod output_format;
pub mod reward_engine;
pub mod similarity;
pub mod taxonomy;
pub mod eval_harness;
pub mod run;
