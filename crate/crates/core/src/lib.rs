//! Hierarchical semantic reinforcement learning for slate recommendation.

pub mod catalog;
pub mod checkpoint;
pub mod env;
pub mod hpn;
pub mod mlc;
pub mod numerics;
pub mod tokenizer;
pub mod trainer;
