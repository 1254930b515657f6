//! Tool-integrated rollout harness.
//!
//! Parses tagged multi-turn rollouts, executes code turns in a persistent
//! sandbox session, scores trajectories with a difficulty-aware tool-call
//! reward, derives group-normalized token advantages, and drives scripted
//! policies through synthetic tasks.

pub mod advantage;
pub mod analytics;
pub mod config;
pub mod grammar;
pub mod mock_guest;
pub mod persist;
pub mod reward;
pub mod sandbox;
pub mod scoring;
pub mod sim;
pub mod trajectory;
