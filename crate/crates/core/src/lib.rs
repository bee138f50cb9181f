//! Pixel-based automated game-testing agent stack: a deterministic 2D park
//! simulator with injectable texture and navigation bugs, plus the learning
//! pipeline (masked inverse-dynamics feature distillation, memory-augmented
//! teacher/student imitation, ensemble novelty rewards, preference-conditioned
//! PPO exploration) and an evaluation harness.

pub mod config;
pub mod distill;
pub mod error;
pub mod imitation;
pub mod metrics;
pub mod novelty;
pub mod pipeline;
pub mod policy;
pub mod ppo;
pub mod preference;
pub mod rng;
pub mod tensor;
pub mod trajectory;
pub mod vision;
pub mod world;

pub use error::{PpgtaError, Result};

/// Number of discrete agent actions.
pub const N_ACTIONS: usize = 9;
