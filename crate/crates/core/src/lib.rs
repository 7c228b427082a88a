//! Ball-on-board human-robot cooperation testbed with evolutionary value
//! learning: a reinforcement-learning agent whose reward is rebuilt every
//! episode from a Bayesian goal posterior and four goal-specificity features
//! extracted from the partner's motion history.

pub mod board;
pub mod error;
pub mod exec;
pub mod grid;
pub mod harness;
pub mod features;
pub mod metrics;
pub mod partner;
pub mod ppo;
pub mod reward;
pub mod smbi;
pub mod train;

pub use error::{Error, Result};
