//! Knowledge sharing among independent tabular Q-learners on cooperative
//! gridworlds, with AdHocTD and independent Q-learning as baselines.

pub mod agent;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod envs;
pub mod harness;
pub mod learner;
pub mod policy;
pub mod protocol;
pub mod rng;
pub mod sweep;
