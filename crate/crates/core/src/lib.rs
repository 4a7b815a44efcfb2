//! Contrastive self-supervised pre-training for tabular data by random
//! feature corruption, plus the baselines and evaluation harness used to
//! compare it against supervised training.

pub mod baselines;
pub mod cli;
pub mod corruption;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod training;

pub use error::{Result, ScarfError};
