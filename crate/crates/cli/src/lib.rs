//! Command-line driver: vocabulary building, both training stages,
//! sampling with assembly, and evaluation.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
