//! Experiment harness for factorization machine annealing: configuration,
//! experiment drivers and the file formats written by the `fsrfm` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;
