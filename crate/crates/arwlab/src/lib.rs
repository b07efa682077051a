//! Experiment harnesses, output files and the command line on top of
//! `arwlab-core`.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;
pub mod stats;

pub use arwlab_core as engine;
