//! Command-line harness for the U-shape block-assembly simulator:
//! training, evaluation, ablation sweeps, and replay export.

pub mod adapter;
pub mod config;
pub mod controller;
pub mod ik;
pub mod oracle;
