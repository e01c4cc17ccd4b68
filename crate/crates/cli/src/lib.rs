//! Experiment drivers behind the `netdeconv` binary. Each command writes a
//! `manifest.json` plus CSV tables under its output directory.

pub mod blur;
pub mod context;
pub mod kernels;
pub mod ns_bench;
pub mod regress;
pub mod timing;
pub mod training;
