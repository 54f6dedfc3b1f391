//! Benchmark harness around `ssadapt-core`: dataset files and caches,
//! experiment configuration, the training/evaluation grid, reports, and the
//! self-contained verification suite. The `ssadapt` binary is a thin CLI over
//! these modules.

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod fetch;
pub mod grid;
pub mod plots;
pub mod report;
pub mod rundir;
pub mod verify;
