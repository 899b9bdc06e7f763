//! Batch front-end around the emschart pipeline: scenario configs, the
//! simulate/chart/optimize/evaluate-trajectory/report subcommands, and
//! deterministic artifact files.

pub mod artifacts;
pub mod commands;
pub mod config;
