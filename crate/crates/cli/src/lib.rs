//! Experiment runner, cost benchmark, and plot emission around the
//! sampled-distillation core.

pub mod bench;
pub mod config;
pub mod grid;
pub mod plot;
