//! Multi-dimensional hostility detection for Devanagari-script posts.

pub mod cli;
pub mod data;
pub mod encoder;
pub mod metrics;
pub mod strategies;
pub mod synth;
pub mod textprep;
