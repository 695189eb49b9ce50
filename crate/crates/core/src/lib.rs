pub mod config;
pub mod detection;
pub mod ethogram;
pub mod evaluation;
pub mod geometry;
pub mod pipeline;
pub mod reconstruction;
pub mod retracking;
pub mod seed;
pub mod simulator;
pub mod tracking;
