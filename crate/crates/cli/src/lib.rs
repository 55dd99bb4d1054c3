//! Command-line front end for the mask-explanation library: corpus synthesis,
//! classifier training, mask learning, saliency baselines, heatmap evaluation,
//! and rule faithfulness checks, with every run replayable from its written
//! config.

pub mod cli;
pub mod commands;
pub mod config;
pub mod corpusio;
pub mod csvio;
pub mod error;
pub mod modelio;
pub mod mpt;
pub mod parallel;
pub mod pgm;
