//! File formats, dataset loading, evaluation and the command-line front end
//! for the `omnisplat-core` rasterizer and trainer.

pub mod checkpoint;
pub mod cli;
pub mod colmap;
pub mod config;
pub mod eval;
pub mod images;
pub mod manifest;
pub mod metrics_log;
pub mod ply;
