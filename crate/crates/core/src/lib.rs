//! Whole-slide image tiling, feature bags, and multiple-instance learning
//! benchmarks.
//!
//! The pipeline runs slide → tissue mask → filtered tiles → per-slide
//! feature bags → slide-level model → benchmark table. Every stage is
//! deterministic for a fixed seed and worker count independent.

pub mod bench;
pub mod dataset_store;
pub mod embedder;
pub mod mil_core;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod slide_io;
pub mod tiler;
pub mod tissue_mask;
