//! Hierarchical multi-resolution image representations, subpath
//! structured kernels, and kernel-SVM land-cover classification.
//!
//! A pair of co-registered rasters at two resolutions is turned into one
//! structure per coarse pixel: an ascending sequence of enclosing
//! regions on the coarse image and a descending tree of subregions on
//! the matching fine-image patch. Subpath kernels computed on those
//! structures (and their convex combination) feed a one-against-one SVM
//! on precomputed Gram matrices.
//!
//! Modules:
//! - [`raster`]: multi-band grids, patch geometry, file formats.
//! - [`hierarchy`]: region-merging trees, threshold cuts, instances.
//! - [`features`]: 8-dimensional per-region features.
//! - [`kernels`]: atomic/sequence/tree/composite kernels, oracles, Gram.
//! - [`classify`]: SMO-based one-against-one SVM, cross-validation.
//! - [`eval`]: accuracy metrics and the Wilcoxon comparison.
//! - [`synth`]: synthetic two-resolution dataset generator.
//! - [`pipeline`]: end-to-end experiment driver and reports.

pub mod classify;
pub mod error;
pub mod eval;
pub mod features;
pub mod hierarchy;
pub mod kernels;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
