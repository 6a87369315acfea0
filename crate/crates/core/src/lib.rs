//! Attention-guided perception maps and content-aware image magnification.
//!
//! The pipeline has four stages:
//!
//! 1. [`attention_map`]: max-pool attention over heads and sum over layers
//!    into a token heatmap.
//! 2. [`refinement`]: repeatedly mask the dominant tokens and re-query an
//!    [`AttentionProvider`](refinement::AttentionProvider), averaging the
//!    heatmaps of every pass.
//! 3. [`postprocess`]: normalize, contrast-enhance, smooth and upsample the
//!    heatmap into a pixel-level perception map.
//! 4. [`magnifier`]: warp the image through the inverse marginal CDFs of the
//!    perception map so attended regions take up more pixels.
//!
//! The magnified image is meant to replace the original visual input for the
//! next decoding step of a vision-language model; running the model itself
//! is left to the caller.

pub mod attention_map;
pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod magnifier;
pub mod postprocess;
pub mod refinement;

pub use attention_map::{
    aggregate_heatmap, apply_mask, cluster_high_group, AttnStack, CountMask, StackDims,
    TokenHeatmap, TokenMask,
};
pub use error::{Error, Result};
pub use grid::Grid;
pub use magnifier::{
    build_marginal_cdfs, invert_cdf, magnify, remap_coordinates, ImageBuffer, MarginalCdf,
    RemapGrid,
};
pub use postprocess::{postprocess_pipeline, PerceptionMap, PostprocessConfig};
pub use refinement::{refine, AttentionProvider, RefinementConfig, RefinementTrace, Termination};
