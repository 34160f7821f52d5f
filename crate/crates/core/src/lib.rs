//! Similarity-based feature upsampling.
//!
//! A low-resolution deep feature is upsampled by per-pixel softmax kernels over
//! neighbors of its bilinear upsampling. The kernels come from two learned
//! similarity branches: one compares a guided-filter-aligned query with the
//! upsampled key, the other compares the query with a Gaussian-smoothed copy
//! of itself. Both score with paired central difference convolutions, and all
//! neighbors are taken on the high-resolution grid with dilation equal to the
//! upsampling ratio.
//!
//! The crate also carries literal reference implementations ([`oracle`]),
//! finite-difference gradient checks for the two custom kernels ([`grad`]),
//! PCA visualization ([`visualize`]), and the `resfu` command-line tool
//! ([`cli`]).

pub mod alloc_counter;
pub mod bench;
pub mod bundle;
pub mod cli;
pub mod error;
pub mod grad;
pub mod guided_filter;
pub mod ops;
pub mod oracle;
pub mod pcdc;
pub mod rng;
pub mod selfcheck;
pub mod tensor;
pub mod upsampler;
pub mod visualize;

pub use error::{Error, Result};
pub use guided_filter::{guided_filter, GuidedFilterConfig};
pub use ops::SimilarityScores;
pub use pcdc::{channel_compressor, pcdc_block, pcdc_layer, PcdcBlockParams, PcdcParams};
pub use tensor::{FeatureMap, FeatureMap64};
pub use upsampler::{
    generate_params, kernel_apply_fns, resfu_upsample, resfu_upsample_traced, ResfuParams, UpsampleConfig,
};
