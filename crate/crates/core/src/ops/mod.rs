//! Primitive kernels shared by the alignment, similarity and aggregation stages.
//!
//! Every op is a pure function of its inputs. Where an op parallelizes over
//! output pixels, each pixel is reduced in a fixed order (ascending channel,
//! then ascending neighbor index) so results are bit-identical at any thread
//! count.

mod conv;
mod filter;
mod neighbors;
mod norm;
mod resize;
mod softmax;

pub use conv::{grouped_pointwise_conv, relu, Matrix};
pub use filter::{box_mean, gaussian_kernel3, gaussian_smooth3};
pub use neighbors::{gather_neighbors, neighbor_offsets, NeighborhoodTensor};
pub use norm::{group_normalize, GroupNormAffine};
pub use resize::{bilinear_resize, nearest_resize};
pub use softmax::{softmax_rows, SimilarityScores};

pub(crate) use conv::grouped_pointwise_conv_relu;
pub(crate) use filter::box_filter_with;
pub(crate) use norm::group_normalize_in_place;
pub(crate) use neighbors::clamped_axis_tables;
pub(crate) use resize::{bilinear_taps, interpolate_row};

use crate::error::{Error, Result};

pub(crate) fn check_kernel_size(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd and >= 1, got {kernel}"
        )));
    }
    Ok(())
}
