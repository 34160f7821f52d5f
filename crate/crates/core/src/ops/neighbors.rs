use rayon::prelude::*;

use crate::tensor::FeatureMap;

/// `center + step * dilation`, clamped to `[0, len - 1]`.
#[inline]
pub(crate) fn clamped_axis(center: usize, step: isize, dilation: usize, len: usize) -> usize {
    (center as isize + step * dilation as isize).clamp(0, len as isize - 1) as usize
}

/// For every coordinate `i < len`, the `kernel` clamped source coordinates of
/// its dilated window, stored at `[i * kernel .. (i + 1) * kernel]`.
pub(crate) fn clamped_axis_tables(len: usize, kernel: usize, dilation: usize) -> Vec<usize> {
    let half = (kernel / 2) as isize;
    (0..len)
        .flat_map(|i| (0..kernel).map(move |a| clamped_axis(i, a as isize - half, dilation, len)))
        .collect()
}

/// The `K x K` offsets `(di, dj)` in row-major order, top-left first.
pub fn neighbor_offsets(kernel: usize, dilation: usize) -> Vec<(isize, isize)> {
    let half = (kernel / 2) as isize;
    let d = dilation as isize;
    (-half..=half)
        .flat_map(|di| (-half..=half).map(move |dj| (di * d, dj * d)))
        .collect()
}

/// Gathered `HW x K^2 x C` neighbor values.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodTensor {
    pixels: usize,
    neighbors: usize,
    channels: usize,
    data: Vec<f32>,
}

impl NeighborhoodTensor {
    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, pixel: usize, neighbor: usize, ch: usize) -> f32 {
        self.data[ch + self.channels * (neighbor + self.neighbors * pixel)]
    }

    /// Channel vector of neighbor `neighbor` of `pixel`.
    pub fn slot(&self, pixel: usize, neighbor: usize) -> &[f32] {
        let start = self.channels * (neighbor + self.neighbors * pixel);
        &self.data[start..start + self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Dilated `K x K` neighborhood of every pixel with clamp-to-edge padding.
pub fn gather_neighbors(src: &FeatureMap, kernel: usize, dilation: usize) -> NeighborhoodTensor {
    assert!(kernel % 2 == 1, "kernel size must be odd");
    assert!(dilation >= 1, "dilation must be >= 1");
    let (h, w, c) = src.dims();
    let k2 = kernel * kernel;
    let rows = clamped_axis_tables(h, kernel, dilation);
    let cols = clamped_axis_tables(w, kernel, dilation);
    let mut data = vec![0.0f32; h * w * k2 * c];
    data.par_chunks_mut(w * k2 * c)
        .enumerate()
        .for_each(|(i, line)| {
            for j in 0..w {
                for a in 0..kernel {
                    let r = rows[i * kernel + a];
                    for b in 0..kernel {
                        let col = cols[j * kernel + b];
                        let start = (j * k2 + a * kernel + b) * c;
                        line[start..start + c].copy_from_slice(src.pixel(col + w * r));
                    }
                }
            }
        });
    NeighborhoodTensor {
        pixels: h * w,
        neighbors: k2,
        channels: c,
        data,
    }
}
