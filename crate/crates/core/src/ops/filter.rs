use rayon::prelude::*;

use super::neighbors::clamped_axis;
use crate::tensor::FeatureMap;

/// Rows per independently processed block in the vertical pass. Fixed so
/// the result never depends on the thread count.
const ROW_BLOCK: usize = 32;

/// Windowed means over a channel-fastest `h x w x c` plane of `N` quantities
/// at once, in double precision.
///
/// The `(2r+1)^2` window is cropped to the image and normalized by the number
/// of in-bounds pixels. Cropped means are separable, so this runs as a
/// horizontal sliding-sum pass followed by a vertical one. `fetch(idx)`
/// supplies the inputs at flat index `idx`, and `emit(idx, means)` produces the
/// value stored at `out[idx]`.
pub(crate) fn box_filter_with<const N: usize, T: Send>(
    (h, w, c): (usize, usize, usize),
    radius: usize,
    fetch: impl Fn(usize) -> [f64; N] + Sync,
    emit: impl Fn(usize, [f64; N]) -> T + Sync,
    out: &mut [T],
) {
    assert_eq!(out.len(), h * w * c);
    if out.is_empty() {
        return;
    }
    let line = w * c;
    let add = |acc: &mut [f64; N], v: [f64; N]| acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    let sub = |acc: &mut [f64; N], v: [f64; N]| acc.iter_mut().zip(v).for_each(|(a, b)| *a -= b);
    let window = |i: usize, len: usize| (i.saturating_sub(radius), (i + radius).min(len - 1));
    let inv_count = |i: usize, len: usize| {
        let (lo, hi) = window(i, len);
        1.0 / (hi - lo + 1) as f64
    };
    let inv_col: Vec<f64> = (0..w).map(|j| inv_count(j, w)).collect();

    // Horizontal window sums of image row `i`.
    let horizontal_row = |i: usize, row: &mut [[f64; N]]| {
        let base = i * line;
        let mut acc = vec![[0.0f64; N]; c];
        for j in 0..=radius.min(w - 1) {
            for (ch, a) in acc.iter_mut().enumerate() {
                add(a, fetch(base + j * c + ch));
            }
        }
        for (j, px) in row.chunks_exact_mut(c).enumerate() {
            px.copy_from_slice(&acc);
            for (ch, a) in acc.iter_mut().enumerate() {
                if j + radius + 1 < w {
                    add(a, fetch(base + (j + radius + 1) * c + ch));
                }
                if j >= radius {
                    sub(a, fetch(base + (j - radius) * c + ch));
                }
            }
        }
    };

    // Each block of output rows recomputes the horizontal sums it needs, so
    // no full-size intermediate is kept.
    out.par_chunks_mut(ROW_BLOCK * line).enumerate().for_each(|(block, dst)| {
        let first = block * ROW_BLOCK;
        let last = first + dst.len() / line - 1;
        let top = window(first, h).0;
        let bottom = window(last, h).1;
        let mut rows = vec![[0.0f64; N]; (bottom - top + 1) * line];
        for (r, row) in rows.chunks_exact_mut(line).enumerate() {
            horizontal_row(top + r, row);
        }
        let row = |i: usize| &rows[(i - top) * line..(i - top + 1) * line];

        let mut acc = vec![[0.0f64; N]; line];
        for r in top..=window(first, h).1 {
            acc.iter_mut().zip(row(r)).for_each(|(a, &v)| add(a, v));
        }
        for (offset, dst_row) in dst.chunks_exact_mut(line).enumerate() {
            let i = first + offset;
            let inv_rows = inv_count(i, h);
            for (j, (dst_px, acc_px)) in dst_row.chunks_exact_mut(c).zip(acc.chunks_exact(c)).enumerate() {
                let scale = inv_rows * inv_col[j];
                let base = i * line + j * c;
                for (ch, (slot, a)) in dst_px.iter_mut().zip(acc_px).enumerate() {
                    *slot = emit(base + ch, a.map(|v| v * scale));
                }
            }
            if i == last {
                break;
            }
            if i + radius + 1 < h {
                acc.iter_mut().zip(row(i + radius + 1)).for_each(|(a, &v)| add(a, v));
            }
            if i >= radius {
                acc.iter_mut().zip(row(i - radius)).for_each(|(a, &v)| sub(a, v));
            }
        }
    });
}

/// Mean over the in-bounds part of the `(2r+1) x (2r+1)` window around each pixel.
pub fn box_mean(src: &FeatureMap, radius: usize) -> FeatureMap {
    assert!(radius >= 1, "box radius must be >= 1");
    let (h, w, c) = src.dims();
    let data = src.data();
    let mut out = FeatureMap::zeros(h, w, c);
    box_filter_with((h, w, c), radius, |i| [f64::from(data[i])], |_, [m]| m as f32, out.data_mut());
    out
}

/// Normalized 3x3 Gaussian with unit standard deviation, row-major.
pub fn gaussian_kernel3() -> [f64; 9] {
    let mut k = [0.0f64; 9];
    let mut total = 0.0;
    for di in -1i32..=1 {
        for dj in -1i32..=1 {
            let v = (-f64::from(di * di + dj * dj) / 2.0).exp();
            k[((di + 1) * 3 + dj + 1) as usize] = v;
            total += v;
        }
    }
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Depthwise 3x3 Gaussian smoothing with clamp-to-edge padding.
pub fn gaussian_smooth3(src: &FeatureMap) -> FeatureMap {
    let (h, w, c) = src.dims();
    let kernel = gaussian_kernel3();
    let mut out = FeatureMap::zeros(h, w, c);
    out.data_mut()
        .par_chunks_mut(w * c)
        .enumerate()
        .for_each(|(i, line)| {
            let rows: [usize; 3] = std::array::from_fn(|a| clamped_axis(i, a as isize - 1, 1, h));
            let mut acc = vec![0.0f64; c];
            for j in 0..w {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for (a, &r) in rows.iter().enumerate() {
                    for b in 0..3 {
                        let col = clamped_axis(j, b as isize - 1, 1, w);
                        let weight = kernel[a * 3 + b];
                        for (acc, &v) in acc.iter_mut().zip(src.pixel(col + w * r)) {
                            *acc += weight * f64::from(v);
                        }
                    }
                }
                for (dst, &v) in line[j * c..(j + 1) * c].iter_mut().zip(&acc) {
                    *dst = v as f32;
                }
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Literal window loop, independent of the prefix-sum path.
    fn brute_box(src: &FeatureMap, r: usize) -> FeatureMap {
        let (h, w, c) = src.dims();
        FeatureMap::from_fn(h, w, c, |i, j, ch| {
            let (mut sum, mut n) = (0.0f64, 0usize);
            for y in i.saturating_sub(r)..=(i + r).min(h - 1) {
                for x in j.saturating_sub(r)..=(j + r).min(w - 1) {
                    sum += f64::from(src.get(y, x, ch));
                    n += 1;
                }
            }
            (sum / n as f64) as f32
        })
    }

    #[test]
    fn ones_stay_ones() {
        let src = FeatureMap::filled(7, 5, 2, 1.0f32);
        for r in 1..5 {
            assert!(box_mean(&src, r).data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn ramp_center_and_corner() {
        let src = FeatureMap::from_fn(3, 3, 1, |i, j, _| (3 * i + j) as f32);
        let out = box_mean(&src, 1);
        assert_eq!(out.get(1, 1, 0), 4.0);
        assert_eq!(out.get(0, 0, 0), 2.0);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = SplitMix64::new(3);
        let src = FeatureMap::from_fn(9, 13, 3, |_, _, _| rng.symmetric(5.0) as f32);
        for r in [1, 2, 4, 8, 20] {
            let fast = box_mean(&src, r);
            let slow = brute_box(&src, r);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-6, "r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn spans_several_row_blocks() {
        let mut rng = SplitMix64::new(4);
        let src = FeatureMap::from_fn(3 * ROW_BLOCK + 5, 4, 2, |_, _, _| rng.symmetric(1.0) as f32);
        for r in [1, 3, ROW_BLOCK + 2] {
            let fast = box_mean(&src, r);
            let slow = brute_box(&src, r);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-6, "r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gaussian_weights() {
        let k = gaussian_kernel3();
        let total = 1.0 + 4.0 * (-0.5f64).exp() + 4.0 * (-1.0f64).exp();
        assert!((total - 4.89764).abs() < 1e-5);
        assert!((k[4] - 1.0 / total).abs() < 1e-15);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_impulse_response() {
        let src = FeatureMap::from_fn(5, 5, 1, |i, j, _| if (i, j) == (2, 2) { 1.0 } else { 0.0 });
        let out = gaussian_smooth3(&src);
        assert!((out.get(2, 2, 0) - 0.20418).abs() < 1e-5);
        assert!((out.get(1, 2, 0) - 0.12384).abs() < 1e-5);
        assert!((out.get(2, 3, 0) - 0.12384).abs() < 1e-5);
        assert!((out.get(1, 1, 0) - 0.07511).abs() < 1e-5);
        assert_eq!(out.get(0, 0, 0), 0.0);
    }

    #[test]
    fn gaussian_constant_and_mass() {
        let flat = FeatureMap::filled(4, 6, 3, -2.5f32);
        for v in gaussian_smooth3(&flat).data() {
            assert!((v + 2.5).abs() < 1e-6);
        }
        let impulse = FeatureMap::from_fn(9, 9, 1, |i, j, _| if (i, j) == (4, 4) { 1.0 } else { 0.0 });
        let out = gaussian_smooth3(&impulse);
        let mass: f32 = (2..7).flat_map(|i| (2..7).map(move |j| (i, j))).map(|(i, j)| out.get(i, j, 0)).sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }
}
