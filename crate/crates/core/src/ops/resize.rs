use rayon::prelude::*;

use crate::tensor::FeatureMap;

/// One output coordinate's bilinear source taps along a single axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f32,
}

/// Half-pixel-center taps: output `i` samples source coordinate
/// `(i + 0.5) * src / dst - 0.5`, clamped to `[0, src - 1]`.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let coord = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = coord.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(src - 1),
                frac: (coord - lo as f64) as f32,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Writes one output row (`col_taps.len() x C`) of the bilinear upsampling.
/// The materializing resize and the fused aggregation both go through here,
/// so they agree bit for bit.
pub(crate) fn interpolate_row(src: &FeatureMap, ty: Tap, col_taps: &[Tap], dst: &mut [f32]) {
    let c = src.channels();
    for (j, tx) in col_taps.iter().enumerate() {
        for ch in 0..c {
            let top = lerp(src.get(ty.lo, tx.lo, ch), src.get(ty.lo, tx.hi, ch), tx.frac);
            let bottom = lerp(src.get(ty.hi, tx.lo, ch), src.get(ty.hi, tx.hi, ch), tx.frac);
            dst[j * c + ch] = lerp(top, bottom, ty.frac);
        }
    }
}

pub fn bilinear_resize(src: &FeatureMap, out_h: usize, out_w: usize) -> FeatureMap {
    assert!(out_h > 0 && out_w > 0, "resize target must be non-empty");
    if (out_h, out_w) == (src.height(), src.width()) {
        return src.clone();
    }
    let c = src.channels();
    let rows = bilinear_taps(src.height(), out_h);
    let cols = bilinear_taps(src.width(), out_w);
    let mut out = FeatureMap::zeros(out_h, out_w, c);
    out.data_mut()
        .par_chunks_mut(out_w * c)
        .zip(rows.par_iter())
        .for_each(|(line, &ty)| interpolate_row(src, ty, &cols, line));
    out
}

/// Source index `floor((i + 0.5) * src / dst)`, clamped.
fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    (((2 * i + 1) * src) / (2 * dst)).min(src - 1)
}

pub fn nearest_resize(src: &FeatureMap, out_h: usize, out_w: usize) -> FeatureMap {
    assert!(out_h > 0 && out_w > 0, "resize target must be non-empty");
    let (h, w, c) = src.dims();
    let cols: Vec<usize> = (0..out_w).map(|j| nearest_index(j, w, out_w)).collect();
    let mut out = FeatureMap::zeros(out_h, out_w, c);
    out.data_mut()
        .par_chunks_mut(out_w * c)
        .enumerate()
        .for_each(|(i, line)| {
            let si = nearest_index(i, h, out_h);
            for (j, &sj) in cols.iter().enumerate() {
                line[j * c..(j + 1) * c].copy_from_slice(src.pixel(sj + w * si));
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = SplitMix64::new(seed);
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.symmetric(2.0) as f32)
    }

    #[test]
    fn bilinear_half_pixel_row() {
        let src = FeatureMap::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let out = bilinear_resize(&src, 1, 4);
        assert_eq!(out.data(), &[1.0, 1.5, 2.5, 3.0]);
    }

    #[test]
    fn nearest_row() {
        let src = FeatureMap::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(nearest_resize(&src, 1, 4).data(), &[1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn constant_preserved() {
        let src = FeatureMap::filled(3, 5, 2, 0.7f32);
        for (h, w) in [(1, 1), (7, 4), (12, 20)] {
            assert!(bilinear_resize(&src, h, w).data().iter().all(|&v| v == 0.7));
            assert!(nearest_resize(&src, h, w).data().iter().all(|&v| v == 0.7));
        }
    }

    #[test]
    fn identity_size() {
        let src = random_map(5, 6, 3, 1);
        assert_eq!(bilinear_resize(&src, 5, 6), src);
        assert_eq!(nearest_resize(&src, 5, 6), src);
    }

    #[test]
    fn downscale_by_two_averages_pairs() {
        let src = FeatureMap::new(1, 4, 1, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(bilinear_resize(&src, 1, 2).data(), &[1.0, 5.0]);
    }

    proptest! {
        #[test]
        fn channel_permutation_commutes(seed in any::<u64>(), oh in 1usize..12, ow in 1usize..12) {
            let src = random_map(4, 5, 3, seed);
            let perm = [2usize, 0, 1];
            let permuted = FeatureMap::from_fn(4, 5, 3, |r, c, ch| src.get(r, c, perm[ch]));
            for resize in [bilinear_resize, nearest_resize] {
                let a = resize(&src, oh, ow);
                let b = resize(&permuted, oh, ow);
                for r in 0..oh {
                    for c in 0..ow {
                        for ch in 0..3 {
                            prop_assert_eq!(b.get(r, c, ch), a.get(r, c, perm[ch]));
                        }
                    }
                }
            }
        }
    }
}
