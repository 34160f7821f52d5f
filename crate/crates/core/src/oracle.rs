//! Slow reference implementations.
//!
//! Each function here is a literal loop over its defining formula, computed in
//! `f64`, single-threaded, and shares nothing with the production kernels
//! beyond the [`FeatureMap`] accessors. Keep it that way: these are what the
//! fast paths are checked against.

use crate::error::{Error, Result};
use crate::ops::SimilarityScores;
use crate::pcdc::PcdcParams;
use crate::guided_filter::GuidedFilterConfig;
use crate::tensor::{FeatureMap, FeatureMap64};

/// `max |test - reference| / max |reference|`; the absolute difference when
/// the reference is identically zero.
pub fn max_rel_error<A: Copy + Into<f64>, B: Copy + Into<f64>>(test: &[A], reference: &[B]) -> f64 {
    assert_eq!(test.len(), reference.len(), "compared buffers differ in length");
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (&a, &b) in test.iter().zip(reference) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        if !(a - b).is_finite() {
            return f64::INFINITY;
        }
        diff = diff.max((a - b).abs());
        scale = scale.max(b.abs());
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn clamp(v: isize, len: usize) -> usize {
    v.max(0).min(len as isize - 1) as usize
}

/// PCDC straight from its definition:
/// `v[i,l] = sum_{d in group(l)} sum_n w[n, d % (D/G), l] * (k[j_n, d] - q[i, d]) + b[l]`.
pub fn oracle_pcdc_direct(q_bar: &FeatureMap, k_bar: &FeatureMap, p: &PcdcParams) -> Result<FeatureMap64> {
    if !q_bar.same_dims(k_bar) {
        return Err(Error::ShapeMismatch("oracle PCDC: query/key dims differ".into()));
    }
    let (h, w, d_total) = q_bar.dims();
    let groups = p.groups;
    let l_total = p.weight.channels();
    let d_group = p.weight.width();
    if d_group * groups != d_total {
        return Err(Error::ShapeMismatch(format!(
            "oracle PCDC: weights expect {} channels, got {d_total}",
            d_group * groups
        )));
    }
    let kernel = (p.weight.height() as f64).sqrt().round() as isize;
    let half = kernel / 2;
    let dil = p.dilation as isize;
    let mut out = FeatureMap::filled(h, w, l_total, 0.0f64);
    for i in 0..h {
        for j in 0..w {
            for l in 0..l_total {
                let g = l * groups / l_total;
                let mut v = 0.0f64;
                for d in g * d_total / groups..(g + 1) * d_total / groups {
                    let dt = d % d_group;
                    for n in 0..(kernel * kernel) {
                        let r = clamp(i as isize + (n / kernel - half) * dil, h);
                        let c = clamp(j as isize + (n % kernel - half) * dil, w);
                        let diff = f64::from(k_bar.get(r, c, d)) - f64::from(q_bar.get(i, j, d));
                        v += f64::from(p.weight.get(n as usize, dt, l)) * diff;
                    }
                }
                out.set(i, j, l, v + f64::from(p.bias[l]));
            }
        }
    }
    Ok(out)
}

/// Guided filter by solving the ridge regression of every window on its own.
///
/// For window `I_j` (cropped to the image) minimize
/// `sum_{i in I_j} (m q_i + n - k_i)^2 + eps m^2` via its 2x2 normal equations,
/// then average `(m, n)` over all windows covering each pixel.
pub fn oracle_guided_filter_window(q: &FeatureMap, k_up: &FeatureMap, cfg: &GuidedFilterConfig) -> Result<FeatureMap64> {
    if !q.same_dims(k_up) {
        return Err(Error::ShapeMismatch("oracle guided filter: dims differ".into()));
    }
    let (h, w, c) = q.dims();
    let r = cfg.radius as isize;
    let eps = f64::from(cfg.eps);
    let window = |i: usize, j: usize| {
        let rows = (i as isize - r).max(0) as usize..=((i as isize + r).min(h as isize - 1)) as usize;
        let cols = (j as isize - r).max(0) as usize..=((j as isize + r).min(w as isize - 1)) as usize;
        (rows, cols)
    };
    let mut slope = FeatureMap::filled(h, w, c, 0.0f64);
    let mut offset = FeatureMap::filled(h, w, c, 0.0f64);
    for i in 0..h {
        for j in 0..w {
            let (rows, cols) = window(i, j);
            for ch in 0..c {
                let (mut n, mut sq, mut sqq, mut sk, mut sqk) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
                for y in rows.clone() {
                    for x in cols.clone() {
                        let a = f64::from(q.get(y, x, ch));
                        let b = f64::from(k_up.get(y, x, ch));
                        n += 1.0;
                        sq += a;
                        sqq += a * a;
                        sk += b;
                        sqk += a * b;
                    }
                }
                // [sqq + n eps, sq; sq, n] [m; b] = [sqk; sk]
                let (a11, a12, a22) = (sqq + n * eps, sq, n);
                let det = a11 * a22 - a12 * a12;
                let m = (sqk * a22 - a12 * sk) / det;
                let b = (a11 * sk - a12 * sqk) / det;
                slope.set(i, j, ch, m);
                offset.set(i, j, ch, b);
            }
        }
    }
    Ok(FeatureMap::from_fn(h, w, c, |i, j, ch| {
        let (rows, cols) = window(i, j);
        let (mut m, mut b, mut n) = (0.0f64, 0.0f64, 0.0f64);
        for y in rows {
            for x in cols.clone() {
                m += slope.get(y, x, ch);
                b += offset.get(y, x, ch);
                n += 1.0;
            }
        }
        m / n * f64::from(q.get(i, j, ch)) + b / n
    }))
}

/// Aggregation with grid-wise neighbor selection on the low-resolution value:
/// every pixel of a `ratio x ratio` block uses the undilated `K x K`
/// neighborhood of its parent low-resolution pixel.
pub fn oracle_kernel_apply_gridwise(
    weights: &SimilarityScores,
    x: &FeatureMap,
    ratio: usize,
    kernel: usize,
) -> Result<FeatureMap64> {
    let (hh, ww) = (weights.height(), weights.width());
    if ratio == 0 || hh != x.height() * ratio || ww != x.width() * ratio || weights.slots() != kernel * kernel {
        return Err(Error::ShapeMismatch("oracle grid-wise aggregation: shapes disagree".into()));
    }
    let (h, w, c) = x.dims();
    let half = (kernel / 2) as isize;
    let k = kernel as isize;
    Ok(FeatureMap::from_fn(hh, ww, c, |i, j, ch| {
        let (pi, pj) = ((i / ratio) as isize, (j / ratio) as isize);
        let mut acc = 0.0f64;
        for n in 0..(k * k) {
            let r = clamp(pi + n / k - half, h);
            let cc = clamp(pj + n % k - half, w);
            acc += f64::from(weights.as_map().get(i, j, n as usize)) * f64::from(x.get(r, cc, ch));
        }
        acc
    }))
}

/// Plain mean of the dilated, clamped `K x K` neighborhood of every pixel.
pub fn oracle_dilated_box_mean(src: &FeatureMap, kernel: usize, dilation: usize) -> FeatureMap64 {
    let (h, w, c) = src.dims();
    let half = (kernel / 2) as isize;
    let d = dilation as isize;
    FeatureMap::from_fn(h, w, c, |i, j, ch| {
        let mut acc = 0.0f64;
        for a in -half..=half {
            for b in -half..=half {
                let r = clamp(i as isize + a * d, h);
                let cc = clamp(j as isize + b * d, w);
                acc += f64::from(src.get(r, cc, ch));
            }
        }
        acc / (kernel * kernel) as f64
    })
}
