//! Feature maps as RGB images: top-3 principal components or a single
//! channel, min-max scaled to bytes and written as binary PPM.

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Gray level for channels with no variance (or no data at all).
pub const FLAT_LEVEL: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisualizeMode {
    Pca,
    Channel(usize),
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with matching unit eigenvectors
/// (`vectors[k]` belongs to `values[k]`).
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]).then(x.cmp(&y)));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order.iter().map(|&k| (0..n).map(|r| v[r * n + k]).collect()).collect();
    (values, vectors)
}

/// Min-max scales a plane to `0..=255`; flat or empty planes become [`FLAT_LEVEL`].
fn scale_plane(plane: &[f64]) -> Vec<u8> {
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 1e-12 * lo.abs().max(hi.abs()).max(1e-300)) {
        return vec![FLAT_LEVEL; plane.len()];
    }
    plane
        .iter()
        .map(|&v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Projects every pixel onto the top three principal directions of the
/// channel covariance. Missing components (fewer than 3 channels) are `None`.
pub fn pca_planes(map: &FeatureMap) -> [Option<Vec<f64>>; 3] {
    let (h, w, c) = map.dims();
    let n = (h * w) as f64;
    let mut mean = vec![0.0f64; c];
    for px in map.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0f64; c * c];
    for px in map.data().chunks_exact(c) {
        for a in 0..c {
            let da = f64::from(px[a]) - mean[a];
            for b in a..c {
                cov[a * c + b] += da * (f64::from(px[b]) - mean[b]);
            }
        }
    }
    for a in 0..c {
        for b in a..c {
            cov[a * c + b] /= n;
            cov[b * c + a] = cov[a * c + b];
        }
    }
    let (_, vectors) = symmetric_eigen(&cov, c);
    let mut planes: [Option<Vec<f64>>; 3] = [None, None, None];
    for (slot, mut v) in planes.iter_mut().zip(vectors) {
        // Fix the sign so the largest-magnitude component is positive.
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let plane = map
            .data()
            .chunks_exact(c)
            .map(|px| px.iter().zip(&v).zip(&mean).map(|((&x, &e), &m)| (f64::from(x) - m) * e).sum())
            .collect();
        *slot = Some(plane);
    }
    planes
}

/// Renders `map` to interleaved RGB bytes (`H*W*3`).
pub fn render_rgb(map: &FeatureMap, mode: VisualizeMode) -> Result<Vec<u8>> {
    let (h, w, c) = map.dims();
    let pixels = h * w;
    let channels: Vec<Vec<u8>> = match mode {
        VisualizeMode::Pca => pca_planes(map)
            .into_iter()
            .map(|p| p.map_or_else(|| vec![FLAT_LEVEL; pixels], |p| scale_plane(&p)))
            .collect(),
        VisualizeMode::Channel(ch) => {
            if ch >= c {
                return Err(Error::InvalidArgument(format!("channel {ch} out of range for {c} channels")));
            }
            let plane: Vec<f64> = map.data().chunks_exact(c).map(|px| f64::from(px[ch])).collect();
            let gray = scale_plane(&plane);
            vec![gray.clone(), gray.clone(), gray]
        }
    };
    let mut rgb = Vec::with_capacity(pixels * 3);
    for p in 0..pixels {
        rgb.extend(channels.iter().map(|plane| plane[p]));
    }
    Ok(rgb)
}

/// Binary PPM (`P6`, maxval 255).
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn visualize(map: &FeatureMap, mode: VisualizeMode) -> Result<Vec<u8>> {
    Ok(encode_ppm(map.width(), map.height(), &render_rgb(map, mode)?))
}
