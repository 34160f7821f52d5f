use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Row-major dense matrix; used for `1 x 1` convolution weights shaped
/// `out_channels x (in_channels / groups)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix with {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols]).expect("non-empty matrix")
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let data = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        Self::new(rows, cols, data).expect("non-empty matrix")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Packs as a `1 x rows x cols` feature map.
    pub fn to_map(&self) -> FeatureMap {
        FeatureMap::new(1, self.rows, self.cols, self.data.clone()).unwrap()
    }

    pub fn from_map(map: &FeatureMap) -> Result<Self> {
        if map.height() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "matrix entries are stored with height 1, got {}",
                map.height()
            )));
        }
        Self::new(map.width(), map.channels(), map.data().to_vec())
    }
}

/// Grouped `1 x 1` convolution. Output channel `l` belongs to group
/// `l * groups / cout` and reads only that group's input channels.
pub fn grouped_pointwise_conv(src: &FeatureMap, weight: &Matrix, bias: &[f32], groups: usize) -> Result<FeatureMap> {
    pointwise_conv(src, weight, bias, groups, false)
}

/// [`grouped_pointwise_conv`] followed by [`relu`], in one pass.
pub(crate) fn grouped_pointwise_conv_relu(src: &FeatureMap, weight: &Matrix, bias: &[f32], groups: usize) -> Result<FeatureMap> {
    pointwise_conv(src, weight, bias, groups, true)
}

fn pointwise_conv(src: &FeatureMap, weight: &Matrix, bias: &[f32], groups: usize, rectify: bool) -> Result<FeatureMap> {
    let cin = src.channels();
    let cout = weight.rows();
    if groups == 0 || cin % groups != 0 || !cout.is_multiple_of(groups) {
        return Err(Error::ShapeMismatch(format!(
            "grouped conv: {cin} -> {cout} channels not divisible into {groups} groups"
        )));
    }
    let (cin_g, cout_g) = (cin / groups, cout / groups);
    if weight.cols() != cin_g || bias.len() != cout {
        return Err(Error::ShapeMismatch(format!(
            "grouped conv: weight {}x{} / bias {} do not fit {cin} -> {cout} in {groups} groups",
            weight.rows(),
            weight.cols(),
            bias.len()
        )));
    }
    let mut out = FeatureMap::zeros(src.height(), src.width(), cout);
    let finish = |dst: &mut [f32]| {
        for (v, &b) in dst.iter_mut().zip(bias) {
            *v += b;
            if rectify {
                *v = v.max(0.0);
            }
        }
    };
    if cout_g < 16 && cin_g >= 16 {
        // Few wide outputs: one dot product per output, eight partial sums.
        out.data_mut()
            .par_chunks_mut(cout)
            .zip(src.data().par_chunks(cin))
            .for_each(|(dst, x)| {
                for (l, v) in dst.iter_mut().enumerate() {
                    let g = l / cout_g;
                    *v = dot8(&weight.data()[l * cin_g..(l + 1) * cin_g], &x[g * cin_g..(g + 1) * cin_g]);
                }
                finish(dst);
            });
        return Ok(out);
    }
    // Input-major copy so the inner loop runs over contiguous output channels.
    let mut wt = vec![0.0f32; cin * cout_g];
    for l in 0..cout {
        let (g, lo) = (l / cout_g, l % cout_g);
        for t in 0..cin_g {
            wt[(g * cin_g + t) * cout_g + lo] = weight.get(l, t);
        }
    }
    out.data_mut()
        .par_chunks_mut(cout)
        .zip(src.data().par_chunks(cin))
        .for_each(|(dst, x)| {
            for g in 0..groups {
                let acc = &mut dst[g * cout_g..(g + 1) * cout_g];
                for t in 0..cin_g {
                    let d = g * cin_g + t;
                    let xv = x[d];
                    for (a, &w) in acc.iter_mut().zip(&wt[d * cout_g..(d + 1) * cout_g]) {
                        *a += w * xv;
                    }
                }
            }
            finish(dst);
        });
    Ok(out)
}

fn dot8(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

pub fn relu(src: &FeatureMap) -> FeatureMap {
    src.map(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_map(h: usize, w: usize, c: usize, rng: &mut SplitMix64) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.symmetric(1.0) as f32)
    }

    /// Dense matmul against the block-diagonal expansion of `weight`.
    fn block_diagonal_oracle(src: &FeatureMap, weight: &Matrix, bias: &[f32], groups: usize) -> FeatureMap {
        let cin = src.channels();
        let cout = weight.rows();
        let (cin_g, cout_g) = (cin / groups, cout / groups);
        let mut dense = vec![0.0f64; cout * cin];
        for l in 0..cout {
            let g = l / cout_g;
            for t in 0..cin_g {
                dense[l * cin + g * cin_g + t] = f64::from(weight.get(l, t));
            }
        }
        FeatureMap::from_fn(src.height(), src.width(), cout, |r, c, l| {
            let mut acc = f64::from(bias[l]);
            for d in 0..cin {
                acc += dense[l * cin + d] * f64::from(src.get(r, c, d));
            }
            acc as f32
        })
    }

    #[test]
    fn identity_weights() {
        let mut rng = SplitMix64::new(1);
        let src = random_map(3, 4, 5, &mut rng);
        let out = grouped_pointwise_conv(&src, &Matrix::identity(5), &[0.0; 5], 1).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn depthwise_doubling() {
        let mut rng = SplitMix64::new(2);
        let src = random_map(3, 3, 4, &mut rng);
        let w = Matrix::new(4, 1, vec![2.0; 4]).unwrap();
        let out = grouped_pointwise_conv(&src, &w, &[0.0; 4], 4).unwrap();
        for (a, b) in out.data().iter().zip(src.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn shape_errors() {
        let src = FeatureMap::zeros(2, 2, 8);
        assert!(grouped_pointwise_conv(&src, &Matrix::zeros(6, 4), &[0.0; 6], 3).is_err());
        assert!(grouped_pointwise_conv(&src, &Matrix::zeros(6, 3), &[0.0; 6], 2).is_err());
        assert!(grouped_pointwise_conv(&src, &Matrix::zeros(6, 4), &[0.0; 5], 2).is_err());
    }

    #[test]
    fn wide_narrow_path_and_fused_relu() {
        let mut rng = SplitMix64::new(9);
        let src = FeatureMap::from_fn(3, 4, 128, |_, _, _| rng.symmetric(1.0) as f32);
        let weight = Matrix::from_fn(9, 128, |_, _| rng.symmetric(0.2) as f32);
        let bias: Vec<f32> = (0..9).map(|_| rng.symmetric(0.1) as f32).collect();
        let out = grouped_pointwise_conv(&src, &weight, &bias, 1).unwrap();
        for p in 0..src.pixels() {
            for l in 0..9 {
                let exact: f64 = (0..128).map(|t| f64::from(weight.get(l, t)) * f64::from(src.pixel(p)[t])).sum::<f64>() + f64::from(bias[l]);
                assert!((f64::from(out.pixel(p)[l]) - exact).abs() <= 1e-5);
            }
        }
        let fused = grouped_pointwise_conv_relu(&src, &weight, &bias, 1).unwrap();
        assert_eq!(fused, relu(&out));
    }

    #[test]
    fn relu_cases() {
        let m = FeatureMap::new(1, 2, 1, vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&m).data(), &[0.0, 2.0]);
        assert!(relu(&FeatureMap::filled(2, 2, 2, -3.0)).data().iter().all(|&v| v == 0.0));
        let pos = FeatureMap::filled(2, 2, 2, 3.0);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn matches_block_diagonal_matmul_example() {
        let mut rng = SplitMix64::new(9);
        let src = random_map(4, 4, 8, &mut rng);
        let w = Matrix::from_fn(6, 4, |_, _| rng.symmetric(0.5) as f32);
        let bias: Vec<f32> = (0..6).map(|_| rng.symmetric(0.1) as f32).collect();
        let fast = grouped_pointwise_conv(&src, &w, &bias, 2).unwrap();
        let slow = block_diagonal_oracle(&src, &w, &bias, 2);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn matches_block_diagonal_matmul(seed in any::<u64>(), groups in prop::sample::select(vec![1usize, 2, 4]), per_in in 1usize..4, per_out in 1usize..4) {
            let mut rng = SplitMix64::new(seed);
            let (cin, cout) = (groups * per_in, groups * per_out);
            let src = random_map(3, 5, cin, &mut rng);
            let w = Matrix::from_fn(cout, per_in, |_, _| rng.symmetric(1.0) as f32);
            let bias: Vec<f32> = (0..cout).map(|_| rng.symmetric(1.0) as f32).collect();
            let fast = grouped_pointwise_conv(&src, &w, &bias, groups).unwrap();
            let slow = block_diagonal_oracle(&src, &w, &bias, groups);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
            }
        }
    }
}
