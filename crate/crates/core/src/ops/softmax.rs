use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Per-pixel scores over `K^2` neighbor slots, stored as an `H x W x K^2` map.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScores {
    map: FeatureMap,
}

impl SimilarityScores {
    pub fn new(map: FeatureMap) -> Self {
        Self { map }
    }

    pub fn zeros(height: usize, width: usize, slots: usize) -> Self {
        Self::new(FeatureMap::zeros(height, width, slots))
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn pixels(&self) -> usize {
        self.map.pixels()
    }

    pub fn slots(&self) -> usize {
        self.map.channels()
    }

    /// Kernel side length `K` for `K^2` slots.
    pub fn kernel_size(&self) -> Result<usize> {
        let k = (self.slots() as f64).sqrt().round() as usize;
        if k * k != self.slots() || k.is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!(
                "{} score slots is not the square of an odd kernel size",
                self.slots()
            )));
        }
        Ok(k)
    }

    pub fn row(&self, pixel: usize) -> &[f32] {
        self.map.pixel(pixel)
    }

    pub fn as_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn into_map(self) -> FeatureMap {
        self.map
    }

    /// Elementwise sum of two score fields with identical shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.map.ensure_same_dims(&other.map, "score sum")?;
        let data = self.map.data().iter().zip(other.map.data()).map(|(a, b)| a + b).collect();
        Ok(Self::new(FeatureMap::new(self.height(), self.width(), self.slots(), data)?))
    }
}

impl From<FeatureMap> for SimilarityScores {
    fn from(map: FeatureMap) -> Self {
        Self::new(map)
    }
}

/// Max-stabilized softmax over each pixel's slots.
pub fn softmax_rows(scores: &SimilarityScores) -> SimilarityScores {
    let mut out = scores.map.clone();
    out.data_mut().par_chunks_mut(scores.slots()).for_each(|row| {
        let max = f64::from(row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)));
        let total: f64 = row.iter().map(|&v| (f64::from(v) - max).exp()).sum();
        for v in row.iter_mut() {
            *v = ((f64::from(*v) - max).exp() / total) as f32;
        }
    });
    SimilarityScores::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(rows: &[&[f32]]) -> SimilarityScores {
        let slots = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        SimilarityScores::new(FeatureMap::new(1, rows.len(), slots, data).unwrap())
    }

    #[test]
    fn uniform_row() {
        let out = softmax_rows(&scores(&[&[0.3; 9]]));
        for &v in out.row(0) {
            assert!((v - 1.0 / 9.0).abs() < 1e-7);
        }
    }

    #[test]
    fn ln2_row() {
        let out = softmax_rows(&scores(&[&[0.0, std::f32::consts::LN_2]]));
        assert!((out.row(0)[0] - 1.0 / 3.0).abs() < 1e-7);
        assert!((out.row(0)[1] - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn no_overflow() {
        let out = softmax_rows(&scores(&[&[0.0, 100.0]]));
        assert!(out.row(0)[0] < 1e-40);
        assert_eq!(out.row(0)[1], 1.0);
    }

    #[test]
    fn kernel_size_from_slots() {
        assert_eq!(SimilarityScores::zeros(2, 2, 9).kernel_size().unwrap(), 3);
        assert_eq!(SimilarityScores::zeros(2, 2, 1).kernel_size().unwrap(), 1);
        assert!(SimilarityScores::zeros(2, 2, 4).kernel_size().is_err());
    }

    proptest! {
        #[test]
        fn rows_normalized_and_shift_invariant(
            ticks in proptest::collection::vec(-51_200i32..51_200, 1..20),
            shift in -30i32..30,
        ) {
            // Multiples of 1/1024 plus integer shifts stay exact in f32, so only softmax itself is tested.
            let row: Vec<f32> = ticks.iter().map(|&t| t as f32 / 1024.0).collect();
            let shift = shift as f32;
            let base = softmax_rows(&scores(&[&row]));
            let shifted: Vec<f32> = row.iter().map(|v| v + shift).collect();
            let moved = softmax_rows(&scores(&[&shifted]));
            let sum: f64 = base.row(0).iter().map(|&v| f64::from(v)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            for (a, b) in base.row(0).iter().zip(moved.row(0)) {
                prop_assert!(*a >= 0.0 && *a <= 1.0);
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
