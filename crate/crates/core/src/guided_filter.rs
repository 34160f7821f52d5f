//! Query alignment by guided filtering.
//!
//! Each channel of the query is fitted, window by window, as a linear
//! function of itself that best reproduces the upsampled key (ridge
//! regression with weight `eps` on the slope). The per-window coefficients
//! are then averaged over every window that covers a pixel. Both steps are
//! box means, so the whole filter is six `O(HWD)` passes.

use crate::error::{Error, Result};
use crate::ops::box_filter_with;
use crate::tensor::FeatureMap;

pub const DEFAULT_RADIUS: usize = 8;
pub const DEFAULT_EPS: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedFilterConfig {
    pub radius: usize,
    pub eps: f32,
}

impl Default for GuidedFilterConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            eps: DEFAULT_EPS,
        }
    }
}

impl GuidedFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::InvalidArgument("guided filter radius must be >= 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "guided filter eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Computes the aligned query from `q` and the upsampled key `k_up`.
///
/// Windows are `(2r+1) x (2r+1)` cropped at the borders; all statistics are
/// accumulated in `f64`.
pub fn guided_filter(q: &FeatureMap, k_up: &FeatureMap, cfg: &GuidedFilterConfig) -> Result<FeatureMap> {
    q.ensure_same_dims(k_up, "guided filter query/key")?;
    cfg.validate()?;
    let dims = q.dims();
    let eps = f64::from(cfg.eps);
    let (qd, kd) = (q.data(), k_up.data());

    // Per-window ridge fit of k on q: slope m, offset n.
    let mut coeffs = vec![[0.0f64; 2]; qd.len()];
    box_filter_with(
        dims,
        cfg.radius,
        |i| {
            let (a, b) = (f64::from(qd[i]), f64::from(kd[i]));
            [a, b, a * b, a * a]
        },
        |_, [mq, mk, mqk, mqq]| {
            let var = (mqq - mq * mq).max(0.0);
            let m = (mqk - mq * mk) / (var + eps);
            [m, mk - m * mq]
        },
        &mut coeffs,
    );
    // Average the coefficients of every window covering a pixel.
    let mut out = FeatureMap::zeros(dims.0, dims.1, dims.2);
    box_filter_with(
        dims,
        cfg.radius,
        |i| coeffs[i],
        |i, [m, n]| (m * f64::from(qd[i]) + n) as f32,
        out.data_mut(),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::box_mean;
    use crate::rng::SplitMix64;

    fn random_map(h: usize, w: usize, c: usize, amp: f64, rng: &mut SplitMix64) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.symmetric(amp) as f32)
    }

    #[test]
    fn constant_query_gives_averaged_box_mean_of_key() {
        // m = 0 in every window, so n = box(k) and the averaging pass yields box(box(k)).
        let mut rng = SplitMix64::new(1);
        let q = FeatureMap::filled(10, 9, 3, 0.25f32);
        let k = random_map(10, 9, 3, 1.0, &mut rng);
        let cfg = GuidedFilterConfig { radius: 2, eps: 1e-3 };
        let out = guided_filter(&q, &k, &cfg).unwrap();
        let expected = box_mean(&box_mean(&k, 2), 2);
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn self_guided_high_variance_is_near_identity() {
        // Checkerboard with amplitude 1: every window variance is close to 1.
        let q = FeatureMap::from_fn(12, 12, 2, |i, j, ch| if (i + j + ch) % 2 == 0 { 1.0 } else { -1.0 });
        let cfg = GuidedFilterConfig { radius: 2, eps: 1e-3 };
        let out = guided_filter(&q, &q, &cfg).unwrap();
        // Smallest window variance is on a 3x3 corner window: 1 - (1/9)^2.
        let var_min = 1.0 - (1.0f64 / 9.0).powi(2);
        let bound = 1e-3 / (var_min + 1e-3) * 2.0;
        for (a, b) in out.data().iter().zip(q.data()) {
            assert!(f64::from((a - b).abs()) <= bound, "{a} vs {b}");
        }
    }

    #[test]
    fn scales_with_key() {
        let mut rng = SplitMix64::new(4);
        let q = random_map(11, 13, 2, 1.0, &mut rng);
        let k = random_map(11, 13, 2, 1.0, &mut rng);
        let k3 = k.map(|v| 3.0 * v);
        let cfg = GuidedFilterConfig { radius: 3, eps: 1e-3 };
        let a = guided_filter(&q, &k, &cfg).unwrap();
        let b = guided_filter(&q, &k3, &cfg).unwrap();
        let scale = a.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((3.0 * x - y).abs() <= 1e-5 * 3.0 * scale);
        }
    }

    #[test]
    fn channels_are_independent() {
        let mut rng = SplitMix64::new(8);
        let q = random_map(8, 8, 3, 1.0, &mut rng);
        let k = random_map(8, 8, 3, 1.0, &mut rng);
        let mut k2 = k.clone();
        for px in k2.data_mut().chunks_exact_mut(3) {
            px[2] += 5.0;
        }
        let cfg = GuidedFilterConfig { radius: 2, eps: 1e-3 };
        let a = guided_filter(&q, &k, &cfg).unwrap();
        let b = guided_filter(&q, &k2, &cfg).unwrap();
        for (pa, pb) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)) {
            assert_eq!(&pa[..2], &pb[..2]);
        }
    }

    #[test]
    fn interior_shift_equivariance() {
        let mut rng = SplitMix64::new(12);
        let q = random_map(20, 20, 1, 1.0, &mut rng);
        let k = random_map(20, 20, 1, 1.0, &mut rng);
        let shift = |m: &FeatureMap| FeatureMap::from_fn(20, 20, 1, |i, j, _| m.get((i + 1) % 20, (j + 2) % 20, 0));
        let cfg = GuidedFilterConfig { radius: 2, eps: 1e-3 };
        let a = guided_filter(&q, &k, &cfg).unwrap();
        let b = guided_filter(&shift(&q), &shift(&k), &cfg).unwrap();
        // Pixels whose two-pass footprint (radius 4) stays away from the borders and the wrap seam.
        for i in 4..14 {
            for j in 4..13 {
                assert!((b.get(i, j, 0) - a.get(i + 1, j + 2, 0)).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn large_eps_tends_to_double_box_mean() {
        let mut rng = SplitMix64::new(21);
        let q = random_map(12, 12, 2, 1.0, &mut rng);
        let k = random_map(12, 12, 2, 1.0, &mut rng);
        let out = guided_filter(&q, &k, &GuidedFilterConfig { radius: 2, eps: 1e6 }).unwrap();
        let expected = box_mean(&box_mean(&k, 2), 2);
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() <= 1e-3);
        }
    }

    #[test]
    fn rejects_mismatch_and_bad_config() {
        let a = FeatureMap::zeros(4, 4, 2);
        let b = FeatureMap::zeros(4, 5, 2);
        assert!(matches!(
            guided_filter(&a, &b, &GuidedFilterConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(guided_filter(&a, &a, &GuidedFilterConfig { radius: 0, eps: 1e-3 }).is_err());
        assert!(guided_filter(&a, &a, &GuidedFilterConfig { radius: 1, eps: 0.0 }).is_err());
    }
}
