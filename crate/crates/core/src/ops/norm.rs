use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Group normalization parameters. `gamma` and `beta` are per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormAffine {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub groups: usize,
    pub eps: f32,
}

impl GroupNormAffine {
    /// `gamma = 1`, `beta = 0`.
    pub fn identity(channels: usize, groups: usize, eps: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            groups,
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Normalizes each channel group with statistics pooled over every pixel of
/// the map and every channel in the group, then applies the per-channel affine.
pub fn group_normalize(src: &FeatureMap, affine: &GroupNormAffine) -> Result<FeatureMap> {
    let mut out = src.clone();
    group_normalize_in_place(&mut out, affine)?;
    Ok(out)
}

pub(crate) fn group_normalize_in_place(map: &mut FeatureMap, affine: &GroupNormAffine) -> Result<()> {
    let c = map.channels();
    if affine.groups == 0 || c % affine.groups != 0 {
        return Err(Error::ChannelGroupMismatch {
            channels: c,
            groups: affine.groups,
        });
    }
    if affine.gamma.len() != c || affine.beta.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "group norm affine has {}/{} entries for {c} channels",
            affine.gamma.len(),
            affine.beta.len()
        )));
    }
    let per_group = c / affine.groups;
    let count = (map.pixels() * per_group) as f64;
    let group_totals = |acc: Vec<f64>| acc.chunks_exact(per_group).map(|g| g.iter().sum::<f64>()).collect::<Vec<f64>>();

    // Per-channel partial sums first (independent accumulators), then per group.
    let mut acc = vec![0.0f64; c];
    for px in map.data().chunks_exact(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += f64::from(v);
        }
    }
    let mean: Vec<f64> = group_totals(acc).into_iter().map(|s| s / count).collect();
    let channel_mean: Vec<f64> = (0..c).map(|ch| mean[ch / per_group]).collect();
    let mut acc = vec![0.0f64; c];
    for px in map.data().chunks_exact(c) {
        for ((a, &v), &m) in acc.iter_mut().zip(px).zip(&channel_mean) {
            let d = f64::from(v) - m;
            *a += d * d;
        }
    }
    let var = group_totals(acc);

    // Fold normalization and affine into one scale and shift per channel.
    let eps = f64::from(affine.eps);
    let mut scale = vec![0.0f64; c];
    let mut shift = vec![0.0f64; c];
    for ch in 0..c {
        let inv_std = 1.0 / (var[ch / per_group] / count + eps).sqrt();
        scale[ch] = f64::from(affine.gamma[ch]) * inv_std;
        shift[ch] = f64::from(affine.beta[ch]) - channel_mean[ch] * scale[ch];
    }
    map.data_mut().par_chunks_mut(c).for_each(|px| {
        for ((v, &a), &b) in px.iter_mut().zip(&scale).zip(&shift) {
            *v = (f64::from(*v) * a + b) as f32;
        }
    });
    Ok(())
}
