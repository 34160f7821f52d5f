//! Paired central difference convolution and the similarity block built on it.
//!
//! For an aligned query/key pair the layer convolves the differences
//! `k[j_n] - q[i]` between every dilated neighbor of the key and the center
//! pixel of the query with a grouped `K x K` kernel:
//!
//! ```text
//! v[i, l] = sum_{d in group(l)} sum_n w[n, d % (D/G), l] * (k[j_n, d] - q[i, d]) + b[l]
//! ```
//!
//! The production path evaluates the equivalent split form: a grouped dilated
//! convolution of the key, minus a `1 x 1` convolution of the query whose
//! weights are the spatial sums of `w`. The literal form lives in
//! [`crate::oracle::oracle_pcdc_direct`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::{
    check_kernel_size, clamped_axis_tables, group_normalize, group_normalize_in_place, grouped_pointwise_conv, grouped_pointwise_conv_relu,
    GroupNormAffine, Matrix, SimilarityScores,
};
use crate::tensor::FeatureMap;

/// Intermediate width of the channel compressor.
pub const COMPRESSOR_CHANNELS: usize = 128;
/// Group count of the compressor's first convolution.
pub const COMPRESSOR_GROUPS: usize = 4;
/// Group count of both normalization layers in a block.
pub const NORM_GROUPS: usize = 4;
pub const NORM_EPS: f32 = 1e-5;

/// Weights of one PCDC layer.
///
/// `weight` is packed as a `K^2 x (D/G) x L` map: height indexes the neighbor
/// slot, width the within-group input channel, channels the output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PcdcParams {
    pub weight: FeatureMap,
    pub bias: Vec<f32>,
    pub groups: usize,
    pub dilation: usize,
}

impl PcdcParams {
    pub fn new(weight: FeatureMap, bias: Vec<f32>, groups: usize, dilation: usize) -> Result<Self> {
        let p = Self {
            weight,
            bias,
            groups,
            dilation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize, groups: usize) -> Self {
        Self {
            weight: FeatureMap::zeros(kernel * kernel, in_channels / groups, out_channels),
            bias: vec![0.0; out_channels],
            groups,
            dilation: 1,
        }
    }

    pub fn kernel(&self) -> usize {
        (self.weight.height() as f64).sqrt().round() as usize
    }

    pub fn in_channels(&self) -> usize {
        self.weight.width() * self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.channels()
    }

    #[inline]
    pub fn w(&self, n: usize, dt: usize, l: usize) -> f32 {
        self.weight.get(n, dt, l)
    }

    pub fn with_dilation(&self, dilation: usize) -> Self {
        Self {
            dilation,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel();
        if k * k != self.weight.height() {
            return Err(Error::ShapeMismatch(format!(
                "PCDC weight height {} is not a square kernel",
                self.weight.height()
            )));
        }
        check_kernel_size(k)?;
        if self.groups == 0 || !self.out_channels().is_multiple_of(self.groups) {
            return Err(Error::ShapeMismatch(format!(
                "PCDC output channels {} not divisible into {} groups",
                self.out_channels(),
                self.groups
            )));
        }
        if self.bias.len() != self.out_channels() {
            return Err(Error::ShapeMismatch(format!(
                "PCDC bias has {} entries for {} outputs",
                self.bias.len(),
                self.out_channels()
            )));
        }
        if self.dilation == 0 {
            return Err(Error::InvalidArgument("PCDC dilation must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pointwise network mapping `L` PCDC channels to `K^2` scores:
/// grouped conv, ReLU, group norm, dense conv.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressorParams {
    pub conv1_weight: Matrix,
    pub conv1_bias: Vec<f32>,
    pub conv1_groups: usize,
    pub norm: GroupNormAffine,
    pub conv2_weight: Matrix,
    pub conv2_bias: Vec<f32>,
}

impl CompressorParams {
    pub fn zeros(in_channels: usize, slots: usize) -> Self {
        Self {
            conv1_weight: Matrix::zeros(COMPRESSOR_CHANNELS, in_channels / COMPRESSOR_GROUPS),
            conv1_bias: vec![0.0; COMPRESSOR_CHANNELS],
            conv1_groups: COMPRESSOR_GROUPS,
            norm: GroupNormAffine::identity(COMPRESSOR_CHANNELS, NORM_GROUPS, NORM_EPS),
            conv2_weight: Matrix::zeros(slots, COMPRESSOR_CHANNELS),
            conv2_bias: vec![0.0; slots],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv2_weight.rows()
    }
}

/// Shared-affine normalization, PCDC layer and channel compressor.
#[derive(Debug, Clone, PartialEq)]
pub struct PcdcBlockParams {
    pub shared_norm: GroupNormAffine,
    pub pcdc: PcdcParams,
    pub compressor: CompressorParams,
}

impl PcdcBlockParams {
    /// Every weight and bias zero, norms at identity affine.
    pub fn zeros(kernel: usize, dim: usize, pcdc_channels: usize, groups: usize) -> Self {
        Self {
            shared_norm: GroupNormAffine::identity(dim, NORM_GROUPS, NORM_EPS),
            pcdc: PcdcParams::zeros(kernel, dim, pcdc_channels, groups),
            compressor: CompressorParams::zeros(pcdc_channels, kernel * kernel),
        }
    }

    pub fn with_dilation(&self, dilation: usize) -> Self {
        Self {
            pcdc: self.pcdc.with_dilation(dilation),
            ..self.clone()
        }
    }
}

/// Dot product with four independent partial sums (a fixed order, so the
/// result is reproducible, and one the compiler can vectorize).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// PCDC layer in split form; output is `H x W x L`.
pub fn pcdc_layer(q_bar: &FeatureMap, k_bar: &FeatureMap, p: &PcdcParams) -> Result<FeatureMap> {
    q_bar.ensure_same_dims(k_bar, "PCDC query/key")?;
    p.validate()?;
    let (h, w, d) = q_bar.dims();
    if d != p.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "PCDC expects {} input channels, got {d}",
            p.in_channels()
        )));
    }
    let kernel = p.kernel();
    let k2 = kernel * kernel;
    let l_total = p.out_channels();
    let d_group = d / p.groups;
    let l_group = l_total / p.groups;

    // Per output channel: weights as [n][dt] (for the key convolution) and
    // their spatial sums over n as [dt] (for the 1x1 query term).
    let taps = k2 * d_group;
    let mut weight_t = vec![0.0f64; l_total * taps];
    let mut spatial_t = vec![0.0f64; l_total * d_group];
    for n in 0..k2 {
        for dt in 0..d_group {
            for l in 0..l_total {
                let v = f64::from(p.w(n, dt, l));
                weight_t[l * taps + n * d_group + dt] = v;
                spatial_t[l * d_group + dt] += v;
            }
        }
    }
    let bias: Vec<f64> = p.bias.iter().map(|&b| f64::from(b)).collect();
    let rows = clamped_axis_tables(h, kernel, p.dilation);
    let cols = clamped_axis_tables(w, kernel, p.dilation);

    let mut out = FeatureMap::zeros(h, w, l_total);
    out.data_mut()
        .par_chunks_mut(w * l_total)
        .enumerate()
        .for_each(|(i, line)| {
            let mut gathered = vec![0.0f64; taps];
            let mut query = vec![0.0f64; d_group];
            for j in 0..w {
                let q_px = q_bar.pixel(j + w * i);
                let dst = &mut line[j * l_total..(j + 1) * l_total];
                for g in 0..p.groups {
                    let channels = g * d_group..(g + 1) * d_group;
                    for a in 0..kernel {
                        for b in 0..kernel {
                            let src = k_bar.pixel(cols[j * kernel + b] + w * rows[i * kernel + a]);
                            let n = a * kernel + b;
                            for (slot, &v) in gathered[n * d_group..(n + 1) * d_group].iter_mut().zip(&src[channels.clone()]) {
                                *slot = f64::from(v);
                            }
                        }
                    }
                    for (slot, &v) in query.iter_mut().zip(&q_px[channels]) {
                        *slot = f64::from(v);
                    }
                    for l in g * l_group..(g + 1) * l_group {
                        let conv = dot(&weight_t[l * taps..(l + 1) * taps], &gathered);
                        let center = dot(&spatial_t[l * d_group..(l + 1) * d_group], &query);
                        dst[l] = (conv - center + bias[l]) as f32;
                    }
                }
            }
        });
    Ok(out)
}

pub fn channel_compressor(v: &FeatureMap, c: &CompressorParams) -> Result<SimilarityScores> {
    let mut hidden = grouped_pointwise_conv_relu(v, &c.conv1_weight, &c.conv1_bias, c.conv1_groups)?;
    group_normalize_in_place(&mut hidden, &c.norm)?;
    let scores = grouped_pointwise_conv(&hidden, &c.conv2_weight, &c.conv2_bias, 1)?;
    Ok(SimilarityScores::new(scores))
}

/// Similarity scores `H x W x K^2` for an aligned query/key pair.
pub fn pcdc_block(q_in: &FeatureMap, k_in: &FeatureMap, p: &PcdcBlockParams) -> Result<SimilarityScores> {
    q_in.ensure_same_dims(k_in, "PCDC block query/key")?;
    let q_bar = group_normalize(q_in, &p.shared_norm)?;
    let k_bar = group_normalize(k_in, &p.shared_norm)?;
    let v = pcdc_layer(&q_bar, &k_bar, &p.pcdc)?;
    channel_compressor(&v, &p.compressor)
}
