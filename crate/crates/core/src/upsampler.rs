//! The full upsampling pipeline.
//!
//! Given a low-resolution feature `x` (`h x w x C`) and a high-resolution
//! guide `y` (`H x W x c`, `H = ratio * h`):
//!
//! 1. project `y` to the query `q` and `x` to the key `k` (`D` channels each);
//! 2. bilinearly upsample the key to `k_up`;
//! 3. align the query to the key with a guided filter (`q_gf`) and smooth it
//!    with a 3x3 Gaussian (`q_gs`);
//! 4. score `(q_gf, k_up)` and `(q, q_gs)` with two independent PCDC blocks
//!    and add the scores;
//! 5. softmax each pixel's `K^2` scores and mix the neighbors of the
//!    bilinearly upsampled value, taken on the high-resolution grid with
//!    dilation `ratio`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::guided_filter::{guided_filter, GuidedFilterConfig};
use crate::ops::{
    bilinear_resize, bilinear_taps, check_kernel_size, clamped_axis_tables, gaussian_smooth3,
    grouped_pointwise_conv, interpolate_row, softmax_rows, Matrix, SimilarityScores,
};
use crate::pcdc::{pcdc_block, CompressorParams, PcdcBlockParams, COMPRESSOR_CHANNELS};
use crate::rng::SplitMix64;
use crate::tensor::FeatureMap;

pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_PCDC_CHANNELS: usize = 32;
pub const DEFAULT_GROUPS: usize = 4;

/// Row sums further than this from 1 mean the caller skipped the softmax.
const ROW_SUM_TOLERANCE: f64 = 1e-3;

/// Linear projections producing the query (from the guide) and key (from the input).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    /// `D x c`
    pub weight_q: Matrix,
    pub bias_q: Vec<f32>,
    /// `D x C`
    pub weight_k: Matrix,
    pub bias_k: Vec<f32>,
}

impl ProjectionParams {
    pub fn dim(&self) -> usize {
        self.weight_q.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResfuParams {
    pub proj: ProjectionParams,
    /// Semantic branch, scores `(q_gf, k_up)`.
    pub block_s: PcdcBlockParams,
    /// Detail branch, scores `(q, q_gs)`.
    pub block_d: PcdcBlockParams,
    pub gf: GuidedFilterConfig,
}

impl ResfuParams {
    pub fn dim(&self) -> usize {
        self.proj.dim()
    }

    pub fn guide_channels(&self) -> usize {
        self.proj.weight_q.cols()
    }

    pub fn value_channels(&self) -> usize {
        self.proj.weight_k.cols()
    }

    pub fn kernel(&self) -> usize {
        self.block_s.pcdc.kernel()
    }

    /// Checks that every tensor agrees with every other on channel counts.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let p = &self.proj;
        if p.weight_k.rows() != d || p.bias_q.len() != d || p.bias_k.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "projections disagree on D: weight_q {}x{}, weight_k {}x{}, biases {}/{}",
                p.weight_q.rows(),
                p.weight_q.cols(),
                p.weight_k.rows(),
                p.weight_k.cols(),
                p.bias_q.len(),
                p.bias_k.len()
            )));
        }
        let k = self.kernel();
        for (name, block) in [("semantic", &self.block_s), ("detail", &self.block_d)] {
            block.pcdc.validate()?;
            let c = &block.compressor;
            let problem = if block.shared_norm.channels() != d || block.shared_norm.beta.len() != d {
                Some(format!("shared norm covers {} channels, D = {d}", block.shared_norm.channels()))
            } else if block.pcdc.in_channels() != d {
                Some(format!("PCDC reads {} channels, D = {d}", block.pcdc.in_channels()))
            } else if block.pcdc.kernel() != k {
                Some(format!("kernel {} differs from semantic branch kernel {k}", block.pcdc.kernel()))
            } else if c.conv1_weight.cols() * c.conv1_groups != block.pcdc.out_channels()
                || c.conv1_bias.len() != c.conv1_weight.rows()
            {
                Some("compressor input conv does not match PCDC output".to_string())
            } else if c.norm.channels() != c.conv1_weight.rows() || c.norm.beta.len() != c.norm.channels() {
                Some("compressor norm width does not match hidden width".to_string())
            } else if c.conv2_weight.cols() != c.conv1_weight.rows()
                || c.conv2_weight.rows() != k * k
                || c.conv2_bias.len() != k * k
            {
                Some(format!("compressor output must be {} scores", k * k))
            } else {
                None
            };
            if let Some(msg) = problem {
                return Err(Error::ShapeMismatch(format!("{name} block: {msg}")));
            }
        }
        self.gf.validate()
    }

    /// Copy with every weight and bias in both similarity blocks set to zero.
    pub fn with_zeroed_blocks(&self) -> Self {
        let k = self.kernel();
        let zero = |b: &PcdcBlockParams| {
            let mut z = PcdcBlockParams::zeros(k, self.dim(), b.pcdc.out_channels(), b.pcdc.groups);
            z.shared_norm = b.shared_norm.clone();
            z.compressor.norm = b.compressor.norm.clone();
            z
        };
        Self {
            block_s: zero(&self.block_s),
            block_d: zero(&self.block_d),
            ..self.clone()
        }
    }
}

/// Run-time configuration and the hyperparameters used by [`generate_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleConfig {
    pub ratio: usize,
    pub kernel: usize,
    pub seed: u64,
    pub dim: usize,
    pub pcdc_channels: usize,
    pub groups: usize,
    pub gf: GuidedFilterConfig,
    /// Aggregate without materializing the upsampled value.
    pub fused: bool,
}

impl Default for UpsampleConfig {
    fn default() -> Self {
        Self {
            ratio: 2,
            kernel: DEFAULT_KERNEL,
            seed: 0,
            dim: DEFAULT_DIM,
            pcdc_channels: DEFAULT_PCDC_CHANNELS,
            groups: DEFAULT_GROUPS,
            gf: GuidedFilterConfig::default(),
            fused: true,
        }
    }
}

impl UpsampleConfig {
    pub fn with_ratio(ratio: usize) -> Self {
        Self {
            ratio,
            ..Self::default()
        }
    }
}

/// Every intermediate of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleTrace {
    pub q: FeatureMap,
    pub k: FeatureMap,
    pub k_up: FeatureMap,
    pub q_gf: FeatureMap,
    pub q_gs: FeatureMap,
    pub s_s: SimilarityScores,
    pub s_d: SimilarityScores,
    /// Post-softmax kernels.
    pub kernels: SimilarityScores,
    pub output: FeatureMap,
}

/// Returns `(q, k)`: `q` is `H x W x D` from the guide, `k` is `h x w x D` from the input.
pub fn project_qk(x: &FeatureMap, y: &FeatureMap, proj: &ProjectionParams) -> Result<(FeatureMap, FeatureMap)> {
    if y.channels() != proj.weight_q.cols() {
        return Err(Error::ShapeMismatch(format!(
            "guide has {} channels, query projection expects {}",
            y.channels(),
            proj.weight_q.cols()
        )));
    }
    if x.channels() != proj.weight_k.cols() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, key projection expects {}",
            x.channels(),
            proj.weight_k.cols()
        )));
    }
    let q = grouped_pointwise_conv(y, &proj.weight_q, &proj.bias_q, 1)?;
    let k = grouped_pointwise_conv(x, &proj.weight_k, &proj.bias_k, 1)?;
    Ok((q, k))
}

/// Semantic and detail branch scores `(s_s, s_d)` plus the aligned query.
pub fn compute_similarity_branches(
    q: &FeatureMap,
    k_up: &FeatureMap,
    q_gs: &FeatureMap,
    params: &ResfuParams,
    ratio: usize,
) -> Result<(SimilarityScores, SimilarityScores, FeatureMap)> {
    q.ensure_same_dims(k_up, "query/upsampled key")?;
    q.ensure_same_dims(q_gs, "query/smoothed query")?;
    let q_gf = guided_filter(q, k_up, &params.gf)?;
    let s_s = pcdc_block(&q_gf, k_up, &params.block_s.with_dilation(ratio))?;
    let s_d = pcdc_block(q, q_gs, &params.block_d.with_dilation(ratio))?;
    Ok((s_s, s_d, q_gf))
}

/// `s = s_s + s_d`.
pub fn compute_similarity(
    q: &FeatureMap,
    k_up: &FeatureMap,
    q_gs: &FeatureMap,
    params: &ResfuParams,
    ratio: usize,
) -> Result<SimilarityScores> {
    let (s_s, s_d, _) = compute_similarity_branches(q, k_up, q_gs, params, ratio)?;
    s_s.add(&s_d)
}

/// Mixes each high-resolution pixel's dilated `K x K` neighbors of the
/// bilinearly upsampled `x` with its kernel weights.
///
/// With `fused` set the upsampled value is never stored: each output row
/// interpolates just the `K` source rows it reads. Both paths evaluate the
/// same arithmetic in the same order and agree bit for bit.
pub fn kernel_apply_fns(
    weights: &SimilarityScores,
    x: &FeatureMap,
    ratio: usize,
    kernel: usize,
    fused: bool,
) -> Result<FeatureMap> {
    check_kernel_size(kernel)?;
    if ratio == 0 {
        return Err(Error::InvalidArgument("ratio must be >= 1".into()));
    }
    let (hh, ww) = (weights.height(), weights.width());
    if weights.slots() != kernel * kernel {
        return Err(Error::ShapeMismatch(format!(
            "kernel size {kernel} needs {} weights per pixel, got {}",
            kernel * kernel,
            weights.slots()
        )));
    }
    if (hh, ww) != (x.height() * ratio, x.width() * ratio) {
        return Err(Error::ShapeMismatch(format!(
            "{hh}x{ww} kernels do not match {}x{} input at ratio {ratio}",
            x.height(),
            x.width()
        )));
    }
    for p in 0..weights.pixels() {
        let sum: f64 = weights.row(p).iter().map(|&v| f64::from(v)).sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
            return Err(Error::RowNotNormalized { pixel: p, sum });
        }
    }
    if fused {
        Ok(apply_fused(weights, x, ratio, kernel))
    } else {
        Ok(apply_materialized(weights, x, ratio, kernel))
    }
}

fn apply_materialized(weights: &SimilarityScores, x: &FeatureMap, ratio: usize, kernel: usize) -> FeatureMap {
    let (hh, ww, c) = (weights.height(), weights.width(), x.channels());
    let x_up = bilinear_resize(x, hh, ww);
    let rows = clamped_axis_tables(hh, kernel, ratio);
    let cols = clamped_axis_tables(ww, kernel, ratio);
    let mut out = FeatureMap::zeros(hh, ww, c);
    out.data_mut()
        .par_chunks_mut(ww * c)
        .enumerate()
        .for_each(|(i, line)| {
            let mut acc = vec![0.0f64; c];
            for j in 0..ww {
                acc.iter_mut().for_each(|v| *v = 0.0);
                let wrow = weights.row(j + ww * i);
                for a in 0..kernel {
                    let r = rows[i * kernel + a];
                    for b in 0..kernel {
                        let wv = f64::from(wrow[a * kernel + b]);
                        let src = x_up.pixel(cols[j * kernel + b] + ww * r);
                        for (s, &v) in acc.iter_mut().zip(src) {
                            *s += wv * f64::from(v);
                        }
                    }
                }
                for (dst, &s) in line[j * c..(j + 1) * c].iter_mut().zip(&acc) {
                    *dst = s as f32;
                }
            }
        });
    out
}

fn apply_fused(weights: &SimilarityScores, x: &FeatureMap, ratio: usize, kernel: usize) -> FeatureMap {
    let (hh, ww, c) = (weights.height(), weights.width(), x.channels());
    let row_taps = bilinear_taps(x.height(), hh);
    let col_taps = bilinear_taps(x.width(), ww);
    let rows = clamped_axis_tables(hh, kernel, ratio);
    let cols = clamped_axis_tables(ww, kernel, ratio);
    let mut out = FeatureMap::zeros(hh, ww, c);
    out.data_mut()
        .par_chunks_mut(ww * c)
        .enumerate()
        .for_each(|(i, line)| {
            // The K upsampled rows this output row reads.
            let mut window = vec![0.0f32; kernel * ww * c];
            for (a, dst) in window.chunks_exact_mut(ww * c).enumerate() {
                interpolate_row(x, row_taps[rows[i * kernel + a]], &col_taps, dst);
            }
            let mut acc = vec![0.0f64; c];
            for j in 0..ww {
                acc.iter_mut().for_each(|v| *v = 0.0);
                let wrow = weights.row(j + ww * i);
                for a in 0..kernel {
                    let src_row = &window[a * ww * c..(a + 1) * ww * c];
                    for b in 0..kernel {
                        let wv = f64::from(wrow[a * kernel + b]);
                        let col = cols[j * kernel + b];
                        for (s, &v) in acc.iter_mut().zip(&src_row[col * c..(col + 1) * c]) {
                            *s += wv * f64::from(v);
                        }
                    }
                }
                for (dst, &s) in line[j * c..(j + 1) * c].iter_mut().zip(&acc) {
                    *dst = s as f32;
                }
            }
        });
    out
}

/// Dot-product scores `q_i . k_up[N(i)_n]` on the high-resolution key with
/// dilation `ratio`; the parameter-free similarity baseline.
pub fn inner_product_scores(q: &FeatureMap, k_up: &FeatureMap, kernel: usize, ratio: usize) -> Result<SimilarityScores> {
    q.ensure_same_dims(k_up, "inner product query/key")?;
    check_kernel_size(kernel)?;
    let (h, w, d) = q.dims();
    let k2 = kernel * kernel;
    let rows = clamped_axis_tables(h, kernel, ratio);
    let cols = clamped_axis_tables(w, kernel, ratio);
    let mut out = FeatureMap::zeros(h, w, k2);
    out.data_mut()
        .par_chunks_mut(w * k2)
        .enumerate()
        .for_each(|(i, line)| {
            for j in 0..w {
                let qp = q.pixel(j + w * i);
                for a in 0..kernel {
                    for b in 0..kernel {
                        let kp = k_up.pixel(cols[j * kernel + b] + w * rows[i * kernel + a]);
                        let dot: f64 = qp.iter().zip(kp).map(|(&u, &v)| f64::from(u) * f64::from(v)).sum();
                        line[j * k2 + a * kernel + b] = dot as f32;
                    }
                }
            }
        });
    debug_assert_eq!(d, k_up.channels());
    Ok(SimilarityScores::new(out))
}

fn check_ratio(x: &FeatureMap, y: &FeatureMap, ratio: usize) -> Result<()> {
    if ratio == 0 || y.height() != ratio * x.height() || y.width() != ratio * x.width() {
        return Err(Error::RatioMismatch {
            input_h: x.height(),
            input_w: x.width(),
            guide_h: y.height(),
            guide_w: y.width(),
            ratio,
        });
    }
    Ok(())
}

/// Runs the pipeline and keeps every intermediate.
pub fn resfu_upsample_traced(
    x: &FeatureMap,
    y: &FeatureMap,
    params: &ResfuParams,
    cfg: &UpsampleConfig,
) -> Result<UpsampleTrace> {
    check_ratio(x, y, cfg.ratio)?;
    params.validate()?;
    if cfg.kernel != params.kernel() {
        return Err(Error::ShapeMismatch(format!(
            "config kernel {} but weights were built for kernel {}",
            cfg.kernel,
            params.kernel()
        )));
    }
    let (hh, ww) = (y.height(), y.width());
    let (q, k) = project_qk(x, y, &params.proj)?;
    let k_up = bilinear_resize(&k, hh, ww);
    let q_gs = gaussian_smooth3(&q);
    let (s_s, s_d, q_gf) = compute_similarity_branches(&q, &k_up, &q_gs, params, cfg.ratio)?;
    let kernels = softmax_rows(&s_s.add(&s_d)?);
    let output = kernel_apply_fns(&kernels, x, cfg.ratio, cfg.kernel, cfg.fused)?;
    Ok(UpsampleTrace {
        q,
        k,
        k_up,
        q_gf,
        q_gs,
        s_s,
        s_d,
        kernels,
        output,
    })
}

/// Upsamples `x` (`h x w x C`) to `H x W x C` under the guidance of `y`.
pub fn resfu_upsample(x: &FeatureMap, y: &FeatureMap, params: &ResfuParams, cfg: &UpsampleConfig) -> Result<FeatureMap> {
    resfu_upsample_traced(x, y, params, cfg).map(|t| t.output)
}

/// Kernels and output of the inner-product baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTrace {
    pub q: FeatureMap,
    pub k_up: FeatureMap,
    pub kernels: SimilarityScores,
    pub output: FeatureMap,
}

/// Same projections and aggregation as the full pipeline, with dot-product
/// scores in place of both PCDC branches.
pub fn inner_product_upsample(
    x: &FeatureMap,
    y: &FeatureMap,
    params: &ResfuParams,
    cfg: &UpsampleConfig,
) -> Result<BaselineTrace> {
    check_ratio(x, y, cfg.ratio)?;
    let (q, k) = project_qk(x, y, &params.proj)?;
    let k_up = bilinear_resize(&k, y.height(), y.width());
    let scores = inner_product_scores(&q, &k_up, cfg.kernel, cfg.ratio)?;
    let kernels = softmax_rows(&scores);
    let output = kernel_apply_fns(&kernels, x, cfg.ratio, cfg.kernel, cfg.fused)?;
    Ok(BaselineTrace {
        q,
        k_up,
        kernels,
        output,
    })
}

fn uniform_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut SplitMix64) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.symmetric(bound) as f32)
}

fn uniform_map(h: usize, w: usize, c: usize, fan_in: usize, rng: &mut SplitMix64) -> FeatureMap {
    let bound = 1.0 / (fan_in as f64).sqrt();
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.symmetric(bound) as f32)
}

fn generate_block(cfg: &UpsampleConfig, rng: &mut SplitMix64) -> PcdcBlockParams {
    let k2 = cfg.kernel * cfg.kernel;
    let d_group = cfg.dim / cfg.groups;
    let mut block = PcdcBlockParams::zeros(cfg.kernel, cfg.dim, cfg.pcdc_channels, cfg.groups);
    block.pcdc.weight = uniform_map(k2, d_group, cfg.pcdc_channels, k2 * d_group, rng);
    let CompressorParams {
        conv1_weight,
        conv1_groups,
        conv2_weight,
        ..
    } = &mut block.compressor;
    let conv1_fan_in = cfg.pcdc_channels / *conv1_groups;
    *conv1_weight = uniform_matrix(COMPRESSOR_CHANNELS, conv1_fan_in, conv1_fan_in, rng);
    *conv2_weight = uniform_matrix(k2, COMPRESSOR_CHANNELS, COMPRESSOR_CHANNELS, rng);
    block
}

/// Deterministic synthetic parameters for a guide with `guide_channels` and an
/// input with `value_channels`.
///
/// Weights are uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))` drawn from
/// SplitMix64 in a fixed order (query projection, key projection, then the
/// semantic and detail blocks: PCDC, compressor input, compressor output).
/// Biases are zero, norm scales one and shifts zero.
pub fn generate_params(guide_channels: usize, value_channels: usize, cfg: &UpsampleConfig) -> Result<ResfuParams> {
    check_kernel_size(cfg.kernel)?;
    if guide_channels == 0 || value_channels == 0 {
        return Err(Error::InvalidArgument("channel counts must be >= 1".into()));
    }
    if cfg.groups == 0 || !cfg.dim.is_multiple_of(cfg.groups) || !cfg.pcdc_channels.is_multiple_of(cfg.groups) {
        return Err(Error::ChannelGroupMismatch {
            channels: cfg.dim,
            groups: cfg.groups,
        });
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let proj = ProjectionParams {
        weight_q: uniform_matrix(cfg.dim, guide_channels, guide_channels, &mut rng),
        bias_q: vec![0.0; cfg.dim],
        weight_k: uniform_matrix(cfg.dim, value_channels, value_channels, &mut rng),
        bias_k: vec![0.0; cfg.dim],
    };
    let block_s = generate_block(cfg, &mut rng);
    let block_d = generate_block(cfg, &mut rng);
    let params = ResfuParams {
        proj,
        block_s,
        block_d,
        gf: cfg.gf,
    };
    params.validate()?;
    Ok(params)
}
