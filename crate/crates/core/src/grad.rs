//! Hand-written backward passes for the PCDC layer and the kernel
//! aggregation, checked against central finite differences.
//!
//! Everything here runs in `f64` so the finite-difference reference is
//! accurate to well below the `1e-6` agreement we ask of it.

use crate::error::{Error, Result};
use crate::ops::clamped_axis_tables;
use crate::rng::SplitMix64;
use crate::tensor::FeatureMap64;

/// Outcome of comparing one analytic gradient with finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub probes: usize,
}

impl GradCheckReport {
    fn new(op_name: impl Into<String>, max_rel_error: f64, tolerance: f64, probes: usize) -> Self {
        Self {
            op_name: op_name.into(),
            max_rel_error,
            tolerance,
            passed: max_rel_error <= tolerance,
            probes,
        }
    }
}

/// Central difference of `f` along element `index` of `x`.
fn central_difference<F: Fn(&FeatureMap64) -> f64>(f: &F, x: &FeatureMap64, index: usize, h: f64) -> Result<f64> {
    let mut probe = x.clone();
    let base = probe.data()[index];
    probe.data_mut()[index] = base + h;
    let plus = f(&probe);
    probe.data_mut()[index] = base - h;
    let minus = f(&probe);
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFiniteValue(format!("objective at element {index}")));
    }
    Ok((plus - minus) / (2.0 * h))
}

/// Full central-difference gradient `(f(x + h e) - f(x - h e)) / 2h`.
pub fn finite_diff_grad<F: Fn(&FeatureMap64) -> f64>(f: F, x: &FeatureMap64, h: f64) -> Result<FeatureMap64> {
    assert!(h > 0.0, "step must be positive");
    let mut grad = x.map(|_| 0.0);
    for index in 0..x.data().len() {
        grad.data_mut()[index] = central_difference(&f, x, index, h)?;
    }
    Ok(grad)
}

/// Central differences at the listed flat indices only.
pub fn finite_diff_probes<F: Fn(&FeatureMap64) -> f64>(f: F, x: &FeatureMap64, h: f64, indices: &[usize]) -> Result<Vec<f64>> {
    assert!(h > 0.0, "step must be positive");
    indices.iter().map(|&i| central_difference(&f, x, i, h)).collect()
}

/// `min(count, len)` distinct indices in `0..len`.
pub fn probe_indices(len: usize, count: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    let take = count.min(len);
    for i in 0..take {
        let j = rng.range(i, len - 1);
        all.swap(i, j);
    }
    all.truncate(take);
    all
}

/// `max |a - b| / max(|a|, |b|)` over paired values.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (&a, &b) in analytic.iter().zip(numeric) {
        diff = diff.max((a - b).abs());
        scale = scale.max(a.abs()).max(b.abs());
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn inner(a: &FeatureMap64, b: &FeatureMap64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Double-precision PCDC weights (`K^2 x (D/G) x L` packing, as in [`crate::PcdcParams`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PcdcParams64 {
    pub weight: FeatureMap64,
    pub bias: FeatureMap64,
    pub groups: usize,
    pub dilation: usize,
}

impl PcdcParams64 {
    fn kernel(&self) -> usize {
        (self.weight.height() as f64).sqrt().round() as usize
    }

    fn check(&self, q: &FeatureMap64, k: &FeatureMap64) -> Result<()> {
        q.ensure_same_dims(k, "PCDC query/key")?;
        let kernel = self.kernel();
        if kernel * kernel != self.weight.height()
            || self.weight.width() * self.groups != q.channels()
            || !self.weight.channels().is_multiple_of(self.groups)
            || self.bias.data().len() != self.weight.channels()
        {
            return Err(Error::ShapeMismatch("PCDC parameters do not fit the inputs".into()));
        }
        Ok(())
    }
}

/// Dilated neighbor pixel indices for every pixel, `K^2` per pixel.
fn neighbor_table(h: usize, w: usize, kernel: usize, dilation: usize) -> Vec<usize> {
    let rows = clamped_axis_tables(h, kernel, dilation);
    let cols = clamped_axis_tables(w, kernel, dilation);
    let mut table = Vec::with_capacity(h * w * kernel * kernel);
    for i in 0..h {
        for j in 0..w {
            for a in 0..kernel {
                for b in 0..kernel {
                    table.push(cols[j * kernel + b] + w * rows[i * kernel + a]);
                }
            }
        }
    }
    table
}

/// PCDC forward in split form: grouped dilated conv of `k` minus `1 x 1`
/// conv of `q` with spatially summed weights, plus bias.
pub fn pcdc_forward64(q: &FeatureMap64, k: &FeatureMap64, p: &PcdcParams64) -> Result<FeatureMap64> {
    p.check(q, k)?;
    let (h, w, d) = q.dims();
    let kernel = p.kernel();
    let k2 = kernel * kernel;
    let l_total = p.weight.channels();
    let (d_group, l_group) = (d / p.groups, l_total / p.groups);
    let table = neighbor_table(h, w, kernel, p.dilation);
    let mut out = FeatureMap64::filled(h, w, l_total, 0.0);
    for px in 0..h * w {
        for l in 0..l_total {
            let g = l / l_group;
            let mut acc = 0.0;
            for dt in 0..d_group {
                let dd = g * d_group + dt;
                let mut spatial = 0.0;
                for n in 0..k2 {
                    let wv = p.weight.get(n, dt, l);
                    acc += wv * k.pixel(table[px * k2 + n])[dd];
                    spatial += wv;
                }
                acc -= spatial * q.pixel(px)[dd];
            }
            out.pixel_mut(px)[l] = acc + p.bias.data()[l];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcdcGrads {
    pub q_bar: FeatureMap64,
    pub k_bar: FeatureMap64,
    pub weight: FeatureMap64,
    pub bias: FeatureMap64,
}

/// Gradients of `sum(upstream * pcdc(q, k))`.
///
/// The key gradient scatters `w^T upstream` back to every neighbor position
/// (clamped positions accumulate), the query gradient is the negated `1 x 1`
/// transpose with summed weights, the weight gradient accumulates
/// `upstream x (k - q)` outer products and the bias gradient sums upstream.
pub fn pcdc_backward(upstream: &FeatureMap64, q_bar: &FeatureMap64, k_bar: &FeatureMap64, p: &PcdcParams64) -> Result<PcdcGrads> {
    p.check(q_bar, k_bar)?;
    let (h, w, d) = q_bar.dims();
    let l_total = p.weight.channels();
    if upstream.dims() != (h, w, l_total) {
        return Err(Error::ShapeMismatch("PCDC upstream gradient shape".into()));
    }
    let kernel = p.kernel();
    let k2 = kernel * kernel;
    let (d_group, l_group) = (d / p.groups, l_total / p.groups);
    let table = neighbor_table(h, w, kernel, p.dilation);

    let mut dq = q_bar.map(|_| 0.0);
    let mut dk = k_bar.map(|_| 0.0);
    let mut dw = p.weight.map(|_| 0.0);
    let mut db = p.bias.map(|_| 0.0);
    for px in 0..h * w {
        let u = upstream.pixel(px);
        for l in 0..l_total {
            let g = l / l_group;
            let ul = u[l];
            db.data_mut()[l] += ul;
            for dt in 0..d_group {
                let dd = g * d_group + dt;
                let qv = q_bar.pixel(px)[dd];
                let mut spatial = 0.0;
                for n in 0..k2 {
                    let src = table[px * k2 + n];
                    let wv = p.weight.get(n, dt, l);
                    spatial += wv;
                    dk.pixel_mut(src)[dd] += ul * wv;
                    let o = dw.offset(n, dt, l);
                    dw.data_mut()[o] += ul * (k_bar.pixel(src)[dd] - qv);
                }
                dq.pixel_mut(px)[dd] -= ul * spatial;
            }
        }
    }
    Ok(PcdcGrads {
        q_bar: dq,
        k_bar: dk,
        weight: dw,
        bias: db,
    })
}

/// Row-wise softmax in `f64`.
pub fn softmax_rows64(scores: &FeatureMap64) -> FeatureMap64 {
    let mut out = scores.clone();
    for row in out.data_mut().chunks_exact_mut(scores.channels()) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - max).exp() / total);
    }
    out
}

/// Half-pixel bilinear taps `(lo, hi, frac)` in double precision.
fn taps64(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let coord = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = coord.floor() as usize;
            (lo, (lo + 1).min(src - 1), coord - lo as f64)
        })
        .collect()
}

/// The four `(source pixel, coefficient)` pairs behind each upsampled pixel.
fn bilinear_stencil(h: usize, w: usize, ratio: usize) -> Vec<[(usize, f64); 4]> {
    let rows = taps64(h, h * ratio);
    let cols = taps64(w, w * ratio);
    let mut stencil = Vec::with_capacity(rows.len() * cols.len());
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            stencil.push([
                (c0 + w * r0, (1.0 - fy) * (1.0 - fx)),
                (c1 + w * r0, (1.0 - fy) * fx),
                (c0 + w * r1, fy * (1.0 - fx)),
                (c1 + w * r1, fy * fx),
            ]);
        }
    }
    stencil
}

fn check_apply_shapes(weights: &FeatureMap64, x: &FeatureMap64, ratio: usize, kernel: usize) -> Result<()> {
    if ratio == 0
        || weights.height() != x.height() * ratio
        || weights.width() != x.width() * ratio
        || weights.channels() != kernel * kernel
    {
        return Err(Error::ShapeMismatch("kernel weights do not fit the value at this ratio".into()));
    }
    Ok(())
}

/// `out[i] = sum_n weights[i, n] * x_up[N(i)_n]` with `x_up` the bilinear
/// upsampling of `x` and neighbors dilated by `ratio`.
pub fn kernel_apply_forward64(weights: &FeatureMap64, x: &FeatureMap64, ratio: usize, kernel: usize) -> Result<FeatureMap64> {
    check_apply_shapes(weights, x, ratio, kernel)?;
    let (h, w, c) = x.dims();
    let (hh, ww) = (h * ratio, w * ratio);
    let stencil = bilinear_stencil(h, w, ratio);
    let table = neighbor_table(hh, ww, kernel, ratio);
    let k2 = kernel * kernel;
    let mut out = FeatureMap64::filled(hh, ww, c, 0.0);
    for px in 0..hh * ww {
        for n in 0..k2 {
            let wn = weights.pixel(px)[n];
            for &(src, coef) in &stencil[table[px * k2 + n]] {
                for ch in 0..c {
                    out.pixel_mut(px)[ch] += wn * coef * x.pixel(src)[ch];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelApplyGrads {
    /// Gradient w.r.t. the pre-softmax scores.
    pub scores: FeatureMap64,
    /// Gradient w.r.t. the post-softmax weights.
    pub weights: FeatureMap64,
    pub x: FeatureMap64,
}

/// Gradients of `sum(upstream * kernel_apply(softmax(s), x))` given the saved
/// post-softmax `weights`.
pub fn kernel_apply_backward(
    upstream: &FeatureMap64,
    weights: &FeatureMap64,
    x: &FeatureMap64,
    ratio: usize,
    kernel: usize,
) -> Result<KernelApplyGrads> {
    check_apply_shapes(weights, x, ratio, kernel)?;
    let (h, w, c) = x.dims();
    let (hh, ww) = (h * ratio, w * ratio);
    if upstream.dims() != (hh, ww, c) {
        return Err(Error::ShapeMismatch("kernel aggregation upstream gradient shape".into()));
    }
    let stencil = bilinear_stencil(h, w, ratio);
    let table = neighbor_table(hh, ww, kernel, ratio);
    let k2 = kernel * kernel;

    let mut d_weights = weights.map(|_| 0.0);
    let mut d_scores = weights.map(|_| 0.0);
    let mut dx = x.map(|_| 0.0);
    for px in 0..hh * ww {
        let u = upstream.pixel(px);
        for n in 0..k2 {
            let wn = weights.pixel(px)[n];
            let mut g = 0.0;
            for &(src, coef) in &stencil[table[px * k2 + n]] {
                for ch in 0..c {
                    g += u[ch] * coef * x.pixel(src)[ch];
                    dx.pixel_mut(src)[ch] += u[ch] * coef * wn;
                }
            }
            d_weights.pixel_mut(px)[n] = g;
        }
        // Softmax Jacobian: w * (g - <w, g>).
        let wrow = weights.pixel(px);
        let grow = d_weights.pixel(px);
        let mean: f64 = wrow.iter().zip(grow).map(|(a, b)| a * b).sum();
        let srow: Vec<f64> = wrow.iter().zip(grow).map(|(a, b)| a * (b - mean)).collect();
        d_scores.pixel_mut(px).copy_from_slice(&srow);
    }
    Ok(KernelApplyGrads {
        scores: d_scores,
        weights: d_weights,
        x: dx,
    })
}

fn random_map64(h: usize, w: usize, c: usize, amp: f64, rng: &mut SplitMix64) -> FeatureMap64 {
    FeatureMap64::from_fn(h, w, c, |_, _, _| rng.symmetric(amp))
}

const GRAD_TOLERANCE: f64 = 1e-6;

/// Compares all four PCDC gradients with finite differences of a random
/// projection of the output, at `probes` coordinates each.
pub fn check_pcdc_gradients(seed: u64, probes: usize) -> Result<Vec<GradCheckReport>> {
    let mut rng = SplitMix64::new(seed);
    let (h, w, d, l, groups, kernel, dilation) = (6, 5, 8, 8, 2, 3, 2);
    let q = random_map64(h, w, d, 1.0, &mut rng);
    let k = random_map64(h, w, d, 1.0, &mut rng);
    let p = PcdcParams64 {
        weight: random_map64(kernel * kernel, d / groups, l, 0.5, &mut rng),
        bias: random_map64(1, 1, l, 0.5, &mut rng),
        groups,
        dilation,
    };
    let u = random_map64(h, w, l, 1.0, &mut rng);
    let grads = pcdc_backward(&u, &q, &k, &p)?;
    let step = 1e-5;

    let mut reports = Vec::new();
    let mut record = |name: &str, analytic: &FeatureMap64, f: &dyn Fn(&FeatureMap64) -> f64, at: &FeatureMap64, rng: &mut SplitMix64| -> Result<()> {
        let idx = probe_indices(at.data().len(), probes, rng);
        let numeric = finite_diff_probes(f, at, step, &idx)?;
        let picked: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
        reports.push(GradCheckReport::new(name, max_rel_error(&picked, &numeric), GRAD_TOLERANCE, idx.len()));
        Ok(())
    };
    let loss = |q: &FeatureMap64, k: &FeatureMap64, p: &PcdcParams64| pcdc_forward64(q, k, p).map(|v| inner(&u, &v)).unwrap_or(f64::NAN);
    record("pcdc d/dq", &grads.q_bar, &|x| loss(x, &k, &p), &q, &mut rng)?;
    record("pcdc d/dk", &grads.k_bar, &|x| loss(&q, x, &p), &k, &mut rng)?;
    record("pcdc d/dw", &grads.weight, &|x| loss(&q, &k, &PcdcParams64 { weight: x.clone(), ..p.clone() }), &p.weight, &mut rng)?;
    record("pcdc d/db", &grads.bias, &|x| loss(&q, &k, &PcdcParams64 { bias: x.clone(), ..p.clone() }), &p.bias, &mut rng)?;
    Ok(reports)
}

/// Compares score and value gradients of the softmax aggregation with finite
/// differences, and checks that score gradients sum to zero per pixel.
pub fn check_kernel_apply_gradients(seed: u64, probes: usize) -> Result<Vec<GradCheckReport>> {
    let mut rng = SplitMix64::new(seed);
    let (h, w, c, ratio, kernel) = (4, 3, 3, 2, 3);
    let x = random_map64(h, w, c, 1.0, &mut rng);
    let scores = random_map64(h * ratio, w * ratio, kernel * kernel, 2.0, &mut rng);
    let u = random_map64(h * ratio, w * ratio, c, 1.0, &mut rng);
    let weights = softmax_rows64(&scores);
    let grads = kernel_apply_backward(&u, &weights, &x, ratio, kernel)?;
    let step = 1e-5;
    let loss = |s: &FeatureMap64, x: &FeatureMap64| {
        kernel_apply_forward64(&softmax_rows64(s), x, ratio, kernel)
            .map(|o| inner(&u, &o))
            .unwrap_or(f64::NAN)
    };

    let mut reports = Vec::new();
    let idx = probe_indices(scores.data().len(), probes, &mut rng);
    let numeric = finite_diff_probes(|s| loss(s, &x), &scores, step, &idx)?;
    let picked: Vec<f64> = idx.iter().map(|&i| grads.scores.data()[i]).collect();
    reports.push(GradCheckReport::new("kernel_apply d/dscores", max_rel_error(&picked, &numeric), GRAD_TOLERANCE, idx.len()));

    let idx = probe_indices(x.data().len(), probes, &mut rng);
    let numeric = finite_diff_probes(|v| loss(&scores, v), &x, step, &idx)?;
    let picked: Vec<f64> = idx.iter().map(|&i| grads.x.data()[i]).collect();
    reports.push(GradCheckReport::new("kernel_apply d/dx", max_rel_error(&picked, &numeric), GRAD_TOLERANCE, idx.len()));

    let worst_row_sum = grads
        .scores
        .data()
        .chunks_exact(kernel * kernel)
        .map(|row| row.iter().sum::<f64>().abs())
        .fold(0.0f64, f64::max);
    reports.push(GradCheckReport::new("kernel_apply score-grad shift invariance", worst_row_sum, 1e-10, grads.scores.pixels()));
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcdc::{pcdc_layer, PcdcParams};
    use crate::tensor::FeatureMap;

    fn random_pcdc64(rng: &mut SplitMix64) -> PcdcParams64 {
        PcdcParams64 {
            weight: random_map64(9, 4, 6, 0.5, rng),
            bias: random_map64(1, 1, 6, 0.5, rng),
            groups: 2,
            dilation: 1,
        }
    }

    #[test]
    fn fd_of_sum_of_squares() {
        let mut rng = SplitMix64::new(1);
        let x = random_map64(3, 4, 2, 2.0, &mut rng);
        let g = finite_diff_grad(|m| m.data().iter().map(|v| v * v).sum(), &x, 1e-5).unwrap();
        for (gv, xv) in g.data().iter().zip(x.data()) {
            assert!((gv - 2.0 * xv).abs() <= 1e-8 * (2.0 * xv).abs().max(1.0));
        }
    }

    #[test]
    fn fd_of_linear_function() {
        let mut rng = SplitMix64::new(2);
        let coef = random_map64(2, 3, 2, 1.0, &mut rng);
        let x = random_map64(2, 3, 2, 1.0, &mut rng);
        let g = finite_diff_grad(|m| inner(&coef, m), &x, 1e-3).unwrap();
        for (a, b) in g.data().iter().zip(coef.data()) {
            assert!((a - b).abs() <= 1e-11);
        }
    }

    #[test]
    fn fd_rejects_non_finite() {
        let x = FeatureMap64::filled(1, 1, 1, 0.0);
        assert!(matches!(
            finite_diff_grad(|m| 1.0 / m.data()[0].abs().min(1e-300) * f64::INFINITY, &x, 1e-3),
            Err(Error::NonFiniteValue(_))
        ));
    }

    #[test]
    fn forward64_matches_production_layer() {
        let mut rng = SplitMix64::new(3);
        let p64 = random_pcdc64(&mut rng);
        let q = random_map64(5, 5, 8, 1.0, &mut rng).to_f32();
        let k = random_map64(5, 5, 8, 1.0, &mut rng).to_f32();
        let p = PcdcParams::new(p64.weight.to_f32(), p64.bias.to_f32().into_data(), 2, 1).unwrap();
        let p64 = PcdcParams64 {
            weight: p.weight.to_f64(),
            bias: FeatureMap::new(1, 1, 6, p.bias.clone()).unwrap().to_f64(),
            ..p64
        };
        let a = pcdc_layer(&q, &k, &p).unwrap();
        let b = pcdc_forward64(&q.to_f64(), &k.to_f64(), &p64).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((f64::from(*x) - y).abs() <= 1e-5);
        }
    }

    #[test]
    fn equal_inputs_zero_weight_gradient() {
        let mut rng = SplitMix64::new(4);
        let p = random_pcdc64(&mut rng);
        let q = random_map64(4, 4, 8, 1.0, &mut rng);
        let u = random_map64(4, 4, 6, 1.0, &mut rng);
        let flat = FeatureMap64::filled(4, 4, 8, 0.3);
        let g = pcdc_backward(&u, &flat, &flat, &p).unwrap();
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        let g = pcdc_backward(&u, &q, &q, &p).unwrap();
        let per_channel: Vec<f64> = (0..6).map(|l| u.data().chunks_exact(6).map(|px| px[l]).sum()).collect();
        for (a, b) in g.bias.data().iter().zip(&per_channel) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pcdc_gradients_match_fd() {
        for seed in 0..3 {
            for r in check_pcdc_gradients(seed, 64).unwrap() {
                assert!(r.passed, "{r:?}");
            }
        }
    }

    #[test]
    fn kernel_apply_gradients_match_fd() {
        for seed in 0..3 {
            for r in check_kernel_apply_gradients(seed, 64).unwrap() {
                assert!(r.passed, "{r:?}");
            }
        }
    }

    #[test]
    fn uniform_weights_constant_signal_gives_zero_score_gradient() {
        let weights = FeatureMap64::filled(4, 4, 9, 1.0 / 9.0);
        let x = FeatureMap64::filled(2, 2, 3, 0.7);
        let u = FeatureMap64::filled(4, 4, 3, 1.5);
        let g = kernel_apply_backward(&u, &weights, &x, 2, 3).unwrap();
        assert!(g.scores.data().iter().all(|v| v.abs() <= 1e-15));
    }

    #[test]
    fn ratio_one_center_weights_pass_upstream_through() {
        let mut rng = SplitMix64::new(5);
        let weights = FeatureMap64::from_fn(3, 4, 9, |_, _, n| if n == 4 { 1.0 } else { 0.0 });
        let x = random_map64(3, 4, 2, 1.0, &mut rng);
        let u = random_map64(3, 4, 2, 1.0, &mut rng);
        let g = kernel_apply_backward(&u, &weights, &x, 1, 3).unwrap();
        for (a, b) in g.x.data().iter().zip(u.data()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut rng = SplitMix64::new(6);
        let p = random_pcdc64(&mut rng);
        let q = random_map64(4, 5, 8, 1.0, &mut rng);
        let k = random_map64(4, 5, 8, 1.0, &mut rng);
        let u1 = random_map64(4, 5, 6, 1.0, &mut rng);
        let u2 = random_map64(4, 5, 6, 1.0, &mut rng);
        let (a, b) = (1.7, -0.4);
        let mix = |x: &FeatureMap64, y: &FeatureMap64| {
            FeatureMap64::new(x.height(), x.width(), x.channels(), x.data().iter().zip(y.data()).map(|(s, t)| a * s + b * t).collect()).unwrap()
        };
        let close = |x: &FeatureMap64, y: &FeatureMap64| x.data().iter().zip(y.data()).all(|(s, t)| (s - t).abs() <= 1e-10);
        let g1 = pcdc_backward(&u1, &q, &k, &p).unwrap();
        let g2 = pcdc_backward(&u2, &q, &k, &p).unwrap();
        let gm = pcdc_backward(&mix(&u1, &u2), &q, &k, &p).unwrap();
        assert!(close(&gm.q_bar, &mix(&g1.q_bar, &g2.q_bar)));
        assert!(close(&gm.k_bar, &mix(&g1.k_bar, &g2.k_bar)));
        assert!(close(&gm.weight, &mix(&g1.weight, &g2.weight)));
        assert!(close(&gm.bias, &mix(&g1.bias, &g2.bias)));

        let weights = softmax_rows64(&random_map64(8, 6, 9, 1.0, &mut rng));
        let x = random_map64(4, 3, 2, 1.0, &mut rng);
        let v1 = random_map64(8, 6, 2, 1.0, &mut rng);
        let v2 = random_map64(8, 6, 2, 1.0, &mut rng);
        let h1 = kernel_apply_backward(&v1, &weights, &x, 2, 3).unwrap();
        let h2 = kernel_apply_backward(&v2, &weights, &x, 2, 3).unwrap();
        let hm = kernel_apply_backward(&mix(&v1, &v2), &weights, &x, 2, 3).unwrap();
        assert!(close(&hm.scores, &mix(&h1.scores, &h2.scores)));
        assert!(close(&hm.x, &mix(&h1.x, &h2.x)));
    }

    #[test]
    fn probe_indices_are_distinct() {
        let mut rng = SplitMix64::new(7);
        let mut idx = probe_indices(100, 64, &mut rng);
        assert_eq!(idx.len(), 64);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 64);
        assert_eq!(probe_indices(5, 64, &mut rng).len(), 5);
    }
}
