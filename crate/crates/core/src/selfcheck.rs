//! Seeded end-to-end correctness checks: every fast path against its oracle,
//! the gradient checks, determinism across thread counts and the file
//! formats. `resfu selfcheck` prints one line per check.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::bundle::{deserialize_params, serialize_params};
use crate::error::{Error, Result};
use crate::grad::{check_kernel_apply_gradients, check_pcdc_gradients};
use crate::guided_filter::{guided_filter, GuidedFilterConfig};
use crate::ops::{bilinear_resize, softmax_rows, SimilarityScores};
use crate::oracle::{
    max_rel_error, oracle_dilated_box_mean, oracle_guided_filter_window, oracle_kernel_apply_gridwise,
    oracle_pcdc_direct,
};
use crate::pcdc::{pcdc_layer, PcdcParams};
use crate::rng::SplitMix64;
use crate::tensor::FeatureMap;
use crate::upsampler::{generate_params, kernel_apply_fns, resfu_upsample, resfu_upsample_traced, ResfuParams, UpsampleConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub time_limit: Option<Duration>,
    pub elapsed: Duration,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, max_error: f64, tolerance: f64, time_limit: Option<Duration>, elapsed: Duration) -> Self {
        let in_time = time_limit.is_none_or(|limit| elapsed <= limit);
        Self {
            name: name.to_string(),
            max_error,
            tolerance,
            time_limit,
            elapsed,
            passed: max_error <= tolerance && in_time,
            detail: String::new(),
        }
    }

    fn failed(name: &str, detail: String, elapsed: Duration) -> Self {
        Self {
            name: name.to_string(),
            max_error: f64::INFINITY,
            tolerance: 0.0,
            time_limit: None,
            elapsed,
            passed: false,
            detail,
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = detail;
        self
    }

    fn and(mut self, ok: bool) -> Self {
        self.passed &= ok;
        self
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {:<50} max_err={:<10.3e} tol={:<8.0e} {:>7.2}s",
            self.name,
            self.max_error,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )?;
        if let Some(limit) = self.time_limit {
            write!(f, " (limit {}s)", limit.as_secs())?;
        }
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

/// Runs `body`, converting an error into a named failure.
fn timed(name: &str, body: impl FnOnce(&str, Instant) -> Result<CheckResult>) -> CheckResult {
    let start = Instant::now();
    body(name, start).unwrap_or_else(|e| CheckResult::failed(name, format!("error: {e}"), start.elapsed()))
}

fn random_map(h: usize, w: usize, c: usize, amp: f64, rng: &mut SplitMix64) -> FeatureMap {
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.symmetric(amp) as f32)
}

fn seconds(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

/// Decomposed PCDC vs the literal difference form on 200 random layers.
pub fn check_pcdc_equivalence(seed: u64) -> CheckResult {
    timed("pcdc decomposed vs direct (200 cases)", |name, start| {
        let mut rng = SplitMix64::new(seed ^ 0x0001);
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let (h, w) = (rng.range(1, 16), rng.range(1, 16));
            let groups = *rng.choose(&[1, 2, 4]);
            let dilation = *rng.choose(&[1, 2, 4]);
            let (d, l, k) = (32, 32, 3);
            let q = random_map(h, w, d, 1.0, &mut rng);
            let kb = random_map(h, w, d, 1.0, &mut rng);
            let weight = random_map(k * k, d / groups, l, 0.5, &mut rng);
            let bias = (0..l).map(|_| rng.symmetric(0.5) as f32).collect();
            let p = PcdcParams::new(weight, bias, groups, dilation)?;
            let fast = pcdc_layer(&q, &kb, &p)?;
            let slow = oracle_pcdc_direct(&q, &kb, &p)?;
            worst = worst.max(max_rel_error(fast.data(), slow.data()));
        }
        Ok(CheckResult::new(name, worst, 1e-5, seconds(30), start.elapsed()))
    })
}

/// Closed-form guided filter vs per-window ridge regression, interior pixels.
pub fn check_guided_filter(seed: u64) -> CheckResult {
    timed("guided filter vs per-window regression (20)", |name, start| {
        let mut rng = SplitMix64::new(seed ^ 0x0002);
        let cfg = GuidedFilterConfig { radius: 2, eps: 1e-3 };
        let (h, w, c, r) = (12, 12, 4, cfg.radius);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let q = random_map(h, w, c, 1.0, &mut rng);
            let k = random_map(h, w, c, 1.0, &mut rng);
            let fast = guided_filter(&q, &k, &cfg)?;
            let slow = oracle_guided_filter_window(&q, &k, &cfg)?;
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for i in r..h - r {
                for j in r..w - r {
                    for ch in 0..c {
                        a.push(fast.get(i, j, ch));
                        b.push(slow.get(i, j, ch));
                    }
                }
            }
            worst = worst.max(max_rel_error(&a, &b));
        }
        Ok(CheckResult::new(name, worst, 1e-4, seconds(10), start.elapsed()))
    })
}

/// Fused aggregation vs materialized aggregation, ratios {1, 2, 4, 8}.
pub fn check_fused_aggregation(seed: u64) -> CheckResult {
    timed("fused vs naive kernel aggregation (50)", |name, start| {
        let mut rng = SplitMix64::new(seed ^ 0x0003);
        let mut worst = 0.0f64;
        for case in 0..50 {
            let ratio = [1, 2, 4, 8][case % 4];
            let kernel = *rng.choose(&[1, 3, 5]);
            let (h, w, c) = (rng.range(1, 10), rng.range(1, 10), rng.range(1, 8));
            let x = random_map(h, w, c, 1.0, &mut rng);
            let scores = SimilarityScores::new(random_map(h * ratio, w * ratio, kernel * kernel, 3.0, &mut rng));
            let weights = softmax_rows(&scores);
            let naive = kernel_apply_fns(&weights, &x, ratio, kernel, false)?;
            let fused = kernel_apply_fns(&weights, &x, ratio, kernel, true)?;
            worst = worst.max(max_rel_error(fused.data(), naive.data()));
        }
        Ok(CheckResult::new(name, worst, 1e-5, seconds(10), start.elapsed()))
    })
}

fn small_config(ratio: usize, seed: u64) -> UpsampleConfig {
    UpsampleConfig {
        seed,
        ratio,
        gf: GuidedFilterConfig { radius: 2, eps: 1e-3 },
        ..UpsampleConfig::default()
    }
}

/// Max deviation from `value` of the output and max row-sum error of the
/// kernels for one constant-input run.
fn constant_run(params: &ResfuParams, cfg: &UpsampleConfig, h: usize, w: usize, rng: &mut SplitMix64) -> Result<(f64, f64)> {
    let value = rng.symmetric(3.0) as f32;
    let x = FeatureMap::filled(h, w, params.value_channels(), value);
    let y = random_map(h * cfg.ratio, w * cfg.ratio, params.guide_channels(), 1.0, rng);
    let trace = resfu_upsample_traced(&x, &y, params, cfg)?;
    let out_err = trace
        .output
        .data()
        .iter()
        .fold(0.0f64, |m, &v| m.max(f64::from(v - value).abs()));
    let row_err = (0..trace.kernels.pixels())
        .map(|p| (trace.kernels.row(p).iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs())
        .fold(0.0f64, f64::max);
    if out_err.is_nan() || row_err.is_nan() {
        return Err(Error::NonFiniteValue("constant-input run".into()));
    }
    Ok((out_err, row_err))
}

/// Constant inputs come out unchanged and kernels sum to one, for 20
/// generated bundles (plus `extra` when given).
pub fn check_constant_preservation(seed: u64, extra: Option<&ResfuParams>) -> Vec<CheckResult> {
    let start = Instant::now();
    let mut rng = SplitMix64::new(seed ^ 0x0004);
    let mut out_err = 0.0f64;
    let mut row_err = 0.0f64;
    let mut failure = None;
    for case in 0..20u64 {
        let ratio = *rng.choose(&[1, 2, 4]);
        let cfg = small_config(ratio, seed.wrapping_mul(1000).wrapping_add(case));
        let (guide_c, value_c) = (rng.range(1, 8), rng.range(1, 8));
        let (h, w) = (rng.range(2, 8), rng.range(2, 8));
        match generate_params(guide_c, value_c, &cfg).and_then(|p| constant_run(&p, &cfg, h, w, &mut rng)) {
            Ok((a, b)) => {
                out_err = out_err.max(a);
                row_err = row_err.max(b);
            }
            Err(e) => failure = Some(format!("bundle {case}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let mut results = vec![
        CheckResult::new("constant input preserved (20 bundles)", out_err, 1e-5, None, elapsed),
        CheckResult::new("kernel rows sum to one (20 bundles)", row_err, 1e-6, None, elapsed),
    ];
    if let Some(msg) = failure {
        results.iter_mut().for_each(|r| {
            r.passed = false;
            r.detail = msg.clone();
        });
    }
    if let Some(params) = extra {
        results.push(timed("constant input preserved (--weights)", |name, start| {
            let cfg = small_config(2, seed);
            let (a, b) = constant_run(params, &cfg, 6, 5, &mut rng)?;
            Ok(CheckResult::new(name, a.max(b), 1e-5, None, start.elapsed()))
        }));
    }
    results
}

/// With both similarity blocks zeroed the kernels are uniform, so the output
/// is the dilated box mean of the bilinear upsampling.
pub fn check_zeroed_blocks(seed: u64) -> CheckResult {
    timed("zeroed blocks = dilated box mean (x2,x4,x8)", |name, start| {
        let mut rng = SplitMix64::new(seed ^ 0x0005);
        let mut worst = 0.0f64;
        for ratio in [2, 4, 8] {
            let cfg = small_config(ratio, seed + ratio as u64);
            let (h, w, c) = (rng.range(3, 8), rng.range(3, 8), rng.range(1, 6));
            let params = generate_params(3, c, &cfg)?.with_zeroed_blocks();
            let x = random_map(h, w, c, 1.0, &mut rng);
            let y = random_map(h * ratio, w * ratio, 3, 1.0, &mut rng);
            let out = resfu_upsample(&x, &y, &params, &cfg)?;
            let expected = oracle_dilated_box_mean(&bilinear_resize(&x, h * ratio, w * ratio), cfg.kernel, ratio);
            worst = worst.max(max_rel_error(out.data(), expected.data()));
        }
        Ok(CheckResult::new(name, worst, 1e-5, None, start.elapsed()))
    })
}

/// Outcome of the ramp experiment behind [`check_anti_mosaic`].
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicReport {
    /// Largest interior second difference of the neighbor-selected output.
    pub fns_max_second_diff: f64,
    /// Jumps of at least half the low-resolution step in the grid-wise output (per row, minimum over rows).
    pub gridwise_boundaries: usize,
    /// Low-resolution extent along the ramp minus two.
    pub required_boundaries: usize,
}

/// Uniform 3x3 kernels at ratio 4 on a horizontal ramp `x[i, j] = j`.
pub fn mosaic_experiment(h: usize, w: usize) -> Result<MosaicReport> {
    let (ratio, kernel) = (4, 3);
    let (hh, ww) = (h * ratio, w * ratio);
    let x = FeatureMap::from_fn(h, w, 1, |_, j, _| j as f32);
    let weights = SimilarityScores::new(FeatureMap::filled(hh, ww, kernel * kernel, 1.0 / (kernel * kernel) as f32));
    let fns = kernel_apply_fns(&weights, &x, ratio, kernel, true)?;
    let grid = oracle_kernel_apply_gridwise(&weights, &x, ratio, kernel)?;

    // Columns whose whole dilated footprint stays on the linear part of the
    // bilinear ramp are [2 + ratio, ww - 3 - ratio]; second differences need
    // both neighbors inside that range.
    let (lo, hi) = (2 + ratio, ww - 3 - ratio);
    let mut second = 0.0f64;
    for i in 0..hh {
        for j in lo + 1..hi {
            let d = f64::from(fns.get(i, j + 1, 0)) - 2.0 * f64::from(fns.get(i, j, 0)) + f64::from(fns.get(i, j - 1, 0));
            second = second.max(d.abs());
        }
    }
    let step = 1.0;
    let boundaries = (0..hh)
        .map(|i| (1..ww).filter(|&j| (grid.get(i, j, 0) - grid.get(i, j - 1, 0)).abs() >= 0.5 * step).count())
        .min()
        .unwrap_or(0);
    Ok(MosaicReport {
        fns_max_second_diff: second,
        gridwise_boundaries: boundaries,
        required_boundaries: w.saturating_sub(2),
    })
}

pub fn check_anti_mosaic() -> CheckResult {
    timed("anti-mosaic ramp (FNS smooth, grid-wise steps)", |name, start| {
        let report = mosaic_experiment(8, 8)?;
        let steps_ok = report.gridwise_boundaries >= report.required_boundaries;
        Ok(CheckResult::new(name, report.fns_max_second_diff, 1e-5, None, start.elapsed())
            .and(steps_ok)
            .with_detail(format!(
                "grid-wise boundaries {} (need >= {})",
                report.gridwise_boundaries, report.required_boundaries
            )))
    })
}

/// Analytic gradients vs central differences (64 probes per tensor).
pub fn check_gradients(seed: u64) -> Vec<CheckResult> {
    let start = Instant::now();
    let reports = check_pcdc_gradients(seed, 64).and_then(|mut r| {
        r.extend(check_kernel_apply_gradients(seed.wrapping_add(1), 64)?);
        Ok(r)
    });
    let elapsed = start.elapsed();
    match reports {
        Ok(reports) => reports
            .into_iter()
            .map(|r| CheckResult::new(&format!("grad {}", r.op_name), r.max_rel_error, r.tolerance, seconds(20), elapsed))
            .collect(),
        Err(e) => vec![CheckResult::failed("gradient checks", format!("error: {e}"), elapsed)],
    }
}

/// Serialized outputs of one pipeline run per thread count, plus repeats.
pub fn check_determinism(seed: u64) -> CheckResult {
    timed("determinism (3 repeats, 1/4/8 threads)", |name, start| {
        let mut rng = SplitMix64::new(seed ^ 0x0008);
        let cfg = small_config(4, seed);
        let params = generate_params(6, 8, &cfg)?;
        let x = random_map(12, 10, 8, 1.0, &mut rng);
        let y = random_map(48, 40, 6, 1.0, &mut rng);
        let reference = resfu_upsample(&x, &y, &params, &cfg)?.to_bytes();
        let mut mismatches = 0usize;
        for _ in 0..2 {
            mismatches += usize::from(resfu_upsample(&x, &y, &params, &cfg)?.to_bytes() != reference);
        }
        for threads in [1, 4, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            let bytes = pool.install(|| resfu_upsample(&x, &y, &params, &cfg))?.to_bytes();
            mismatches += usize::from(bytes != reference);
        }
        Ok(CheckResult::new(name, mismatches as f64, 0.0, None, start.elapsed())
            .with_detail(format!("{mismatches} differing runs")))
    })
}

/// Bit-exact `.rsft` / `.rsfw` round trips and the corrupted-magic error.
pub fn check_round_trips(seed: u64) -> CheckResult {
    timed("rsft/rsfw round trips (100 each) + bad magic", |name, start| {
        let mut rng = SplitMix64::new(seed ^ 0x0009);
        let mut failures = 0usize;
        for case in 0..100u64 {
            let (h, w, c) = (rng.range(1, 9), rng.range(1, 9), rng.range(1, 9));
            let map = FeatureMap::from_fn(h, w, c, |_, _, _| f32::from_bits(rng.next_u64() as u32 & 0xBFFF_FFFF));
            let back = FeatureMap::from_bytes(&map.to_bytes())?;
            let same = back.dims() == map.dims()
                && back.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            failures += usize::from(!same);

            let cfg = UpsampleConfig {
                seed: seed.wrapping_add(case),
                dim: *rng.choose(&[4, 8, 16]),
                pcdc_channels: *rng.choose(&[4, 8]),
                kernel: *rng.choose(&[1, 3, 5]),
                ..UpsampleConfig::default()
            };
            let params = generate_params(rng.range(1, 6), rng.range(1, 6), &cfg)?;
            let bytes = serialize_params(&params);
            let back = deserialize_params(&bytes, cfg.gf)?;
            failures += usize::from(back != params || serialize_params(&back) != bytes);
        }
        let mut bad = FeatureMap::filled(2, 2, 2, 1.0f32).to_bytes();
        bad[0] = b'X';
        let rsft_code = FeatureMap::from_bytes(&bad).map_err(|e| e.exit_code());
        let mut bad = serialize_params(&generate_params(2, 2, &small_config(2, seed))?);
        bad[3] = b'?';
        let rsfw_err = deserialize_params(&bad, GuidedFilterConfig::default());
        let magic_ok = matches!(rsft_code, Err(2)) && matches!(&rsfw_err, Err(e @ Error::BadMagic { .. }) if e.exit_code() == 2);
        Ok(CheckResult::new(name, failures as f64, 0.0, None, start.elapsed())
            .and(magic_ok)
            .with_detail(format!("{failures} mismatched round trips, bad magic -> exit 2: {magic_ok}")))
    })
}

/// Every check, in order. `weights` is an optional bundle to exercise too.
pub fn run_selfcheck(seed: u64, weights: Option<&Path>) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let extra = match weights {
        None => None,
        Some(path) => {
            let start = Instant::now();
            let loaded = std::fs::read(path)
                .map_err(|e| format!("{}: {e}", path.display()))
                .and_then(|b| deserialize_params(&b, GuidedFilterConfig::default()).map_err(|e| format!("{}: {e}", path.display())));
            match loaded {
                Ok(p) => Some(p),
                Err(msg) => {
                    results.push(CheckResult::failed("load --weights bundle", msg, start.elapsed()));
                    None
                }
            }
        }
    };
    results.push(check_pcdc_equivalence(seed));
    results.push(check_guided_filter(seed));
    results.push(check_fused_aggregation(seed));
    results.extend(check_constant_preservation(seed, extra.as_ref()));
    results.push(check_zeroed_blocks(seed));
    results.push(check_anti_mosaic());
    results.extend(check_gradients(seed));
    results.push(check_determinism(seed));
    results.push(check_round_trips(seed));
    results
}
