//! Micro-benchmarks: fused vs materialized kernel aggregation and the
//! decomposed PCDC layer vs its literal form.

use std::fmt;
use std::time::{Duration, Instant};

use crate::alloc_counter;
use crate::error::{Error, Result};
use crate::ops::{softmax_rows, SimilarityScores};
use crate::oracle::{max_rel_error, oracle_pcdc_direct};
use crate::pcdc::{pcdc_layer, PcdcParams};
use crate::rng::SplitMix64;
use crate::tensor::FeatureMap;
use crate::upsampler::{kernel_apply_fns, DEFAULT_DIM, DEFAULT_GROUPS, DEFAULT_KERNEL, DEFAULT_PCDC_CHANNELS};

const WARMUPS: usize = 2;
const EQUIVALENCE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub ratio: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            h: 64,
            w: 64,
            c: 32,
            ratio: 4,
            iters: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub name: &'static str,
    pub mean: Duration,
    /// Peak bytes allocated above the starting level, `None` when the
    /// counting allocator is not installed.
    pub peak_bytes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub fused_vs_naive_error: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "bench {}x{}x{} ratio {} ({} iters, {} warmups); fused vs naive max rel err {:.3e}",
            c.h, c.w, c.c, c.ratio, c.iters, WARMUPS, self.fused_vs_naive_error
        )?;
        writeln!(f, "{:<28} {:>12} {:>16}", "variant", "mean ms", "peak alloc B")?;
        for row in &self.rows {
            let peak = row.peak_bytes.map_or_else(|| "n/a".to_string(), |b| b.to_string());
            writeln!(f, "{:<28} {:>12.3} {:>16}", row.name, row.mean.as_secs_f64() * 1e3, peak)?;
        }
        Ok(())
    }
}

fn time<T>(name: &'static str, iters: usize, mut f: impl FnMut() -> Result<T>) -> Result<BenchRow> {
    for _ in 0..WARMUPS {
        f()?;
    }
    let mut total = Duration::ZERO;
    let mut peak = 0;
    for _ in 0..iters {
        let start = Instant::now();
        let (out, bytes) = alloc_counter::measure_peak(&mut f);
        total += start.elapsed();
        out?;
        peak = peak.max(bytes);
    }
    Ok(BenchRow {
        name,
        mean: total / iters as u32,
        peak_bytes: alloc_counter::is_installed().then_some(peak),
    })
}

fn random_map(h: usize, w: usize, c: usize, rng: &mut SplitMix64) -> FeatureMap {
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.symmetric(1.0) as f32)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.h == 0 || cfg.w == 0 || cfg.c == 0 || cfg.ratio == 0 || cfg.iters == 0 {
        return Err(Error::InvalidArgument("bench sizes, ratio and iters must be >= 1".into()));
    }
    if cfg.h * cfg.w * cfg.ratio * cfg.ratio > 1 << 22 {
        return Err(Error::InvalidArgument("bench output larger than 4M pixels".into()));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let k = DEFAULT_KERNEL;
    let (hh, ww) = (cfg.h * cfg.ratio, cfg.w * cfg.ratio);
    let x = random_map(cfg.h, cfg.w, cfg.c, &mut rng);
    let weights = softmax_rows(&SimilarityScores::new(random_map(hh, ww, k * k, &mut rng)));

    let naive = kernel_apply_fns(&weights, &x, cfg.ratio, k, false)?;
    let fused = kernel_apply_fns(&weights, &x, cfg.ratio, k, true)?;
    let err = max_rel_error(fused.data(), naive.data());
    if !(err <= EQUIVALENCE_TOLERANCE) {
        return Err(Error::CheckFailed(format!(
            "fused aggregation differs from naive: {err:.3e} > {EQUIVALENCE_TOLERANCE:e}"
        )));
    }

    // PCDC at the high-resolution grid with the pipeline's default widths.
    let q = random_map(hh, ww, DEFAULT_DIM, &mut rng);
    let kb = random_map(hh, ww, DEFAULT_DIM, &mut rng);
    let weight = random_map(k * k, DEFAULT_DIM / DEFAULT_GROUPS, DEFAULT_PCDC_CHANNELS, &mut rng);
    let bias = (0..DEFAULT_PCDC_CHANNELS).map(|_| rng.symmetric(0.1) as f32).collect();
    let pcdc = PcdcParams::new(weight, bias, DEFAULT_GROUPS, cfg.ratio)?;

    let rows = vec![
        time("kernel_apply naive", cfg.iters, || kernel_apply_fns(&weights, &x, cfg.ratio, k, false))?,
        time("kernel_apply fused", cfg.iters, || kernel_apply_fns(&weights, &x, cfg.ratio, k, true))?,
        time("pcdc decomposed", cfg.iters, || pcdc_layer(&q, &kb, &pcdc))?,
        time("pcdc direct (oracle)", cfg.iters, || oracle_pcdc_direct(&q, &kb, &pcdc))?,
    ];
    Ok(BenchReport {
        config: *cfg,
        fused_vs_naive_error: err,
        rows,
    })
}
