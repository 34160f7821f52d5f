//! Runs the full upsampler on synthetic features and reports every
//! intermediate.
//!
//!     cargo run --release --example upsample_pipeline -- [ratio]

use resfu::rng::SplitMix64;
use resfu::{generate_params, resfu_upsample_traced, FeatureMap, UpsampleConfig};

fn stats(name: &str, map: &FeatureMap) {
    let (h, w, c) = map.dims();
    let n = map.data().len() as f64;
    let mean = map.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("{name:<8} {h:>4}x{w:<4}x{c:<3} mean {mean:>9.4}  range [{lo:.4}, {hi:.4}]");
}

fn main() -> resfu::Result<()> {
    let ratio: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let (h, w, c_value, c_guide) = (16, 16, 32, 16);
    let mut rng = SplitMix64::new(7);
    let x = FeatureMap::from_fn(h, w, c_value, |_, _, _| rng.symmetric(1.0) as f32);
    let y = FeatureMap::from_fn(h * ratio, w * ratio, c_guide, |i, j, ch| {
        // A guide with a diagonal edge plus a little texture.
        let edge = if i + j > h * ratio { 1.0 } else { -1.0 };
        edge + 0.1 * ((i * 7 + j * 3 + ch) % 5) as f32
    });

    let cfg = UpsampleConfig::with_ratio(ratio);
    let params = generate_params(c_guide, c_value, &cfg)?;
    let t = resfu_upsample_traced(&x, &y, &params, &cfg)?;

    stats("x", &x);
    stats("q", &t.q);
    stats("k", &t.k);
    stats("k_up", &t.k_up);
    stats("q_gf", &t.q_gf);
    stats("q_gs", &t.q_gs);
    stats("s_s", t.s_s.as_map());
    stats("s_d", t.s_d.as_map());
    stats("kernels", t.kernels.as_map());
    stats("output", &t.output);

    let worst_row = (0..t.kernels.pixels())
        .map(|p| (t.kernels.row(p).iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("largest kernel row-sum deviation from 1: {worst_row:.2e}");
    Ok(())
}
