//! The paired central difference convolution in its decomposed (fast) and
//! literal (reference) forms.

use std::time::Instant;

use resfu::oracle::{max_rel_error, oracle_pcdc_direct};
use resfu::rng::SplitMix64;
use resfu::{pcdc_layer, FeatureMap, PcdcParams};

fn main() -> resfu::Result<()> {
    let mut rng = SplitMix64::new(11);
    let (h, w, d, l, groups, dilation) = (64, 64, 32, 32, 4, 2);
    let q = FeatureMap::from_fn(h, w, d, |_, _, _| rng.symmetric(1.0) as f32);
    let k = FeatureMap::from_fn(h, w, d, |_, _, _| rng.symmetric(1.0) as f32);
    let weight = FeatureMap::from_fn(9, d / groups, l, |_, _, _| rng.symmetric(0.3) as f32);
    let bias: Vec<f32> = (0..l).map(|_| rng.symmetric(0.1) as f32).collect();
    let p = PcdcParams::new(weight, bias.clone(), groups, dilation)?;

    let start = Instant::now();
    let fast = pcdc_layer(&q, &k, &p)?;
    let t_fast = start.elapsed();
    let start = Instant::now();
    let slow = oracle_pcdc_direct(&q, &k, &p)?;
    let t_slow = start.elapsed();
    println!("decomposed {t_fast:?}, direct {t_slow:?}, max rel err {:.2e}", max_rel_error(fast.data(), slow.data()));

    // Identical query and key: every center/neighbor difference of a constant map vanishes.
    let flat = FeatureMap::filled(h, w, d, 0.7f32);
    let v = pcdc_layer(&flat, &flat, &p)?;
    let off = v.data().chunks_exact(l).flat_map(|px| px.iter().zip(&bias).map(|(a, b)| (a - b).abs())).fold(0.0f32, f32::max);
    println!("constant q = k: output equals the bias to within {off:.1e}");
    Ok(())
}
