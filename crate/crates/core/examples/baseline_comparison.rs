//! Upsamples a synthetic low-resolution feature with bilinear, nearest, the
//! inner-product baseline and the full upsampler, and compares each against
//! the high-resolution feature it was downsampled from.
//!
//! Weights are random (untrained), so the numbers show the mechanics rather
//! than the quality a trained model would reach.

use resfu::ops::{bilinear_resize, nearest_resize};
use resfu::upsampler::inner_product_upsample;
use resfu::{generate_params, resfu_upsample, FeatureMap, UpsampleConfig};

fn rmse(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| f64::from(x - y).powi(2)).sum();
    (sq / a.data().len() as f64).sqrt()
}

fn main() -> resfu::Result<()> {
    let (hh, ww, ratio, c) = (64, 64, 4, 8);
    // High-resolution truth: two regions split by a circle, different codes per channel.
    let truth = FeatureMap::from_fn(hh, ww, c, |i, j, ch| {
        let inside = (i as f32 - 30.0).hypot(j as f32 - 34.0) < 18.0;
        if inside { (ch as f32 * 0.4).sin() } else { (ch as f32 * 0.9).cos() }
    });
    // Low-resolution input: block averages of the truth.
    let (h, w) = (hh / ratio, ww / ratio);
    let x = FeatureMap::from_fn(h, w, c, |i, j, ch| {
        let mut s = 0.0;
        for a in 0..ratio {
            for b in 0..ratio {
                s += truth.get(i * ratio + a, j * ratio + b, ch);
            }
        }
        s / (ratio * ratio) as f32
    });
    // The guide sees the same geometry at full resolution.
    let guide = FeatureMap::from_fn(hh, ww, 3, |i, j, ch| truth.get(i, j, ch) + 0.05 * ch as f32);

    let cfg = UpsampleConfig::with_ratio(ratio);
    let params = generate_params(3, c, &cfg)?;
    let rows = [
        ("nearest", nearest_resize(&x, hh, ww)),
        ("bilinear", bilinear_resize(&x, hh, ww)),
        ("inner product", inner_product_upsample(&x, &guide, &params, &cfg)?.output),
        ("resfu (random weights)", resfu_upsample(&x, &guide, &params, &cfg)?),
    ];
    for (name, out) in &rows {
        println!("{name:<24} rmse vs truth {:.4}", rmse(out, &truth));
    }
    Ok(())
}
