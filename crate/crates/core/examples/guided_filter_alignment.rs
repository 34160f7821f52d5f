//! Aligns a query to a blurry upsampled key with the guided filter, and
//! checks the fast closed form against the per-window regression.

use resfu::ops::{bilinear_resize, box_mean};
use resfu::oracle::{max_rel_error, oracle_guided_filter_window};
use resfu::{guided_filter, FeatureMap, GuidedFilterConfig};

fn main() -> resfu::Result<()> {
    let (h, w) = (48, 48);
    // Sharp query: a vertical step. Key: the same step, but seen at 1/4 resolution.
    let q = FeatureMap::from_fn(h, w, 1, |_, j, _| if j < w / 2 { 0.0 } else { 1.0 });
    let k_low = FeatureMap::from_fn(h / 4, w / 4, 1, |_, j, _| if j < w / 8 { 2.0 } else { 5.0 });
    let k_up = bilinear_resize(&k_low, h, w);

    let cfg = GuidedFilterConfig { radius: 4, eps: 1e-3 };
    let aligned = guided_filter(&q, &k_up, &cfg)?;

    println!("{:>4} {:>8} {:>8} {:>8}", "col", "q", "k_up", "q_gf");
    for j in (w / 2 - 6)..(w / 2 + 6) {
        println!(
            "{j:>4} {:>8.3} {:>8.3} {:>8.3}",
            q.get(h / 2, j, 0),
            k_up.get(h / 2, j, 0),
            aligned.get(h / 2, j, 0)
        );
    }
    println!("q_gf moves toward the key's levels (2 and 5) but jumps where the query steps, while k_up only ramps.");

    let reference = oracle_guided_filter_window(&q, &k_up, &cfg)?;
    println!("closed form vs per-window regression: max rel err {:.2e}", max_rel_error(aligned.data(), reference.data()));

    let flat = FeatureMap::filled(h, w, 1, 0.5f32);
    let out = guided_filter(&flat, &k_up, &cfg)?;
    let expected = box_mean(&box_mean(&k_up, cfg.radius), cfg.radius);
    println!("constant query -> twice box-filtered key: max rel err {:.2e}", max_rel_error(out.data(), expected.data()));
    Ok(())
}
