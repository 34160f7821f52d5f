//! Why neighbors are taken on the high-resolution grid: with uniform kernels
//! on a ramp, grid-wise neighbors give a staircase while fine-grained
//! neighbor selection stays a ramp.

use resfu::oracle::oracle_kernel_apply_gridwise;
use resfu::selfcheck::mosaic_experiment;
use resfu::{kernel_apply_fns, FeatureMap, SimilarityScores};

fn main() -> resfu::Result<()> {
    let (h, w, ratio) = (4, 6, 4);
    let x = FeatureMap::from_fn(h, w, 1, |_, j, _| j as f32);
    let weights = SimilarityScores::new(FeatureMap::filled(h * ratio, w * ratio, 9, 1.0 / 9.0));
    let fns = kernel_apply_fns(&weights, &x, ratio, 3, true)?;
    let grid = oracle_kernel_apply_gridwise(&weights, &x, ratio, 3)?;

    println!("{:>4} {:>8} {:>8}", "col", "fns", "grid");
    for j in 0..w * ratio {
        println!("{j:>4} {:>8.4} {:>8.4}", fns.get(h, j, 0), grid.get(h, j, 0));
    }

    let report = mosaic_experiment(8, 8)?;
    println!(
        "8x8 ramp at x4: FNS max interior second difference {:.1e}; grid-wise plateau boundaries {} (>= {} expected)",
        report.fns_max_second_diff, report.gridwise_boundaries, report.required_boundaries
    );
    Ok(())
}
